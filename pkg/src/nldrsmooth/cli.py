"""Command-line entry point: ``nldrsmooth <command> [options]``.

Commands: ``generate``, ``operator``, ``embed``, ``diagnose`` and
``reproduce``.  Options can also come from a JSON file passed with
``--config``; keys mirror the long flag names (``hole_radius`` for
``--hole-radius``) and explicit flags win.  Every output sidecar carries a
hash of the resolved config.  Exit codes: 0 success, 1 invalid input,
2 numerical failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import diagnostics as diag
from . import experiments
from .errors import NumericalError, ValidationError
from .manifolds import KINDS, ManifoldSpec, SampleCloud, load_cloud, lattice_cloud, sample_manifold, save_cloud
from .neighborhoods import build_graph
from .operators import BUILDERS, build_operator, save_operator
from .spectral import embed, save_embedding

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3

DIAGNOSTICS = ("boundary", "neumann", "equivalence", "penalty", "spectrum", "bias", "nullspace")
# keys that do not change results and are left out of the config hash
_UNHASHED = {"config", "out", "command"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def config_hash(cfg: dict) -> str:
    blob = json.dumps({k: v for k, v in cfg.items() if k not in _UNHASHED}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(diag._jsonable(data), indent=2, sort_keys=True) + "\n")


def _add_common(p):
    p.add_argument("--config", help="JSON config file; keys mirror the flags")
    p.add_argument("--out", help="output directory (default: current directory)")
    p.add_argument("--seed", type=int)
    p.add_argument("--manifold", choices=KINDS)
    p.add_argument("--n", type=int)
    p.add_argument("--hole-radius", type=float, dest="hole_radius")
    p.add_argument("--method")
    p.add_argument("--h", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--lambda", type=float, dest="ridge", help="ridge for LLE / LDR-LLE")
    p.add_argument("--p", type=int)
    p.add_argument("--cloud", help="cloud CSV written by `generate` (otherwise one is sampled)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nldrsmooth", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _add_common(sub.add_parser("generate", help="sample a manifold cloud"))
    _add_common(sub.add_parser("operator", help="assemble a bias operator"))
    _add_common(sub.add_parser("embed", help="spectral embedding from a bias operator"))
    p = sub.add_parser("diagnose", help="run one diagnostic")
    _add_common(p)
    p.add_argument("diagnostic", choices=DIAGNOSTICS)
    p.add_argument("--bandwidth", type=float, help="local fit bandwidth for boundary/neumann")
    p = sub.add_parser("reproduce", help="regenerate a figure or table with pinned defaults")
    _add_common(p)
    p.add_argument("figure", choices=sorted(experiments.DEFAULTS))
    return parser


def resolve_config(args) -> dict:
    cfg = {}
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config {args.config} is not valid JSON: {exc}") from None
        if not isinstance(cfg, dict):
            raise ValidationError("config must be a JSON object")
        if "lambda" in cfg:
            cfg["ridge"] = cfg.pop("lambda")
    for key, value in vars(args).items():
        if value is not None:
            cfg[key] = value
    return cfg


def _spec(cfg) -> ManifoldSpec:
    params = dict(cfg.get("params", {}))
    if cfg.get("hole_radius") is not None:
        params["hole_radius"] = cfg["hole_radius"]
    return ManifoldSpec(cfg.get("manifold", "segment"), d=cfg.get("d"), params=params)


def _get_cloud(cfg) -> SampleCloud:
    if cfg.get("cloud"):
        return load_cloud(cfg["cloud"])
    if cfg.get("lattice"):
        return lattice_cloud(_spec(cfg), cfg["lattice"])
    return sample_manifold(_spec(cfg), cfg.get("n", 1000), cfg.get("seed", 0))


def _graph(cfg, cloud):
    if cfg.get("k") is not None:
        return build_graph(cloud, k=cfg["k"])
    if cfg.get("h") is None:
        raise ValidationError("give --h (h-ball) or --k (kNN)")
    return build_graph(cloud, h=cfg["h"])


def _operator(cfg, cloud):
    if not cfg.get("method"):
        raise ValidationError(f"--method is required; one of {sorted(BUILDERS)}")
    graph = _graph(cfg, cloud)
    return build_operator(cfg["method"], cloud, graph, ridge=cfg.get("ridge"), h=cfg.get("h"))


def cmd_generate(cfg, out: Path) -> list:
    cloud = sample_manifold(_spec(cfg), cfg.get("n", 1000), cfg.get("seed", 0))
    path = out / "cloud.csv"
    save_cloud(cloud, path, {"config_hash": config_hash(cfg)})
    return [path]


def cmd_operator(cfg, out: Path) -> list:
    op = _operator(cfg, _get_cloud(cfg))
    path = out / "operator.csv"
    save_operator(op, path, {"config_hash": config_hash(cfg)})
    return [path]


def cmd_embed(cfg, out: Path) -> list:
    op = _operator(cfg, _get_cloud(cfg))
    emb = embed(op, cfg.get("p", 2))
    path = out / "embedding.csv"
    save_embedding(emb, path, {"config_hash": config_hash(cfg)})
    return [path]


def cmd_diagnose(cfg, out: Path) -> list:
    name = cfg["diagnostic"]
    if name == "equivalence":
        result = experiments.run_equivalence(experiments.resolve("equivalence", _pick(cfg, "n", "seed")))
        report = {"report": result["report"], "ladder_ok": result["ladder_ok"]}
    else:
        cloud = _get_cloud(cfg)
        h = cfg.get("h")
        if h is None:
            raise ValidationError(f"diagnostic {name} needs --h")
        if name == "penalty":
            methods = [cfg["method"]] if cfg.get("method") else ["laplacian_eigenmaps", "coefficient_laplacian"]
            report = {fam: diag.penalty_fidelity(cloud, methods, fam, h).to_dict() for fam in ("cosine", "signed_power")}
        elif name == "spectrum":
            methods = [cfg["method"]] if cfg.get("method") else list(diag.SPECTRUM_METHODS)
            report = diag.spectrum_compare(cloud, methods, cfg.get("p", 6), h)
        elif name == "bias":
            hs = [h, h / 2, h / 4]
            method = cfg.get("method", "laplacian_eigenmaps")
            report = {
                "interior": diag.interior_bias_scaling(cloud, hs, method, lambda u: np.sum(u**2, axis=1)),
                "boundary": diag.interior_bias_scaling(cloud, hs, method, lambda u: u[:, 0]),
            }
        elif name == "nullspace":
            report = diag.penalty_nullspace_contrast(cloud, h)
        else:
            op = _operator(cfg, cloud)
            emb = embed(op, cfg.get("p", 12 if name == "boundary" else 5))
            bw = cfg.get("bandwidth", 0.1)
            pts = [int(i) for i in diag.select_boundary_points(cloud, bw) if cloud.boundary_dist[i] <= 0.1 * bw]
            if name == "boundary":
                reps = [diag.boundary_condition_check(cloud, emb, i, bw) for i in pts]
                report = {"table": diag.boundary_table(reps), "reports": [r.to_dict() for r in reps]}
            else:
                report = diag.neumann_boundary_check(cloud, emb, pts, bw)
    report = {"diagnostic": name, "config_hash": config_hash(cfg), "result": report}
    path = out / f"diagnose_{name}.json"
    _write_json(path, report)
    return [path]


def _num(v) -> str:
    return "nan" if v is None else repr(float(v))


def _pick(cfg, *keys):
    return {k: cfg[k] for k in keys if k in cfg}


def cmd_reproduce(cfg, out: Path) -> list:
    figure = cfg["figure"]
    params = experiments.resolve(figure, _pick(cfg, "n", "seed", "h", "p"))
    result = experiments.RUNNERS[figure](params)
    tag = {"config_hash": config_hash(params), "figure": figure}
    written = []
    if figure == "fig1":
        for name, emb in result["embeddings"].items():
            path = out / f"fig1_{name}.csv"
            save_embedding(emb, path, tag)
            written.append(path)
        summary = {"table": result["table"], **tag, "config": params}
    elif figure == "fig2":
        rep = result["report"]
        methods = [m for m in rep if m != "provenance"]
        lines = ["k," + ",".join(methods)]
        for k in range(params["p"]):
            lines.append(",".join([str(k + 1)] + [_num(rep[m]["ratios"][k]) for m in methods]))
        (out / "fig2_spectra.csv").write_text("\n".join(lines) + "\n")
        x = result["cloud"].intrinsic[:, 0]
        lines = ["x," + ",".join(methods)]
        for i in np.argsort(x, kind="stable"):
            lines.append(",".join([repr(float(x[i]))] + [repr(float(rep[m]["bottom_vector"][i])) for m in methods]))
        (out / "fig2_vectors.csv").write_text("\n".join(lines) + "\n")
        written += [out / "fig2_spectra.csv", out / "fig2_vectors.csv"]
        summary = {
            "methods": {m: {k: v for k, v in rep[m].items() if k != "bottom_vector"} for m in methods},
            **tag,
            "config": params,
        }
    elif figure == "fig3":
        for fam, curve in result["curves"].items():
            path = out / f"fig3_{fam}.csv"
            path.write_text(curve.to_csv())
            written.append(path)
        summary = {"curves": {f: c.to_dict() for f, c in result["curves"].items()}, **tag, "config": params}
    elif figure == "boundary_table":
        summary = {**result["table"], "reports": result["reports"], **tag, "config": params}
    else:
        summary = {**result, **tag}
    path = out / f"{figure}.json"
    _write_json(path, summary)
    return written + [path]


COMMANDS = {
    "generate": cmd_generate,
    "operator": cmd_operator,
    "embed": cmd_embed,
    "diagnose": cmd_diagnose,
    "reproduce": cmd_reproduce,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
        out = Path(cfg.get("out", "."))
        out.mkdir(parents=True, exist_ok=True)
        for path in COMMANDS[cfg["command"]](cfg, out):
            print(path)
        return EXIT_OK
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
