"""Seed-pinned experiment pipelines behind ``nldrsmooth reproduce``.

Each ``run_*`` function takes a resolved config dict (see ``DEFAULTS``) and
returns a JSON-ready result; writing files is left to the CLI.
"""

from __future__ import annotations

import copy

import numpy as np

from . import diagnostics as diag
from .errors import NumericalError, ValidationError
from .manifolds import ManifoldSpec, sample_manifold
from .neighborhoods import build_graph
from .operators import build_operator, canonical_method
from .spectral import align_procrustes, canonical_correlations, embed

DEFAULTS = {
    "fig1": {
        "manifold": "swiss_roll_hole",
        "n": 2000,
        "seed": 0,
        "h": 4.0,
        "p": 3,
        "methods": [
            "ltsa",
            "hlle",
            "laplacian_eigenmaps",
            "diffusion_maps",
            "lle",
            "ldr_lle",
            "ldr_lle_plus",
            "llr_laplacian",
        ],
    },
    "fig2": {
        "manifold": "segment",
        "n": 1000,
        "seed": 0,
        "h": 0.05,
        "p": 6,
        "methods": ["laplacian_eigenmaps", "diffusion_maps", "llr_laplacian", "coefficient_laplacian"],
    },
    "fig3": {
        "manifold": "segment",
        "params": {"start": -1.0, "length": 2.0},
        "n": 2000,
        "seed": 0,
        "h": 0.05,
        "methods": ["laplacian_eigenmaps", "coefficient_laplacian", "diffusion_maps", "llr_laplacian"],
    },
    "boundary_table": {
        "manifold": "rectangle",
        "n": 4000,
        "seed": 0,
        "h": 0.08,
        "p": 12,
        "method": "ltsa",
        "bandwidth": 0.1,
        "per_face": 10,
    },
    "equivalence": {
        "manifold": "rectangle",
        "n": 4000,
        "seed": 0,
        "hs": [0.2, 0.1, 0.05],
    },
}


def resolve(figure: str, overrides: dict | None = None) -> dict:
    """Default config for ``figure`` updated with non-None ``overrides``."""
    if figure not in DEFAULTS:
        raise ValidationError(f"unknown experiment {figure!r}; expected one of {sorted(DEFAULTS)}")
    cfg = copy.deepcopy(DEFAULTS[figure])
    for key, value in (overrides or {}).items():
        if value is not None:
            cfg[key] = value
    return cfg


def _cloud(cfg, n=None):
    spec = ManifoldSpec(cfg["manifold"], params=cfg.get("params", {}))
    return sample_manifold(spec, cfg["n"] if n is None else n, cfg["seed"])


def run_fig1(cfg: dict) -> dict:
    """Swiss roll embeddings scored against the isometric chart.

    ``residual`` is the similarity Procrustes residual of the first two
    components, ``affine_residual`` the same under an affine fit, and
    ``canonical_correlations`` compare the first three components with
    ``{u1, u2, u1 u2}``.
    """
    cloud = _cloud(cfg)
    graph = build_graph(cloud, h=cfg["h"])
    u = cloud.intrinsic - cloud.intrinsic.mean(axis=0)
    basis = np.column_stack([u[:, 0], u[:, 1], u[:, 0] * u[:, 1]])
    rows, embeddings = {}, {}
    for method in cfg["methods"]:
        name = canonical_method(method)
        try:
            emb = embed(build_operator(name, cloud, graph, h=cfg["h"]), max(cfg["p"], 3))
        except NumericalError as exc:
            rows[name] = {"error": str(exc)}
            continue
        res, _ = align_procrustes(emb.coords[:, :2], cloud.intrinsic)
        aff, _ = align_procrustes(emb.coords[:, :2], cloud.intrinsic, affine=True)
        rows[name] = {
            "residual": res,
            "affine_residual": aff,
            "canonical_correlations": canonical_correlations(emb.coords[:, :3], basis).tolist(),
            "spectrum": emb.spectrum.tolist(),
        }
        embeddings[name] = emb
    return {"config": cfg, "table": rows, "embeddings": embeddings, "cloud": cloud}


def run_fig2(cfg: dict) -> dict:
    cloud = _cloud(cfg)
    report = diag.spectrum_compare(cloud, cfg["methods"], cfg["p"], cfg["h"])
    return {"config": cfg, "report": report, "cloud": cloud}


def run_fig3(cfg: dict) -> dict:
    cloud = _cloud(cfg)
    graph = build_graph(cloud, h=cfg["h"])
    curves = {
        family: diag.penalty_fidelity(cloud, cfg["methods"], family, cfg["h"], graph=graph)
        for family in ("cosine", "signed_power")
    }
    return {"config": cfg, "curves": curves, "cloud": cloud}


def run_boundary_table(cfg: dict) -> dict:
    """Hessians of LTSA eigenfunctions at boundary points of a rectangle.

    The embedding keeps ``p`` components after the constant; columns in the
    exact null space (the chart-affine functions) are skipped, leaving the
    eigenfunctions that carry the boundary condition.
    """
    cloud = _cloud(cfg)
    graph = build_graph(cloud, h=cfg["h"])
    emb = embed(build_operator(cfg["method"], cloud, graph, h=cfg["h"]), cfg["p"])
    bw = cfg["bandwidth"]
    points = [
        int(i) for i in diag.select_boundary_points(cloud, bw, cfg["per_face"]) if cloud.boundary_dist[i] <= 0.1 * bw
    ]
    reports = [diag.boundary_condition_check(cloud, emb, i, bw) for i in points]
    table = diag.boundary_table(reports)
    table["k"] = len(diag.nontrivial_columns(emb))
    return {"config": cfg, "table": table, "reports": [r.to_dict() for r in reports], "cloud": cloud}


def run_equivalence(cfg: dict) -> dict:
    """HLLE/LTSA gap on a rectangle ladder; n scales as h^-2 so |N| stays comparable."""
    hs = list(cfg["hs"])
    finest = min(hs)
    clouds = [_cloud(cfg, n=int(round(cfg["n"] * (finest / h) ** 2))) for h in hs]
    report = diag.equivalence_hlle_ltsa(clouds, hs)
    return {"config": cfg, "report": report.to_dict(), "ladder_ok": diag.ladder_ok(report.gaps)}


RUNNERS = {
    "fig1": run_fig1,
    "fig2": run_fig2,
    "fig3": run_fig3,
    "boundary_table": run_boundary_table,
    "equivalence": run_equivalence,
}
