"""Numerical checks of the limit behavior of bias operators.

Every check works on clouds from :mod:`nldrsmooth.manifolds`, whose isometric
charts supply exact geodesic coordinates, boundary distances and inward
normals.  Local derivative estimates therefore use chart coordinates directly
instead of estimated normal coordinates.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate
from scipy.spatial import cKDTree

from .errors import EstimationError, InconclusiveError, ValidationError
from .manifolds import inward_normal
from .neighborhoods import ON_MEAN, build_graph, local_frame, local_frames
from .operators import (
    build_operator,
    canonical_method,
    hlle_blocks,
    ltsa_blocks,
    op_hlle,
    op_laplacian_eigenmaps,
    op_ltsa,
    quadratic_form,
)
from .spectral import NULL_TOL, embed

SPECTRUM_METHODS = ("laplacian_eigenmaps", "diffusion_maps", "llr_laplacian", "coefficient_laplacian")


def _provenance(cloud, **extra) -> dict:
    out = {"spec": cloud.spec.to_dict(), "seed": cloud.seed, "n": cloud.n}
    out.update(extra)
    return out


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if np.isfinite(v) else None
    if isinstance(value, np.integer):
        return int(value)
    return value


# --------------------------------------------------------------------------
# local polynomial fits in a boundary-adapted chart frame


def adapted_frame(cloud, point: int, normal=None) -> np.ndarray:
    """Orthonormal chart frame (rows) whose first axis is the inward normal.

    For m = 2 the second axis is the normal rotated by +90 degrees.  Clouds
    without boundary get the identity frame unless ``normal`` is given.
    """
    m = cloud.m
    if normal is None:
        if not cloud.spec.has_boundary:
            return np.eye(m)
        normal = inward_normal(cloud.spec, cloud.intrinsic[point])[0]
    normal = np.asarray(normal, dtype=float).reshape(m)
    normal = normal / np.linalg.norm(normal)
    if m == 1:
        return normal[None, :]
    if m == 2:
        return np.array([normal, [-normal[1], normal[0]]])
    q, _ = np.linalg.qr(np.column_stack([normal, np.eye(m)]))
    q[:, 0] *= np.sign(q[:, 0] @ normal)
    return q[:, :m].T


def chart_offsets(cloud, point: int, index) -> np.ndarray:
    """Chart coordinates of ``index`` relative to ``point`` (periodic for circles)."""
    diff = cloud.intrinsic[index] - cloud.intrinsic[point]
    if cloud.spec.kind == "circle":
        period = cloud.spec.chart_extent[0]
        diff = (diff + 0.5 * period) % period - 0.5 * period
    return diff


def _chart_tree(cloud):
    return cKDTree(cloud.intrinsic) if cloud.spec.kind != "circle" else None


def _ball(cloud, point, bandwidth, tree=None):
    if tree is not None:
        return np.sort(np.asarray(tree.query_ball_point(cloud.intrinsic[point], bandwidth), dtype=int))
    off = chart_offsets(cloud, point, np.arange(cloud.n))
    return np.flatnonzero(np.linalg.norm(off, axis=1) <= bandwidth)


def _quadratic_design(v):
    n, m = v.shape
    cols = [np.ones(n)] + [v[:, a] for a in range(m)]
    pairs = [(a, b) for a in range(m) for b in range(a, m)]
    cols += [v[:, a] * v[:, b] for a, b in pairs]
    return np.column_stack(cols), pairs


@dataclass(frozen=True, eq=False)
class HessianEstimate:
    """Local quadratic fit of a function around one point.

    ``H`` and ``gradient`` are expressed in ``frame`` (rows are the axes, the
    first one the inward normal).  ``stderr_H`` are the least-squares standard
    errors of the entries of ``H``.
    """

    point: int
    H: np.ndarray
    gradient: np.ndarray
    frame: np.ndarray
    fit_residual: float
    stderr_H: np.ndarray
    n_used: int

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


def estimate_hessian(cloud, f, point: int, bandwidth: float, normal=None, *, _tree=None) -> HessianEstimate:
    """Fit ``f`` by a quadratic polynomial in the adapted chart frame at ``point``.

    Uses every sample within chart distance ``bandwidth``.  ``H_ij`` is the
    second derivative, so squared terms are doubled and cross terms kept.
    """
    f = np.asarray(f, dtype=float).ravel()
    if f.shape != (cloud.n,):
        raise ValidationError(f"f must have length n={cloud.n}")
    m = cloud.m
    frame = adapted_frame(cloud, point, normal)
    idx = _ball(cloud, point, bandwidth, _tree)
    need = 1 + m + m * (m + 1) // 2
    if len(idx) < need + 1:
        raise EstimationError(f"point {point}: {len(idx)} points within {bandwidth:.4g}, need more than {need}")
    v = chart_offsets(cloud, point, idx) @ frame.T
    X, pairs = _quadratic_design(v / bandwidth)
    coef, _, rank, sv = np.linalg.lstsq(X, f[idx], rcond=None)
    if rank < X.shape[1] or sv[-1] < 1e-10 * sv[0]:
        raise EstimationError(f"point {point}: singular quadratic design")
    resid = f[idx] - X @ coef
    dof = max(len(idx) - X.shape[1], 1)
    sigma2 = float(resid @ resid) / dof
    cov_diag = sigma2 * np.diag(np.linalg.inv(X.T @ X))

    H = np.zeros((m, m))
    se = np.zeros((m, m))
    for j, (a, b) in enumerate(pairs):
        c = coef[1 + m + j] / bandwidth**2
        s = np.sqrt(cov_diag[1 + m + j]) / bandwidth**2
        if a == b:
            H[a, a], se[a, a] = 2 * c, 2 * s
        else:
            H[a, b] = H[b, a] = c
            se[a, b] = se[b, a] = s
    grad = coef[1 : 1 + m] / bandwidth
    return HessianEstimate(int(point), H, grad, frame, float(np.sqrt(sigma2)), se, len(idx))


# --------------------------------------------------------------------------
# boundary conditions


def select_boundary_points(cloud, bandwidth: float, per_face: int = 10) -> np.ndarray:
    """The ``per_face`` samples closest to each flat face of the chart box.

    Points within ``2 * bandwidth`` of a second face (corners) are skipped.
    """
    spec = cloud.spec
    if not spec.has_boundary:
        raise ValidationError(f"{spec.kind} has no boundary")
    u = cloud.intrinsic
    low = spec.chart_low()
    high = low + np.asarray(spec.chart_extent)
    faces = np.concatenate([u - low, high - u], axis=1)
    chosen = []
    for face in range(faces.shape[1]):
        others = np.delete(faces, face, axis=1)
        ok = np.all(others > 2 * bandwidth, axis=1) if others.shape[1] else np.ones(len(u), bool)
        if spec.kind == "swiss_roll_hole":
            c = np.array([spec.params["hole_s"], spec.params["hole_w"]])
            ok &= np.linalg.norm(u - c, axis=1) - spec.params["hole_radius"] > 2 * bandwidth
        cand = np.flatnonzero(ok)
        order = np.lexsort((cand, faces[cand, face]))
        chosen.extend(cand[order[:per_face]].tolist())
    return np.array(chosen, dtype=int)


@dataclass(frozen=True, eq=False)
class BoundaryReport:
    """Second-order boundary condition at one boundary point (m = 2).

    ``hessians`` has one row ``(f11, f22, f12)`` per eigenfunction, axis 1
    being the inward normal.  ``ratio`` is the mean of ``f11 / (f11 + f22)``
    over the eigenfunctions listed in ``included``.
    """

    point: int
    hessians: np.ndarray
    singular_values: np.ndarray
    bottom_singular_vector: np.ndarray
    included: list
    ratios: np.ndarray
    ratio: float
    predicted_ratio: float
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


def nontrivial_columns(emb) -> np.ndarray:
    """Embedding columns whose eigenvalue is above the null-space tolerance."""
    lam_max = emb.lambda_max or 1.0
    return np.flatnonzero(np.asarray(emb.spectrum) > NULL_TOL * lam_max)


def _as_columns(embedding, skip_null):
    if hasattr(embedding, "coords"):
        cols = nontrivial_columns(embedding) if skip_null else np.arange(embedding.p)
        return np.asarray(embedding.coords)[:, cols]
    F = np.asarray(embedding, dtype=float)
    return F[:, None] if F.ndim == 1 else F


def boundary_condition_check(
    cloud, embedding, boundary_point: int, bandwidth: float, *, threshold: float = 0.1, skip_null: bool = True
) -> BoundaryReport:
    """Hessians of eigenfunctions at a boundary point and the ratio ``f11 / lap f``.

    ``embedding`` is an :class:`~nldrsmooth.spectral.Embedding` (null-space
    columns dropped when ``skip_null``) or an ``(n, k)`` array of functions.
    """
    if cloud.m != 2:
        raise ValidationError("boundary_condition_check needs m = 2")
    if not cloud.boundary_dist[boundary_point] <= 0.1 * bandwidth:
        raise ValidationError(f"point {boundary_point} is not within 0.1*bandwidth of the boundary")
    F = _as_columns(embedding, skip_null)
    if F.shape[1] < 5:
        raise ValidationError(f"need at least 5 eigenfunctions, got {F.shape[1]}")
    tree = _chart_tree(cloud)
    rows = []
    for col in F.T:
        H = estimate_hessian(cloud, col, boundary_point, bandwidth, _tree=tree).H
        rows.append([H[0, 0], H[1, 1], H[0, 1]])
    rows = np.array(rows)
    _, sv, vt = np.linalg.svd(rows, full_matrices=False)
    bottom = vt[-1] * (np.sign(vt[-1][0]) or 1.0)
    lap = rows[:, 0] + rows[:, 1]
    norms = np.linalg.norm(rows, axis=1)
    # affine functions fit to a Hessian at rounding level; treat them as flat
    flat = norms <= 1e-8 * max(norms.max(), np.finfo(float).tiny)
    included = np.flatnonzero((np.abs(lap) >= threshold * norms) & ~flat)
    if len(included) == 0:
        raise InconclusiveError(f"point {boundary_point}: every eigenfunction has |lap f| below threshold")
    ratios = rows[included, 0] / lap[included]
    return BoundaryReport(
        int(boundary_point),
        rows,
        sv,
        bottom,
        included.tolist(),
        ratios,
        float(np.mean(ratios)),
        (cloud.m + 1) / 2,
        _provenance(cloud, bandwidth=bandwidth, threshold=threshold),
    )


def boundary_table(reports) -> dict:
    """Pool boundary reports into mean unit Hessian entries.

    Each included Hessian row is scaled to unit length with the sign making
    ``lap f > 0``; ``predicted_f11`` is ``(m+1)/2`` times the mean Laplacian.
    ``singular_ratio`` is the bottom over top singular value of the pooled
    unit rows.
    """
    units, ratios, per_point = [], [], []
    for rep in reports:
        rows = rep.hessians[rep.included]
        lap = rows[:, 0] + rows[:, 1]
        units.append(rows * (np.sign(lap) / np.linalg.norm(rows, axis=1))[:, None])
        ratios.extend(rep.ratios.tolist())
        per_point.append(rep.singular_values[-1] / rep.singular_values[0])
    U = np.vstack(units)
    mean = U.mean(axis=0)
    sv = np.linalg.svd(U, compute_uv=False)
    predicted = reports[0].predicted_ratio
    lap_mean = float(mean[0] + mean[1])
    return {
        "f11_mean": float(mean[0]),
        "f22_mean": float(mean[1]),
        "f12_mean": float(mean[2]),
        "laplacian_mean": lap_mean,
        "predicted_f11": predicted * lap_mean,
        "predicted_ratio": predicted,
        "ratio_mean": float(np.mean(ratios)),
        "ratio_median": float(np.median(ratios)),
        "n_ratios": len(ratios),
        "pooled_singular_values": sv.tolist(),
        "singular_ratio": float(sv[-1] / sv[0]),
        "per_point_singular_ratio_median": float(np.median(per_point)),
        "points": [rep.point for rep in reports],
    }


def neumann_boundary_check(cloud, embedding, boundary_points, bandwidth: float, *, skip_null: bool = True) -> dict:
    """Normal versus tangential derivatives of eigenfunctions at boundary points.

    Derivatives come from local quadratic fits.  ``normal_to_tangential`` is
    ``sum |df/deta| / sum |grad_T f|`` over points and eigenfunctions;
    ``normal_to_max_gradient`` compares the largest normal derivative with
    the largest gradient norm found anywhere on the cloud.
    """
    F = _as_columns(embedding, skip_null)
    pts = np.atleast_1d(np.asarray(boundary_points, dtype=int))
    tree = _chart_tree(cloud)
    normal = np.zeros((len(pts), F.shape[1]))
    tangential = np.zeros_like(normal)
    for a, p in enumerate(pts):
        for b, col in enumerate(F.T):
            g = estimate_hessian(cloud, col, p, bandwidth, _tree=tree).gradient
            normal[a, b] = abs(g[0])
            tangential[a, b] = np.linalg.norm(g[1:])
    gmax = np.zeros(F.shape[1])
    for i in range(cloud.n):
        for b, col in enumerate(F.T):
            g = estimate_hessian(cloud, col, i, bandwidth, normal=np.eye(cloud.m)[0], _tree=tree).gradient
            gmax[b] = max(gmax[b], float(np.linalg.norm(g)))
    tsum = tangential.sum()
    return _jsonable(
        {
            "points": pts,
            "normal_derivative": normal,
            "tangential_gradient": tangential,
            "max_gradient": gmax,
            "normal_to_tangential": normal.sum() / tsum if tsum > 0 else np.inf,
            "normal_to_gradient": normal.sum() / np.hypot(normal, tangential).sum(),
            "normal_to_max_gradient": float(np.max(normal / gmax)),
            "provenance": _provenance(cloud, bandwidth=bandwidth),
        }
    )


# --------------------------------------------------------------------------
# HLLE versus LTSA


@dataclass(frozen=True, eq=False)
class EquivalenceReport:
    """Relative quadratic-form gap between HLLE and LTSA along an h ladder.

    ``gaps[j]`` is ``max_f |f'(L_H - L_T)f| / |f' L_T f|`` at ``hs[j]``;
    ``interior_gaps[j]`` is ``max_f |(L_H - L_T) f|`` over interior points
    relative to ``|L_T f|`` there.
    """

    hs: list
    gaps: list
    per_function: list
    interior_gaps: list
    neighbor_counts: list
    provenance: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


def relative_gap(L_h, L_t, f, floor: float = 1e-6) -> float:
    """``|f'(L_h - L_t)f| / |f' L_t f|``, or 0 when both forms are below ``floor * |f|^2``."""
    qh = quadratic_form(L_h, f)
    qt = quadratic_form(L_t, f)
    ff = float(np.dot(f, f))
    if abs(qh) <= floor * ff and abs(qt) <= floor * ff:
        return 0.0
    return abs(qh - qt) / abs(qt)


def default_test_functions(cloud) -> dict:
    """Smooth chart functions on a unit-ish box: polynomials and trigonometric."""
    u = cloud.intrinsic
    ext = np.asarray(cloud.spec.chart_extent)
    s = (u - cloud.spec.chart_low()) / ext
    a, b = s[:, 0], s[:, 1]
    return {
        "u1^2": a**2,
        "u1*u2": a * b,
        "u1^3": a**3,
        "u1^2*u2": a**2 * b,
        "sin(pi u1)cos(pi u2)": np.sin(np.pi * a) * np.cos(np.pi * b),
        "exp(u1+u2)": np.exp(a + b),
    }


def equivalence_hlle_ltsa(clouds, hs, test_functions=None) -> EquivalenceReport:
    """HLLE and LTSA quadratic forms compared over a bandwidth ladder.

    Both operators use the same mean-centered h-ball frames, so on each
    neighborhood ``L_T - L_H`` is the residual of a local quadratic fit.
    ``test_functions`` maps names to callables ``cloud -> values``
    (default: :func:`default_test_functions`).
    """
    if len(clouds) != len(hs) or len(hs) < 3:
        raise ValidationError("need at least 3 (cloud, h) pairs")
    gaps, per_fn, interior, counts, prov = [], [], [], [], []
    for cloud, h in zip(clouds, hs):
        if cloud.m != 2:
            raise ValidationError("equivalence check needs m = 2")
        graph = build_graph(cloud, h=h)
        frames = local_frames(cloud, graph, cloud.m, ON_MEAN)
        LH = op_hlle(cloud, graph, frames)
        LT = op_ltsa(cloud, graph, frames)
        fns = default_test_functions(cloud) if test_functions is None else {k: g(cloud) for k, g in test_functions.items()}
        if len(fns) < 5:
            raise ValidationError("need at least 5 test functions")
        inner = cloud.boundary_dist > 2 * h
        row, irow = {}, {}
        for name, f in fns.items():
            row[name] = relative_gap(LH, LT, f)
            dt = LT.L @ f
            denom = np.linalg.norm(dt[inner])
            irow[name] = float(np.linalg.norm((LH.L @ f - dt)[inner]) / denom) if denom > 0 else 0.0
        gaps.append(max(row.values()))
        per_fn.append(row)
        interior.append(max(irow.values()))
        counts.append(float(np.mean(graph.sizes())))
        prov.append(_provenance(cloud, h=h, method=["hlle", "ltsa"]))
    return EquivalenceReport(list(map(float, hs)), gaps, per_fn, interior, counts, prov)


def ladder_ok(gaps, max_inversion: float = 0.10) -> bool:
    """Non-increasing sequence, allowing one relative rise of at most ``max_inversion``."""
    rises = [(b - a) / a for a, b in zip(gaps, gaps[1:]) if b > a]
    return len(rises) == 0 or (len(rises) == 1 and rises[0] <= max_inversion)


# --------------------------------------------------------------------------
# smoothness penalties on the segment


def unit_ball_moment(m: int, kernel: str = "gaussian", power: int = 2) -> float:
    """``int_{|v| <= 1} v_1^power k(|v|) dv`` for the truncated kernels used here."""
    prof = (lambda r: np.exp(-r * r)) if kernel == "gaussian" else (lambda r: 1.0)
    sphere = 2 * np.pi ** (m / 2) / _gamma(m / 2)
    if power == 0:
        val, _ = integrate.quad(lambda r: prof(r) * r ** (m - 1), 0, 1, epsabs=1e-13)
        return sphere * val
    # angular average of v_1^2 over the sphere is r^2 / m
    val, _ = integrate.quad(lambda r: prof(r) * r ** (m + 1), 0, 1, epsabs=1e-13)
    return sphere * val / m


def _gamma(x):
    from math import gamma

    return gamma(x)


def penalty_scale(method: str, cloud, h: float, kernel: str = "gaussian") -> float:
    """Factor turning ``f' L f`` into an estimate of ``int |grad f|^2``.

    Derived from the interior expansion of each operator on a uniform sample
    of density ``n / Vol``.
    """
    method = canonical_method(method)
    m, n, vol = cloud.m, cloud.n, cloud.spec.volume
    if method == "laplacian_eigenmaps":
        return 2 * vol**2 / (n**2 * h ** (m + 2) * unit_ball_moment(m, kernel))
    if method == "diffusion_maps":
        return 2 * vol * unit_ball_moment(m, kernel, 0) / (n * h**2 * unit_ball_moment(m, kernel))
    if method == "llr_laplacian":
        return 2 * (m + 2) * vol / (n * h**2)
    if method == "coefficient_laplacian":
        return vol / n
    raise ValidationError(f"no penalty scaling for {method}")


def penalty_family(family: str):
    """``[(label, f, f')]`` for the cosine or signed-power family on [-1, 1]."""
    if family == "cosine":
        return [
            (f"cos_{k}", (lambda x, k=k: np.cos(k * np.pi * (x + 1) / 2)),
             (lambda x, k=k: -k * np.pi / 2 * np.sin(k * np.pi * (x + 1) / 2)))
            for k in range(1, 6)
        ]
    if family == "signed_power":
        out = []
        for i in range(1, 6):
            a = (i + 1) / 3
            out.append((f"signed_power_{i}", (lambda x, a=a: np.sign(x) * np.abs(x) ** a),
                        (lambda x, a=a: a * np.abs(x) ** (a - 1))))
        return out
    raise ValidationError(f"unknown family {family!r}")


def oracle_penalty(dfun, lo: float = -1.0, hi: float = 1.0) -> float:
    """``int_lo^hi f'(x)^2 dx`` by adaptive quadrature split at 0."""
    pieces = [(lo, hi)] if not lo < 0 < hi else [(lo, 0.0), (0.0, hi)]
    total = 0.0
    for a, b in pieces:
        val, err = integrate.quad(lambda x: dfun(x) ** 2, a, b, epsabs=1e-12, epsrel=1e-10, limit=200)
        if not np.isfinite(val) or err > 1e-9 * max(1.0, abs(val)):
            raise EstimationError(f"quadrature did not converge on [{a}, {b}] (error {err:.2g})")
        total += val
    return total


@dataclass(frozen=True, eq=False)
class PenaltyCurve:
    family: str
    labels: list
    truth: list
    penalties: dict
    relative_errors: dict
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    def to_csv(self) -> str:
        methods = sorted(self.penalties)
        lines = [",".join(["function", "truth"] + methods)]
        for j, label in enumerate(self.labels):
            vals = [repr(float(self.truth[j]))] + [repr(float(self.penalties[k][j])) for k in methods]
            lines.append(",".join([label] + vals))
        return "\n".join(lines) + "\n"


def penalty_fidelity(cloud, methods, family: str, h: float, graph=None) -> PenaltyCurve:
    """Scaled ``f' L f`` against ``int |f'|^2`` for a function family on [-1, 1]."""
    spec = cloud.spec
    if spec.kind != "segment":
        raise ValidationError("penalty_fidelity needs a segment cloud")
    lo = spec.params["start"]
    hi = lo + spec.params["length"]
    graph = build_graph(cloud, h=h) if graph is None else graph
    x = cloud.intrinsic[:, 0]
    fam = penalty_family(family)
    truth = [oracle_penalty(df, lo, hi) for _, _, df in fam]
    pens, errs = {}, {}
    for method in methods:
        name = canonical_method(method)
        op = build_operator(name, cloud, graph, h=h)
        c = penalty_scale(name, cloud, h)
        pens[name] = [c * quadratic_form(op, fn(x)) for _, fn, _ in fam]
        errs[name] = [(p - t) / t for p, t in zip(pens[name], truth)]
    return PenaltyCurve(family, [lab for lab, _, _ in fam], truth, pens, errs,
                        _provenance(cloud, h=h, methods=sorted(pens)))


# --------------------------------------------------------------------------
# spectra on the segment


def participation(vectors) -> np.ndarray:
    """``n * sum v^4 / (sum v^2)^2`` per column: ~1.5 for a cosine, n for a spike."""
    V = np.asarray(vectors, dtype=float)
    V = V[:, None] if V.ndim == 1 else V
    return len(V) * np.sum(V**4, axis=0) / np.sum(V**2, axis=0) ** 2


def _abs_corr(a, b) -> float:
    a = a - a.mean()
    b = b - b.mean()
    return float(abs(a @ b) / (np.linalg.norm(a) * np.linalg.norm(b)))


def spectrum_compare(cloud, methods, p: int, h: float, graph=None) -> dict:
    """Bottom ``p`` nontrivial eigenpairs per method, normalized by the first.

    Eigenvalues inside the null-space tolerance are kept in ``spectrum`` but
    skipped when normalizing and when computing gaps.  Besides ratios ``lambda_k / lambda_1`` it reports the gap statistic
    ``min gap / mean gap``, the largest participation of the bottom vectors
    and correlations of the first one with ``cos(pi s)`` and ``s`` (``s`` the
    chart coordinate rescaled to [0, 1]).
    """
    if cloud.spec.kind != "segment":
        raise ValidationError("spectrum_compare needs a segment cloud")
    graph = build_graph(cloud, h=h) if graph is None else graph
    s = (cloud.intrinsic[:, 0] - cloud.spec.chart_low()[0]) / cloud.spec.chart_extent[0]
    out = {}
    for method in methods:
        name = canonical_method(method)
        if name not in SPECTRUM_METHODS:
            raise ValidationError(f"spectrum_compare does not support {name}")
        emb = embed(build_operator(name, cloud, graph, h=h), p)
        lam = np.asarray(emb.spectrum)
        first = emb.coords[:, 0]
        # null eigenvalues (linear functions for second-order conditions) are
        # reported but not used for normalization
        live = lam > NULL_TOL * (emb.lambda_max or 1.0)
        lam1 = lam[live][0] if live.any() else np.nan
        gaps = np.diff(lam[live])
        out[name] = {
            "spectrum": lam,
            "ratios": lam / lam1,
            "null_count": int(np.sum(~live)),
            "min_gap_over_mean_gap": float(gaps.min() / gaps.mean()) if len(gaps) else np.nan,
            "max_participation": float(participation(emb.coords).max()),
            "corr_cos": _abs_corr(first, np.cos(np.pi * s)),
            "corr_linear": _abs_corr(first, s),
            "bottom_vector": first,
            "clusters": emb.clusters,
        }
    out["provenance"] = _provenance(cloud, h=h, p=p)
    return _jsonable(out)


# --------------------------------------------------------------------------
# pointwise bias rates


def interior_bias_scaling(clouds, hs, method: str, f, *, kernel: str = "gaussian", noise_floor: float = 1e-10) -> dict:
    """Log-log slopes of the smoother residual ``(I - S) f`` against ``h``.

    ``interior`` uses points farther than ``h`` from the boundary, ``boundary``
    points within ``0.1 h`` of it; each rung takes the max absolute residual.
    ``f`` is a callable on chart coordinates.  Residuals at the noise floor on
    every rung are reported as an exact null space.
    """
    if not hasattr(clouds, "__len__") or hasattr(clouds, "points"):
        clouds = [clouds] * len(hs)
    if len(hs) < 3 or len(clouds) != len(hs):
        raise ValidationError("need at least 3 rungs")
    name = canonical_method(method)
    inner, edge = [], []
    for cloud, h in zip(clouds, hs):
        graph = build_graph(cloud, h=h)
        op = build_operator(name, cloud, graph, h=h, kernel=kernel)
        vals = np.asarray(f(cloud.intrinsic), dtype=float).ravel()
        if op.smoother is not None:
            r = vals - op.smoother @ vals
        else:
            r = op.L @ vals
        scale = max(float(np.abs(vals).max()), 1.0)
        ii = cloud.boundary_dist > h
        bb = cloud.boundary_dist <= 0.1 * h
        inner.append(float(np.abs(r[ii]).max()) / scale if ii.any() else np.nan)
        edge.append(float(np.abs(r[bb]).max()) / scale if bb.any() else np.nan)

    def fit(res):
        res = np.asarray(res)
        if np.any(np.isnan(res)):
            return None, "no points"
        if np.all(res <= noise_floor):
            return None, "exact null space"
        if np.any(res <= noise_floor):
            raise InconclusiveError("residuals at the noise floor on some rungs only")
        slope = np.polyfit(np.log(hs), np.log(res), 1)[0]
        return float(slope), "ok"

    e_in, s_in = fit(inner)
    e_bd, s_bd = fit(edge)
    return {
        "method": name,
        "hs": list(map(float, hs)),
        "interior_residuals": inner,
        "boundary_residuals": edge,
        "interior_exponent": e_in,
        "boundary_exponent": e_bd,
        "interior_status": s_in,
        "boundary_status": s_bd,
        "provenance": _provenance(clouds[0], method=name, kernel=kernel),
    }


def penalty_nullspace_contrast(cloud, h: float, f=None) -> dict:
    """Scaled ``|L_LE f|^2`` versus the HLLE penalty, both over interior points.

    The first estimates ``int (lap f)^2`` and the second ``int |Hess f|_F^2``
    over the points farther than ``h`` from the boundary.  ``f`` defaults to
    ``u1 * u2``, harmonic but with a nonzero Hessian.
    """
    if cloud.m != 2:
        raise ValidationError("penalty_nullspace_contrast needs m = 2")
    u = cloud.intrinsic
    vals = u[:, 0] * u[:, 1] if f is None else np.asarray(f(u), dtype=float).ravel()
    graph = build_graph(cloud, h=h)
    inner = np.flatnonzero(cloud.boundary_dist > h)
    n, m, vol = cloud.n, cloud.m, cloud.spec.volume
    area = vol * len(inner) / n

    le = op_laplacian_eigenmaps(cloud, graph, h=h)
    # (L f)_i ~ -(n / vol) (h^(m+2) M2 / 2) lap f
    lap = -(le.L @ vals) * 2 * vol / (n * h ** (m + 2) * unit_ball_moment(m))
    j_lap = float(np.mean(lap[inner] ** 2) * area)

    blocks = hlle_blocks([local_frame(cloud, graph, i, m, ON_MEAN) for i in inner])
    local = np.array([np.sum((Zt.T @ vals[mem]) ** 2) for mem, Zt in blocks])
    sizes = np.array([len(mem) for mem, _ in blocks])
    # |Q f|^2 ~ |N| h^4 |Hess f|_F^2 / (2 (m+2)(m+4)) for uniform h-balls
    j_hlle = float(np.mean(local * 2 * (m + 2) * (m + 4) / (h**4 * sizes)) * area)
    return {
        "j_laplacian_squared": j_lap,
        "j_hlle": j_hlle,
        "interior_area": area,
        "provenance": _provenance(cloud, h=h),
    }

