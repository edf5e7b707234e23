"""Bias operators ``L = G(I - S)`` for local spectral embedding methods.

Each constructor turns per-neighborhood local regressions into a sparse
``n x n`` matrix.  Weight-based methods (diffusion maps, Laplacian eigenmaps,
the LLE family, local linear regression) expose the smoother ``S`` (or ``W``)
as :attr:`BiasOperator.smoother`.  The quadratic-form methods (HLLE, LTSA,
coefficient Laplacian) are sums of local Gram blocks ``A_i Q_i A_i^T`` where
``A_i`` scatters neighborhood rows into global indices; they are assembled as
``G^T G`` from the stacked local functionals.

Operators are stored unscaled; ``scale_exponent`` records the power of ``h``
that would give a non-trivial limit (e.g. ``-2`` for Laplacians).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

from .errors import DegenerateFrameError, SingularWeightsError, ValidationError
from .neighborhoods import ON_MEAN, ON_POINT, NeighborhoodGraph, _points, local_frames

# method -> (symmetric, psd_claimed, smoother_order, scale_exponent)
METHODS = {
    "diffusion_maps": (False, False, 0, -2),
    "laplacian_eigenmaps": (True, True, 0, -2),
    "lle": (True, False, 2, -4),
    "ldr_lle": (True, False, 2, -4),
    "ldr_lle_plus": (True, False, 1, -4),
    "hlle": (True, True, 2, -4),
    "ltsa": (True, True, 1, -4),
    "llr_laplacian": (False, False, 1, -2),
    "coefficient_laplacian": (True, True, 1, 0),
}

# methods whose eigenproblem is numerically fragile
UNSTABLE = {"lle", "ldr_lle"}

PINV_RCOND = 1e-10


@dataclass(frozen=True, eq=False)
class BiasOperator:
    L: sparse.csr_matrix
    method: str
    symmetric: bool
    psd_claimed: bool
    smoother_order: int
    scale_exponent: int
    h: float | None
    smoother: sparse.csr_matrix | None = None
    params: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.L.shape[0]

    @property
    def stable(self) -> bool:
        return self.method not in UNSTABLE

    def metadata(self) -> dict:
        return {
            "method": self.method,
            "n": self.n,
            "symmetric": self.symmetric,
            "psd": self.psd_claimed,
            "smoother_order": self.smoother_order,
            "scale_exponent": self.scale_exponent,
            "h": self.h,
            "stable": self.stable,
            "params": self.params,
        }


def _make(method, L, h, smoother=None, **params) -> BiasOperator:
    symmetric, psd, order, scale = METHODS[method]
    L = sparse.csr_matrix(L)
    L.sum_duplicates()
    L.sort_indices()
    if smoother is not None:
        smoother = sparse.csr_matrix(smoother)
        smoother.sort_indices()
    return BiasOperator(L, method, symmetric, psd, order, scale, h, smoother, params)


def _stack_rows(n, blocks) -> sparse.csr_matrix:
    """Stack local functionals ``(members, R)`` (R is r x |N|) into a sparse matrix.

    For Gram-type operators ``L = sum_i A_i R_i^T R_i A_i^T = G^T G`` where G
    is this stacked matrix, which avoids materializing every |N| x |N| block.
    """
    rows, cols, vals = [], [], []
    offset = 0
    for members, R in blocks:
        r, k = R.shape
        rows.append(np.repeat(np.arange(offset, offset + r), k))
        cols.append(np.tile(members, r))
        vals.append(R.ravel())
        offset += r
    if not rows:
        return sparse.csr_matrix((0, n))
    return sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(offset, n)
    )


def _gram(n, blocks) -> sparse.csr_matrix:
    G = _stack_rows(n, blocks)
    L = (G.T @ G).tocsr()
    return 0.5 * (L + L.T)


def _rows_to_csr(n, rows) -> sparse.csr_matrix:
    """Assemble sparse rows given as ``(columns, weights)`` per row index."""
    sizes = [len(c) for c, _ in rows]
    r = np.repeat(np.arange(n), sizes)
    c = np.concatenate([c for c, _ in rows])
    v = np.concatenate([w for _, w in rows])
    return sparse.csr_matrix((v, (r, c)), shape=(n, n))


def _resolve_m(cloud, m):
    if m is not None:
        return int(m)
    spec = getattr(cloud, "spec", None)
    if spec is None:
        raise ValidationError("intrinsic dimension m is required for raw point arrays")
    return spec.m


def _resolve_frames(cloud, graph, frames, m, centering):
    if frames is None:
        return local_frames(cloud, graph, _resolve_m(cloud, m), centering)
    if len(frames) != graph.n:
        raise ValidationError("need one frame per point")
    return frames


# --------------------------------------------------------------------------
# kernel smoothers


def kernel_matrix(cloud, graph: NeighborhoodGraph, h: float | None = None, kernel: str = "gaussian"):
    """Truncated kernel ``K`` on the closed neighborhoods, ``K_ii = 1``.

    ``kernel="gaussian"`` uses ``exp(-|x_i - x_j|^2 / h^2)``; ``"unit"`` puts 1
    on every edge.  kNN patterns are symmetrized by union.
    """
    pts = _points(cloud)
    n = graph.n
    if kernel == "gaussian":
        h = graph.h if h is None else float(h)
        if h is None or not h > 0:
            raise ValidationError("gaussian kernel needs a positive width h")
    elif kernel != "unit":
        raise ValidationError(f"unknown kernel {kernel!r}")
    rows = np.repeat(np.arange(n), [len(graph.open(i)) for i in range(n)])
    cols = np.concatenate([graph.open(i) for i in range(n)]) if n else np.zeros(0, dtype=int)
    pattern = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    pattern = ((pattern + pattern.T) > 0).tocoo()
    r, c = pattern.row, pattern.col
    if kernel == "gaussian":
        d2 = np.sum((pts[r] - pts[c]) ** 2, axis=1)
        vals = np.exp(-d2 / h**2)
    else:
        vals = np.ones(len(r))
    K = sparse.csr_matrix((vals, (r, c)), shape=(n, n)) + sparse.identity(n, format="csr")
    K.sort_indices()
    return K, h


def op_diffusion_maps(cloud, graph, h=None, kernel="gaussian") -> BiasOperator:
    """``L = I - D^{-1} K``: the bias of the Nadaraya-Watson smoother."""
    K, h = kernel_matrix(cloud, graph, h, kernel)
    deg = np.asarray(K.sum(axis=1)).ravel()
    S = sparse.diags(1.0 / deg) @ K
    L = sparse.identity(graph.n, format="csr") - S
    return _make("diffusion_maps", L, h, smoother=S, kernel=kernel)


def op_laplacian_eigenmaps(cloud, graph, h=None, kernel="gaussian") -> BiasOperator:
    """Unnormalized graph Laplacian ``D - K = D (I - D^{-1} K)``."""
    K, h = kernel_matrix(cloud, graph, h, kernel)
    deg = np.asarray(K.sum(axis=1)).ravel()
    S = sparse.diags(1.0 / deg) @ K
    L = sparse.diags(deg) - K
    return _make("laplacian_eigenmaps", L, h, smoother=S, kernel=kernel)


# --------------------------------------------------------------------------
# LLE family


def default_ridge(centered: np.ndarray) -> float:
    """Scale-free ridge ``1e-3 * trace(X X^T) / |N|`` for one neighborhood."""
    return 1e-3 * float(np.sum(centered**2)) / len(centered)


def lle_weights(centered: np.ndarray, ridge: float) -> np.ndarray:
    """Sum-to-one ridge reconstruction weights from the SVD form.

    With ``centered = U D V^T`` the weights are proportional to
    ``1 - U (I - ridge (D^2 + ridge)^{-1}) U^T 1``.  ``ridge = 0`` requires a
    full-rank Gram matrix.
    """
    k = len(centered)
    ones = np.ones(k)
    U, sv, _ = np.linalg.svd(centered, full_matrices=False)
    if ridge < 0:
        raise ValidationError("ridge must be non-negative")
    if ridge == 0:
        rank = int(np.sum(sv > PINV_RCOND * (sv[0] if len(sv) else 0.0)))
        if rank < k:
            raise SingularWeightsError(
                "rank-deficient Gram matrix with zero ridge; use a ridge > 0 (e.g. --lambda 1e-3)"
            )
        w = U @ ((U.T @ ones) / sv**2)
    else:
        shrink = sv**2 / (sv**2 + ridge)
        w = ones - U @ (shrink * (U.T @ ones))
    total = w.sum()
    if abs(total) < 1e-12 * max(1.0, np.abs(w).max()):
        raise SingularWeightsError("reconstruction weights sum to zero")
    return w / total


def _lle_operator(method, cloud, W, h, **params) -> BiasOperator:
    n = W.shape[0]
    IW = sparse.identity(n, format="csr") - W
    M = (IW.T @ IW).tocsr()
    # exact symmetry: the product is symmetric up to rounding
    M = 0.5 * (M + M.T)
    return _make(method, M, h, smoother=W, **params)


def op_lle(cloud, graph, ridge: float | None = None) -> BiasOperator:
    """Locally linear embedding, ``M = (I - W)^T (I - W)``.

    ``ridge=None`` uses :func:`default_ridge` per neighborhood.
    """
    pts = _points(cloud)
    rows = []
    for i in range(graph.n):
        nb = graph.open(i)
        centered = pts[nb] - pts[i]
        lam = default_ridge(centered) if ridge is None else float(ridge)
        rows.append((nb, lle_weights(centered, lam)))
    return _lle_operator("lle", cloud, _rows_to_csr(graph.n, rows), graph.h, ridge=ridge)


def _open_tangent(pts, frame):
    """Open-neighborhood indices, centered rows and orthonormal tangent columns."""
    keep = frame.members != frame.center_index
    members = frame.members[keep]
    centered = pts[members] - pts[frame.center_index]
    U_t = frame.left_singular_vectors()[keep]
    return members, centered, U_t


def op_ldr_lle(cloud, graph, frames=None, ridge: float | None = None, *, m=None) -> BiasOperator:
    """Low-dimensional-representation LLE.

    Tangent coordinates are reconstructed exactly (weights orthogonal to the
    tangent columns); the correction in the remaining span of the neighborhood
    follows the LLE ridge path, so the weights are
    ``1 - U_t U_t^T 1 - U_n D_n^2 (D_n^2 + ridge)^{-1} U_n^T 1`` normalized.
    """
    frames = _resolve_frames(cloud, graph, frames, m, ON_POINT)
    pts = _points(cloud)
    rows = []
    for frame in frames:
        members, centered, U_t = _open_tangent(pts, frame)
        ones = np.ones(len(members))
        # remove the tangent part of the ambient rows, keep the normal span
        normal = centered - (centered @ frame.tangent_basis) @ frame.tangent_basis.T
        U_n, sv_n, _ = np.linalg.svd(normal, full_matrices=False)
        if len(sv_n) and sv_n[0] > 0:
            nz = sv_n > PINV_RCOND * np.linalg.norm(centered, 2)
            U_n, sv_n = U_n[:, nz], sv_n[nz]
        else:
            U_n, sv_n = U_n[:, :0], sv_n[:0]
        lam = default_ridge(centered) if ridge is None else float(ridge)
        shrink = sv_n**2 / (sv_n**2 + lam) if lam > 0 else np.ones_like(sv_n)
        w = ones - U_t @ (U_t.T @ ones) - U_n @ (shrink * (U_n.T @ ones))
        rows.append((members, _normalize_weights(w, frame.center_index)))
    W = _rows_to_csr(graph.n, rows)
    return _lle_operator("ldr_lle", cloud, W, graph.h, ridge=ridge)


def _normalize_weights(w, center):
    total = w.sum()
    if abs(total) < 1e-12:
        raise SingularWeightsError(f"point {center}: weights sum to ~0, cannot normalize")
    return w / total


def op_ldr_lle_plus(cloud, graph, frames=None, *, m=None) -> BiasOperator:
    """LDR-LLE+: weights ``1 - U_{1:m} U_{1:m}^T 1`` normalized to sum to one."""
    frames = _resolve_frames(cloud, graph, frames, m, ON_POINT)
    pts = _points(cloud)
    rows = []
    for frame in frames:
        members, _, U_t = _open_tangent(pts, frame)
        if len(members) < U_t.shape[1] + 1:
            raise DegenerateFrameError(f"point {frame.center_index}: need at least m+1 neighbors")
        ones = np.ones(len(members))
        w = ones - U_t @ (U_t.T @ ones)
        rows.append((members, _normalize_weights(w, frame.center_index)))
    W = _rows_to_csr(graph.n, rows)
    return _lle_operator("ldr_lle_plus", cloud, W, graph.h)


# --------------------------------------------------------------------------
# Hessian / tangent alignment


def quadratic_monomials(tau: np.ndarray) -> np.ndarray:
    """All degree-2 monomials ``tau_a tau_b`` (a <= b), column-stacked."""
    m = tau.shape[1]
    cols = [tau[:, a] * tau[:, b] for a in range(m) for b in range(a, m)]
    return np.stack(cols, axis=1)


def gram_schmidt(Z: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Classical Gram-Schmidt with one re-orthogonalization pass per column."""
    Q = np.zeros_like(Z, dtype=float)
    for j in range(Z.shape[1]):
        v = Z[:, j].astype(float)
        scale = np.linalg.norm(v)
        for _ in range(2):
            v = v - Q[:, :j] @ (Q[:, :j].T @ v)
        norm = np.linalg.norm(v)
        if norm < tol or norm < tol * scale:
            raise DegenerateFrameError(f"Gram-Schmidt breakdown at column {j} (norm {norm:.3g})")
        Q[:, j] = v / norm
    return Q


def hlle_blocks(frames) -> list:
    """``(members, Z_tilde)`` per neighborhood: orthonormal quadratic frame vectors."""
    blocks = []
    for frame in frames:
        tau = frame.tangent_coords
        k, m = tau.shape
        if k < 1 + m + m * (m + 1) // 2:
            raise DegenerateFrameError(
                f"point {frame.center_index}: HLLE needs {1 + m + m * (m + 1) // 2} points, got {k}"
            )
        Z = np.hstack([np.ones((k, 1)), tau, quadratic_monomials(tau)])
        try:
            Q = gram_schmidt(Z)
        except DegenerateFrameError as exc:
            raise DegenerateFrameError(f"point {frame.center_index}: degenerate quadratic frame ({exc})") from None
        blocks.append((frame.members, Q[:, m + 1 :]))
    return blocks


def ltsa_blocks(frames) -> list:
    """``(members, G)`` with G an orthonormal basis of span{1, tau_1..tau_m}."""
    blocks = []
    for frame in frames:
        tau = frame.tangent_coords
        k, m = tau.shape
        design = np.hstack([np.ones((k, 1)), tau])
        G, R = np.linalg.qr(design)
        diag = np.abs(np.diag(R))
        if diag.min() < 1e-12 * diag.max():
            raise DegenerateFrameError(f"point {frame.center_index}: rank-deficient tangent coordinates")
        blocks.append((frame.members, G))
    return blocks


def op_hlle(cloud, graph, frames=None, *, m=None) -> BiasOperator:
    """Hessian LLE: ``L = sum_i A_i Zt_i Zt_i^T A_i^T``."""
    frames = _resolve_frames(cloud, graph, frames, m, ON_MEAN)
    L = _gram(graph.n, [(mem, Zt.T) for mem, Zt in hlle_blocks(frames)])
    return _make("hlle", L, graph.h)


def op_ltsa(cloud, graph, frames=None, *, m=None) -> BiasOperator:
    """Local tangent space alignment: ``L = sum_i A_i (I - P_i) A_i^T``."""
    frames = _resolve_frames(cloud, graph, frames, m, ON_MEAN)
    blocks = ltsa_blocks(frames)
    # sum_i A_i (I - G_i G_i^T) A_i^T = diag(membership counts) - sum_i A_i G_i G_i^T A_i^T
    counts = np.bincount(np.concatenate([mem for mem, _ in blocks]), minlength=graph.n)
    L = sparse.diags(counts.astype(float)) - _gram(graph.n, [(mem, G.T) for mem, G in blocks])
    return _make("ltsa", L, graph.h)


# --------------------------------------------------------------------------
# local linear regression


def llr_rows(frames) -> list:
    """Per point: (members, weights) predicting the value at the center."""
    rows = []
    for frame in frames:
        tau = frame.tangent_coords
        k, m = tau.shape
        design = np.hstack([np.ones((k, 1)), tau])
        if np.linalg.matrix_rank(design, tol=PINV_RCOND * np.abs(design).max()) < m + 1:
            raise DegenerateFrameError(f"point {frame.center_index}: singular local linear design")
        pinv = np.linalg.pinv(design, rcond=PINV_RCOND)
        x0 = np.concatenate([[1.0], tau[frame.center_row]])
        rows.append((frame.members, x0 @ pinv))
    return rows


def op_llr_laplacian(cloud, graph, frames=None, *, m=None) -> BiasOperator:
    """Local linear regression bias ``I - S`` on tangent coordinates."""
    frames = _resolve_frames(cloud, graph, frames, m, ON_POINT)
    S = _rows_to_csr(graph.n, llr_rows(frames))
    L = sparse.identity(graph.n, format="csr") - S
    return _make("llr_laplacian", L, graph.h, smoother=S)


def coefficient_blocks(frames) -> list:
    """``(members, B)`` with ``B f`` the no-intercept slope of ``f - f_center``."""
    blocks = []
    for frame in frames:
        tau = frame.tangent_coords
        k, m = tau.shape
        gram = tau.T @ tau
        sv = np.linalg.svd(gram, compute_uv=False)
        if sv[-1] <= PINV_RCOND * sv[0]:
            raise DegenerateFrameError(f"point {frame.center_index}: singular tangent Gram matrix")
        center = np.zeros((1, k))
        center[0, frame.center_row] = 1.0
        B = np.linalg.solve(gram, tau.T) @ (np.eye(k) - np.ones((k, 1)) @ center)
        blocks.append((frame.members, B))
    return blocks


def op_coefficient_laplacian(cloud, graph, frames=None, *, m=None) -> BiasOperator:
    """Coefficient Laplacian: ``L = sum_i A_i B_i^T B_i A_i^T``.

    ``f^T L f`` is the sum over points of the squared local gradient estimate,
    so it is consistent as a smoothness penalty without boundary conditions.
    """
    frames = _resolve_frames(cloud, graph, frames, m, ON_POINT)
    L = _gram(graph.n, coefficient_blocks(frames))
    return _make("coefficient_laplacian", L, graph.h)


# --------------------------------------------------------------------------
# generic helpers

BUILDERS = {
    "diffusion_maps": op_diffusion_maps,
    "laplacian_eigenmaps": op_laplacian_eigenmaps,
    "lle": op_lle,
    "ldr_lle": op_ldr_lle,
    "ldr_lle_plus": op_ldr_lle_plus,
    "hlle": op_hlle,
    "ltsa": op_ltsa,
    "llr_laplacian": op_llr_laplacian,
    "coefficient_laplacian": op_coefficient_laplacian,
}

ALIASES = {"dm": "diffusion_maps", "le": "laplacian_eigenmaps", "llr": "llr_laplacian", "cl": "coefficient_laplacian"}


def canonical_method(name: str) -> str:
    name = ALIASES.get(name, name)
    if name not in BUILDERS:
        raise ValidationError(f"unknown method {name!r}; expected one of {sorted(BUILDERS)}")
    return name


def build_operator(method: str, cloud, graph, *, ridge=None, h=None, kernel="gaussian", m=None) -> BiasOperator:
    """Dispatch by method name with the relevant keyword subset."""
    method = canonical_method(method)
    if method in ("diffusion_maps", "laplacian_eigenmaps"):
        return BUILDERS[method](cloud, graph, h=h, kernel=kernel)
    if method == "lle":
        return op_lle(cloud, graph, ridge=ridge)
    if method == "ldr_lle":
        return op_ldr_lle(cloud, graph, ridge=ridge, m=m)
    return BUILDERS[method](cloud, graph, m=m)


def quadratic_form(op: BiasOperator, f) -> float:
    """``f^T L f``."""
    f = _check_vector(op, f)
    return float(f @ (op.L @ f))


def apply(op: BiasOperator, f) -> np.ndarray:
    """``L f`` (``f`` may also be an ``(n, p)`` block of columns)."""
    f = _check_vector(op, f)
    return op.L @ f


def _check_vector(op, f):
    f = np.asarray(f, dtype=float)
    if f.shape[0] != op.n:
        raise ValidationError(f"dimension mismatch: operator is {op.n}x{op.n}, vector has {f.shape[0]} rows")
    return f


def save_operator(op: BiasOperator, csv_path, extra_meta: dict | None = None) -> Path:
    """Write ``L`` as ``row,col,value`` CSV plus a JSON metadata sidecar."""
    csv_path = Path(csv_path)
    coo = op.L.tocoo()
    order = np.lexsort((coo.col, coo.row))
    lines = ["row,col,value"]
    lines += [f"{r},{c},{v!r}" for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order].tolist())]
    csv_path.write_text("\n".join(lines) + "\n")
    meta = op.metadata()
    meta.update(extra_meta or {})
    sidecar = csv_path.with_name(csv_path.stem + ".meta.json")
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return sidecar


def load_operator(csv_path) -> BiasOperator:
    csv_path = Path(csv_path)
    meta = json.loads(csv_path.with_name(csv_path.stem + ".meta.json").read_text())
    data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    n = meta["n"]
    rows = data[:, 0].astype(int) if len(data) else np.zeros(0, int)
    cols = data[:, 1].astype(int) if len(data) else np.zeros(0, int)
    vals = data[:, 2] if len(data) else np.zeros(0)
    L = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
    L.sort_indices()
    method = meta["method"]
    symmetric, psd, order, scale = METHODS[method]
    return BiasOperator(L, method, symmetric, psd, order, scale, meta["h"], None, meta.get("params", {}))
