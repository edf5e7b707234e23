"""Bottom eigenpairs of bias operators, embeddings and alignment utilities."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from .errors import SolverError, ValidationError

DENSE_LIMIT = 2000
EXTRA_PAIRS = 3
RESIDUAL_TOL = 1e-6
NULL_TOL = 1e-10


def eigen_matrix(op) -> sparse.csr_matrix:
    """Symmetric matrix whose bottom eigenvectors define the embedding.

    Symmetric operators are used as is; asymmetric ones through ``L^T L``, whose
    eigenvectors are the right singular vectors of ``L``.
    """
    L = op.L if sparse.issparse(op.L) else sparse.csr_matrix(op.L)
    A = L if op.symmetric else (L.T @ L)
    A = 0.5 * (A + A.T)
    return sparse.csr_matrix(A)


def fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so that each one's largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def largest_eigenvalue(A) -> float:
    n = A.shape[0]
    if n <= DENSE_LIMIT:
        dense = A.toarray() if sparse.issparse(A) else np.asarray(A)
        return float(scipy.linalg.eigvalsh(dense, subset_by_index=[n - 1, n - 1])[0])
    v0 = np.ones(n) / np.sqrt(n)
    return float(eigsh(A, k=1, which="LA", v0=v0, return_eigenvectors=False, tol=1e-8)[0])


def _dense_bottom(A, q):
    dense = A.toarray() if sparse.issparse(A) else np.asarray(A)
    vals, vecs = scipy.linalg.eigh(dense, subset_by_index=[0, q - 1])
    return vals, vecs


def _iterative_bottom(A, q, maxiter):
    n = A.shape[0]
    norm = float(abs(A).sum(axis=1).max()) or 1.0
    # shift-invert just below zero: every operator handled here is PSD, so the
    # eigenvalues nearest the shift are the smallest ones
    sigma = -1e-6 * norm
    v0 = np.ones(n) / np.sqrt(n) + 1e-3 * np.cos(np.arange(n))
    try:
        vals, vecs = eigsh(A.tocsc(), k=q, sigma=sigma, which="LM", v0=v0, maxiter=maxiter, tol=1e-12)
    except ArpackNoConvergence as exc:
        res = [float(np.linalg.norm(A @ v - lam * v)) for lam, v in zip(exc.eigenvalues, exc.eigenvectors.T)]
        raise SolverError(f"eigensolver did not converge after {maxiter} iterations; residuals {res}") from None
    order = np.argsort(vals)
    return vals[order], vecs[:, order]


def bottom_eigenpairs(op, p: int, solver: str = "auto", maxiter: int | None = None):
    """The ``p`` smallest eigenpairs of :func:`eigen_matrix` (ascending).

    ``solver`` is ``"dense"``, ``"iterative"`` or ``"auto"`` (dense for
    n <= 2000).  Every returned pair is checked against
    ``|A v - lambda v| <= 1e-6 |A|``; signs follow :func:`fix_signs`.
    """
    A = eigen_matrix(op) if hasattr(op, "method") else sparse.csr_matrix(op)
    n = A.shape[0]
    if not 1 <= p < n:
        raise ValidationError(f"need 1 <= p < n, got p={p}, n={n}")
    if solver == "auto":
        solver = "dense" if n <= DENSE_LIMIT else "iterative"
    if solver == "dense":
        vals, vecs = _dense_bottom(A, p)
    elif solver == "iterative":
        vals, vecs = _iterative_bottom(A, p, maxiter or 20 * n)
    else:
        raise ValidationError(f"unknown solver {solver!r}")
    scale = max(float(abs(A).sum(axis=1).max()), np.finfo(float).tiny)
    resid = np.linalg.norm(A @ vecs - vecs * vals, axis=0)
    if np.any(resid > RESIDUAL_TOL * scale):
        raise SolverError(f"eigenpair residuals {resid.max():.3g} exceed {RESIDUAL_TOL} * |A| = {RESIDUAL_TOL * scale:.3g}")
    return vals, fix_signs(vecs)


def eigenvalue_clusters(values, rel_tol: float = 1e-3) -> list:
    """Group ascending eigenvalues whose consecutive gaps are tiny.

    A gap counts as tiny when below ``rel_tol`` times the spread of the
    returned values.  Returns lists of indices; singletons included.
    """
    values = np.asarray(values)
    spread = max(float(values[-1] - values[0]), np.finfo(float).tiny)
    clusters = [[0]]
    for j in range(1, len(values)):
        if values[j] - values[j - 1] <= rel_tol * spread:
            clusters[-1].append(j)
        else:
            clusters.append([j])
    return clusters


@dataclass(frozen=True, eq=False)
class Embedding:
    coords: np.ndarray
    spectrum: np.ndarray
    method: dict
    dropped_trivial: bool
    clusters: list = field(default_factory=list)
    lambda_max: float | None = None

    @property
    def p(self) -> int:
        return self.coords.shape[1]


def _split_trivial(vals, vecs, lam_max):
    """Rotate the near-null eigenspace so the constant vector is its first column."""
    n = vecs.shape[0]
    null = np.flatnonzero(vals <= NULL_TOL * lam_max)
    if len(null) == 0:
        return None
    ones = np.ones(n) / np.sqrt(n)
    V0 = vecs[:, null]
    coef = V0.T @ ones
    if np.linalg.norm(coef) < 1 - 1e-6:
        return None
    const = V0 @ coef
    const /= np.linalg.norm(const)
    # orthonormal complement of the constant inside the null space
    rest = V0 - np.outer(const, const @ V0)
    if len(null) > 1:
        Uq, sq, _ = np.linalg.svd(rest, full_matrices=False)
        rest = Uq[:, : len(null) - 1]
    else:
        rest = rest[:, :0]
    return null, const, rest


def embed(op, p: int, drop_trivial: bool = True, solver: str = "auto") -> Embedding:
    """Spectral embedding from the bottom eigenvectors of ``op``.

    ``p + 3`` pairs are computed to expose near-degenerate clusters before
    truncation.  With ``drop_trivial`` the constant vector is removed; when the
    null space is degenerate (e.g. LTSA on flat data) it is first rotated so the
    constant is one of its basis vectors.
    """
    A = eigen_matrix(op)
    n = A.shape[0]
    q = min(p + (1 if drop_trivial else 0) + EXTRA_PAIRS, n - 1)
    vals, vecs = bottom_eigenpairs(op, q, solver=solver)
    lam_max = largest_eigenvalue(A)
    dropped = False
    if drop_trivial:
        split = _split_trivial(vals, vecs, lam_max)
        if split is not None:
            null, const, rest = split
            if rest.shape[1]:
                rq = np.einsum("ij,ij->j", rest, A @ rest)
                order = np.argsort(rq)
                rest, rq = rest[:, order], rq[order]
            else:
                rq = np.zeros(0)
            others = np.setdiff1d(np.arange(len(vals)), null)
            vecs = np.hstack([rest, vecs[:, others]])
            vals = np.concatenate([rq, vals[others]])
            dropped = True
        else:
            v0 = vecs[:, 0]
            cv = np.std(v0) / max(abs(np.mean(v0)), np.finfo(float).tiny)
            if vals[0] <= NULL_TOL * lam_max and cv < 1e-4:
                vecs, vals = vecs[:, 1:], vals[1:]
                dropped = True
    if vecs.shape[1] < p:
        raise SolverError(f"only {vecs.shape[1]} eigenvectors available after removing the trivial one")
    clusters = eigenvalue_clusters(vals)
    spectrum = np.maximum(vals[:p], 0.0)
    coords = fix_signs(vecs[:, :p])
    meta = op.metadata() if hasattr(op, "metadata") else {}
    return Embedding(coords, spectrum, meta, dropped, clusters, lam_max)


@dataclass(frozen=True)
class SimilarityTransform:
    rotation: np.ndarray
    scale: float
    shift: np.ndarray

    def __call__(self, A):
        return self.scale * np.asarray(A) @ self.rotation + self.shift


def align_procrustes(A, B, affine: bool = False):
    """Best similarity (orthogonal map + scale + shift) taking A onto B.

    Reflections are allowed since eigenvector signs are arbitrary.  The
    residual is ``|T(A) - B|_F / |B - mean(B)|_F``.  With ``affine=True`` a
    general linear map replaces the orthogonal one (stored in ``rotation``,
    with ``scale=1``).
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if B.ndim == 1:
        B = B[:, None]
    if A.shape[0] != B.shape[0]:
        raise ValidationError("A and B need the same number of rows")
    mu_a, mu_b = A.mean(axis=0), B.mean(axis=0)
    Ac, Bc = A - mu_a, B - mu_b
    denom = np.linalg.norm(Bc)
    if denom == 0:
        raise ValidationError("target configuration has zero variance")
    if affine:
        R, *_ = np.linalg.lstsq(Ac, Bc, rcond=None)
        c = 1.0
    else:
        if A.shape != B.shape:
            raise ValidationError("similarity Procrustes needs equal shapes")
        U, s, Vt = np.linalg.svd(Ac.T @ Bc)
        R = U @ Vt
        na = np.sum(Ac**2)
        c = float(s.sum() / na) if na > 0 else 0.0
    T = SimilarityTransform(R, c, mu_b - c * mu_a @ R)
    residual = float(np.linalg.norm(T(A) - B) / denom)
    return residual, T


def canonical_correlations(X, Y) -> np.ndarray:
    """Canonical correlations between the column spans of centered X and Y (descending)."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    X = (X - X.mean(axis=0)).reshape(len(X), -1)
    Y = (Y - Y.mean(axis=0)).reshape(len(Y), -1)
    Qx, _ = np.linalg.qr(X)
    Qy, _ = np.linalg.qr(Y)
    return np.clip(np.linalg.svd(Qx.T @ Qy, compute_uv=False), 0.0, 1.0)


def save_embedding(emb: Embedding, csv_path, extra_meta: dict | None = None) -> Path:
    csv_path = Path(csv_path)
    header = ",".join(f"e_{k + 1}" for k in range(emb.p))
    lines = [header] + [",".join(repr(float(v)) for v in row) for row in emb.coords]
    csv_path.write_text("\n".join(lines) + "\n")
    meta = {
        "spectrum": [float(v) for v in emb.spectrum],
        "method": emb.method,
        "dropped_trivial": emb.dropped_trivial,
        "clusters": emb.clusters,
        "lambda_max": emb.lambda_max,
    }
    meta.update(extra_meta or {})
    sidecar = csv_path.with_suffix(".json")
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return sidecar
