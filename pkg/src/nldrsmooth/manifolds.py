"""Synthetic manifolds with known isometric charts.

Every manifold here is described by a :class:`ManifoldSpec` and sampled into a
:class:`SampleCloud` that carries the ambient points together with the ground
truth chart coordinates and the chart-space distance to the boundary.  The
charts are isometric, so chart distances double as geodesic distances for the
diagnostics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError

KINDS = ("segment", "rectangle", "circle", "swiss_roll_hole")

_DEFAULT_PARAMS = {
    "segment": {"start": 0.0, "length": 1.0},
    "rectangle": {"width": 1.0, "height": 1.0},
    "circle": {"radius": 1.0},
    "swiss_roll_hole": {
        "t_min": 1.5 * np.pi,
        "t_max": 4.5 * np.pi,
        "width": 21.0,
        "hole_radius": 3.0,
    },
}
_INTRINSIC_DIM = {"segment": 1, "rectangle": 2, "circle": 1, "swiss_roll_hole": 2}


def spiral_arclength(t):
    """Arc length of the spiral r = t, measured from t = 0."""
    t = np.asarray(t, dtype=float)
    return 0.5 * (t * np.sqrt(1.0 + t * t) + np.arcsinh(t))


def spiral_angle(s, t_lo, t_hi, tol=1e-10):
    """Invert :func:`spiral_arclength` on ``[t_lo, t_hi]``.

    Bisection to ``tol`` followed by Newton steps (``ds/dt = sqrt(1 + t^2)``),
    so the inverse is smooth to machine precision.
    """
    s = np.asarray(s, dtype=float)
    lo = np.full_like(s, t_lo)
    hi = np.full_like(s, t_hi)
    while np.max(hi - lo, initial=0.0) > tol:
        mid = 0.5 * (lo + hi)
        below = spiral_arclength(mid) < s
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    t = 0.5 * (lo + hi)
    for _ in range(3):
        t = t - (spiral_arclength(t) - s) / np.sqrt(1.0 + t * t)
    return t


@dataclass(frozen=True)
class ManifoldSpec:
    """Geometry of a synthetic manifold.

    ``params`` holds the named lengths for each kind; missing entries are filled
    with defaults.  Swiss roll parameters are ``t_min``, ``t_max`` (angular
    range), ``width``, ``hole_radius`` and optionally ``hole_s``/``hole_w``
    (hole center in the arc-length chart, default mid-chart).
    """

    kind: str
    d: int | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown manifold kind {self.kind!r}; expected one of {KINDS}")
        merged = dict(_DEFAULT_PARAMS[self.kind])
        unknown = set(self.params) - set(merged) - {"hole_s", "hole_w"}
        if unknown:
            raise ValidationError(f"unknown parameters for {self.kind}: {sorted(unknown)}")
        merged.update({k: float(v) for k, v in self.params.items()})
        if self.kind == "swiss_roll_hole":
            s_len = float(spiral_arclength(merged["t_max"]) - spiral_arclength(merged["t_min"]))
            merged.setdefault("hole_s", 0.5 * s_len)
            merged.setdefault("hole_w", 0.5 * merged["width"])
        object.__setattr__(self, "params", merged)

        m = _INTRINSIC_DIM[self.kind]
        d = self.d
        if d is None:
            d = {"segment": 1, "rectangle": 2, "circle": 2, "swiss_roll_hole": 3}[self.kind]
        object.__setattr__(self, "d", int(d))
        if self.kind == "swiss_roll_hole" and self.d != 3:
            raise ValidationError("swiss_roll_hole requires ambient dimension d = 3")
        if self.kind == "circle" and self.d < 2:
            raise ValidationError("circle requires ambient dimension d >= 2")
        if self.d < m:
            raise ValidationError(f"ambient dimension d={self.d} is smaller than m={m}")
        self._validate_lengths()

    def _validate_lengths(self):
        p = self.params
        lengths = {
            "segment": ["length"],
            "rectangle": ["width", "height"],
            "circle": ["radius"],
            "swiss_roll_hole": ["width", "hole_radius"],
        }[self.kind]
        for name in lengths:
            if not p[name] > 0:
                raise ValidationError(f"{name} must be strictly positive, got {p[name]}")
        if self.kind == "swiss_roll_hole":
            if not (0 <= p["t_min"] < p["t_max"]):
                raise ValidationError("swiss roll needs 0 <= t_min < t_max")
            s_len, w_len = self.chart_extent
            cs, cw, r = p["hole_s"], p["hole_w"], p["hole_radius"]
            if not (r < cs < s_len - r and r < cw < w_len - r):
                raise ValidationError("hole not inside chart")

    @property
    def m(self) -> int:
        return _INTRINSIC_DIM[self.kind]

    @property
    def has_boundary(self) -> bool:
        return self.kind != "circle"

    @property
    def chart_extent(self):
        """Side lengths of the chart domain (a box in R^m)."""
        p = self.params
        if self.kind == "segment":
            return (p["length"],)
        if self.kind == "rectangle":
            return (p["width"], p["height"])
        if self.kind == "circle":
            return (2 * np.pi * p["radius"],)
        s_len = float(spiral_arclength(p["t_max"]) - spiral_arclength(p["t_min"]))
        return (s_len, p["width"])

    @property
    def volume(self) -> float:
        """Riemannian volume (length or area) of the manifold."""
        vol = float(np.prod(self.chart_extent))
        if self.kind == "swiss_roll_hole":
            vol -= np.pi * self.params["hole_radius"] ** 2
        return vol

    def chart_low(self):
        if self.kind == "segment":
            return np.array([self.params["start"]])
        return np.zeros(self.m)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "m": self.m, "d": self.d, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, data: dict) -> "ManifoldSpec":
        return cls(data["kind"], d=data.get("d"), params=data.get("params", {}))


def in_domain(spec: ManifoldSpec, intrinsic) -> np.ndarray:
    """Boolean mask of chart points inside the manifold's domain."""
    u = np.atleast_2d(np.asarray(intrinsic, dtype=float))
    low = spec.chart_low()
    high = low + np.asarray(spec.chart_extent)
    eps = 1e-12 * max(1.0, float(np.max(np.abs(high))))
    if spec.kind == "circle":
        # periodic chart: any angle is admissible
        return np.ones(len(u), dtype=bool)
    inside = np.all((u >= low - eps) & (u <= high + eps), axis=1)
    if spec.kind == "swiss_roll_hole":
        c = np.array([spec.params["hole_s"], spec.params["hole_w"]])
        inside &= np.linalg.norm(u - c, axis=1) >= spec.params["hole_radius"] - eps
    return inside


def embed_chart(spec: ManifoldSpec, intrinsic) -> np.ndarray:
    """Map chart coordinates to ambient coordinates.

    Accepts a single m-vector or an ``(n, m)`` array and returns a d-vector or
    an ``(n, d)`` array accordingly.
    """
    u = np.asarray(intrinsic, dtype=float)
    single = u.ndim <= 1
    u2 = u.reshape(1, -1) if single else u
    if u2.shape[1] != spec.m:
        raise ValidationError(f"expected {spec.m} chart coordinates, got {u2.shape[1]}")
    if not np.all(in_domain(spec, u2)):
        raise ValidationError("chart coordinates outside the manifold domain")

    n = len(u2)
    out = np.zeros((n, spec.d))
    if spec.kind in ("segment", "rectangle"):
        out[:, : spec.m] = u2
    elif spec.kind == "circle":
        r = spec.params["radius"]
        theta = u2[:, 0] / r
        out[:, 0] = r * np.cos(theta)
        out[:, 1] = r * np.sin(theta)
    else:
        p = spec.params
        s0 = spiral_arclength(p["t_min"])
        t = spiral_angle(s0 + u2[:, 0], p["t_min"], p["t_max"])
        out[:, 0] = t * np.cos(t)
        out[:, 1] = u2[:, 1]
        out[:, 2] = t * np.sin(t)
    return out[0] if single else out


def boundary_distance(spec: ManifoldSpec, intrinsic) -> np.ndarray:
    """Chart-space distance to the boundary (``inf`` when there is none)."""
    u = np.atleast_2d(np.asarray(intrinsic, dtype=float))
    if not spec.has_boundary:
        return np.full(len(u), np.inf)
    low = spec.chart_low()
    high = low + np.asarray(spec.chart_extent)
    dist = np.minimum(u - low, high - u).min(axis=1)
    if spec.kind == "swiss_roll_hole":
        c = np.array([spec.params["hole_s"], spec.params["hole_w"]])
        dist = np.minimum(dist, np.linalg.norm(u - c, axis=1) - spec.params["hole_radius"])
    return np.maximum(dist, 0.0)


def inward_normal(spec: ManifoldSpec, intrinsic) -> np.ndarray:
    """Unit inward normal (in the chart) of the boundary piece nearest each point."""
    if not spec.has_boundary:
        raise ValidationError(f"{spec.kind} has no boundary")
    u = np.atleast_2d(np.asarray(intrinsic, dtype=float))
    m = spec.m
    low = spec.chart_low()
    high = low + np.asarray(spec.chart_extent)
    # candidate faces: low_k (normal +e_k) and high_k (normal -e_k)
    dists = np.concatenate([u - low, high - u], axis=1)
    normals = np.concatenate([np.eye(m), -np.eye(m)], axis=0)
    if spec.kind == "swiss_roll_hole":
        c = np.array([spec.params["hole_s"], spec.params["hole_w"]])
        off = u - c
        rad = np.linalg.norm(off, axis=1)
        dists = np.concatenate([dists, (rad - spec.params["hole_radius"])[:, None]], axis=1)
    best = np.argmin(dists, axis=1)
    out = np.empty_like(u)
    for row, b in enumerate(best):
        if b < 2 * m:
            out[row] = normals[b]
        else:
            off_row = u[row] - c
            out[row] = off_row / np.linalg.norm(off_row)
    return out


@dataclass(frozen=True, eq=False)
class SampleCloud:
    """Ambient sample with ground-truth chart coordinates.

    ``boundary_dist`` is ``inf`` for boundaryless manifolds; ``seed`` is
    ``None`` for deterministic lattice designs.
    """

    points: np.ndarray
    intrinsic: np.ndarray
    boundary_dist: np.ndarray
    seed: int | None
    spec: ManifoldSpec

    def __post_init__(self):
        for name in ("points", "intrinsic", "boundary_dist"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.points.ndim != 2 or self.points.shape[1] != self.spec.d:
            raise ValidationError("points must be an (n, d) array")
        if self.intrinsic.shape != (len(self.points), self.spec.m):
            raise ValidationError("intrinsic must be an (n, m) array")
        if self.boundary_dist.shape != (len(self.points),):
            raise ValidationError("boundary_dist must have length n")

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def m(self) -> int:
        return self.spec.m

    def subset(self, index) -> "SampleCloud":
        index = np.asarray(index)
        return SampleCloud(
            self.points[index], self.intrinsic[index], self.boundary_dist[index], self.seed, self.spec
        )


def _draw_chart(spec: ManifoldSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    low = spec.chart_low()
    extent = np.asarray(spec.chart_extent)
    if spec.kind != "swiss_roll_hole":
        return low + rng.random((n, spec.m)) * extent
    accepted = []
    count = 0
    while count < n:
        batch = low + rng.random((max(2 * (n - count), 64), spec.m)) * extent
        batch = batch[in_domain(spec, batch)]
        accepted.append(batch)
        count += len(batch)
    return np.concatenate(accepted)[:n]


def sample_manifold(spec: ManifoldSpec, n: int, seed: int) -> SampleCloud:
    """Draw ``n`` points uniformly with respect to the Riemannian volume.

    The Swiss roll is sampled uniformly in its isometric (arc-length, width)
    chart and rejection-sampled against the hole.
    """
    if int(n) < 1:
        raise ValidationError("n must be at least 1")
    rng = np.random.default_rng(seed)
    u = _draw_chart(spec, int(n), rng)
    return SampleCloud(embed_chart(spec, u), u, boundary_distance(spec, u), int(seed), spec)


def lattice_cloud(spec: ManifoldSpec, n_per_axis) -> SampleCloud:
    """Regular grid over the chart (endpoints included).

    Grids give symmetric interior neighborhoods, which removes sampling noise
    from pointwise bias measurements.  Only segment and rectangle are supported.
    """
    if spec.kind not in ("segment", "rectangle"):
        raise ValidationError("lattice clouds are only defined for segment and rectangle")
    counts = np.broadcast_to(np.atleast_1d(n_per_axis), (spec.m,)).astype(int)
    if np.any(counts < 2):
        raise ValidationError("need at least 2 grid points per axis")
    low = spec.chart_low()
    axes = [np.linspace(lo, lo + ext, c) for lo, ext, c in zip(low, spec.chart_extent, counts)]
    grid = np.meshgrid(*axes, indexing="ij")
    u = np.stack([g.ravel() for g in grid], axis=1)
    return SampleCloud(embed_chart(spec, u), u, boundary_distance(spec, u), None, spec)


def save_cloud(cloud: SampleCloud, csv_path, extra_meta: dict | None = None) -> Path:
    """Write ``cloud`` as CSV plus a ``.json`` sidecar; returns the sidecar path.

    Boundaryless manifolds leave the ``boundary_dist`` column empty and set
    ``boundaryless`` in the sidecar.
    """
    csv_path = Path(csv_path)
    d, m = cloud.spec.d, cloud.m
    header = [f"x_{k + 1}" for k in range(d)] + [f"u_{k + 1}" for k in range(m)] + ["boundary_dist"]
    lines = [",".join(header)]
    boundaryless = not cloud.spec.has_boundary
    for x, u, b in zip(cloud.points, cloud.intrinsic, cloud.boundary_dist):
        fields = [repr(float(v)) for v in x] + [repr(float(v)) for v in u]
        fields.append("" if boundaryless else repr(float(b)))
        lines.append(",".join(fields))
    csv_path.write_text("\n".join(lines) + "\n")
    meta = {"spec": cloud.spec.to_dict(), "seed": cloud.seed, "n": cloud.n, "boundaryless": boundaryless}
    meta.update(extra_meta or {})
    sidecar = csv_path.with_suffix(".json")
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return sidecar


def load_cloud(csv_path) -> SampleCloud:
    csv_path = Path(csv_path)
    meta = json.loads(csv_path.with_suffix(".json").read_text())
    spec = ManifoldSpec.from_dict(meta["spec"])
    rows = csv_path.read_text().splitlines()[1:]
    d, m = spec.d, spec.m
    pts, us, bd = [], [], []
    for row in rows:
        fields = row.split(",")
        pts.append([float(v) for v in fields[:d]])
        us.append([float(v) for v in fields[d : d + m]])
        bd.append(np.inf if meta["boundaryless"] else float(fields[d + m]))
    return SampleCloud(np.array(pts).reshape(-1, d), np.array(us).reshape(-1, m), np.array(bd), meta["seed"], spec)
