"""Marker (particle-method) solvers for the limiting transport equations.

A WeightedCloud is a quadrature of a density.  Transport-Stokes moves every
marker with u_*(y) + g/(6 pi gamma), u_* = sum_m w_m Phi_eps(y - y_m) g; the
K-continuity equation moves it with (K * sigma)(y).  A marker never sees
itself (Phi(0) = K(0) = 0).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .geometry import CAlphaKernel, kernel_sum

FAMILIES = ("gaussian", "uniform-ball", "uniform-box", "two-bump")


@dataclass(frozen=True)
class DensitySpec:
    """Initial density.

    gaussian      params: std (isotropic), mean
    uniform-ball  params: radius, center
    uniform-box   params: half_width (scalar or per axis), center
    two-bump      params: std, separation (along the first axis), mass_ratio
    """

    family: str = "uniform-ball"
    params: dict = field(default_factory=dict)
    dim: int = 3

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unsupported density family {self.family!r}; choose from {FAMILIES}")
        if self.dim not in (2, 3):
            raise ValueError("dimension must be 2 or 3")

    def _p(self, key, default):
        return self.params.get(key, default)

    def _vec(self, key, default):
        v = np.broadcast_to(np.asarray(self._p(key, default), dtype=float), (self.dim,))
        return v.copy()

    def density(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        d = self.dim
        if self.family == "gaussian":
            s = float(self._p("std", 0.5))
            z = (x - self._vec("mean", 0.0)) / s
            return np.exp(-0.5 * np.sum(z**2, axis=1)) / (2 * math.pi * s * s) ** (d / 2)
        if self.family == "uniform-ball":
            a = float(self._p("radius", 1.0))
            vol = math.pi * a * a if d == 2 else 4.0 / 3.0 * math.pi * a**3
            inside = np.linalg.norm(x - self._vec("center", 0.0), axis=1) <= a
            return inside / vol
        if self.family == "uniform-box":
            hw = self._vec("half_width", 1.0)
            inside = np.all(np.abs(x - self._vec("center", 0.0)) <= hw, axis=1)
            return inside / float(np.prod(2 * hw))
        s = float(self._p("std", 0.25))
        sep = float(self._p("separation", 1.0))
        ratio = float(self._p("mass_ratio", 1.0))
        shift = np.zeros(d)
        shift[0] = 0.5 * sep
        w1 = 1.0 / (1.0 + ratio)
        g1 = np.exp(-0.5 * np.sum(((x - shift) / s) ** 2, axis=1))
        g2 = np.exp(-0.5 * np.sum(((x + shift) / s) ** 2, axis=1))
        return (w1 * g1 + (1 - w1) * g2) / (2 * math.pi * s * s) ** (d / 2)

    def support_box(self) -> tuple[np.ndarray, np.ndarray]:
        """Bounding box used by grid quadrature (Gaussians truncated at 5 std)."""
        d = self.dim
        if self.family == "gaussian":
            c, h = self._vec("mean", 0.0), np.full(d, 5 * float(self._p("std", 0.5)))
        elif self.family == "uniform-ball":
            c, h = self._vec("center", 0.0), np.full(d, float(self._p("radius", 1.0)))
        elif self.family == "uniform-box":
            c, h = self._vec("center", 0.0), self._vec("half_width", 1.0)
        else:
            s = float(self._p("std", 0.25))
            c = np.zeros(d)
            h = np.full(d, 5 * s)
            h[0] += 0.5 * float(self._p("separation", 1.0))
        return c - h, c + h

    def lq_norm(self, q: float) -> float:
        """||rho||_q (closed form for the uniform families, cubature otherwise)."""
        if self.family == "uniform-ball":
            a = float(self._p("radius", 1.0))
            vol = math.pi * a * a if self.dim == 2 else 4.0 / 3.0 * math.pi * a**3
            return vol ** (1 / q - 1) if math.isfinite(q) else 1 / vol
        if self.family == "uniform-box":
            vol = float(np.prod(2 * self._vec("half_width", 1.0)))
            return vol ** (1 / q - 1) if math.isfinite(q) else 1 / vol
        if self.family == "gaussian" and math.isfinite(q):
            s = float(self._p("std", 0.5))
            d = self.dim
            # int g^q = (2 pi s^2)^{d(1-q)/2} q^{-d/2}
            return ((2 * math.pi * s * s) ** (d * (1 - q) / 2) * q ** (-d / 2)) ** (1 / q)
        lo, hi = self.support_box()
        n = 120 if self.dim == 2 else 60
        axes = [np.linspace(a, b, n) for a, b in zip(lo, hi)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, self.dim)
        vals = self.density(pts)
        if not math.isfinite(q):
            return float(vals.max())
        cell = float(np.prod([(b - a) / (n - 1) for a, b in zip(lo, hi)]))
        return float((np.sum(vals**q) * cell) ** (1 / q))


@dataclass
class WeightedCloud:
    markers: np.ndarray
    weights: np.ndarray
    eps: float = 0.0

    def __post_init__(self):
        self.markers = np.ascontiguousarray(self.markers, dtype=float)
        self.weights = np.ascontiguousarray(self.weights, dtype=float)
        if self.markers.ndim != 2 or len(self.markers) != len(self.weights):
            raise ValueError("markers and weights must have matching lengths")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {self.weights.sum()!r}, not 1")
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")

    @property
    def M(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.markers.shape[1]

    def with_markers(self, markers) -> "WeightedCloud":
        return WeightedCloud(markers, self.weights, self.eps)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "y", "z", "weight"])
        for p, wt in zip(self.markers, self.weights):
            z = p[2] if self.dim == 3 else 0.0
            w.writerow([repr(float(p[0])), repr(float(p[1])), repr(float(z)), repr(float(wt))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, dim: int = 3, eps: float = 0.0) -> "WeightedCloud":
        rows = list(csv.DictReader(io.StringIO(text)))
        pts = np.array([[float(r["x"]), float(r["y"]), float(r["z"])][:dim] for r in rows])
        return cls(pts, np.array([float(r["weight"]) for r in rows]), eps)


def grid_shape(M: int, dim: int) -> tuple:
    """Factor M into ``dim`` integers as evenly as possible, in ascending order."""
    best = None
    for a in range(1, M + 1):
        if M % a:
            continue
        if dim == 2:
            cand = (a, M // a)
        else:
            rest = M // a
            for b in range(1, rest + 1):
                if rest % b:
                    continue
                c = (a, b, rest // b)
                key = (max(c) / min(c), c)
                if best is None or key < best[0]:
                    best = (key, tuple(sorted(c)))
            continue
        key = (max(cand) / min(cand), cand)
        if best is None or key < best[0]:
            best = (key, tuple(sorted(cand)))
    return best[1]


def cell_centers(lo, hi, shape) -> np.ndarray:
    axes = [a + (b - a) * (np.arange(n) + 0.5) / n for a, b, n in zip(lo, hi, shape)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(shape))


def sample_cloud(spec: DensitySpec, M: int, mode: str = "grid", seed: int = 0,
                 c_eps: float = 2.0, shape: tuple | None = None) -> WeightedCloud:
    """Quadrature cloud of ``spec``.

    grid: cell centres of a tensor grid over the support box (``shape`` or an
    even factorization of M), weights proportional to the density; nodes with
    zero density are dropped.  iid: M independent samples with weights 1/M.
    """
    if M < 1:
        raise ValueError("M must be positive")
    d = spec.dim
    if mode == "grid":
        shape = grid_shape(M, d) if shape is None else tuple(shape)
        if int(np.prod(shape)) != M:
            raise ValueError(f"grid shape {shape} does not hold {M} nodes")
        lo, hi = spec.support_box()
        pts = cell_centers(lo, hi, shape)
        w = spec.density(pts)
        keep = w > 0
        pts, w = pts[keep], w[keep]
        h = float(np.prod((hi - lo) / np.asarray(shape))) ** (1.0 / d)
        return WeightedCloud(pts, w / w.sum(), c_eps * h)
    if mode == "iid":
        rng = np.random.default_rng(seed)
        pts = draw(spec, M, rng)
        return WeightedCloud(pts, np.full(M, 1.0 / M), c_eps * M ** (-1.0 / d))
    raise ValueError(f"unknown sampling mode {mode!r}")


def draw(spec: DensitySpec, M: int, rng: np.random.Generator) -> np.ndarray:
    d = spec.dim
    if spec.family == "gaussian":
        return spec._vec("mean", 0.0) + float(spec._p("std", 0.5)) * rng.standard_normal((M, d))
    if spec.family == "uniform-box":
        hw = spec._vec("half_width", 1.0)
        return spec._vec("center", 0.0) + rng.uniform(-1.0, 1.0, (M, d)) * hw
    if spec.family == "uniform-ball":
        a = float(spec._p("radius", 1.0))
        dirs = rng.standard_normal((M, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        rad = a * rng.uniform(0.0, 1.0, M) ** (1.0 / d)
        return spec._vec("center", 0.0) + dirs * rad[:, None]
    s = float(spec._p("std", 0.25))
    sep = float(spec._p("separation", 1.0))
    w1 = 1.0 / (1.0 + float(spec._p("mass_ratio", 1.0)))
    first = rng.uniform(size=M) < w1
    pts = s * rng.standard_normal((M, d))
    pts[:, 0] += np.where(first, 0.5 * sep, -0.5 * sep)
    return pts


def nested_grid(M: int, dim: int, half_width: float = 1.0) -> np.ndarray:
    """Cell centres of the even factorization grid on [-hw, hw]^dim (used for matched data)."""
    shape = grid_shape(M, dim)
    return cell_centers(np.full(dim, -half_width), np.full(dim, half_width), shape)


def fluid_kernel(g, eps: float) -> CAlphaKernel:
    return CAlphaKernel(form="oseen-gravity", alpha=1.0, strength=1.0, axis=tuple(float(c) for c in g),
                        smoothing=eps)


def u_star(cloud: WeightedCloud, x, gamma: float, g=(0.0, 0.0, -1.0), include_drift: bool = True):
    """sum_m w_m Phi_eps(x - y_m) g (+ g/(6 pi gamma)); points on a marker skip it."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    if cloud.eps == 0.0:
        diff = pts[:, None, :] - cloud.markers[None, :, :]
        if np.any(np.all(diff == 0.0, axis=-1)) and not _is_marker_set(pts, cloud):
            raise ValueError("u_star with eps = 0 is singular at a marker")
    u = kernel_sum(fluid_kernel(g, cloud.eps), pts, cloud.markers, cloud.weights)
    if include_drift:
        u = u + np.asarray(g, dtype=float) / (6 * math.pi * gamma)
    return u[0] if single else u


def _is_marker_set(pts, cloud):
    return pts.shape == cloud.markers.shape and np.array_equal(pts, cloud.markers)


def _rk2_cloud(cloud, velocity, dt):
    y = cloud.markers
    v1 = velocity(y)
    v2 = velocity(y + 0.5 * dt * v1)
    return cloud.with_markers(y + dt * v2)


def transport_stokes_step(cloud: WeightedCloud, gamma: float, dt: float, g=(0.0, 0.0, -1.0)) -> WeightedCloud:
    """Midpoint advection of every marker by u_* + g/(6 pi gamma), self term excluded."""
    drift = np.asarray(g, dtype=float) / (6 * math.pi * gamma)
    K = fluid_kernel(g, cloud.eps)
    return _rk2_cloud(cloud, lambda y: kernel_sum(K, y, y, cloud.weights) + drift, dt)


def k_equation_step(cloud: WeightedCloud, K: CAlphaKernel, dt: float) -> WeightedCloud:
    """Midpoint advection of every marker by (K * sigma), with K(0) = 0."""
    return _rk2_cloud(cloud, lambda y: kernel_sum(K, y, y, cloud.weights), dt)


def evaluate_u_field(points, cloud: WeightedCloud | None = None, gamma: float = 1.0,
                     g=(0.0, 0.0, -1.0), positions=None, forces=None, velocities=None,
                     radius: float | None = None) -> np.ndarray:
    """u_* from a cloud, or the superposition of single-sphere fields of particles.

    In the particle form a point inside sphere i takes the rigid value V_i.
    """
    points = np.ascontiguousarray(np.atleast_2d(points), dtype=float)
    if cloud is not None:
        return u_star(cloud, points, gamma, g, include_drift=False)
    if positions is None or forces is None or velocities is None or radius is None:
        raise ValueError("give either a cloud or positions, forces, velocities and radius")
    return _kernels.single_sphere_superposition(points, np.ascontiguousarray(positions, dtype=float),
                                                np.ascontiguousarray(forces, dtype=float),
                                                np.ascontiguousarray(velocities, dtype=float),
                                                float(radius))


def ball_points(center, n: int, radius: float = 1.0, seed: int = 0) -> np.ndarray:
    """n scrambled-Sobol points mapped uniformly into the ball B_radius(center)."""
    from scipy.stats import qmc

    u = qmc.Sobol(d=3, scramble=True, seed=seed).random(n)
    r = radius * u[:, 0] ** (1.0 / 3.0)
    cos_t = 2 * u[:, 1] - 1
    phi = 2 * math.pi * u[:, 2]
    s = np.sqrt(1 - cos_t**2)
    dirs = np.stack([s * np.cos(phi), s * np.sin(phi), cos_t], axis=1)
    return np.asarray(center, dtype=float) + r[:, None] * dirs


def l2_ball_difference(f_values, g_values, radius: float = 1.0) -> float:
    """Monte-Carlo ||f - g||_{L^2(B)} from values at uniform points in B."""
    vol = 4.0 / 3.0 * math.pi * radius**3
    diff = np.asarray(f_values) - np.asarray(g_values)
    return float(math.sqrt(vol * np.mean(np.sum(diff**2, axis=1))))
