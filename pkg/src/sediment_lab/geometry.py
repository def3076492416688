"""Closed-form Stokes kernels, (C_alpha) interaction kernels and configuration geometry."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels

INV8PI = 1.0 / (8.0 * math.pi)


class DomainError(ValueError):
    """Raised when a kernel is evaluated outside its domain."""


def _as_vec(x, dim=3):
    x = np.asarray(x, dtype=float)
    if x.shape != (dim,):
        raise ValueError(f"expected a vector of length {dim}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite vector")
    return x


def oseen(x) -> np.ndarray:
    """Oseen tensor (1/8pi)(I/|x| + x x^T/|x|^3)."""
    x = _as_vec(x)
    r = np.linalg.norm(x)
    if r == 0.0:
        raise DomainError("oseen(0) is undefined; callers use the convention Phi(0) = 0")
    return INV8PI * (np.eye(3) / r + np.outer(x, x) / r**3)


def laplacian_oseen(x) -> np.ndarray:
    """Closed-form Laplacian of the Oseen tensor, (1/8pi)(2I/|x|^3 - 6 x x^T/|x|^5)."""
    x = _as_vec(x)
    r = np.linalg.norm(x)
    if r == 0.0:
        raise DomainError("Laplacian of the Oseen tensor is singular at 0")
    return INV8PI * (2.0 * np.eye(3) / r**3 - 6.0 * np.outer(x, x) / r**5)


def corrected_kernel(radius: float, x) -> np.ndarray:
    """Far field of a translating sphere, Phi(x) + (R^2/6) Lap Phi(x), for |x| > R."""
    x = _as_vec(x)
    r = np.linalg.norm(x)
    if r <= radius:
        raise DomainError(f"corrected_kernel needs |x| > R (|x| = {r}, R = {radius})")
    c = radius * radius / (3.0 * r * r)
    xhat = x / r
    return INV8PI / r * ((1.0 + c) * np.eye(3) + (1.0 - 3.0 * c) * np.outer(xhat, xhat))


def single_sphere_field(G, radius: float, x) -> np.ndarray:
    """Velocity at x generated by a sphere of radius R at the origin carrying force G."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    G = _as_vec(G)
    x = _as_vec(x)
    if np.linalg.norm(x) <= radius:
        return G / (6.0 * math.pi * radius)
    return corrected_kernel(radius, x) @ G


@dataclass
class Configuration:
    """N sphere centres sharing one radius."""

    positions: np.ndarray
    radius: float

    def __post_init__(self):
        pos = np.ascontiguousarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[0] < 1:
            raise ValueError("positions must be an (N, d) array with N >= 1")
        if not np.all(np.isfinite(pos)):
            raise ValueError("non-finite particle position")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        self.positions = pos

    @property
    def N(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def d_min(self) -> float:
        return pairwise_stats(self).d_min

    def is_admissible(self) -> bool:
        """No-touch condition d_min > 2R."""
        return self.d_min() > 2.0 * self.radius

    def translated(self, shift) -> "Configuration":
        return Configuration(self.positions + np.asarray(shift, dtype=float), self.radius)


@dataclass
class PairwiseStats:
    d_min: float
    positions: np.ndarray = field(repr=False)

    def d(self, i: int, j: int) -> float:
        """d_ij with the convention d_ii = d_min."""
        if i == j:
            return self.d_min
        return float(np.linalg.norm(self.positions[i] - self.positions[j]))

    def matrix(self) -> np.ndarray:
        x = self.positions
        dm = np.sqrt(((x[:, None, :] - x[None, :, :]) ** 2).sum(-1))
        np.fill_diagonal(dm, self.d_min)
        return dm


def pairwise_stats(cfg: Configuration | np.ndarray) -> PairwiseStats:
    x = cfg.positions if isinstance(cfg, Configuration) else np.ascontiguousarray(cfg, dtype=float)
    if x.shape[0] < 2:
        return PairwiseStats(math.inf, x)
    return PairwiseStats(float(math.sqrt(_kernels.min_sq_distance_rows(x).min())), x)


def closest_pair(x: np.ndarray) -> tuple[int, int, float]:
    """Indices (i < j) and distance of the closest pair."""
    r2, j = _kernels.closest_pair_rows(np.ascontiguousarray(x, dtype=float))
    i = int(np.argmin(r2))
    a, b = sorted((i, int(j[i])))
    return a, b, float(math.sqrt(r2[i]))


def singular_sum(cfg: Configuration | np.ndarray, beta: float, full: bool = False) -> float:
    """S_beta = max_i sum_{j != i} d_ij^-beta.

    With ``full=True`` the j = i term (d_ii = d_min) is included as well.
    A single particle has S_beta = 0.
    """
    x = cfg.positions if isinstance(cfg, Configuration) else np.ascontiguousarray(cfg, dtype=float)
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    if x.shape[0] < 2:
        return 0.0
    rows = _kernels.singular_sum_rows(x, float(beta))
    if full:
        dmin = math.sqrt(_kernels.min_sq_distance_rows(x).min())
        rows = rows + dmin ** (-beta)
    return float(rows.max())


KERNEL_FORMS = {
    "rotational-2d": _kernels.ROTATIONAL_2D,
    "curl-3d": _kernels.CURL_3D,
    "oseen-gravity": _kernels.OSEEN_GRAVITY,
}


@dataclass(frozen=True)
class CAlphaKernel:
    """Divergence-free interaction kernel with |K| + |x||grad K| <= C/|x|^alpha.

    forms:
      rotational-2d   K(x) = C x_perp / |x|^(alpha+1)
      curl-3d         K(x) = C (e x x) / |x|^(alpha+1)
      oseen-gravity   K(x) = C Phi(x) e        (d = 3, alpha = 1)

    ``smoothing > 0`` replaces |x|^2 by |x|^2 + smoothing^2 (the smoothed variant).
    """

    form: str = "rotational-2d"
    alpha: float = 0.5
    strength: float = 1.0
    axis: tuple = (0.0, 0.0, 1.0)
    smoothing: float = 0.0

    def __post_init__(self):
        if self.form not in KERNEL_FORMS:
            raise ValueError(f"unknown kernel form {self.form!r}; choose from {sorted(KERNEL_FORMS)}")
        if self.form == "oseen-gravity" and self.alpha != 1.0:
            raise ValueError("the oseen-gravity kernel has alpha = 1")
        if not 0.0 <= self.alpha < self.dim - 1:
            raise ValueError(f"alpha must lie in [0, d-1) = [0, {self.dim - 1})")
        if not self.strength > 0:
            raise ValueError("strength must be positive")
        if self.smoothing < 0:
            raise ValueError("smoothing must be nonnegative")
        if len(self.axis) != 3:
            raise ValueError("axis must have three components")

    @property
    def dim(self) -> int:
        return 2 if self.form == "rotational-2d" else 3

    @property
    def code(self) -> int:
        return KERNEL_FORMS[self.form]

    def axis_array(self) -> np.ndarray:
        return np.asarray(self.axis, dtype=float)


def kernel_sum(K: CAlphaKernel, targets, sources, weights) -> np.ndarray:
    """(K * mu)(x) = sum_m w_m K(x - y_m) at every target, with K(0) = 0."""
    targets = np.ascontiguousarray(targets, dtype=float)
    sources = np.ascontiguousarray(sources, dtype=float)
    weights = np.ascontiguousarray(weights, dtype=float)
    if targets.shape[1] != K.dim or sources.shape[1] != K.dim:
        raise ValueError(f"kernel is {K.dim}-dimensional")
    return _kernels.kernel_sum(targets, sources, weights, K.code, float(K.alpha),
                               float(K.strength), K.axis_array(), float(K.smoothing))


def kernel_eval(K: CAlphaKernel, x) -> np.ndarray:
    """K(x) for a single point or an (n, d) batch; K(0) is the zero vector."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    out = kernel_sum(K, pts, np.zeros((1, K.dim)), np.ones(1))
    return out[0] if single else out
