"""Stokes-law force representation through an annulus weight.

For a sphere B_r at the origin and an annulus A = B_d minus B_{d/2}, the weight

    omega(x) = |A|/(6 pi r) sum_i e_i (x) div sigma[curl(eta Psi[e_i]), eta P[e_i]](x)

turns the drag of any Stokes field w that equals a rigid motion on B_r into an
annulus average:

    -int_{dB_r} sigma[w] n = 6 pi r ( avg_{dB_r} w - avg_A omega w ).

Here Psi[W] = f(rho) (W x x)/2 with f = 3r/(2 rho) - r^3/(2 rho^3), so curl Psi is
the field of a sphere translating with velocity W, and P[W] = (3r/2) W.x/rho^3
is its pressure.  eta is a C^4 cutoff equal to 1 on B_{d/2} and 0 outside B_d,
so omega is supported in A.

Both terms of div sigma have the radial form A(rho) W + B(rho) (x.W) x, which is
evaluated in closed form below; the finite-difference route lives in the tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import Polynomial

from .geometry import oseen, laplacian_oseen, single_sphere_field


_STEP = Polynomial([0, 0, 0, 0, 0, 126, -420, 540, -315, 70])
_STEP_DERIVS = [_STEP.deriv(k) for k in range(4)]


def smoothstep(t):
    """C^4 step t^5 (126 - 420t + 540t^2 - 315t^3 + 70t^4), clamped to [0, 1].

    Returns the value and the first three derivatives.  Its first four
    derivatives vanish at both ends, which keeps the annulus integrands smooth
    up to the boundary of A.
    """
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    return tuple(p(t) for p in _STEP_DERIVS)


def cutoff(rho, d):
    """eta(rho) = 1 - S((rho - d/2)/(d/2)) and its first three radial derivatives."""
    half = 0.5 * d
    s, s1, s2, s3 = smoothstep((np.asarray(rho, dtype=float) - half) / half)
    k = 1.0 / half
    return 1.0 - s, -s1 * k, -s2 * k**2, -s3 * k**3


def cut_stream_profile(rho, r, d):
    """h = eta f / 2 and derivatives h', h'', h''' (eta Psi[W] = h (W x x))."""
    rho = np.asarray(rho, dtype=float)
    f0 = 1.5 * r / rho - 0.5 * r**3 / rho**3
    f1 = -1.5 * r / rho**2 + 1.5 * r**3 / rho**4
    f2 = 3.0 * r / rho**3 - 6.0 * r**3 / rho**5
    f3 = -9.0 * r / rho**4 + 30.0 * r**3 / rho**6
    e0, e1, e2, e3 = cutoff(rho, d)
    h0 = 0.5 * e0 * f0
    h1 = 0.5 * (e1 * f0 + e0 * f1)
    h2 = 0.5 * (e2 * f0 + 2 * e1 * f1 + e0 * f2)
    h3 = 0.5 * (e3 * f0 + 3 * e2 * f1 + 3 * e1 * f2 + e0 * f3)
    return h0, h1, h2, h3


def cut_velocity_profile(rho, r, d):
    """curl(h (W x x)) = a W + b (x.W) x with a = 2h + rho h', b = -h'/rho."""
    h0, h1, h2, _ = cut_stream_profile(rho, r, d)
    return 2 * h0 + rho * h1, -h1 / rho


def stress_divergence_profile(rho, r, d):
    """Coefficients (A, B) with div sigma[curl(eta Psi[W]), eta P[W]] = A W + B (x.W) x."""
    rho = np.asarray(rho, dtype=float)
    h0, h1, h2, h3 = cut_stream_profile(rho, r, d)
    e0, e1, _, _ = cutoff(rho, d)
    a1 = 3 * h1 + rho * h2
    a2 = 4 * h2 + rho * h3
    b0 = -h1 / rho
    b1 = -h2 / rho + h1 / rho**2
    b2 = -h3 / rho + 2 * h2 / rho**2 - 2 * h1 / rho**3
    c = 1.5 * r
    A = a2 + 2 * a1 / rho + 2 * b0 - c * e0 / rho**3
    B = b2 + 6 * b1 / rho - c * (e1 / rho**4 - 3 * e0 / rho**5)
    return A, B


def cut_pressure(x, W, r, d):
    """eta P[W] at the points x (shape (n, 3))."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    rho = np.linalg.norm(x, axis=1)
    e0 = cutoff(rho, d)[0]
    return e0 * 1.5 * r * (x @ np.asarray(W, dtype=float)) / rho**3


def cut_velocity(x, W, r, d):
    """curl(eta Psi[W]) at the points x."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    W = np.asarray(W, dtype=float)
    rho = np.linalg.norm(x, axis=1)
    a, b = cut_velocity_profile(rho, r, d)
    return a[:, None] * W + (b * (x @ W))[:, None] * x


def annulus_volume(d):
    return 4.0 / 3.0 * math.pi * (d**3 - (0.5 * d) ** 3)


def omega(x, r, d):
    """The weight omega at points x, shape (n, 3, 3); zero outside the annulus."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    rho = np.linalg.norm(x, axis=1)
    A, B = stress_divergence_profile(rho, r, d)
    inside = (rho >= 0.5 * d) & (rho <= d)
    A = np.where(inside, A, 0.0)
    B = np.where(inside, B, 0.0)
    s = annulus_volume(d) / (6 * math.pi * r)
    return s * (A[:, None, None] * np.eye(3) + B[:, None, None] * np.einsum("ni,nj->nij", x, x))


def radial_nodes(d, n_radial):
    """Midpoint nodes and weights on [d/2, d]."""
    h = 0.5 * d / n_radial
    rho = 0.5 * d + h * (np.arange(n_radial) + 0.5)
    return rho, np.full(n_radial, h)


def sphere_nodes(n_theta, n_phi):
    """Unit directions and weights (summing to 4 pi), Gauss-Legendre in cos(theta) x uniform in phi."""
    mu, wmu = np.polynomial.legendre.leggauss(n_theta)
    phi = 2 * math.pi * (np.arange(n_phi) + 0.5) / n_phi
    st = np.sqrt(1 - mu**2)
    dirs = np.stack([np.outer(st, np.cos(phi)), np.outer(st, np.sin(phi)),
                     np.outer(mu, np.ones(n_phi))], axis=-1).reshape(-1, 3)
    w = np.outer(wmu, np.full(n_phi, 2 * math.pi / n_phi)).ravel()
    return dirs, w


def omega_mean(r, d, n_radial):
    """avg_A omega; by symmetry a multiple of Id, reduced to a radial integral."""
    rho, w = radial_nodes(d, n_radial)
    A, B = stress_divergence_profile(rho, r, d)
    integral = np.sum(w * 4 * math.pi * rho**2 * (A + B * rho**2 / 3.0))
    return integral / (6 * math.pi * r) * np.eye(3)


def omega_average(field, r, d, n_radial, n_theta=24, n_phi=48):
    """avg_A omega w for a vector field ``field(points) -> (n, 3)``."""
    rho, wr = radial_nodes(d, n_radial)
    dirs, wa = sphere_nodes(n_theta, n_phi)
    pts = (rho[:, None, None] * dirs[None, :, :]).reshape(-1, 3)
    wts = (wr[:, None] * rho[:, None] ** 2 * wa[None, :]).ravel()
    vals = field(pts)
    A, B = stress_divergence_profile(np.repeat(rho, len(wa)), r, d)
    integrand = A[:, None] * vals + (B * np.einsum("ni,ni->n", pts, vals))[:, None] * pts
    return (wts @ integrand) / (6 * math.pi * r)


def sphere_average(field, r, n_theta=24, n_phi=48):
    dirs, w = sphere_nodes(n_theta, n_phi)
    return (w @ field(r * dirs)) / (4 * math.pi)


def stokeslet_field(position, force):
    """x -> Phi(x - position) force, vectorized over rows of x."""
    position = np.asarray(position, dtype=float)
    force = np.asarray(force, dtype=float)

    def field(x):
        return np.array([oseen(p - position) @ force for p in np.atleast_2d(x)])

    return field


@dataclass
class ForceRepReport:
    omega_mean_error: float
    omega_mean_error_refined: float
    refinement_factor: float
    br_lhs: np.ndarray
    br_rhs: np.ndarray
    br_residual: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return (self.omega_mean_error < self.tolerance and self.refinement_factor >= 4.0
                and self.br_residual < self.tolerance)


def force_representation_check(stokeslet_position, stokeslet_force, r: float, d: float,
                               n_radial: int = 100, body_velocity=(0.0, 0.0, 0.0),
                               n_theta: int = 24, n_phi: int = 48,
                               tolerance: float = 1e-4) -> ForceRepReport:
    """Check the annulus weight and the drag identity for a sphere in an external Stokeslet.

    The test field is w = w_ext + U[W_s], where w_ext is the Stokeslet flow and
    U[W_s] the single-sphere field chosen (via Faxen's law) so that w equals
    ``body_velocity`` on B_r.  The drag of w is then known exactly:
    6 pi r W_s.  n_radial midpoint nodes on [d/2, d] give radial spacing
    d/(2 n_radial).
    """
    if d < 4 * r:
        raise ValueError("the annulus needs d >= 4r")
    x0 = np.asarray(stokeslet_position, dtype=float)
    if np.linalg.norm(x0) <= d:
        raise ValueError("the external Stokeslet must sit outside B_d")
    f = np.asarray(stokeslet_force, dtype=float)
    w_ext = stokeslet_field(x0, f)
    # Faxen: avg over dB_r of w_ext = (1 + r^2/6 Lap) w_ext(0)
    faxen = oseen(-x0) @ f + r**2 / 6.0 * (laplacian_oseen(-x0) @ f)
    W_s = np.asarray(body_velocity, dtype=float) - faxen
    G_s = 6 * math.pi * r * W_s

    def w_total(x):
        return w_ext(x) + np.array([single_sphere_field(G_s, r, p) for p in x])

    lhs = G_s
    rhs = 6 * math.pi * r * (sphere_average(w_total, r, n_theta, n_phi)
                             - omega_average(w_total, r, d, n_radial, n_theta, n_phi))
    err = float(np.linalg.norm(omega_mean(r, d, n_radial) - np.eye(3)))
    err2 = float(np.linalg.norm(omega_mean(r, d, 2 * n_radial) - np.eye(3)))
    scale = max(float(np.linalg.norm(lhs)), 1e-300)
    return ForceRepReport(err, err2, err / err2 if err2 > 0 else math.inf, lhs, rhs,
                          float(np.linalg.norm(rhs - lhs)) / scale, tolerance)
