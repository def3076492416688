"""Matrix-free hydrodynamic operators at the point-particle (corrected Oseen) level.

The mobility operator is

    (M G)_i = G_i / (6 pi R) + sum_{j != i} J(X_i - X_j) G_j,
    J = Phi + (R^2/6) Lap Phi,

and the resistance operator R_hat is its inverse.  Nothing here assembles a
3N x 3N matrix; every apply is an O(N^2) pair loop.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg, eigsh

from . import _kernels
from .geometry import Configuration, corrected_kernel, pairwise_stats, singular_sum

REFLECTIONS_DELTA = 0.1


class OverlapError(ValueError):
    """Configuration violates the no-touch condition d_min > 2R."""


class ReflectionsRegimeWarning(UserWarning):
    pass


@dataclass
class SolveReport:
    iterations: int
    residual_l2: float
    converged: bool
    contraction_estimate: float
    method: str = "cg"


@dataclass
class SpectrumEstimate:
    c_R_est: float
    C_R_est: float
    power_iters: int


def _check(cfg: Configuration):
    if cfg.dim != 3:
        raise ValueError("hydrodynamic operators need 3d positions")
    if cfg.N > 1:
        dmin = pairwise_stats(cfg).d_min
        if not dmin > 2.0 * cfg.radius:
            raise OverlapError(f"d_min = {dmin:.6g} <= 2R = {2 * cfg.radius:.6g}")


def _vecset(a, n) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    if a.shape != (n, 3):
        raise ValueError(f"expected an ({n}, 3) array, got {a.shape}")
    return a


def offdiag_apply(cfg: Configuration, G) -> np.ndarray:
    """sum_{j != i} J(X_i - X_j) G_j for every i."""
    return _kernels.corrected_offdiag_apply(cfg.positions, _vecset(G, cfg.N), float(cfg.radius))


def mobility_apply(cfg: Configuration, G, check: bool = True) -> np.ndarray:
    """Velocities generated by the forces G (self term G/(6 pi R) plus pair terms)."""
    if check:
        _check(cfg)
    G = _vecset(G, cfg.N)
    return G / (6.0 * math.pi * cfg.radius) + offdiag_apply(cfg, G)


def mobility_matrix(cfg: Configuration) -> np.ndarray:
    """Dense 3N x 3N mobility assembled pair by pair from corrected_kernel (slow reference route)."""
    _check(cfg)
    n = cfg.N
    M = np.zeros((3 * n, 3 * n))
    for i in range(n):
        M[3 * i:3 * i + 3, 3 * i:3 * i + 3] = np.eye(3) / (6.0 * math.pi * cfg.radius)
        for j in range(n):
            if i != j:
                M[3 * i:3 * i + 3, 3 * j:3 * j + 3] = corrected_kernel(cfg.radius, cfg.positions[i] - cfg.positions[j])
    return M


def mean_field_velocity(cfg: Configuration, F, i: int | None = None) -> np.ndarray:
    """Point-level surrogate (u)_i = sum_{j != i} J(X_i - X_j) F_j.

    Returns the full (N, 3) array when ``i`` is None.
    """
    u = offdiag_apply(cfg, F)
    return u if i is None else u[i]


def reflections_parameter(cfg: Configuration) -> float:
    """R^3 S_3, the smallness parameter of the method of reflections."""
    return cfg.radius**3 * singular_sum(cfg, 3.0)


def resistance_apply(cfg: Configuration, W, tol: float = 1e-10, k_max: int = 500,
                     method: str = "cg", G0=None, check: bool = True):
    """Forces G with mobility_apply(G) = W.

    method="reflections" runs the fixed point G <- 6 pi R (W - J G) starting at
    6 pi R W; it only contracts while the spectral radius of 6 pi R J is below
    one.  method="cg" (default) runs conjugate gradients on the symmetric
    positive definite mobility operator and converges in both regimes.
    Non-convergence is reported, not raised.
    """
    if check:
        _check(cfg)
        if cfg.N > 1 and reflections_parameter(cfg) > REFLECTIONS_DELTA:
            warnings.warn(f"R^3 S_3 = {reflections_parameter(cfg):.3g} exceeds "
                          f"delta = {REFLECTIONS_DELTA}", ReflectionsRegimeWarning, stacklevel=2)
    W = _vecset(W, cfg.N)
    six_pi_r = 6.0 * math.pi * cfg.radius
    w_norm = float(np.linalg.norm(W))
    if w_norm == 0.0:
        return np.zeros_like(W), SolveReport(0, 0.0, True, 0.0, method)

    def residual(G):
        return float(np.linalg.norm(mobility_apply(cfg, G, check=False) - W)) / w_norm

    if method == "reflections":
        G = six_pi_r * W if G0 is None else _vecset(G0, cfg.N).copy()
        res = residual(G)
        history = [res]
        k = 0
        while res > tol and k < k_max:
            G = six_pi_r * (W - offdiag_apply(cfg, G))
            k += 1
            res = residual(G)
            history.append(res)
            if not np.isfinite(res):
                break
        rate = _contraction(history)
        return G, SolveReport(k, res, bool(res <= tol), rate, method)

    if method != "cg":
        raise ValueError(f"unknown method {method!r}")
    n3 = 3 * cfg.N
    op = LinearOperator((n3, n3), dtype=float,
                        matvec=lambda v: mobility_apply(cfg, v.reshape(-1, 3), check=False).ravel())
    x0 = (six_pi_r * W if G0 is None else _vecset(G0, cfg.N)).ravel()
    history = [residual(x0.reshape(-1, 3))]
    count = [0]

    def callback(xk):
        count[0] += 1

    # a little tighter than requested since cg measures its own recursive residual
    sol, _ = cg(op, W.ravel(), x0=x0, rtol=0.5 * tol, atol=0.0, maxiter=k_max, callback=callback)
    G = sol.reshape(-1, 3)
    res = residual(G)
    history.append(res)
    rate = (res / history[0]) ** (1.0 / count[0]) if count[0] > 0 and history[0] > 0 else 0.0
    return G, SolveReport(count[0], res, bool(res <= tol), rate, method)


def _contraction(history):
    h = [v for v in history if np.isfinite(v) and v > 0]
    if len(h) < 2:
        return 0.0
    ratios = [b / a for a, b in zip(h[:-1], h[1:])]
    return float(np.median(ratios[-5:]))


def inertialess_velocities(cfg: Configuration, g, check_residual: bool = False,
                           tol: float = 1e-10, check: bool = True):
    """V_tilde = R_hat^{-1} g_bar / N, i.e. the mobility applied to the forces g/N.

    With the point-level operator the inverse resistance is the mobility itself,
    so no iteration is needed.  ``check_residual`` solves R_hat V = g_bar/N with
    the iterative solver and reports how far V_tilde is from satisfying it.
    """
    g = np.asarray(g, dtype=float)
    forces = np.tile(g / cfg.N, (cfg.N, 1))
    V = mobility_apply(cfg, forces, check=check)
    if not check_residual:
        return V, SolveReport(0, 0.0, True, 0.0, "direct")
    G, rep = resistance_apply(cfg, V, tol=tol, check=False)
    res = float(np.linalg.norm(G - forces) / np.linalg.norm(forces))
    return V, SolveReport(rep.iterations, res, bool(res <= max(tol, 10 * tol)), rep.contraction_estimate,
                          "direct+verify")


def _mobility_operator(cfg):
    n3 = 3 * cfg.N
    return LinearOperator((n3, n3), dtype=float,
                          matvec=lambda v: mobility_apply(cfg, v.reshape(-1, 3), check=False).ravel())


def resistance_spectrum(cfg: Configuration, tol: float = 1e-3, max_iter: int = 5000,
                        method: str = "lanczos", seed: int = 0) -> SpectrumEstimate:
    """Smallest and largest eigenvalue of R_hat.

    c_R = 1 / lambda_max(M) and C_R = 1 / lambda_min(M).  method="power" runs
    power iteration on M (for c_R) and on R_hat through inner CG solves (for
    C_R); method="lanczos" uses implicitly restarted Lanczos on M.
    """
    _check(cfg)
    if cfg.N == 1:
        v = 6.0 * math.pi * cfg.radius
        return SpectrumEstimate(v, v, 0)
    rng = np.random.default_rng(seed)
    n3 = 3 * cfg.N
    if method == "lanczos":
        op = _mobility_operator(cfg)
        v0 = rng.standard_normal(n3)
        top = eigsh(op, k=1, which="LA", tol=tol * 1e-3, v0=v0, return_eigenvectors=False)[0]
        bottom = eigsh(op, k=1, which="SA", tol=tol * 1e-3, v0=v0, ncv=min(n3, 60),
                       maxiter=max_iter, return_eigenvectors=False)[0]
        if bottom <= 0:
            raise RuntimeError("mobility operator is not positive definite for this configuration")
        return SpectrumEstimate(1.0 / top, 1.0 / bottom, 0)
    if method != "power":
        raise ValueError(f"unknown method {method!r}")

    def power(apply, start):
        v = start / np.linalg.norm(start)
        lam_old = None
        for k in range(1, max_iter + 1):
            w = apply(v)
            lam = float(v @ w)
            v = w / np.linalg.norm(w)
            if lam_old is not None and abs(lam - lam_old) <= 1e-3 * tol * abs(lam):
                return lam, k
            lam_old = lam
        raise RuntimeError(f"power iteration stagnated; partial estimate {lam}")

    m_top, k1 = power(lambda v: mobility_apply(cfg, v.reshape(-1, 3), check=False).ravel(),
                      rng.standard_normal(n3))
    r_top, k2 = power(lambda v: resistance_apply(cfg, v.reshape(-1, 3), tol=1e-12,
                                                 check=False)[0].ravel(),
                      rng.standard_normal(n3))
    return SpectrumEstimate(1.0 / m_top, r_top, k1 + k2)


def rayleigh_quotient(cfg: Configuration, W) -> float:
    """<W, R_hat W> / |W|^2."""
    G, _ = resistance_apply(cfg, W, tol=1e-12, check=False)
    W = np.asarray(W, dtype=float)
    return float(np.sum(W * G) / np.sum(W * W))


def inertialess_gradient_blocks(cfg: Configuration, g, h: float | None = None) -> np.ndarray:
    """Blocks d(R^{-1} g_bar)_i / dY_j by central differences, shape (N, N, 3, 3)."""
    _check(cfg)
    n = cfg.N
    dmin = pairwise_stats(cfg).d_min
    if h is None:
        h = 1e-4 * (dmin if np.isfinite(dmin) else 1.0)
    if np.isfinite(dmin) and not h < 0.01 * dmin:
        raise ValueError("finite-difference step must be much smaller than d_min")
    g = np.asarray(g, dtype=float)
    blocks = np.zeros((n, n, 3, 3))
    base = cfg.positions
    for j in range(n):
        for k in range(3):
            plus = base.copy()
            minus = base.copy()
            plus[j, k] += h
            minus[j, k] -= h
            vp, _ = inertialess_velocities(Configuration(plus, cfg.radius), g, check=False)
            vm, _ = inertialess_velocities(Configuration(minus, cfg.radius), g, check=False)
            # scaling: gradient of R^{-1} g_bar = N * V_tilde
            blocks[:, j, :, k] = n * (vp - vm) / (2.0 * h)
    return blocks


def grad_inertialess_norm(cfg: Configuration, g, h: float | None = None) -> float:
    """Row/column-sum bound sqrt(max_i sum_j |a_ij| * max_k sum_l |a_lk|) on ||grad R^{-1} g_bar||."""
    if cfg.N == 1:
        return 0.0
    blocks = inertialess_gradient_blocks(cfg, g, h)
    norms = np.linalg.norm(blocks, ord=2, axis=(2, 3))
    if not np.all(np.isfinite(norms)):
        raise FloatingPointError("finite-difference gradient is not finite")
    return float(math.sqrt(norms.sum(axis=1).max() * norms.sum(axis=0).max()))
