"""Compiled O(N^2) pair loops.

Every loop runs over the outer index with a private accumulator and visits
the inner index in increasing order, so results do not depend on the thread
count.
"""

import math

import numpy as np
from numba import njit, prange

INV8PI = 1.0 / (8.0 * math.pi)

# kernel form codes shared with geometry.CAlphaKernel
ROTATIONAL_2D = 0
CURL_3D = 1
OSEEN_GRAVITY = 2


@njit(cache=True)
def _inv_pow(r2, beta):
    # r^-beta from r^2, with the common integer exponents special-cased
    if beta == 1.0:
        return 1.0 / math.sqrt(r2)
    if beta == 2.0:
        return 1.0 / r2
    if beta == 3.0:
        return 1.0 / (r2 * math.sqrt(r2))
    if beta == 4.0:
        return 1.0 / (r2 * r2)
    if beta == 6.0:
        return 1.0 / (r2 * r2 * r2)
    return r2 ** (-0.5 * beta)


@njit(parallel=True, cache=True)
def min_sq_distance_rows(x):
    n, dim = x.shape
    out = np.full(n, np.inf)
    for i in prange(n):
        best = np.inf
        for j in range(n):
            if j == i:
                continue
            r2 = 0.0
            for k in range(dim):
                d = x[i, k] - x[j, k]
                r2 += d * d
            if r2 < best:
                best = r2
        out[i] = best
    return out


@njit(parallel=True, cache=True)
def closest_pair_rows(x):
    n, dim = x.shape
    best_j = np.full(n, -1, dtype=np.int64)
    best_r2 = np.full(n, np.inf)
    for i in prange(n):
        for j in range(n):
            if j == i:
                continue
            r2 = 0.0
            for k in range(dim):
                d = x[i, k] - x[j, k]
                r2 += d * d
            if r2 < best_r2[i]:
                best_r2[i] = r2
                best_j[i] = j
    return best_r2, best_j


@njit(parallel=True, cache=True)
def singular_sum_rows(x, beta):
    """Row sums sum_{j != i} |x_i - x_j|^-beta."""
    n, dim = x.shape
    out = np.zeros(n)
    for i in prange(n):
        acc = 0.0
        for j in range(n):
            if j == i:
                continue
            r2 = 0.0
            for k in range(dim):
                d = x[i, k] - x[j, k]
                r2 += d * d
            acc += _inv_pow(r2, beta)
        out[i] = acc
    return out


@njit(parallel=True, cache=True)
def corrected_offdiag_apply(x, g, radius):
    """out_i = sum_{j != i} (Phi + R^2/6 Lap Phi)(x_i - x_j) g_j."""
    n = x.shape[0]
    out = np.zeros((n, 3))
    c = radius * radius / 3.0
    for i in prange(n):
        a0 = 0.0
        a1 = 0.0
        a2 = 0.0
        for j in range(n):
            if j == i:
                continue
            dx = x[i, 0] - x[j, 0]
            dy = x[i, 1] - x[j, 1]
            dz = x[i, 2] - x[j, 2]
            r2 = dx * dx + dy * dy + dz * dz
            r = math.sqrt(r2)
            inv_r = 1.0 / r
            # J = 1/(8 pi r) [(1 + R^2/(3 r^2)) I + (1 - R^2/r^2) xx/r^2]
            iso = INV8PI * inv_r * (1.0 + c / r2)
            aniso = INV8PI * inv_r * (1.0 - 3.0 * c / r2) / r2
            proj = dx * g[j, 0] + dy * g[j, 1] + dz * g[j, 2]
            a0 += iso * g[j, 0] + aniso * proj * dx
            a1 += iso * g[j, 1] + aniso * proj * dy
            a2 += iso * g[j, 2] + aniso * proj * dz
        out[i, 0] = a0
        out[i, 1] = a1
        out[i, 2] = a2
    return out


@njit(cache=True)
def _radial_factor(re2, alpha):
    # re2^(-(alpha+1)/2), avoiding pow for the common exponents
    if alpha == 0.5:
        q = math.sqrt(re2)
        return 1.0 / (q * math.sqrt(q))
    if alpha == 0.0:
        return 1.0 / math.sqrt(re2)
    if alpha == 1.0:
        return 1.0 / re2
    return re2 ** (-0.5 * (alpha + 1.0))


@njit(cache=True)
def _kernel_pair(form, dx, dy, dz, r2, alpha, strength, ax, ay, az, delta2):
    if form == ROTATIONAL_2D:
        s = strength * _radial_factor(r2 + delta2, alpha)
        return -dy * s, dx * s, 0.0
    if form == CURL_3D:
        s = strength * _radial_factor(r2 + delta2, alpha)
        return ((ay * dz - az * dy) * s, (az * dx - ax * dz) * s,
                (ax * dy - ay * dx) * s)
    # Oseen tensor applied to the fixed vector (ax, ay, az)
    re2 = r2 + delta2
    inv_re = 1.0 / math.sqrt(re2)
    iso = strength * INV8PI * inv_re
    proj = strength * INV8PI * inv_re / re2 * (dx * ax + dy * ay + dz * az)
    return iso * ax + proj * dx, iso * ay + proj * dy, iso * az + proj * dz


@njit(parallel=True, cache=True)
def kernel_sum(targets, sources, weights, form, alpha, strength, axis, delta):
    """out(x) = sum_m w_m K(x - y_m), with K(0) = 0 (exactly coincident pairs skipped)."""
    nt, dim = targets.shape
    ns = sources.shape[0]
    out = np.zeros((nt, dim))
    ax = axis[0]
    ay = axis[1]
    az = axis[2]
    delta2 = delta * delta
    for i in prange(nt):
        a0 = 0.0
        a1 = 0.0
        a2 = 0.0
        for m in range(ns):
            dx = targets[i, 0] - sources[m, 0]
            dy = targets[i, 1] - sources[m, 1]
            dz = 0.0
            if dim == 3:
                dz = targets[i, 2] - sources[m, 2]
            r2 = dx * dx + dy * dy + dz * dz
            if r2 == 0.0:
                continue
            k0, k1, k2 = _kernel_pair(form, dx, dy, dz, r2, alpha, strength,
                                      ax, ay, az, delta2)
            w = weights[m]
            a0 += w * k0
            a1 += w * k1
            a2 += w * k2
        out[i, 0] = a0
        out[i, 1] = a1
        if dim == 3:
            out[i, 2] = a2
    return out


@njit(parallel=True, cache=True)
def single_sphere_superposition(points, centers, forces, velocities, radius):
    """Sum of single-sphere fields; points inside a sphere take its rigid velocity."""
    npt = points.shape[0]
    n = centers.shape[0]
    out = np.zeros((npt, 3))
    R2 = radius * radius
    c = R2 / 3.0
    for p in prange(npt):
        inside = -1
        a0 = 0.0
        a1 = 0.0
        a2 = 0.0
        for j in range(n):
            dx = points[p, 0] - centers[j, 0]
            dy = points[p, 1] - centers[j, 1]
            dz = points[p, 2] - centers[j, 2]
            r2 = dx * dx + dy * dy + dz * dz
            if r2 <= R2:
                inside = j
                break
            r = math.sqrt(r2)
            iso = INV8PI / r * (1.0 + c / r2)
            aniso = INV8PI / r * (1.0 - 3.0 * c / r2) / r2
            proj = dx * forces[j, 0] + dy * forces[j, 1] + dz * forces[j, 2]
            a0 += iso * forces[j, 0] + aniso * proj * dx
            a1 += iso * forces[j, 1] + aniso * proj * dy
            a2 += iso * forces[j, 2] + aniso * proj * dz
        if inside >= 0:
            out[p, 0] = velocities[inside, 0]
            out[p, 1] = velocities[inside, 1]
            out[p, 2] = velocities[inside, 2]
        else:
            out[p, 0] = a0
            out[p, 1] = a1
            out[p, 2] = a2
    return out


@njit(parallel=True, cache=True)
def contraction_sums(x, dmin, j, k, bj, bk):
    """sum_i d_ij^-bj d_ik^-bk with the convention d_ii = dmin."""
    n = x.shape[0]
    terms = np.zeros(n)
    for i in prange(n):
        if i == j:
            rj2 = dmin * dmin
        else:
            rj2 = 0.0
            for q in range(3):
                d = x[i, q] - x[j, q]
                rj2 += d * d
        if i == k:
            rk2 = dmin * dmin
        else:
            rk2 = 0.0
            for q in range(3):
                d = x[i, q] - x[k, q]
                rk2 += d * d
        terms[i] = _inv_pow(rj2, bj) * _inv_pow(rk2, bk)
    acc = 0.0
    for i in range(n):
        acc += terms[i]
    return acc
