"""Exact Wasserstein distances between discrete measures and the related bound evaluators."""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching
from scipy.spatial.distance import cdist

ASSIGNMENT_LIMIT = 4096
LP_LIMIT = 512


@dataclass
class DiscreteMeasure:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.points = np.ascontiguousarray(np.atleast_2d(self.points), dtype=float)
        self.weights = np.ascontiguousarray(self.weights, dtype=float)
        if len(self.points) != len(self.weights):
            raise ValueError("points and weights must have matching lengths")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")
        if abs(self.weights.sum() - 1.0) > 1e-10:
            raise ValueError("weights must sum to 1")

    @classmethod
    def uniform(cls, points) -> "DiscreteMeasure":
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return cls(points, np.full(len(points), 1.0 / len(points)))

    @property
    def size(self) -> int:
        return len(self.weights)

    def is_uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0])) or np.allclose(self.weights, 1.0 / self.size,
                                                                           rtol=0, atol=1e-15)


@dataclass
class Matching:
    """Sparse coupling: mass[k] moves from source rows[k] to target cols[k]."""

    rows: np.ndarray
    cols: np.ndarray
    mass: np.ndarray
    cost: float
    p: float

    @property
    def distance(self) -> float:
        return self.cost if math.isinf(self.p) else self.cost ** (1.0 / self.p)

    def marginals(self, n: int, m: int):
        return (np.bincount(self.rows, self.mass, minlength=n),
                np.bincount(self.cols, self.mass, minlength=m))

    def displacements(self, mu: DiscreteMeasure, nu: DiscreteMeasure) -> np.ndarray:
        return np.linalg.norm(mu.points[self.rows] - nu.points[self.cols], axis=1)

    def recompute_cost(self, mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
        disp = self.displacements(mu, nu)
        if math.isinf(self.p):
            return float(disp.max())
        return float(np.sum(self.mass * disp**self.p))

    def to_csv(self, mu: DiscreteMeasure, nu: DiscreteMeasure) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["i", "j", "mass", "displacement"])
        for i, j, m, d in zip(self.rows, self.cols, self.mass, self.displacements(mu, nu)):
            w.writerow([int(i), int(j), repr(float(m)), repr(float(d))])
        return buf.getvalue()


def _cost_matrix(x, y, p):
    D = cdist(x, y)
    return D if p == 1 else D**p


def wasserstein_p_equal(mu: DiscreteMeasure, nu: DiscreteMeasure, p: float,
                        limit: int = ASSIGNMENT_LIMIT) -> tuple[float, Matching]:
    """Exact W_p between two uniform measures of equal size via optimal assignment."""
    if mu.size != nu.size:
        raise ValueError("sizes differ; use wasserstein_p_uniform or wasserstein_p_weighted")
    if not (mu.is_uniform() and nu.is_uniform()):
        raise ValueError("weights are not uniform; use wasserstein_p_weighted")
    if p < 1:
        raise ValueError("p must be at least 1")
    if math.isinf(p):
        return bottleneck_infty(mu, nu)
    n = mu.size
    if n > limit:
        raise ValueError(f"assignment size {n} above the limit {limit}")
    C = _cost_matrix(mu.points, nu.points, p)
    rows, cols = linear_sum_assignment(C)
    mass = np.full(n, 1.0 / n)
    cost = float(np.sum(C[rows, cols]) / n)
    m = Matching(rows, cols, mass, cost, p)
    return m.distance, m


def wasserstein_p_uniform(mu: DiscreteMeasure, nu: DiscreteMeasure, p: float,
                          limit: int = ASSIGNMENT_LIMIT) -> tuple[float, Matching]:
    """Exact W_p between uniform measures of sizes N and M by assignment on lcm(N, M) copies."""
    n, m = mu.size, nu.size
    L = n * m // math.gcd(n, m)
    if L > limit:
        raise ValueError(f"replicated assignment size {L} above the limit {limit}")
    a = DiscreteMeasure.uniform(np.repeat(mu.points, L // n, axis=0))
    b = DiscreteMeasure.uniform(np.repeat(nu.points, L // m, axis=0))
    dist, match = wasserstein_p_equal(a, b, p, limit)
    rows = match.rows // (L // n)
    cols = match.cols // (L // m)
    # merge duplicate (i, j) entries of the replicated plan
    key = rows * m + cols
    uniq, inv = np.unique(key, return_inverse=True)
    mass = np.bincount(inv, match.mass)
    return dist, Matching(uniq // m, uniq % m, mass, match.cost, p)


def _import_ot():
    # the optional deep-learning backends of POT are slow to probe and unused here
    for name in ("TENSORFLOW", "PYTORCH", "JAX", "CUPY"):
        os.environ.setdefault(f"POT_BACKEND_DISABLE_{name}", "1")
    import ot

    return ot


def wasserstein_p_weighted(mu: DiscreteMeasure, nu: DiscreteMeasure, p: float,
                           limit: int = LP_LIMIT, approximate: bool = False,
                           reg: float = 1e-2) -> tuple[float, Matching]:
    """W_p between weighted measures by solving the Kantorovich LP exactly (network simplex).

    ``approximate=True`` switches to entropic regularization (Sinkhorn, strength
    ``reg`` relative to the mean cost); it is biased and never used for metrics.
    """
    if math.isinf(p) or p < 1:
        raise ValueError("weighted transport needs 1 <= p < inf")
    if max(mu.size, nu.size) > limit:
        raise ValueError(f"LP size {mu.size}x{nu.size} above the limit {limit}; "
                         "use the equal-size assignment path or subsample")
    ot = _import_ot()
    C = _cost_matrix(mu.points, nu.points, p)
    a = mu.weights / mu.weights.sum()
    b = nu.weights / nu.weights.sum()
    if approximate:
        plan = ot.sinkhorn(a, b, C, reg * float(C.mean()), numItermax=100_000)
    else:
        plan = ot.emd(a, b, C, numItermax=10_000_000)
    rows, cols = np.nonzero(plan > 0)
    mass = plan[rows, cols]
    cost = float(np.sum(mass * C[rows, cols]))
    m = Matching(rows, cols, mass, cost, p)
    return m.distance, m


def bottleneck_infty(mu: DiscreteMeasure, nu: DiscreteMeasure) -> tuple[float, Matching]:
    """W_inf for equal-size uniform measures: the smallest threshold admitting a perfect matching."""
    if mu.size != nu.size:
        raise ValueError("bottleneck matching needs equal sizes")
    n = mu.size
    D = cdist(mu.points, nu.points)
    cand = np.unique(D)
    lo, hi = 0, len(cand) - 1
    best = None
    while lo <= hi:
        mid = (lo + hi) // 2
        match = maximum_bipartite_matching(csr_matrix(D <= cand[mid]), perm_type="column")
        if np.all(match >= 0):
            best = match
            hi = mid - 1
        else:
            lo = mid + 1
    rows = np.arange(n)
    cols = np.asarray(best, dtype=np.int64)
    cost = float(D[rows, cols].max())
    return cost, Matching(rows, cols, np.full(n, 1.0 / n), cost, math.inf)


def coupled_eta(owner, weights, times_a, traj_a, times_b, traj_b, p: float = 2.0) -> np.ndarray:
    """Running supremum of (sum_m w_m |X_{owner[m]}(s) - y_m(s)|^p)^{1/p}.

    ``owner[m]`` is the particle paired with marker m at t = 0; traj_a holds the
    particle positions (T, N, d) and traj_b the marker positions (T, M, d) on the
    same time grid.  Returns the running supremum at every recorded time.
    """
    times_a = np.asarray(times_a, dtype=float)
    times_b = np.asarray(times_b, dtype=float)
    if times_a.shape != times_b.shape or not np.allclose(times_a, times_b, rtol=0, atol=1e-12):
        raise ValueError("the two trajectories are recorded on different time grids")
    traj_a = np.asarray(traj_a, dtype=float)
    traj_b = np.asarray(traj_b, dtype=float)
    owner = np.asarray(owner, dtype=np.int64)
    weights = np.asarray(weights, dtype=float)
    disp = np.linalg.norm(traj_a[:, owner, :] - traj_b, axis=2)
    if math.isinf(p):
        eta = disp.max(axis=1)
    else:
        eta = np.sum(weights[None, :] * disp**p, axis=1) ** (1.0 / p)
    return np.maximum.accumulate(eta)


def _conjugate(q: float) -> float:
    if math.isinf(q):
        return 1.0
    if q <= 1:
        raise ValueError("q must exceed 1")
    return q / (q - 1.0)


def sums_wasserstein_exponents(q: float, p: float, beta: float, d: int) -> dict:
    """Exponents of the three-term bound on S_beta in terms of W_p."""
    qp = _conjugate(q)
    if math.isinf(p):
        return {"e1": beta * qp / d, "e2_sigma": (d - beta) / d, "e2_W": (d - beta) / qp}
    den3 = d - beta + beta * qp + p * qp
    return {
        "e1": beta * qp / d,
        "e2_sigma": ((d - beta) / d) * (p * qp / (d + p * qp)),
        "e2_W": (d - beta) * p / (d + p * qp),
        "e3_outer": (beta + p) * qp / den3,
        "e3_W": (d - beta) * p / den3,
    }


def sums_wasserstein_rhs(N: int, d_min: float, sigma_q: float, q: float, p: float, beta: float,
                         W: float, d: int = 3) -> float:
    """Unit-constant right-hand side bounding S_beta / N by ||sigma||_q, d_min and W_p."""
    if not 0 < beta < d:
        raise ValueError(f"need 0 < beta < d (beta = {beta}, d = {d})")
    if not (math.isinf(q) or q > d / (d - beta)):
        raise ValueError(f"need q > d/(d - beta) = {d / (d - beta)}")
    if not p >= 1:
        raise ValueError("need p >= 1")
    e = sums_wasserstein_exponents(q, p, beta, d)
    scale = 1.0 / (N ** (beta / d) * d_min**beta)
    if math.isinf(p):
        return sigma_q ** e["e1"] + sigma_q ** e["e2_sigma"] * scale * W ** e["e2_W"]
    t1 = sigma_q ** e["e1"]
    t2 = sigma_q ** e["e2_sigma"] * W ** e["e2_W"] * scale
    t3 = (sigma_q ** ((d - beta) / d) * scale) ** e["e3_outer"] * W ** e["e3_W"]
    return t1 + t2 + t3


def first_order_exponent(p: float, q: float, alpha: float, d: int) -> float:
    if math.isinf(p):
        return d - alpha - 1.0
    return p * (d - alpha - 1.0) / (d + p * _conjugate(q))


def first_order_condition(eta0: float, dmin0: float, N: int, p: float, q: float, alpha: float, d: int = 3) -> float:
    """eta0^{p(d-alpha-1)/(d+pq')} (1 + dmin0^{-(alpha+1)} N^{-(alpha+1)/d}); small values admit first-order stability."""
    if not alpha < d - 1:
        raise ValueError(f"need alpha < d - 1 (alpha = {alpha}, d = {d})")
    if not (math.isinf(q) or q > d / (d - alpha - 1.0)):
        raise ValueError(f"need q > d/(d - alpha - 1) = {d / (d - alpha - 1.0)}")
    if eta0 < 0 or dmin0 <= 0:
        raise ValueError("need eta0 >= 0 and dmin0 > 0")
    return eta0 ** first_order_exponent(p, q, alpha, d) * (1.0 + dmin0 ** (-(alpha + 1)) * N ** (-(alpha + 1) / d))


# names used by the build contract
hauray_exponent = first_order_exponent
hauray_condition = first_order_condition
