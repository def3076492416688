import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sediment_lab.otmetrics import (DiscreteMeasure, bottleneck_infty, coupled_eta, first_order_condition,
                                    first_order_exponent, sums_wasserstein_exponents, sums_wasserstein_rhs,
                                    wasserstein_p_equal, wasserstein_p_uniform, wasserstein_p_weighted)


def brute(a, b, p):
    n = len(a)
    D = np.linalg.norm(a[:, None] - b[None], axis=-1)
    best = math.inf
    for perm in itertools.permutations(range(n)):
        d = D[np.arange(n), list(perm)]
        best = min(best, d.max() if math.isinf(p) else (np.sum(d**p) / n) ** (1 / p))
    return best


pts = st.integers(1, 6).flatmap(lambda n: st.tuples(arrays(float, (n, 2), elements=st.floats(-5, 5)),
                                                    arrays(float, (n, 2), elements=st.floats(-5, 5))))


@given(pts, st.sampled_from([1.0, 2.0, 3.0, math.inf]))
def test_assignment_equals_permutation_brute_force(ab, p):
    a, b = ab
    got = wasserstein_p_equal(DiscreteMeasure.uniform(a), DiscreteMeasure.uniform(b), p)[0]
    assert got == pytest.approx(brute(a, b, p), rel=1e-12, abs=1e-12)


def test_one_dimensional_sorted_matching_oracle(rng):
    a = rng.standard_normal((200, 1))
    b = rng.standard_normal((200, 1)) + 0.5
    ref = math.sqrt(np.mean((np.sort(a[:, 0]) - np.sort(b[:, 0])) ** 2))
    got = wasserstein_p_equal(DiscreteMeasure.uniform(a), DiscreteMeasure.uniform(b), 2)[0]
    assert got == pytest.approx(ref, rel=1e-12)


def test_translation_gives_the_shift():
    a = np.random.default_rng(0).standard_normal((30, 3))
    shift = np.array([0.3, -0.4, 0.0])
    for p in (1.0, 2.0, math.inf):
        d = wasserstein_p_equal(DiscreteMeasure.uniform(a), DiscreteMeasure.uniform(a + shift), p)[0]
        assert d == pytest.approx(0.5, rel=1e-12)


@given(pts)
def test_metric_axioms(ab):
    a, b = ab
    A, B = DiscreteMeasure.uniform(a), DiscreteMeasure.uniform(b)
    d_ab = wasserstein_p_equal(A, B, 2)[0]
    assert d_ab == pytest.approx(wasserstein_p_equal(B, A, 2)[0], rel=1e-12, abs=1e-14)
    assert wasserstein_p_equal(A, A, 2)[0] == 0.0
    c = a[::-1] * 0.5
    d_ac = wasserstein_p_equal(A, DiscreteMeasure.uniform(c), 2)[0]
    d_cb = wasserstein_p_equal(DiscreteMeasure.uniform(c), B, 2)[0]
    assert d_ab <= d_ac + d_cb + 1e-9


def test_uniform_sizes_and_weighted_lp_agree(rng):
    a = rng.standard_normal((6, 2))
    b = rng.standard_normal((4, 2))
    A, B = DiscreteMeasure.uniform(a), DiscreteMeasure.uniform(b)
    d1, m1 = wasserstein_p_uniform(A, B, 2)
    d2, m2 = wasserstein_p_weighted(A, B, 2)
    assert d1 == pytest.approx(d2, rel=1e-10)
    ra, ca = m1.marginals(6, 4)
    np.testing.assert_allclose(ra, 1 / 6)
    np.testing.assert_allclose(ca, 1 / 4)
    assert m1.recompute_cost(A, B) == pytest.approx(m1.cost, rel=1e-12)


def test_sinkhorn_upper_bounds_the_exact_cost(rng):
    a = DiscreteMeasure(rng.standard_normal((20, 2)), rng.dirichlet(np.ones(20)))
    b = DiscreteMeasure.uniform(rng.standard_normal((15, 2)))
    exact = wasserstein_p_weighted(a, b, 2)[0]
    approx = wasserstein_p_weighted(a, b, 2, approximate=True)[0]
    assert approx >= exact * (1 - 1e-6)


def test_measure_validation_and_limits():
    with pytest.raises(ValueError):
        DiscreteMeasure(np.zeros((2, 2)), np.array([0.4, 0.4]))
    A = DiscreteMeasure.uniform(np.zeros((3, 2)))
    with pytest.raises(ValueError):
        wasserstein_p_equal(A, DiscreteMeasure.uniform(np.zeros((4, 2))), 2)
    with pytest.raises(ValueError):
        wasserstein_p_equal(A, A, 0.5)
    with pytest.raises(ValueError):
        wasserstein_p_equal(A, A, 2, limit=2)
    with pytest.raises(ValueError):
        wasserstein_p_weighted(A, A, math.inf)


def test_bottleneck_is_the_smallest_feasible_threshold():
    a = np.array([[0.0, 0], [1.0, 0]])
    b = np.array([[0.0, 0.1], [3.0, 0]])
    d, m = bottleneck_infty(DiscreteMeasure.uniform(a), DiscreteMeasure.uniform(b))
    assert d == pytest.approx(2.0)


def test_matching_csv_lists_every_pair(rng):
    A = DiscreteMeasure.uniform(rng.standard_normal((5, 2)))
    B = DiscreteMeasure.uniform(rng.standard_normal((5, 2)))
    _, m = wasserstein_p_equal(A, B, 2)
    lines = m.to_csv(A, B).strip().splitlines()
    assert lines[0] == "i,j,mass,displacement" and len(lines) == 6


def test_coupled_eta_is_a_running_supremum_and_bounds_w2(rng):
    X = rng.standard_normal((4, 2))
    Y = np.repeat(X, 2, axis=0) + 0.01 * rng.standard_normal((8, 2))
    owner = np.repeat(np.arange(4), 2)
    times = np.array([0.0, 0.5, 1.0])
    traj_a = np.stack([X, X + 0.1, X])
    traj_b = np.stack([Y, Y, Y])
    eta = coupled_eta(owner, np.full(8, 1 / 8), times, traj_a, times, traj_b, 2.0)
    assert np.all(np.diff(eta) >= 0) and eta[2] == eta[1]
    exact = wasserstein_p_uniform(DiscreteMeasure.uniform(X), DiscreteMeasure.uniform(Y), 2)[0]
    assert exact <= eta[0] + 1e-15
    with pytest.raises(ValueError):
        coupled_eta(owner, np.full(8, 1 / 8), times, traj_a, times + 1, traj_b)


def test_sums_bound_exponents_and_domain():
    e = sums_wasserstein_exponents(6.0, 2.0, 2.0, 3)
    assert e["e1"] == pytest.approx(2 * 1.2 / 3)
    assert e["e2_W"] == pytest.approx(2 / (3 + 2.4))
    with pytest.raises(ValueError):
        sums_wasserstein_rhs(100, 0.1, 1.0, 2.0, 2.0, 2.0, 0.1)  # q below d/(d - beta)
    with pytest.raises(ValueError):
        sums_wasserstein_rhs(100, 0.1, 1.0, 6.0, 2.0, 3.0, 0.1)
    lo = sums_wasserstein_rhs(1000, 0.1, 1.0, 6.0, 2.0, 2.0, 0.01)
    hi = sums_wasserstein_rhs(1000, 0.1, 1.0, 6.0, 2.0, 2.0, 0.1)
    assert hi > lo > 1.0


def test_first_order_admissibility_condition():
    assert first_order_exponent(math.inf, math.inf, 0.5, 2) == pytest.approx(0.5)
    small = first_order_condition(1e-3, 0.05, 1024, math.inf, math.inf, 0.5, 2)
    big = first_order_condition(1e-1, 0.05, 1024, math.inf, math.inf, 0.5, 2)
    assert small < big
    with pytest.raises(ValueError):
        first_order_condition(0.1, 0.1, 10, 2.0, 6.0, 1.5, 2)


def test_identical_measures_and_single_diracs(rng):
    A = DiscreteMeasure.uniform(rng.standard_normal((7, 3)))
    d, m = wasserstein_p_equal(A, A, 2)
    assert d == 0.0 and np.array_equal(m.rows, m.cols)
    assert bottleneck_infty(A, A)[0] == 0.0
    x, y = np.array([[0.5, -1.0, 2.0]]), np.array([[1.5, 1.0, 0.0]])
    for p in (1.0, 2.0, 3.5, math.inf):
        assert wasserstein_p_equal(DiscreteMeasure.uniform(x), DiscreteMeasure.uniform(y), p)[0] == \
            pytest.approx(3.0, rel=1e-14)


def test_split_dirac_forced_plan():
    a = np.array([0.3, -0.4, 1.2])
    mu = DiscreteMeasure.uniform(np.zeros((1, 3)))
    nu = DiscreteMeasure.uniform(np.stack([a, -a]))
    d, m = wasserstein_p_weighted(mu, nu, 2)
    assert d == pytest.approx(np.linalg.norm(a), rel=1e-12)
    rows, cols = m.marginals(1, 2)
    assert np.allclose(rows, mu.weights, atol=1e-10) and np.allclose(cols, nu.weights, atol=1e-10)


def test_weighted_plan_matches_an_independent_lp_solver(rng):
    from scipy.optimize import linprog

    x, y = rng.standard_normal((4, 2)), rng.standard_normal((6, 2))
    a, b = rng.random(4) + 0.1, rng.random(6) + 0.1
    mu, nu = DiscreteMeasure(x, a / a.sum()), DiscreteMeasure(y, b / b.sum())
    C = np.linalg.norm(x[:, None] - y[None], axis=-1) ** 2
    A_eq = np.vstack([np.kron(np.eye(4), np.ones(6)), np.kron(np.ones(4), np.eye(6))])
    lp = linprog(C.ravel(), A_eq=A_eq, b_eq=np.concatenate([mu.weights, nu.weights]), method="highs")
    d, m = wasserstein_p_weighted(mu, nu, 2)
    assert d**2 == pytest.approx(lp.fun, rel=1e-9)
    rows, cols = m.marginals(4, 6)
    assert np.allclose(rows, mu.weights, atol=1e-10) and np.allclose(cols, nu.weights, atol=1e-10)


def test_bottleneck_dominates_every_finite_p(rng):
    for _ in range(5):
        A = DiscreteMeasure.uniform(rng.standard_normal((16, 3)))
        B = DiscreteMeasure.uniform(rng.standard_normal((16, 3)))
        w_inf = bottleneck_infty(A, B)[0]
        finite = [wasserstein_p_equal(A, B, p)[0] for p in (1.0, 2.0, 4.0)]
        assert all(w <= w_inf + 1e-12 for w in finite)
        assert finite[0] <= finite[1] + 1e-12 <= finite[2] + 2e-12


triples = st.integers(1, 6).flatmap(lambda n: st.tuples(*[arrays(float, (n, 2), elements=st.floats(-5, 5))] * 3))


@given(triples, st.sampled_from([1.0, 2.0]))
def test_triangle_inequality(abc, p):
    A, B, C = (DiscreteMeasure.uniform(v) for v in abc)
    ab = wasserstein_p_equal(A, B, p)[0]
    bc = wasserstein_p_equal(B, C, p)[0]
    ac = wasserstein_p_equal(A, C, p)[0]
    assert ac <= ab + bc + 1e-10


def test_coupled_eta_trivial_cases(rng):
    X = rng.standard_normal((5, 2))
    traj = np.stack([X, X + 0.3, X - 0.2])
    times = np.array([0.0, 0.1, 0.2])
    w = np.full(5, 0.2)
    assert np.all(coupled_eta(np.arange(5), w, times, traj, times, traj) == 0.0)
    Y = X + 0.05 * rng.standard_normal((5, 2))
    frozen = coupled_eta(np.arange(5), w, times, np.stack([X] * 3), times, np.stack([Y] * 3))
    assert np.all(frozen == frozen[0])


def test_coupled_eta_bounds_snapshot_distances_on_a_live_run():
    from sediment_lab.dynamics import InertialState, step_binary_first_order
    from sediment_lab.geometry import CAlphaKernel, Configuration
    from sediment_lab.macroref import cell_centers, grid_shape

    K = CAlphaKernel(form="rotational-2d", alpha=0.5, strength=1.0)
    lo, hi = np.full(2, -1.0), np.full(2, 1.0)
    X, Y = cell_centers(lo, hi, grid_shape(16, 2)), cell_centers(lo, hi, grid_shape(64, 2))
    owner = np.argmin(np.linalg.norm(Y[:, None] - X[None], axis=-1), axis=1)
    a = InertialState(Configuration(X, 1e-3), np.zeros_like(X))
    b = InertialState(Configuration(Y, 1e-3), np.zeros_like(Y))
    times, xs, ys = [0.0], [X], [Y]
    for k in range(10):
        a, b = step_binary_first_order(a, K, 0.05), step_binary_first_order(b, K, 0.05)
        times.append(0.05 * (k + 1))
        xs.append(a.X.copy())
        ys.append(b.X.copy())
    eta_bar = coupled_eta(owner, np.full(64, 1 / 64), times, np.stack(xs), times, np.stack(ys), 2.0)
    for k in range(len(times)):
        w = wasserstein_p_uniform(DiscreteMeasure.uniform(xs[k]), DiscreteMeasure.uniform(ys[k]), 2)[0]
        assert w <= eta_bar[k] + 1e-12


def test_sums_bound_special_cases():
    first = sums_wasserstein_rhs(1000, 0.1, 2.0, 6.0, 2.0, 2.0, 0.0)
    assert first == pytest.approx(2.0 ** sums_wasserstein_exponents(6.0, 2.0, 2.0, 3)["e1"])
    assert sums_wasserstein_exponents(math.inf, math.inf, 1.0, 3)["e2_W"] == 2.0


def test_sums_exponents_against_rational_arithmetic():
    from fractions import Fraction as Fr

    d, beta, p, q = Fr(3), Fr(2), Fr(2), Fr(4)
    qp = 1 / (1 - 1 / q)
    den3 = d - beta + beta * qp + p * qp
    expected = {
        "e1": beta * qp / d,
        "e2_sigma": (d - beta) / d * p * qp / (d + p * qp),
        "e2_W": (d - beta) * p / (d + p * qp),
        "e3_outer": (beta + p) * qp / den3,
        "e3_W": (d - beta) * p / den3,
    }
    assert expected == {"e1": Fr(8, 9), "e2_sigma": Fr(8, 51), "e2_W": Fr(6, 17),
                        "e3_outer": Fr(16, 19), "e3_W": Fr(6, 19)}
    got = sums_wasserstein_exponents(4.0, 2.0, 2.0, 3)
    for k, v in expected.items():
        assert got[k] == pytest.approx(float(v), rel=1e-14)


def test_first_order_condition_plug_in_sequence():
    assert first_order_condition(0.0, 0.1, 100, 2.0, math.inf, 1.0, 3) == 0.0
    vals = []
    for N in (64, 512, 4096, 32768):
        v = first_order_condition(N ** (-1 / 3), N ** (-1 / 3), N, 2.0, math.inf, 1.0, 3)
        assert v == pytest.approx(2 * N ** (-2 / 15), rel=1e-12)
        vals.append(v)
    assert np.all(np.diff(vals) < 0)
