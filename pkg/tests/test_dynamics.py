import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sediment_lab.geometry import CAlphaKernel, Configuration
from sediment_lab.dynamics import (CollisionError, InertialState, ScenarioParams, d2_satisfied, d3_value,
                                   default_dt, exponential_update, h3_satisfied, h4_value, inertial_recorder,
                                   inertialess_field, interaction_velocity, load_checkpoint, run,
                                   save_checkpoint, step_binary_first_order, step_binary_second_order,
                                   step_inertial, step_inertialess, steps_for)


@given(st.floats(0.1, 100.0), st.floats(1e-4, 1.0))
def test_exponential_update_is_exact_for_constant_target(rate, dt):
    X = np.array([[0.3, -1.0, 2.0]])
    V = np.array([[1.0, 0.5, -0.2]])
    target = np.array([[0.0, 0.0, -1.0]])
    Xn, Vn = exponential_update(X, V, target, rate, dt)
    e = math.exp(-rate * dt)
    np.testing.assert_allclose(Vn, target + e * (V - target), rtol=1e-13)
    np.testing.assert_allclose(Xn, X + dt * target + (1 - e) / rate * (V - target), rtol=1e-12, atol=1e-15)


def test_single_sphere_relaxes_at_rate_kappa():
    p = ScenarioParams(N=1, gamma_N=1.0, lambda_N=2.0, dt=0.01)
    s = InertialState(Configuration(np.zeros((1, 3)), p.radius), np.zeros((1, 3)))
    res = run(s, lambda st_: step_inertial(st_, p), 10)
    expected = p.terminal_velocity * (1 - math.exp(-p.kappa * res.final.t))
    np.testing.assert_allclose(res.final.V[0], expected, rtol=1e-10)


def test_scenario_params_validation():
    with pytest.raises(ValueError):
        ScenarioParams(N=4, gamma_N=1e4)
    with pytest.raises(ValueError):
        ScenarioParams(N=4, g=(0.0, 0.0, -2.0))
    p = ScenarioParams(N=4, gamma_N=2.0, lambda_N=3.0)
    assert p.radius == 0.5 and p.kappa == pytest.approx(36 * math.pi) and p.stokes_number == pytest.approx(1 / 6)


def pair_state(gap, R, v):
    X = np.array([[0.0, 0, 0], [gap, 0, 0]])
    V = np.array([[v, 0, 0], [-v, 0, 0]])
    return InertialState(Configuration(X, R), V)


def test_collision_is_reported_with_the_pair():
    p = ScenarioParams(N=2, gamma_N=0.2, lambda_N=10.0, dt=1e-3)
    s = pair_state(0.25, p.radius, 50.0)
    res = run(s, lambda st_: step_inertial(st_, p), 1000)
    assert res.event is not None and res.event.pair == (0, 1)
    assert res.event.distance <= 2 * p.radius * (1 + 1e-9)
    with pytest.raises(CollisionError):
        for _ in range(1000):
            s = step_inertial(s, p)


def test_well_prepared_pair_stays_well_prepared():
    p = ScenarioParams(N=2, gamma_N=0.2, lambda_N=10.0, dt=1e-3)
    cfg = Configuration(np.array([[0.0, 0, 0], [1.0, 0.3, 0]]), p.radius)
    s = InertialState(cfg, inertialess_field(cfg, p))
    rec = run(s, lambda st_: step_inertial(st_, p), 50, [inertial_recorder(p)], stride=10).record
    assert rec.series("Vdiff_l2_over_sqrtN").max() < 1e-6
    # a rigidly translating pair: distance unchanged
    np.testing.assert_allclose(rec.series("d_min"), rec.series("d_min")[0], rtol=1e-10)


def test_inertial_and_inertialess_agree_for_small_stokes_number():
    R = 0.02
    cfg = Configuration(np.array([[0.0, 0, 0], [0.3, 0.1, 0.0], [0.1, 0.4, 0.2]]), R)
    lam = 1e4
    p = ScenarioParams(N=3, gamma_N=3 * R, lambda_N=lam, dt=1e-3)
    a = InertialState(cfg, inertialess_field(cfg, p))
    b = InertialState(cfg, np.zeros((3, 3)))
    for _ in range(100):
        a = step_inertial(a, p)
        b = step_inertialess(b, p)
    assert np.abs(a.X - b.X).max() < 1e-4 * np.abs(b.X - cfg.positions).max()


def test_binary_first_order_rotational_pair_rotates_rigidly():
    K = CAlphaKernel("rotational-2d", 0.0, 1.0)
    X = np.array([[-0.5, 0.0], [0.5, 0.0]])
    s = InertialState(Configuration(X, 1.0), np.zeros_like(X))
    dt, n = 1e-3, 200
    for _ in range(n):
        s = step_binary_first_order(s, K, dt)
    # each particle moves with speed 1/2 on a circle of radius 1/2: angular speed 1
    ang = math.atan2(s.X[1, 1], s.X[1, 0])
    assert ang == pytest.approx(n * dt, rel=1e-6)
    assert np.linalg.norm(s.X[1] - s.X[0]) == pytest.approx(1.0, rel=1e-9)


def test_binary_second_order_tends_to_first_order():
    K = CAlphaKernel("rotational-2d", 0.5)
    X = np.random.default_rng(0).uniform(-1, 1, (20, 2))
    first = InertialState(Configuration(X, 1.0), np.zeros_like(X))
    for _ in range(100):
        first = step_binary_first_order(first, K, 1e-3)
    errs = []
    for lam in (100.0, 1000.0):
        s = InertialState(Configuration(X, 1.0), interaction_velocity(K, X) + 1.0)
        dt = 0.1 / lam
        for _ in range(int(round(0.1 / dt))):
            s = step_binary_second_order(s, K, lam, dt)
        errs.append(np.abs(s.X - first.X).max())
    assert errs[1] < errs[0] / 5


def test_admissibility_predicates():
    X = np.array([[0.0, 0, 0], [1.0, 0, 0]])
    V = np.array([[0.0, 0, 0], [2.0, 0, 0]])
    assert h3_satisfied(X, V, 1.0, 1.0) and not h3_satisfied(X, V, 0.1, 1.0)
    assert d2_satisfied(X, V, 4.0) and not d2_satisfied(X, V, 3.9)
    assert h4_value(V, 2.0) == pytest.approx(2.0 + 1.0)
    assert d3_value(V, 2.0) == pytest.approx(2.0)


def test_default_dt_and_steps_for():
    p = ScenarioParams(N=2, gamma_N=0.2)
    cfg = Configuration(np.array([[0.0, 0, 0], [0.5, 0, 0]]), p.radius)
    assert 0 < default_dt(cfg, p) <= 0.01
    assert steps_for(1.0, 0.01) == 100
    with pytest.raises(ValueError):
        steps_for(1.0, 0.3)


def test_checkpoint_resume_is_bit_identical(tmp_path):
    p = ScenarioParams(N=3, gamma_N=0.1, lambda_N=5.0, dt=1e-3)
    cfg = Configuration(np.array([[0.0, 0, 0], [0.4, 0.1, 0], [0.1, 0.5, 0.3]]), p.radius)
    s0 = InertialState(cfg, np.zeros((3, 3)))
    full = run(s0, lambda s: step_inertial(s, p), 40).final
    half = run(s0, lambda s: step_inertial(s, p), 20).final
    rng = np.random.default_rng(3)
    rng.random(5)
    save_checkpoint(tmp_path / "ck.npz", half, rng)
    loaded, rng2 = load_checkpoint(tmp_path / "ck.npz")
    assert rng2.random() == rng.random()
    resumed = run(loaded, lambda s: step_inertial(s, p), 20).final
    assert np.array_equal(resumed.X, full.X) and np.array_equal(resumed.V, full.V)
    assert resumed.t == full.t and resumed.step == full.step


def test_run_samples_on_stride_and_final_step():
    p = ScenarioParams(N=1, dt=0.01)
    s = InertialState(Configuration(np.zeros((1, 3)), p.radius), np.zeros((1, 3)))
    rec = run(s, lambda st_: step_inertial(st_, p), 25, [inertial_recorder(p)], stride=10,
              sample_steps={7}).record
    np.testing.assert_allclose(rec.t, [0, 0.07, 0.1, 0.2, 0.25], atol=1e-12)
