import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sediment_lab.geometry import CAlphaKernel, oseen
from sediment_lab.macroref import (DensitySpec, WeightedCloud, ball_points, cell_centers, evaluate_u_field,
                                   grid_shape, k_equation_step, l2_ball_difference, nested_grid, sample_cloud,
                                   transport_stokes_step, u_star)


@given(st.integers(1, 5000), st.sampled_from([2, 3]))
def test_grid_shape_factorizes(M, dim):
    shape = grid_shape(M, dim)
    assert len(shape) == dim and int(np.prod(shape)) == M and list(shape) == sorted(shape)


def test_grid_shapes_used_by_the_sweeps():
    assert grid_shape(128, 3) == (4, 4, 8)
    assert grid_shape(4096, 3) == (16, 16, 16)
    assert grid_shape(1024, 2) == (32, 32)


def test_nested_grids_split_cells_evenly():
    X, Y = nested_grid(128, 3), nested_grid(4096, 3)
    owner = np.argmin(((Y[:, None] - X[None]) ** 2).sum(-1), axis=1)
    assert np.all(np.bincount(owner, minlength=128) == 32)


@pytest.mark.parametrize("spec", [DensitySpec("gaussian", {"std": 0.4}), DensitySpec("uniform-ball", {"radius": 0.7}),
                                  DensitySpec("uniform-box", {"half_width": [0.5, 1.0, 1.5]}),
                                  DensitySpec("two-bump", {"std": 0.2, "separation": 1.0, "mass_ratio": 2.0}),
                                  DensitySpec("gaussian", {"std": 0.3}, dim=2)])
def test_grid_quadrature_integrates_the_density(spec):
    cloud = sample_cloud(spec, 8000 if spec.dim == 3 else 4096, "grid")
    assert cloud.weights.sum() == pytest.approx(1.0, abs=1e-12)
    lo, hi = spec.support_box()
    # the mean of the cloud matches the mean of the density (symmetric families: the centre)
    m = cloud.weights @ cloud.markers
    if spec.family == "two-bump":
        expected = np.zeros(spec.dim)
        expected[0] = 0.5 * (1 / 3) - 0.5 * (2 / 3)
        np.testing.assert_allclose(m, expected, atol=5e-3)
    else:
        np.testing.assert_allclose(m, 0.5 * (lo + hi), atol=1e-10)


def test_lq_norms_closed_forms_against_cubature():
    spec = DensitySpec("gaussian", {"std": 0.5})
    closed = spec.lq_norm(2.0)
    x = cell_centers(*spec.support_box(), (60, 60, 60))
    cell = np.prod((spec.support_box()[1] - spec.support_box()[0]) / 60)
    assert closed == pytest.approx(math.sqrt(np.sum(spec.density(x) ** 2) * cell), rel=1e-3)
    box = DensitySpec("uniform-box", {"half_width": 1.0})
    assert box.lq_norm(6.0) == pytest.approx(8 ** (1 / 6 - 1))
    assert box.lq_norm(math.inf) == pytest.approx(1 / 8)


def test_iid_sampling_is_seeded():
    spec = DensitySpec("uniform-ball", {"radius": 1.0})
    a = sample_cloud(spec, 100, "iid", seed=3)
    b = sample_cloud(spec, 100, "iid", seed=3)
    assert np.array_equal(a.markers, b.markers)
    assert np.all(np.linalg.norm(a.markers, axis=1) <= 1.0)


def test_cloud_validation_and_csv_round_trip():
    with pytest.raises(ValueError):
        WeightedCloud(np.zeros((2, 3)), np.array([0.5, 0.6]))
    c = sample_cloud(DensitySpec("gaussian", {"std": 0.3}), 27, "grid", c_eps=0.0)
    back = WeightedCloud.from_csv(c.to_csv())
    assert np.array_equal(back.markers, c.markers) and np.array_equal(back.weights, c.weights)


def test_u_star_matches_direct_sum(rng):
    cloud = WeightedCloud(rng.uniform(-1, 1, (30, 3)), np.full(30, 1 / 30))
    x = rng.uniform(2, 3, (4, 3))
    g = np.array([0, 0, -1.0])
    direct = np.array([sum(w * oseen(p - y) @ g for y, w in zip(cloud.markers, cloud.weights)) for p in x])
    np.testing.assert_allclose(u_star(cloud, x, 1.0, include_drift=False), direct, rtol=1e-12)
    np.testing.assert_allclose(u_star(cloud, x, 2.0) - direct, np.tile(g / (12 * math.pi), (4, 1)), atol=1e-12)
    with pytest.raises(ValueError):
        u_star(cloud, cloud.markers[:1], 1.0)


def test_single_marker_falls_with_the_drift():
    cloud = WeightedCloud(np.zeros((1, 3)), np.ones(1))
    out = transport_stokes_step(cloud, 1.0, 0.5)
    np.testing.assert_allclose(out.markers, [[0, 0, -0.5 / (6 * math.pi)]], atol=1e-15)


def test_transport_preserves_mass_and_centre_speed(rng):
    cloud = WeightedCloud(rng.uniform(-1, 1, (50, 3)), np.full(50, 1 / 50))
    out = transport_stokes_step(cloud, 1.0, 0.01)
    assert out.weights.sum() == pytest.approx(1)
    # the interaction sum is symmetric: the centre of mass moves faster than the drift only by the
    # mean induced velocity, which points along g
    shift = (out.weights @ out.markers - cloud.weights @ cloud.markers) / 0.01
    assert shift[2] < -1 / (6 * math.pi)


def test_k_equation_rotational_kernel_preserves_the_centre(rng):
    K = CAlphaKernel("rotational-2d", 0.5)
    cloud = WeightedCloud(rng.uniform(-1, 1, (40, 2)), np.full(40, 1 / 40))
    out = k_equation_step(cloud, K, 0.05)
    # antisymmetric pair interactions leave the uniform-weight centre of mass fixed
    np.testing.assert_allclose(out.markers.mean(0), cloud.markers.mean(0), atol=1e-6)


def test_particle_field_is_rigid_inside_spheres():
    X = np.array([[0.0, 0, 0], [1.0, 0, 0]])
    F = np.array([[0, 0, -0.5], [0, 0, -0.5]])
    V = np.array([[0, 0, -1.0], [0, 0, -1.1]])
    u = evaluate_u_field(np.array([[0.01, 0, 0], [1.0, 0.02, 0]]), positions=X, forces=F, velocities=V, radius=0.05)
    np.testing.assert_allclose(u, V)
    with pytest.raises(ValueError):
        evaluate_u_field(np.zeros((1, 3)))


def test_ball_points_and_l2_of_constant_difference():
    pts = ball_points([1.0, 2.0, 3.0], 4096, 1.0, seed=0)
    assert np.all(np.linalg.norm(pts - [1, 2, 3], axis=1) <= 1.0 + 1e-12)
    np.testing.assert_allclose(pts.mean(0), [1, 2, 3], atol=0.02)
    ones = np.ones((4096, 3))
    vol = 4 / 3 * math.pi
    assert l2_ball_difference(ones, 0 * ones) == pytest.approx(math.sqrt(3 * vol))
