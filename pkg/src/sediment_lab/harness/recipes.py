"""Experiment recipes: matched initial data, one sweep cell, and the sweep table."""

from __future__ import annotations

import math
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..diagnostics import DiagnosticsRecord, fit_power, modulated_energy
from ..dynamics import (CollisionEvent, InertialState, ScenarioParams, h3_satisfied, h4_value, d2_satisfied,
                        d3_value, default_dt, dmin_entry, inertial_recorder, inertialess_field, interaction_velocity, run,
                        step_binary_first_order, step_binary_second_order, step_inertial, step_inertialess)
from ..geometry import CAlphaKernel, Configuration, pairwise_stats, singular_sum
from ..macroref import (DensitySpec, WeightedCloud, ball_points, cell_centers, draw, evaluate_u_field, grid_shape,
                        k_equation_step, l2_ball_difference, transport_stokes_step, u_star)
from ..mobility import resistance_apply
from ..otmetrics import ASSIGNMENT_LIMIT, DiscreteMeasure, coupled_eta, wasserstein_p_uniform
from .config import ConfigError, ExperimentConfig

# coupling snapshots are taken on this many equal intervals of [0, T]
COUPLING_INTERVALS = 100

TIMESERIES_COLUMNS = {
    "inertial-stokes": ["t", "d_min", "S1", "S2", "S3", "E", "Vdiff_l2_over_sqrtN", "F_l2", "NF_inf"],
    "inertialess-stokes": ["t", "d_min", "S1", "S2", "S3", "E", "Vdiff_l2_over_sqrtN", "F_l2", "NF_inf"],
    "binary-second": ["t", "d_min", "S1", "S2", "S3", "E", "Vdiff_l2_over_sqrtN"],
    "binary-first": ["t", "d_min", "S1", "S2", "S3"],
    "macro-reference": ["t", "d_min", "S1", "S2", "S3"],
}

STOKES = ("inertial-stokes", "inertialess-stokes", "macro-reference")


def density_spec(cfg: ExperimentConfig) -> DensitySpec:
    return DensitySpec(cfg.initial.density, dict(cfg.initial.params), cfg.initial.dim)


def kernel(cfg: ExperimentConfig) -> CAlphaKernel:
    k = cfg.kernel
    return CAlphaKernel(form=k.form, alpha=float(k.alpha), strength=float(k.strength),
                        axis=tuple(float(a) for a in k.axis), smoothing=float(k.smoothing))


def grid_nodes(spec: DensitySpec, n: int) -> np.ndarray:
    lo, hi = spec.support_box()
    return cell_centers(lo, hi, grid_shape(n, spec.dim))


def matched_initial_data(cfg: ExperimentConfig, N: int, M: int, rng_micro, rng_macro, c_eps: float):
    """Particle positions and marker cloud describing the same initial density.

    grid: cell centres of nested tensor grids over the box (uniform densities
    only, so both measures carry uniform weights); iid: independent draws.
    """
    spec = density_spec(cfg)
    if cfg.initial.sampling == "grid":
        if spec.family != "uniform-box":
            raise ConfigError("grid-matched data needs the uniform-box density (uniform weights on both sides)")
        X = grid_nodes(spec, N)
        Y = grid_nodes(spec, M)
        lo, hi = spec.support_box()
        h = float(np.prod((hi - lo) / np.asarray(grid_shape(M, spec.dim)))) ** (1.0 / spec.dim)
        return X, WeightedCloud(Y, np.full(M, 1.0 / M), c_eps * h)
    X = draw(spec, N, rng_micro)
    Y = draw(spec, M, rng_macro)
    return X, WeightedCloud(Y, np.full(M, 1.0 / M), c_eps * M ** (-1.0 / spec.dim))


def parent_pairing(X, Y):
    """owner[m] = nearest particle of marker m, when this splits the markers evenly.

    For nested grids every particle owns exactly M/N markers and the map is an
    optimal coupling.  Returns None when the split is uneven.
    """
    n, m = len(X), len(Y)
    if m % n:
        return None
    owner = np.empty(m, dtype=np.int64)
    for start in range(0, m, 2048):
        block = Y[start:start + 2048]
        owner[start:start + len(block)] = np.argmin(((block[:, None, :] - X[None]) ** 2).sum(-1), axis=1)
    if np.any(np.bincount(owner, minlength=n) != m // n):
        return None
    return owner


def optimal_pairing(X, Y):
    """owner[m] from the exact W_2 plan (uniform weights, N dividing M)."""
    owner = parent_pairing(X, Y)
    if owner is not None:
        return owner
    n, m = len(X), len(Y)
    if m % n or m > ASSIGNMENT_LIMIT:
        raise ConfigError("coupled eta needs N | M and M within the assignment limit (or nested grids)")
    _, match = wasserstein_p_uniform(DiscreteMeasure.uniform(X), DiscreteMeasure.uniform(Y), 2)
    owner = np.empty(m, dtype=np.int64)
    owner[match.cols] = match.rows
    return owner


def w2_exact(X, Y):
    """Exact W_2 between uniform clouds, or nan above the assignment limit."""
    n, m = len(X), len(Y)
    if n * m // math.gcd(n, m) > ASSIGNMENT_LIMIT:
        return math.nan
    return wasserstein_p_uniform(DiscreteMeasure.uniform(X), DiscreteMeasure.uniform(Y), 2)[0]


def _steps(T, dt_target):
    """Number of steps covering [0, T], rounded up to a multiple of COUPLING_INTERVALS."""
    if T == 0:
        return 0
    n = max(1, math.ceil(T / dt_target - 1e-9))
    return COUPLING_INTERVALS * math.ceil(n / COUPLING_INTERVALS)


def micro_rate(cfg: ExperimentConfig, lam: float) -> float:
    if cfg.scenario.family == "inertial-stokes":
        return 6 * math.pi * cfg.scenario.gamma * lam
    return lam


@dataclass
class CellResult:
    N: int
    lam: float
    record: DiagnosticsRecord
    metrics: list
    event: CollisionEvent | None
    W2_0: float
    dt: float
    n_steps: int
    admissibility: dict
    wall: float
    final_X: np.ndarray | None = None
    final_V: np.ndarray | None = None
    final_cloud: WeightedCloud | None = None
    snapshots: dict = field(default_factory=dict)


def initial_velocities(cfg: ExperimentConfig, X, params, K, rng) -> np.ndarray:
    mode = cfg.initial.velocity
    fam = cfg.scenario.family
    scale = cfg.initial.velocity_scale
    n, d = X.shape
    if fam in ("inertial-stokes", "inertialess-stokes"):
        base = inertialess_field(Configuration(X, params.radius), params)
    elif fam == "binary-second":
        base = interaction_velocity(K, X)
    else:
        base = np.zeros((n, d))
    if mode == "well-prepared":
        return base
    if mode == "zero":
        return np.zeros((n, d))
    # bounded-random: base + b + A x with |A| <= min(scale, 0.45 lam), admissible for (H3)/(D2)
    A = rng.standard_normal((d, d))
    A *= min(scale, 0.45 * params.lambda_N) / np.linalg.norm(A, 2)
    b = scale * rng.standard_normal(d)
    return base + b + X @ A.T


def run_cell(cfg: ExperimentConfig, N: int, lam: float, seed_seq: np.random.SeedSequence,
             keep_snapshots: bool = False) -> CellResult:
    """One micro run plus its macroscopic reference, with metrics at the configured times."""
    t0 = time.perf_counter()
    sc = cfg.scenario
    fam = sc.family
    if fam == "macro-reference":
        return _run_reference_only(cfg, N, lam, seed_seq, t0)
    streams = seed_seq.spawn(3)
    rng_micro, rng_macro, rng_vel = (np.random.default_rng(s) for s in streams)
    M = cfg.reference.M
    X0, cloud = matched_initial_data(cfg, N, M, rng_micro, rng_macro, cfg.reference.c_eps)
    params = ScenarioParams(N=N, gamma_N=sc.gamma, lambda_N=lam, g=tuple(sc.g), dt=sc.dt, T=sc.T, tol=sc.tol)
    K = None if fam in STOKES else kernel(cfg)
    radius = params.radius if fam in STOKES else 1.0
    cfg0 = Configuration(X0, radius)
    if fam in STOKES and not cfg0.is_admissible():
        raise ConfigError(f"initial configuration overlaps: d_min = {cfg0.d_min():.4g} <= 2R = {2 * radius:.4g}")
    V0 = initial_velocities(cfg, X0, params, K, rng_vel)
    admissibility = {}
    if fam == "inertial-stokes":
        admissibility = {"H3": h3_satisfied(X0, V0, sc.gamma, lam), "H4": h4_value(V0, lam)}
    elif fam == "binary-second":
        admissibility = {"D2": d2_satisfied(X0, V0, lam), "D3_p2": d3_value(V0, 2.0)}

    # micro time step
    if sc.dt_rule == "fixed":
        n_steps = _steps(sc.T, sc.dt)
    elif sc.dt_rule == "kappa":
        n_steps = _steps(sc.T, sc.dt_kappa / micro_rate(cfg, lam))
    else:
        n_steps = _steps(sc.T, default_dt(cfg0, params) if fam in STOKES else sc.dt)
    dt = sc.T / n_steps if n_steps else sc.dt
    params = ScenarioParams(N=N, gamma_N=sc.gamma, lambda_N=lam, g=tuple(sc.g), dt=dt, T=sc.T, tol=sc.tol)

    for t in cfg.metrics.times:
        if sc.T > 0 and abs(t / sc.T * COUPLING_INTERVALS - round(t / sc.T * COUPLING_INTERVALS)) > 1e-9:
            raise ConfigError(f"metric time {t} is not a multiple of T/{COUPLING_INTERVALS}")
    state = InertialState(cfg0, V0)
    stride_cpl = n_steps // COUPLING_INTERVALS if n_steps else 1
    metric_steps = {int(round(t / sc.T * n_steps)) if sc.T > 0 else 0 for t in cfg.metrics.times}
    coupling_X = []
    snapshots = {}

    def hook(s):
        k = s.step
        if k % stride_cpl == 0:
            coupling_X.append(s.X.copy())
        if k in metric_steps:
            snapshots[k] = s

    if fam == "inertial-stokes":
        stepper = lambda s: step_inertial(s, params)  # noqa: E731
        recorders = [inertial_recorder(params)]
    elif fam == "inertialess-stokes":
        stepper = lambda s: step_inertialess(s, params)  # noqa: E731
        recorders = [_inertialess_recorder(params)]
    elif fam == "binary-second":
        stepper = lambda s: step_binary_second_order(s, K, lam, dt)  # noqa: E731
        recorders = [_binary_recorder(K, second_order=True)]
    else:
        stepper = lambda s: step_binary_first_order(s, K, dt)  # noqa: E731
        recorders = [_binary_recorder(K, second_order=False)]
    result = run(state, stepper, n_steps, recorders, stride=sc.stride, sample_steps=metric_steps, hook=hook)

    # macro reference on the coupling grid
    cloud_traj = [cloud.markers.copy()]
    macro_at = {0: cloud}
    if cfg.reference.enabled and sc.T > 0:
        n_macro = _steps(sc.T, sc.dt)
        per = n_macro // COUPLING_INTERVALS
        dtm = sc.T / n_macro
        c = cloud
        for k in range(1, n_macro + 1):
            if fam in STOKES:
                c = transport_stokes_step(c, sc.gamma, dtm, tuple(sc.g))
            else:
                c = k_equation_step(c, K, dtm)
            if k % per == 0:
                cloud_traj.append(c.markers.copy())
                macro_at[(k // per) * stride_cpl] = c
        cloud = c

    metrics = []
    W2_0 = math.nan
    if cfg.reference.enabled:
        W2_0 = w2_exact(X0, cloud_traj[0]) if cfg.metrics.W2 else math.nan
        eta_bar = None
        if cfg.metrics.eta and result.event is None:
            owner = optimal_pairing(X0, cloud_traj[0])
            times = np.linspace(0, sc.T, len(coupling_X))
            eta_bar = coupled_eta(owner, np.full(M, 1.0 / M), times, np.array(coupling_X),
                                  times, np.array(cloud_traj), 2.0)
        for step in sorted(metric_steps):
            if step not in snapshots or step not in macro_at:
                continue
            s = snapshots[step]
            c = macro_at[step]
            row = {"t": sc.T * step / n_steps if n_steps else 0.0}
            if cfg.metrics.W2:
                row["W2"] = w2_exact(s.X, c.markers)
            if eta_bar is not None:
                row["eta_bar"] = float(eta_bar[step // stride_cpl])
            if cfg.metrics.fluid_l2 and fam in ("inertial-stokes", "inertialess-stokes"):
                row["fluid_l2"] = fluid_l2(s, c, params, cfg.metrics.mc_points)
            metrics.append(row)
        for row in metrics:
            if "W2" in row:
                _attach(result.record, row["t"], "W2", row["W2"])

    return CellResult(N, lam, result.record, metrics, result.event, W2_0, dt, n_steps, admissibility,
                      time.perf_counter() - t0, result.final.X, result.final.V, cloud,
                      snapshots if keep_snapshots else {})


def _run_reference_only(cfg: ExperimentConfig, N: int, lam: float, seed_seq, t0) -> CellResult:
    """The transport-Stokes reference alone, with marker statistics as the time series."""
    sc = cfg.scenario
    rng_micro, rng_macro, _ = (np.random.default_rng(s) for s in seed_seq.spawn(3))
    _, cloud = matched_initial_data(cfg, N, cfg.reference.M, rng_micro, rng_macro, cfg.reference.c_eps)
    n_steps = _steps(sc.T, sc.dt)
    dt = sc.T / n_steps if n_steps else sc.dt
    rec = DiagnosticsRecord()

    def sample(t, c):
        x = c.markers
        rec.append(t, d_min=pairwise_stats(x).d_min, S1=singular_sum(x, 1), S2=singular_sum(x, 2),
                   S3=singular_sum(x, 3))

    sample(0.0, cloud)
    for k in range(1, n_steps + 1):
        cloud = transport_stokes_step(cloud, sc.gamma, dt, tuple(sc.g))
        if k % sc.stride == 0 or k == n_steps:
            sample(k * dt, cloud)
    return CellResult(N, lam, rec, [], None, math.nan, dt, n_steps, {}, time.perf_counter() - t0,
                      final_cloud=cloud)


def _attach(record: DiagnosticsRecord, t, name, value):
    for row in record.rows:
        if abs(row["t"] - t) <= 1e-12 * max(1.0, abs(t)):
            row[name] = float(value)
    if name not in record.columns:
        record.columns.append(name)


def fluid_l2(state: InertialState, cloud: WeightedCloud, params: ScenarioParams, n_points: int,
             seed: int = 7) -> float:
    """Monte-Carlo ||u_N - u_*||_{L^2(B_1(x))} with x the centre of mass of the markers."""
    centre = cloud.weights @ cloud.markers
    pts = ball_points(centre, n_points, 1.0, seed)
    F, _ = resistance_apply(state.cfg, state.V, tol=params.tol, G0=state.forces, check=False)
    uN = evaluate_u_field(pts, positions=state.X, forces=F, velocities=state.V, radius=state.cfg.radius)
    us = u_star(cloud, pts, params.gamma_N, tuple(params.g), include_drift=False)
    return l2_ball_difference(uN, us, 1.0)


def _inertialess_recorder(params):
    def record(s):
        cfg = s.cfg
        F = np.tile(params.g_array / cfg.N, (cfg.N, 1))
        return {**dmin_entry(cfg), "S1": singular_sum(cfg, 1),
                "S2": singular_sum(cfg, 2), "S3": singular_sum(cfg, 3), "E": 0.0,
                "Vdiff_l2_over_sqrtN": 0.0, "F_l2": float(np.linalg.norm(F)),
                "NF_inf": float(cfg.N * np.linalg.norm(F, axis=1).max())}

    return record


def _binary_recorder(K, second_order: bool):
    def record(s):
        out = {**dmin_entry(s.cfg), "S1": singular_sum(s.cfg, 1),
               "S2": singular_sum(s.cfg, 2), "S3": singular_sum(s.cfg, 3)}
        if second_order:
            target = interaction_velocity(K, s.X)
            out["E"] = modulated_energy(s.V, target)
            out["Vdiff_l2_over_sqrtN"] = float(np.linalg.norm(s.V - target) / math.sqrt(s.N))
        return out

    return record


def cell_seeds(master_seed: int, n_cells: int) -> list:
    return np.random.SeedSequence(master_seed).spawn(n_cells)


def _cell_job(args):
    cfg, N, lam, seq = args
    try:
        return run_cell(cfg, N, lam, seq)
    except (ConfigError, ValueError, RuntimeError, FloatingPointError) as err:
        return err


def sweep(cfg: ExperimentConfig, workers: int = 1) -> list:
    """Run every (N, lambda) cell; failures are returned in place of results."""
    cells = cfg.lambdas()
    seeds = cell_seeds(cfg.seed, len(cells))
    jobs = [(cfg, N, lam, s) for (N, lam), s in zip(cells, seeds)]
    if workers > 1 and len(jobs) > 1:
        # spawn: forked children would inherit the parent's numba thread pool
        with ProcessPoolExecutor(max_workers=workers, mp_context=multiprocessing.get_context("spawn")) as ex:
            return list(ex.map(_cell_job, jobs))
    return [_cell_job(j) for j in jobs]


TABLE_COLUMNS = ["N", "lambda", "inv_lambda", "t", "W2", "eta_bar", "W2_0", "fluid_l2", "d_min_min", "collision",
                 "error"]


def convergence_rows(cfg: ExperimentConfig, results: list) -> list:
    rows = []
    for (N, lam), res in zip(cfg.lambdas(), results):
        base = {"N": N, "lambda": lam, "inv_lambda": 1.0 / lam}
        if isinstance(res, Exception):
            rows.append({**base, "error": f"{type(res).__name__}: {res}"})
            continue
        dmin_min = float(res.record.series("d_min").min()) if "d_min" in res.record.columns else math.inf
        for m in res.metrics or [{"t": math.nan}]:
            rows.append({**base, **m, "W2_0": res.W2_0, "d_min_min": dmin_min,
                         "collision": int(res.event is not None)})
    return rows


def sweep_fits(rows: list, t_final: float) -> dict:
    """Power-law slopes of the final W_2 against N and against 1/lambda."""
    final = [r for r in rows if "W2" in r and abs(r["t"] - t_final) < 1e-9 and np.isfinite(r["W2"]) and r["W2"] > 0]
    fits = {}
    Ns = sorted({r["N"] for r in final})
    if len(Ns) >= 2:
        xs = [r["N"] for r in final]
        fits["slope_vs_N"] = fit_power(xs, [r["W2"] for r in final]).params["slope"]
    lams = sorted({r["lambda"] for r in final})
    if len(lams) >= 2:
        fits["slope_vs_inv_lambda"] = fit_power([r["inv_lambda"] for r in final],
                                                [r["W2"] for r in final]).params["slope"]
    return fits
