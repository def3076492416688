"""Time stepping for the inertial, inertialess, binary second-order and first-order systems.

All second-order systems share the exponential-Euler update for
V' = rate (V* - V) with V* frozen over a step:

    V <- V* + e^{-rate dt} (V - V*)
    X <- X + dt V* + (1 - e^{-rate dt})/rate (V - V*)

which is exact for a constant target and stable for any rate * dt.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .diagnostics import DiagnosticsRecord, modulated_energy
from .geometry import CAlphaKernel, Configuration, closest_pair, kernel_sum, pairwise_stats, singular_sum
from .mobility import inertialess_velocities, mean_field_velocity, resistance_apply

CHECKPOINT_VERSION = 1
COLLISION_SLACK = 1e-9


@dataclass
class InertialState:
    """Positions, velocities and time; ``forces`` caches the last resistance solve."""

    cfg: Configuration
    V: np.ndarray
    t: float = 0.0
    step: int = 0
    forces: np.ndarray | None = None

    def __post_init__(self):
        self.V = np.ascontiguousarray(self.V, dtype=float)
        if self.V.shape != self.cfg.positions.shape:
            raise ValueError("velocities must match positions in shape")
        if not np.all(np.isfinite(self.V)):
            raise FloatingPointError("non-finite velocity")

    @property
    def X(self) -> np.ndarray:
        return self.cfg.positions

    @property
    def N(self) -> int:
        return self.cfg.N


@dataclass
class ScenarioParams:
    N: int
    gamma_N: float = 1.0
    lambda_N: float = 1.0
    g: tuple = (0.0, 0.0, -1.0)
    dt: float = 0.01
    T: float = 1.0
    integrator: str = "exponential-euler"
    tol: float = 1e-10
    gamma_bounds: tuple = (1e-3, 1e3)

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be positive")
        if not self.gamma_bounds[0] <= self.gamma_N <= self.gamma_bounds[1]:
            raise ValueError(f"gamma_N = {self.gamma_N} outside {self.gamma_bounds}")
        if not self.lambda_N > 0:
            raise ValueError("lambda_N must be positive")
        if abs(np.linalg.norm(self.g) - 1.0) > 1e-12:
            raise ValueError("g must be a unit vector")
        if not (self.dt > 0 and self.T >= 0):
            raise ValueError("need dt > 0 and T >= 0")

    @property
    def radius(self) -> float:
        return self.gamma_N / self.N

    @property
    def kappa(self) -> float:
        return 6 * math.pi * self.gamma_N * self.lambda_N

    @property
    def stokes_number(self) -> float:
        return 1.0 / (self.gamma_N * self.lambda_N)

    @property
    def g_array(self) -> np.ndarray:
        return np.asarray(self.g, dtype=float)

    @property
    def terminal_velocity(self) -> np.ndarray:
        return self.g_array / (6 * math.pi * self.gamma_N)


@dataclass
class CollisionEvent:
    time: float
    pair: tuple
    distance: float


class CollisionError(RuntimeError):
    def __init__(self, event: CollisionEvent, state: InertialState):
        super().__init__(f"collision at t = {event.time:.6g}: pair {event.pair}, distance {event.distance:.6g}")
        self.event = event
        self.state = state


def _detect(state: InertialState, threshold: float):
    if state.N < 2:
        return
    i, j, dist = closest_pair(state.X)
    if dist <= threshold:
        raise CollisionError(CollisionEvent(state.t, (i, j), dist), state)


def _advance(state, X, V, dt, forces=None):
    return InertialState(Configuration(X, state.cfg.radius), V, state.t + dt, state.step + 1, forces)


def exponential_update(X, V, target, rate, dt):
    """Exact frozen-target step of X' = V, V' = rate (target - V)."""
    e = math.exp(-rate * dt)
    dev = V - target
    return X + dt * target + (-math.expm1(-rate * dt) / rate) * dev, target + e * dev


def sphere_collision_threshold(radius: float) -> float:
    return 2 * radius * (1 + COLLISION_SLACK)


def step_inertial(state: InertialState, params: ScenarioParams, dt: float | None = None) -> InertialState:
    """One exponential-Euler step of the inertial sedimentation system.

    F = R_hat V, u = sum_{j != i} J F_j, V* = g/(6 pi gamma) + u, rate 6 pi gamma lambda.
    """
    dt = params.dt if dt is None else dt
    F, rep = resistance_apply(state.cfg, state.V, tol=params.tol, G0=state.forces, check=False)
    if not rep.converged:
        raise RuntimeError(f"resistance solve failed at t = {state.t:.6g}: {rep}")
    target = params.terminal_velocity + mean_field_velocity(state.cfg, F)
    X, V = exponential_update(state.X, state.V, target, params.kappa, dt)
    new = _advance(state, X, V, dt, F)
    _detect(new, sphere_collision_threshold(state.cfg.radius))
    return new


def inertialess_field(cfg: Configuration, params: ScenarioParams) -> np.ndarray:
    return inertialess_velocities(cfg, params.g_array, check=False)[0]


def _rk2(state, velocity, dt):
    v1 = velocity(state.X)
    v2 = velocity(state.X + 0.5 * dt * v1)
    return state.X + dt * v2, v2


def step_inertialess(state: InertialState, params: ScenarioParams, dt: float | None = None) -> InertialState:
    """Midpoint step of X' = V_tilde(X); the stored velocity is the midpoint value."""
    dt = params.dt if dt is None else dt
    R = state.cfg.radius
    X, V = _rk2(state, lambda x: inertialess_field(Configuration(x, R), params), dt)
    new = _advance(state, X, V, dt)
    _detect(new, sphere_collision_threshold(R))
    return new


def interaction_velocity(K: CAlphaKernel, X, drift=None) -> np.ndarray:
    """(1/N) sum_{j != i} K(X_i - X_j) (+ drift)."""
    n = len(X)
    v = kernel_sum(K, X, X, np.full(n, 1.0 / n))
    if drift is not None:
        v = v + np.asarray(drift, dtype=float)
    return v


def step_binary_second_order(state: InertialState, K: CAlphaKernel, lam: float, dt: float,
                             threshold: float = 0.0) -> InertialState:
    """Exponential-Euler step of X' = V, V' = lam ((1/N) sum K(X_i - X_j) - V)."""
    target = interaction_velocity(K, state.X)
    X, V = exponential_update(state.X, state.V, target, lam, dt)
    new = _advance(state, X, V, dt)
    _detect(new, threshold)
    return new


def step_binary_first_order(state: InertialState, K: CAlphaKernel, dt: float, drift=None,
                            threshold: float = 0.0) -> InertialState:
    """Midpoint step of X' = (1/N) sum K(X_i - X_j) (+ constant drift)."""
    X, V = _rk2(state, lambda x: interaction_velocity(K, x, drift), dt)
    new = _advance(state, X, V, dt)
    _detect(new, threshold)
    return new


# admissibility predicates for initial data

def _max_lipschitz_ratio(X, V):
    X = np.asarray(X, dtype=float)
    V = np.asarray(V, dtype=float)
    dx = np.linalg.norm(X[:, None] - X[None], axis=-1)
    dv = np.linalg.norm(V[:, None] - V[None], axis=-1)
    np.fill_diagonal(dx, 1.0)
    return float((dv / dx).max()) if len(X) > 1 else 0.0


def h3_satisfied(X, V, gamma: float, lam: float) -> bool:
    """|V_i - V_j| <= 3 pi gamma lam |X_i - X_j| for all pairs."""
    return _max_lipschitz_ratio(X, V) <= 3 * math.pi * gamma * lam


def h4_value(V, lam: float) -> float:
    """|V|_2^2 / N + |V|_inf / lam (to be compared against a fixed C_V)."""
    V = np.asarray(V, dtype=float)
    norms = np.linalg.norm(V, axis=1)
    return float(np.sum(norms**2) / len(V) + norms.max() / lam)


def d2_satisfied(X, V, lam: float) -> bool:
    """|V_i - V_j| <= lam/2 |X_i - X_j| for all pairs."""
    return _max_lipschitz_ratio(X, V) <= 0.5 * lam


def d3_value(V, p: float) -> float:
    """|V|_p^p / N (bounded moment of the initial velocities)."""
    V = np.asarray(V, dtype=float)
    return float(np.sum(np.linalg.norm(V, axis=1) ** p) / len(V))


def default_dt(cfg: Configuration, params: ScenarioParams) -> float:
    """min(0.01, d_min(0) / (10 max |V_tilde(0)|))."""
    vmax = float(np.linalg.norm(inertialess_field(cfg, params), axis=1).max())
    dmin = pairwise_stats(cfg).d_min
    return min(0.01, dmin / (10 * vmax)) if np.isfinite(dmin) else 0.01


# recorders

def dmin_entry(cfg: Configuration) -> dict:
    """{"d_min": value}, or nothing for a single particle (d_min = +inf is not recorded)."""
    dmin = pairwise_stats(cfg).d_min
    return {"d_min": dmin} if np.isfinite(dmin) else {}


def inertial_recorder(params: ScenarioParams, with_S46: bool = False) -> Callable:
    """Per-time monitors of the inertial system."""

    def record(state: InertialState) -> dict:
        cfg = state.cfg
        n = cfg.N
        Vt = inertialess_field(cfg, params)
        if state.forces is None:
            F, _ = resistance_apply(cfg, state.V, tol=params.tol, check=False)
        else:
            # forces from the solve at the start of the last step are stale; refresh
            F, _ = resistance_apply(cfg, state.V, tol=params.tol, G0=state.forces, check=False)
        out = {
            **dmin_entry(cfg),
            "S1": singular_sum(cfg, 1), "S2": singular_sum(cfg, 2), "S3": singular_sum(cfg, 3),
            "E": modulated_energy(state.V, Vt),
            "Vdiff_l2_over_sqrtN": float(np.linalg.norm(state.V - Vt) / math.sqrt(n)),
            "F_l2": float(np.linalg.norm(F)),
            "NF_inf": float(n * np.linalg.norm(F, axis=1).max()),
            "V_inf": float(np.linalg.norm(state.V, axis=1).max()),
        }
        if with_S46:
            out["S4"] = singular_sum(cfg, 4)
            out["S6"] = singular_sum(cfg, 6)
        return out

    return record


def kinematic_recorder() -> Callable:
    def record(state: InertialState) -> dict:
        return {**dmin_entry(state.cfg),
                "V_inf": float(np.linalg.norm(state.V, axis=1).max())}

    return record


@dataclass
class RunResult:
    states: list
    record: DiagnosticsRecord
    event: CollisionEvent | None = None
    final: InertialState | None = None


def run(state: InertialState, stepper: Callable, n_steps: int, recorders=(), stride: int = 1,
        keep_states: bool = False, sample_steps=(), hook: Callable | None = None) -> RunResult:
    """Fixed-step evolution for n_steps or until the first collision.

    ``stepper(state) -> state``.  Recorders are sampled at the start, at step
    counts that are multiples of ``stride``, at the extra counts in
    ``sample_steps`` and at the final step.  ``hook(state)`` sees every state.
    """
    rec = DiagnosticsRecord()
    states = []
    extra = set(sample_steps)

    def sample(s):
        values = {}
        for r in recorders:
            values.update(r(s))
        rec.append(s.t, **values)
        if keep_states:
            states.append(s)

    if hook is not None:
        hook(state)
    sample(state)
    start = state.step
    event = None
    for _ in range(n_steps):
        try:
            state = stepper(state)
        except CollisionError as err:
            event = err.event
            state = err.state
            sample(state)
            break
        if hook is not None:
            hook(state)
        k = state.step - start
        if k % stride == 0 or k == n_steps or k in extra:
            sample(state)
    return RunResult(states, rec, event, state)


def steps_for(T: float, dt: float) -> int:
    n = int(round(T / dt))
    if abs(n * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"T = {T} is not a multiple of dt = {dt}")
    return n


def save_checkpoint(path, state: InertialState, rng: np.random.Generator | None = None):
    """Versioned .npz dump of (t, step, X, V, radius, RNG state); round trip is exact."""
    rng_state = json.dumps(rng.bit_generator.state) if rng is not None else ""
    with open(path, "wb") as fh:
        np.savez(fh, version=CHECKPOINT_VERSION, t=state.t, step=state.step, X=state.X, V=state.V,
                 radius=state.cfg.radius, rng=rng_state,
                 forces=state.forces if state.forces is not None else np.zeros((0, 3)))


def load_checkpoint(path):
    """Returns (state, rng or None)."""
    with np.load(path, allow_pickle=False) as z:
        if int(z["version"]) != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {int(z['version'])}")
        forces = z["forces"]
        state = InertialState(Configuration(z["X"], float(z["radius"])), z["V"], float(z["t"]),
                              int(z["step"]), forces if forces.size else None)
        rng_json = str(z["rng"])
    rng = None
    if rng_json:
        st = json.loads(rng_json)
        rng = np.random.Generator(getattr(np.random, st["bit_generator"])())
        rng.bit_generator.state = st
    return state, rng
