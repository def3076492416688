"""Monitors, singular-sum checks and curve fits."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .geometry import Configuration, pairwise_stats, singular_sum


@dataclass
class DiagnosticsRecord:
    """Column-oriented time series; ``append`` enforces monotone times and finite values."""

    columns: list = field(default_factory=lambda: ["t"])
    rows: list = field(default_factory=list)

    def append(self, t: float, **values):
        if self.rows and not t >= self.rows[-1]["t"]:
            raise ValueError("time stamps must be nondecreasing")
        for k, v in values.items():
            if not np.isfinite(v):
                raise FloatingPointError(f"non-finite diagnostic {k} = {v} at t = {t}")
            if k not in self.columns:
                self.columns.append(k)
        self.rows.append({"t": float(t), **{k: float(v) for k, v in values.items()}})

    def __len__(self):
        return len(self.rows)

    def series(self, name: str) -> np.ndarray:
        if name not in self.columns:
            raise KeyError(f"no column {name!r}; have {self.columns}")
        return np.array([row.get(name, np.nan) for row in self.rows])

    @property
    def t(self) -> np.ndarray:
        return self.series("t")

    def to_csv(self, header_lines=(), order=None) -> str:
        cols = list(order) if order is not None else self.columns
        buf = io.StringIO()
        for line in header_lines:
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for row in self.rows:
            w.writerow(["" if c not in row else repr(row[c]) for c in cols])
        return buf.getvalue()

    def summary(self) -> str:
        lines = [f"records: {len(self.rows)}"]
        for c in self.columns[1:]:
            s = self.series(c)
            s = s[np.isfinite(s)]
            if s.size:
                lines.append(f"{c}: first {s[0]:.6g}  last {s[-1]:.6g}  min {s.min():.6g}  max {s.max():.6g}")
        return "\n".join(lines)


@dataclass
class FitResult:
    model: str
    params: dict
    r2: float
    window: tuple


def _check_pair(V, Vt):
    V = np.asarray(V, dtype=float)
    Vt = np.asarray(Vt, dtype=float)
    if V.shape != Vt.shape:
        raise ValueError("V and V_tilde must have equal shapes")
    return V.reshape(len(V), -1), Vt.reshape(len(Vt), -1)


def modulated_energy(V, Vt, N: int | None = None) -> float:
    """|V - V_tilde|_2^2 / (2N)."""
    V, Vt = _check_pair(V, Vt)
    n = len(V) if N is None else N
    return float(np.sum((V - Vt) ** 2) / (2 * n))


def modulated_energy_p(V, Vt, p: float, N: int | None = None) -> float:
    """sum_i |V_i - V_tilde_i|^p / (pN)."""
    if not 1 <= p < math.inf:
        raise ValueError("p must lie in [1, inf)")
    V, Vt = _check_pair(V, Vt)
    n = len(V) if N is None else N
    return float(np.sum(np.linalg.norm(V - Vt, axis=1) ** p) / (p * n))


CONTRACTION_BOUNDS = {"22/S2": 8.0, "23/S3": 8.0, "33/S3": 16.0}


def singular_sum_report(cfg: Configuration | np.ndarray, n_triples: int = 100, seed: int = 0) -> dict:
    """Scale-free ratios of the singular sums of a configuration.

    S3 dmin^3 / log N, S4 dmin^4 and S6 dmin^6 measure how far the sums are from
    their lattice-like sizes.  For random index pairs (j, k) the contraction
    ratios compare sum_i d_ij^-a d_ik^-b with d_jk^-min(a,b) times the full
    singular sum; from the triangle inequality they are at most 8, 8 and 16.
    """
    x = cfg.positions if isinstance(cfg, Configuration) else np.ascontiguousarray(cfg, dtype=float)
    n = len(x)
    if n < 3:
        raise ValueError("need at least three particles")
    st = pairwise_stats(x)
    dmin = st.d_min
    report = {
        "S3_dmin3_over_logN": singular_sum(x, 3) * dmin**3 / math.log(n),
        "S4_dmin4": singular_sum(x, 4) * dmin**4,
        "S6_dmin6": singular_sum(x, 6) * dmin**6,
    }
    s2 = singular_sum(x, 2, full=True)
    s3 = singular_sum(x, 3, full=True)
    rng = np.random.default_rng(seed)
    worst = {k: 0.0 for k in CONTRACTION_BOUNDS}
    for _ in range(n_triples):
        j, k = rng.choice(n, size=2, replace=False)
        djk = st.d(j, k)
        worst["22/S2"] = max(worst["22/S2"], _kernels.contraction_sums(x, dmin, j, k, 2.0, 2.0) * djk**2 / s2)
        worst["23/S3"] = max(worst["23/S3"], _kernels.contraction_sums(x, dmin, j, k, 2.0, 3.0) * djk**2 / s3)
        worst["33/S3"] = max(worst["33/S3"], _kernels.contraction_sums(x, dmin, j, k, 3.0, 3.0) * djk**3 / s3)
    for key, v in worst.items():
        report[f"contraction_{key}"] = v
    report["contraction_ok"] = all(worst[k] <= CONTRACTION_BOUNDS[k] for k in worst)
    return report


def _linear_fit(x, y):
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + icpt)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum(resid**2))
    r2 = 1.0 if ss_tot <= 1e-30 * max(1.0, float(np.sum(y**2))) else max(0.0, 1.0 - ss_res / ss_tot)
    return float(slope), float(icpt), min(r2, 1.0)


def fit_decay(t, y, window: tuple | None = None) -> FitResult:
    """Least-squares fit y ~ amplitude * exp(-rate t) over the window [t0, t1]."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if window is not None:
        mask = (t >= window[0]) & (t <= window[1])
        t, y = t[mask], y[mask]
    if len(t) < 5:
        raise ValueError("need at least 5 points in the fit window")
    if np.any(y <= 0):
        raise ValueError("decay fits need positive values")
    slope, icpt, r2 = _linear_fit(t, np.log(y))
    return FitResult("exponential", {"rate": -slope, "amplitude": math.exp(icpt)}, r2,
                     (float(t[0]), float(t[-1])))


def fit_power(x, y) -> FitResult:
    """Least-squares fit y ~ prefactor * x^slope in log-log coordinates."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 2:
        raise ValueError("need at least 2 points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("power fits need positive data")
    slope, icpt, r2 = _linear_fit(np.log(x), np.log(y))
    return FitResult("power", {"slope": slope, "prefactor": math.exp(icpt)}, r2,
                     (float(x.min()), float(x.max())))


def band_ratio(values) -> float:
    """max/min of a positive family; the 'fitted-constant stability' measure."""
    v = np.asarray(values, dtype=float)
    if np.any(v <= 0) or not np.all(np.isfinite(v)):
        raise ValueError("band ratios need positive finite values")
    return float(v.max() / v.min())


def velocity_force_bounds_check(record: DiagnosticsRecord, gamma: float, lam: float,
                                cap: float = 1e6) -> dict:
    """max_t (N|F|_inf + |V|_inf) / (1 + |V^0|_inf e^{-gamma lam t}) and a blow-up flag."""
    t = record.t
    nf = record.series("NF_inf")
    v = record.series("V_inf")
    envelope = 1.0 + v[0] * np.exp(-gamma * lam * t)
    ratio = (nf + v) / envelope
    const = float(np.max(ratio))
    return {"constant": const, "blow_up": bool(const > cap), "argmax_t": float(t[int(np.argmax(ratio))])}


# name used by the build contract
sum_lemma_report = singular_sum_report
