"""Fixed-step RK4 integration, tracking experiments and decay-rate fits."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .controller import ClosedLoop, ControllerGains
from .errors import DivergenceError, FitFloorError
from .model import EMSystem
from .trajectory import ReferenceTrajectory

DEFAULT_STEP = 1e-3
FLOOR = 1e-14


def integrate(rhs: Callable, eta0, t0: float, t1: float, step: float = DEFAULT_STEP,
              record_every: int = 1):
    """Classical RK4 with a fixed step.

    The step is adjusted down so that an integer number of steps spans
    ``[t0, t1]``. Every ``record_every``-th state is kept (the first and last
    always are). Returns ``(t_grid, states, h)``.
    """
    if not t1 > t0:
        raise ValueError("t1 must exceed t0")
    if not step > 0:
        raise ValueError("step must be positive")
    n = max(1, int(math.ceil((t1 - t0) / step - 1e-9)))
    h = (t1 - t0) / n
    y = np.array(eta0, dtype=float)
    ts, ys = [t0], [y.copy()]
    half = 0.5 * h
    with np.errstate(over="raise", invalid="raise"):
        for i in range(n):
            t = t0 + i * h
            try:
                k1 = rhs(y, t)
                k2 = rhs(y + half * k1, t + half)
                k3 = rhs(y + half * k2, t + half)
                k4 = rhs(y + h * k3, t0 + (i + 1) * h)
                y_new = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            except (ArithmeticError, ValueError) as exc:
                # overflow, or math-module domain errors on a blown-up state
                y_new, cause = None, exc
            if y_new is None or not math.isfinite(y_new.sum()):
                msg = f"non-finite state after t={t:.6g}" if y_new is not None else f"{cause} after t={t:.6g}"
                raise DivergenceError(msg, last_time=t, partial=(np.array(ts), np.array(ys)))
            y = y_new
            if (i + 1) % record_every == 0 or i == n - 1:
                ts.append(t0 + (i + 1) * h)
                ys.append(y.copy())
    return np.array(ts), np.array(ys), h


@dataclass
class RateFit:
    rate: float
    residual: float
    window: tuple
    drift: float
    exponential: bool

    def to_dict(self) -> dict:
        return {"rate": self.rate, "residual": self.residual, "window": list(self.window),
                "drift": self.drift, "exponential": self.exponential}


def _slope(t, y):
    A = np.vstack([t, np.ones_like(t)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return coef


def estimate_convergence_rate(t_grid, error_norms, window=(0.2, 0.8), resid_tol: float = 0.5,
                              drift_tol: float = 0.5) -> RateFit:
    """Least-squares fit of ``log|e(t)| = c - rate * t`` on a fraction of the span.

    ``residual`` is the RMS misfit in log space. ``drift`` compares the slopes
    of the first and last thirds of the window (relative to their mean); a pure
    exponential has zero drift. ``exponential`` requires both to be small.
    """
    t = np.asarray(t_grid, dtype=float)
    e = np.asarray(error_norms, dtype=float)
    span = t[-1] - t[0]
    lo, hi = t[0] + window[0] * span, t[0] + window[1] * span
    sel = (t >= lo) & (t <= hi) & (e > FLOOR)
    if sel.sum() < 3:
        raise FitFloorError("error norm at or below the numerical floor over the fit window")
    tw, yw = t[sel], np.log(e[sel])
    slope, icpt = _slope(tw, yw)
    resid = float(np.sqrt(np.mean((yw - (slope * tw + icpt)) ** 2)))
    k = max(2, tw.size // 3)
    s1 = _slope(tw[:k], yw[:k])[0]
    s2 = _slope(tw[-k:], yw[-k:])[0]
    mean = 0.5 * (abs(s1) + abs(s2))
    drift = float(abs(s1 - s2) / mean) if mean > 0 else math.inf
    return RateFit(float(-slope), resid, (float(lo), float(hi)), drift,
                   bool(resid <= resid_tol and drift <= drift_tol))


def _names(base, n):
    return [base] if n == 1 else [f"{base}{i + 1}" for i in range(n)]


@dataclass
class SimulationResult:
    t: np.ndarray
    states: np.ndarray
    reference: np.ndarray
    control: np.ndarray
    n_m: int
    n_e: int
    fit: Optional[RateFit] = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def errors(self) -> np.ndarray:
        return self.states - self.reference

    @property
    def E_q(self):
        return self.errors[:, : self.n_m]

    @property
    def E_p(self):
        return self.errors[:, self.n_m : 2 * self.n_m]

    @property
    def E_xe(self):
        return self.errors[:, 2 * self.n_m :]

    @property
    def error_norm(self) -> np.ndarray:
        return np.linalg.norm(self.errors, axis=1)

    @property
    def final_error(self) -> float:
        return float(self.error_norm[-1])

    @property
    def fitted_rate(self):
        return None if self.fit is None else self.fit.rate

    def columns(self) -> list:
        nm, ne = self.n_m, self.n_e
        cols = ["t"]
        for suffix in ("", "_ref"):
            cols += _names("q" + suffix, nm) + _names("p" + suffix, nm) + _names("xe" + suffix, ne)
        cols += _names("E_q", nm) + _names("E_p", nm) + _names("E_xe", ne) + _names("u", ne)
        return cols

    def write_csv(self, path, header: str = "") -> None:
        data = np.hstack([self.t[:, None], self.states, self.reference, self.errors, self.control])
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(f"# {header}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns())
            for row in data:
                w.writerow([f"{v:.17g}" for v in row])

    def summary(self) -> dict:
        err = self.errors[-1]
        nm = self.n_m
        return {
            "final_error_norm": self.final_error,
            "final_E_q": float(np.linalg.norm(err[:nm])),
            "final_E_p": float(np.linalg.norm(err[nm : 2 * nm])),
            "final_E_xe": float(np.linalg.norm(err[2 * nm :])),
            "fit": None if self.fit is None else self.fit.to_dict(),
            "max_abs_u": float(np.abs(self.control).max()),
            "samples": int(self.t.size),
            "diagnostics": self.diagnostics,
        }


def _fit_or_none(t, norms, window):
    try:
        return estimate_convergence_rate(t, norms, window)
    except FitFloorError:
        return None


def run_tracking_experiment(sys: EMSystem, gains: ControllerGains, ref: ReferenceTrajectory, eta0,
                            t_span=(0.0, 10.0), step: float = DEFAULT_STEP, sample_dt: float = 1e-3,
                            fit_window=(0.2, 0.8)) -> SimulationResult:
    """Closed-loop run from ``eta0`` against ``ref``; ``u`` is re-evaluated at each stored sample."""
    loop = ClosedLoop(sys, gains, ref)
    every = max(1, int(round(sample_dt / step)))
    t0, t1 = t_span
    t, ys, h = integrate(loop, eta0, t0, t1, step, every)
    refs = ref.states(t)
    u = np.array([loop.control(y, ti) for y, ti in zip(ys, t)])
    res = SimulationResult(t, ys, refs, u, sys.n_m, sys.n_e,
                           diagnostics={"integrator": "rk4-fixed", "step": h, "record_every": every,
                                        "rejected_steps": 0})
    res.fit = _fit_or_none(t, res.error_norm, fit_window)
    return res


@dataclass
class ProbeResult:
    t: np.ndarray
    states_a: np.ndarray
    states_b: np.ndarray
    fit: Optional[RateFit]

    @property
    def distance(self) -> np.ndarray:
        return np.linalg.norm(self.states_a - self.states_b, axis=1)


def contraction_probe(sys: EMSystem, gains: ControllerGains, ref: ReferenceTrajectory, eta0_a, eta0_b,
                      t_span=(0.0, 10.0), step: float = DEFAULT_STEP, sample_dt: float = 1e-3,
                      fit_window=(0.2, 0.8)) -> ProbeResult:
    """Integrate two closed-loop copies and fit the decay of their distance."""
    every = max(1, int(round(sample_dt / step)))
    ta, ya, _ = integrate(ClosedLoop(sys, gains, ref), eta0_a, *t_span, step, every)
    _, yb, _ = integrate(ClosedLoop(sys, gains, ref), eta0_b, *t_span, step, every)
    dist = np.linalg.norm(ya - yb, axis=1)
    return ProbeResult(ta, ya, yb, _fit_or_none(ta, dist, fit_window))


def write_summary_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
