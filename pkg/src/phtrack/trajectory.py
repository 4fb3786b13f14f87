"""Feasible reference trajectories and feasibility residuals."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DimensionError, DomainError, SolverError
from .model import EMSystem, _grad_parts

FD_STEP = 1e-5


@dataclass(frozen=True)
class Sinusoid:
    """``f(t) = offset + amplitude * sin(omega * t + phase)`` with exact derivatives.

    ``amplitude=0`` gives a constant set-point.
    """

    offset: float = 0.0
    amplitude: float = 0.0
    omega: float = 1.0
    phase: float = 0.0

    def derivatives(self, t: float, order: int = 3) -> tuple:
        th = self.omega * t + self.phase
        s, c = math.sin(th), math.cos(th)
        a, w = self.amplitude, self.omega
        vals = (self.offset + a * s, a * w * c, -a * w * w * s, -a * w ** 3 * c)
        return vals[: order + 1]

    def __call__(self, t: float) -> float:
        return self.offset + self.amplitude * math.sin(self.omega * t + self.phase)


def _signal_derivs(f, t, order=3):
    """Derivatives of a scalar or vector signal as arrays."""
    return tuple(np.array([v], dtype=float) if isinstance(v, float) else np.atleast_1d(np.asarray(v, dtype=float))
                 for v in f.derivatives(t, order))


def _solve(a, b):
    if a.shape == (1, 1):
        if a[0, 0] == 0.0:
            raise np.linalg.LinAlgError("singular 1x1 system")
        return b / a[0, 0]
    return np.linalg.solve(a, b)


def central_diff(fn: Callable, t: float, h: float = FD_STEP) -> np.ndarray:
    return (np.asarray(fn(t + h), dtype=float) - np.asarray(fn(t - h), dtype=float)) / (2 * h)


class ReferenceTrajectory:
    """Time-parameterized ``eta*(t)`` together with ``x_e*'(t)``.

    ``sample(t)`` must return ``(q, p, x_e, x_e_dot)``; pass ``x_e_dot=None``
    from :meth:`from_functions` to fall back on central differences.
    """

    def __init__(self, sample: Callable, n_m: int, n_e: int, source: str = "user",
                 u: Optional[Callable] = None, notes: tuple = ()):
        self._sample = sample
        self.n_m, self.n_e = n_m, n_e
        self.source = source
        self.u = u
        self.notes = tuple(notes)

    @classmethod
    def from_functions(cls, q, p, x_e, x_e_dot=None, source="user", notes=()):
        n_m = np.atleast_1d(q(0.0)).size
        n_e = np.atleast_1d(x_e(0.0)).size

        def sample(t):
            xd = x_e_dot(t) if x_e_dot is not None else central_diff(x_e, t)
            return (np.atleast_1d(np.asarray(q(t), float)), np.atleast_1d(np.asarray(p(t), float)),
                    np.atleast_1d(np.asarray(x_e(t), float)), np.atleast_1d(np.asarray(xd, float)))

        return cls(sample, n_m, n_e, source=source, notes=notes)

    def sample(self, t: float):
        return self._sample(float(t))

    def state(self, t: float) -> np.ndarray:
        q, p, xe, _ = self._sample(float(t))
        return np.concatenate([q, p, xe])

    def states(self, ts) -> np.ndarray:
        return np.array([self.state(t) for t in ts])

    def q(self, t):
        return self._sample(float(t))[0]

    def p(self, t):
        return self._sample(float(t))[1]

    def x_e(self, t):
        return self._sample(float(t))[2]

    def x_e_dot(self, t):
        return self._sample(float(t))[3]


def stepper_reference(params: dict, f: Sinusoid, t: float):
    """Closed-form stepper motor reference at time ``t``.

    Returns ``(eta*, x_e*')``. ``params`` needs ``M, R_m, k_m, k_D, tau_L, N_r, L_s``.
    The electrical state is ``(L_s C / k_m) [-sin(N_r f), cos(N_r f)]`` with
    ``C = M f'' + k_D sin(4 N_r f) + R_m f' + tau_L``.
    """
    M, Rm, km = params["M"], params["R_m"], params["k_m"]
    kD, tL, Nr, Ls = params["k_D"], params["tau_L"], params["N_r"], params["L_s"]
    f0, f1, f2, f3 = f.derivatives(t, 3)
    if not -math.pi <= f0 <= math.pi:
        raise DomainError(f"stepper reference q*={f0} outside [-pi, pi]")
    C = M * f2 + kD * math.sin(4 * Nr * f0) + Rm * f1 + tL
    Cd = M * f3 + 4 * Nr * kD * math.cos(4 * Nr * f0) * f1 + Rm * f2
    s, c = math.sin(Nr * f0), math.cos(Nr * f0)
    g = Ls / km
    xe = np.array([-g * C * s, g * C * c])
    xed = np.array([-g * (Cd * s + C * Nr * f1 * c), g * (Cd * c - C * Nr * f1 * s)])
    return np.array([f0, M * f1, xe[0], xe[1]]), xed


def stepper_trajectory(params: dict, f: Sinusoid) -> ReferenceTrajectory:
    def sample(t):
        eta, xed = stepper_reference(params, f, t)
        return eta[:1], eta[1:2], eta[2:], xed

    notes = ()
    if params["L_s"] != 1.0:
        notes = (f"L_s={params['L_s']}: closed form is only feasible for L_s=1 with Psi=L_s*I",)
    return ReferenceTrajectory(sample, 1, 2, source="closed-form", notes=notes)


def sqrt_law_trajectory(f: Sinusoid, M: float, R_m: float, k: float, gamma1: float,
                        scale: float = 1.0, branch: int = 1, notes=()) -> ReferenceTrajectory:
    """Closed form ``x_e* = ±sqrt(scale * (2k(gamma1 - f) - 2 R_m f' - 2 M f''))``.

    With ``scale=1`` this is the capacitor-plate reference (``Psi(q) = q``).
    """

    def sample(t):
        f0, f1, f2, f3 = f.derivatives(t, 3)
        g = scale * (2 * k * (gamma1 - f0) - 2 * R_m * f1 - 2 * M * f2)
        if g <= 0:
            raise DomainError(f"sqrt-law reference infeasible at t={t}: radicand {g:.6g} <= 0")
        gd = scale * (-2 * k * f1 - 2 * R_m * f2 - 2 * M * f3)
        x = branch * math.sqrt(g)
        return (np.array([f0]), np.array([M * f1]), np.array([x]), np.array([gd / (2 * x)]))

    return ReferenceTrajectory(sample, 1, 1, source="closed-form", notes=notes)


def _mech_residual(sys: EMSystem, f0, f1, f2, x):
    # M f'' + dH/dq(f, ., x) + R_m f'  (p does not enter dH/dq)
    gq, _, _ = _grad_parts(sys, f0, np.zeros(sys.n_m), x)
    return sys.M @ f2 + gq + sys.R_m @ f1


def _coupling_jacobian(sys: EMSystem, q, x):
    # d(dH/dq)/dx_e, row i = (dPsi/dq_i d - Psi dmu/dq_i)^T
    d = x - sys.mu(q)
    jac = -(sys.Psi(q) @ sys.jac_mu(q)).T
    if sys.dPsi is not None:
        jac = jac + sys.dPsi(q) @ d
    return jac


def solve_feasible_xe(sys: EMSystem, f, t: float, guess, tol: float = 1e-12,
                      max_iter: int = 50) -> np.ndarray:
    """Newton solve of the mechanical feasibility equation for ``x_e*(t)``.

    Only defined when ``n_e == n_m`` so the residual
    ``M f'' + grad_q H(f, x) + R_m f'`` is square.
    """
    if sys.n_e != sys.n_m:
        raise DimensionError(
            f"{sys.name}: n_e={sys.n_e} != n_m={sys.n_m}; use a closed-form reference instead")
    f0, f1, f2 = _signal_derivs(f, t, 2)
    x = np.atleast_1d(np.asarray(guess, dtype=float)).copy()
    r = _mech_residual(sys, f0, f1, f2, x)
    for _ in range(max_iter):
        if np.max(np.abs(r)) <= tol:
            return x
        jac = _coupling_jacobian(sys, f0, x)
        try:
            x = x - _solve(jac, r)
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"singular Jacobian at t={t}, x={x}", residual=r) from exc
        r = _mech_residual(sys, f0, f1, f2, x)
    if np.max(np.abs(r)) <= tol:
        return x
    raise SolverError(f"Newton did not converge at t={t}: |r|={np.max(np.abs(r)):.3g}", residual=r)


def _residual_time_derivative(sys: EMSystem, f, t, x):
    # d/dt of the mechanical residual at fixed x_e
    f0, f1, f2, f3 = _signal_derivs(f, t, 3)
    if sys.hessian is not None:
        nm = sys.n_m
        eta = np.concatenate([f0, np.zeros(nm), x])
        h_qq = np.asarray(sys.hessian(eta), dtype=float)[:nm, :nm]
        return sys.M @ f3 + h_qq @ f1 + sys.R_m @ f2
    h = FD_STEP * (1 + abs(t))
    return (_mech_residual(sys, *_signal_derivs(f, t + h, 2), x)
            - _mech_residual(sys, *_signal_derivs(f, t - h, 2), x)) / (2 * h)


def solved_trajectory(sys: EMSystem, f, guess, branch: int = 1, notes=(), cache_size: int = 200_000) -> ReferenceTrajectory:
    """Reference whose ``x_e*`` is solved numerically at each query time.

    Each solve is warm-started from the previous root (extrapolated along
    ``x_e*'``), so a trajectory object must be evaluated from a single thread.
    ``x_e*'`` comes from implicit differentiation of the residual. Samples are
    memoised by time since integrators and reports revisit the same instants.
    """
    state = {"t": None, "x": branch * np.abs(np.atleast_1d(np.asarray(guess, dtype=float))), "xd": None}
    memo = {}

    def sample(t):
        hit = memo.get(t)
        if hit is not None:
            return hit
        x0 = state["x"]
        if state["t"] is not None and abs(t - state["t"]) < 0.1:
            x0 = x0 + state["xd"] * (t - state["t"])
        x = solve_feasible_xe(sys, f, t, x0)
        f0, f1, _ = _signal_derivs(f, t, 2)
        xd = -_solve(_coupling_jacobian(sys, f0, x), _residual_time_derivative(sys, f, t, x))
        state.update(t=t, x=x, xd=xd)
        out = (f0, sys.M @ f1, x, xd)
        if len(memo) >= cache_size:
            memo.clear()
        memo[t] = out
        return out

    return ReferenceTrajectory(sample, sys.n_m, sys.n_e, source="solved", notes=notes)


@dataclass
class FeasibilityReport:
    t: np.ndarray
    r_q: np.ndarray
    r_p: np.ndarray
    u_star: np.ndarray
    tol: float
    source: str = ""
    notes: tuple = ()

    @property
    def max_r_q(self) -> float:
        return float(np.max(np.linalg.norm(self.r_q, axis=1)))

    @property
    def max_r_p(self) -> float:
        return float(np.max(np.linalg.norm(self.r_p, axis=1)))

    @property
    def ok(self) -> bool:
        return self.max_r_q <= self.tol and self.max_r_p <= self.tol

    def to_dict(self) -> dict:
        return {"ok": self.ok, "tol": self.tol, "max_r_q": self.max_r_q, "max_r_p": self.max_r_p,
                "samples": int(self.t.size), "t_range": [float(self.t[0]), float(self.t[-1])],
                "source": self.source, "notes": list(self.notes)}


def check_feasibility(sys: EMSystem, ref: ReferenceTrajectory, t_samples, tol: float = 1e-6,
                      h: float = FD_STEP) -> FeasibilityReport:
    """Mechanical residuals of ``ref`` and the input ``u*`` that realises its electrical part."""
    if ref.n_m != sys.n_m or ref.n_e != sys.n_e:
        raise DimensionError("reference dimensions do not match the system")
    ts = np.asarray(t_samples, dtype=float)
    nm = sys.n_m
    g_pinv = np.linalg.solve(sys.G_e.T @ sys.G_e, sys.G_e.T)
    rq, rp, us = [], [], []
    for t in ts:
        q, p, xe, xed = ref.sample(t)
        qd = (ref.q(t + h) - ref.q(t - h)) / (2 * h)
        pd = (ref.p(t + h) - ref.p(t - h)) / (2 * h)
        gq, gp, gx = _grad_parts(sys, q, p, xe)
        rq.append(qd - gp)
        rp.append(pd + gq + sys.R_m @ gp)
        us.append(g_pinv @ (xed - (sys.J_e - sys.R_e) @ gx))
    return FeasibilityReport(ts, np.array(rq).reshape(-1, nm), np.array(rp).reshape(-1, nm),
                             np.array(us), tol, source=ref.source, notes=ref.notes)


def reference_columns(n_m: int, n_e: int) -> list:
    def names(base, n):
        return [base] if n == 1 else [f"{base}{i + 1}" for i in range(n)]

    return (["t"] + names("q_ref", n_m) + names("p_ref", n_m) + names("xe_ref", n_e)
            + names("xe_dot_ref", n_e) + names("u_ref", n_e))


def write_reference_csv(path, sys: EMSystem, ref: ReferenceTrajectory, t_samples, header: str = ""):
    """Write ``t, q*, p*, x_e*, x_e*', u*`` rows with 17 significant digits."""
    rep = check_feasibility(sys, ref, t_samples, tol=np.inf)
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(reference_columns(sys.n_m, sys.n_e))
        for t, u in zip(rep.t, rep.u_star):
            q, p, xe, xed = ref.sample(t)
            w.writerow([f"{v:.17g}" for v in np.concatenate([[t], q, p, xe, xed, u])])
