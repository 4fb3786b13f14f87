"""Static tracking controller and the contractive target dynamics it produces."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, GainError
from .model import EMSystem, _grad_parts, split_state
from .trajectory import ReferenceTrajectory


def _as_matrix(x, n=None) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim == 0:
        if n is None:
            a = a.reshape(1, 1)
        else:
            a = float(a) * np.eye(n)
    elif a.ndim == 1:
        a = np.diag(a)
    return a


@dataclass(frozen=True)
class ControllerGains:
    """Desired electrical damping ``Rbar_e`` and shaping gain ``K_c``.

    Scalars and 1-D arrays are accepted as ``scalar * I`` and ``diag(...)``;
    pass ``n_e`` to broadcast a scalar to the right size.
    """

    Rbar_e: np.ndarray
    K_c: np.ndarray

    def __post_init__(self):
        rb, kc = _as_matrix(self.Rbar_e), _as_matrix(self.K_c)
        if rb.shape != kc.shape or rb.shape[0] != rb.shape[1]:
            raise GainError(f"gain shapes differ or are not square: {rb.shape}, {kc.shape}")
        for name, m in (("Rbar_e", rb), ("K_c", kc)):
            lam = np.linalg.eigvalsh(0.5 * (m + m.T)).min()
            if not lam > 0:
                raise GainError(f"{name} must be positive definite (min eigenvalue {lam:.6g})")
        rb.setflags(write=False)
        kc.setflags(write=False)
        object.__setattr__(self, "Rbar_e", rb)
        object.__setattr__(self, "K_c", kc)

    @classmethod
    def make(cls, Rbar_e, K_c, n_e: int) -> "ControllerGains":
        return cls(_as_matrix(Rbar_e, n_e), _as_matrix(K_c, n_e))

    @property
    def n_e(self) -> int:
        return self.K_c.shape[0]

    def check_against(self, sys: EMSystem) -> None:
        if self.n_e != sys.n_e:
            raise DimensionError(f"gains are {self.n_e}x{self.n_e}, system has n_e={sys.n_e}")
        if np.linalg.cond(sys.J_e - self.Rbar_e) > 1e12:
            raise GainError("J_e - Rbar_e is numerically singular")

    def to_dict(self) -> dict:
        return {"Rbar_e": self.Rbar_e.tolist(), "K_c": self.K_c.tolist()}


class ClosedLoop:
    """Controller bound to a plant and a reference.

    Constant matrices are factored once; ``alpha(t)`` is memoised for the last
    few query times since the RK4 stages revisit them.
    """

    def __init__(self, sys: EMSystem, gains: ControllerGains, ref: ReferenceTrajectory):
        gains.check_against(sys)
        if ref.n_m != sys.n_m or ref.n_e != sys.n_e:
            raise DimensionError("reference dimensions do not match the system")
        self.sys, self.gains, self.ref = sys, gains, ref
        self.JmRbar = sys.J_e - gains.Rbar_e
        self.JmRbar_inv = np.linalg.inv(self.JmRbar)
        self.Kc = gains.K_c
        self.Kc_inv = np.linalg.inv(gains.K_c)
        self.ReMRbar = sys.R_e - gains.Rbar_e
        self.JmRbar_Kc = self.JmRbar @ self.Kc
        self.G_pinv = np.linalg.solve(sys.G_e.T @ sys.G_e, sys.G_e.T)
        self._Kc_inv_JmRbar_inv = self.Kc_inv @ self.JmRbar_inv
        self._cache = {}
        self._shifts = {}

    def alpha(self, t: float) -> np.ndarray:
        t = float(t)
        a = self._cache.get(t)
        if a is None:
            q, _, xe, xed = self.ref.sample(t)
            sys = self.sys
            a = self.Kc_inv @ (sys.Psi(q) @ (xe - sys.mu(q))) + xe - self._Kc_inv_JmRbar_inv @ xed
            if len(self._cache) > 16:
                self._cache.clear()
            self._cache[t] = a
        return a

    def control(self, eta, t: float) -> np.ndarray:
        q, p, xe = split_state(self.sys, eta)
        psi_d = self.sys.Psi(q) @ (xe - self.sys.mu(q))
        return self.G_pinv @ (self.ReMRbar @ psi_d + self.JmRbar @ (self.Kc @ (xe - self.alpha(t))))

    def _shift(self, t: float) -> np.ndarray:
        # (J_e - Rbar_e) K_c alpha(t), the only time-dependent part of the field
        s = self._shifts.get(t)
        if s is None:
            s = self.JmRbar_Kc @ self.alpha(t)
            if len(self._shifts) > 16:
                self._shifts.clear()
            self._shifts[t] = s
        return s

    def __call__(self, eta, t: float) -> np.ndarray:
        nm = self.sys.n_m
        xe = eta[2 * nm :]
        gq, gp, gx = _grad_parts(self.sys, eta[:nm], eta[nm : 2 * nm], xe)
        out = np.empty(eta.shape[0])
        out[:nm] = gp
        out[nm : 2 * nm] = -gq - self.sys.R_m @ gp
        out[2 * nm :] = self.JmRbar @ gx + self.JmRbar_Kc @ xe - self._shift(t)
        return out


def alpha(sys: EMSystem, gains: ControllerGains, ref: ReferenceTrajectory, t: float) -> np.ndarray:
    """Shaping target ``K_c^-1 Psi(q*)(x_e* - mu(q*)) + x_e* - K_c^-1 (J_e - Rbar_e)^-1 x_e*'``."""
    return ClosedLoop(sys, gains, ref).alpha(t)


def theta(gains: ControllerGains, x_e, alpha_t) -> float:
    d = np.atleast_1d(np.asarray(x_e, dtype=float) - np.asarray(alpha_t, dtype=float))
    return float(0.5 * d @ gains.K_c @ d)


def control_input(sys: EMSystem, gains: ControllerGains, ref: ReferenceTrajectory, eta, t: float) -> np.ndarray:
    """``u = G_e^+ [(R_e - Rbar_e) Psi(q)(x_e - mu(q)) + (J_e - Rbar_e) K_c (x_e - alpha(t))]``."""
    return ClosedLoop(sys, gains, ref).control(eta, t)


def closed_loop_rhs(sys: EMSystem, gains: ControllerGains, ref: ReferenceTrajectory, eta, t: float) -> np.ndarray:
    """Target field with ``H_d = H + 1/2 (x_e - alpha)^T K_c (x_e - alpha)`` and ``Rbar_e`` damping."""
    split_state(sys, eta)
    return ClosedLoop(sys, gains, ref)(np.asarray(eta, dtype=float), t)
