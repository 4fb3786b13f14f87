"""Port-Hamiltonian electromechanical plant.

State layout is always ``eta = [q; p; x_e]`` with lengths ``(n_m, n_m, n_e)``.
The Hamiltonian is

    H = 1/2 p^T M^-1 p + V(q) + 1/2 (x_e - mu(q))^T Psi(q) (x_e - mu(q))

and the open-loop field is

    q' = dH/dp
    p' = -dH/dq - R_m dH/dp
    x_e' = (J_e - R_e) dH/dx_e + G_e u
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DimensionError, DomainError

ArrayFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class StateVector:
    """Structured view of a flat state ``[q; p; x_e]``."""

    q: np.ndarray
    p: np.ndarray
    x_e: np.ndarray

    @classmethod
    def from_flat(cls, sys: "EMSystem", eta) -> "StateVector":
        q, p, xe = split_state(sys, eta)
        return cls(q.copy(), p.copy(), xe.copy())

    def flat(self) -> np.ndarray:
        return np.concatenate([np.atleast_1d(self.q), np.atleast_1d(self.p), np.atleast_1d(self.x_e)]).astype(float)


@dataclass(frozen=True)
class EMSystem:
    """Immutable description of a pH electromechanical plant.

    Energy callbacks all take ``q`` as a length-``n_m`` array:

    * ``V(q) -> float``, ``grad_V(q) -> (n_m,)``, ``hess_V(q) -> (n_m, n_m)``
      (array returns must have exactly these shapes; they are used unreshaped)
    * ``mu(q) -> (n_e,)``, ``jac_mu(q) -> (n_e, n_m)``
    * ``Psi(q) -> (n_e, n_e)``, ``dPsi(q) -> (n_m, n_e, n_e)`` where
      ``dPsi(q)[i] = dPsi/dq_i``. ``dPsi`` may be ``None`` when Psi is constant.

    ``hessian`` optionally overrides the finite-difference Hessian of H with an
    analytic one taking the flat state. ``gradient`` optionally replaces the
    generic chain-rule gradient with a fused ``(q, p, x_e) -> (dH/dq, dH/dp, dH/dx_e)``
    for speed; it must agree with the generic path (see :func:`generic_gradient`).
    """

    name: str
    n_m: int
    n_e: int
    M: np.ndarray
    R_m: np.ndarray
    J_e: np.ndarray
    R_e: np.ndarray
    G_e: np.ndarray
    V: Callable[[np.ndarray], float]
    grad_V: ArrayFn
    hess_V: ArrayFn
    mu: ArrayFn
    jac_mu: ArrayFn
    Psi: ArrayFn
    dPsi: Optional[ArrayFn]
    q_lower: np.ndarray
    q_upper: np.ndarray
    hessian: Optional[ArrayFn] = None
    gradient: Optional[Callable] = None
    params: dict = field(default_factory=dict)
    M_inv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        def mat(x, n):
            a = np.array(x, dtype=float).reshape(n, n)
            a.setflags(write=False)
            return a

        nm, ne = int(self.n_m), int(self.n_e)
        if nm < 1 or ne < 1:
            raise DimensionError("n_m and n_e must be positive")
        object.__setattr__(self, "M", mat(self.M, nm))
        object.__setattr__(self, "R_m", mat(self.R_m, nm))
        object.__setattr__(self, "J_e", mat(self.J_e, ne))
        object.__setattr__(self, "R_e", mat(self.R_e, ne))
        object.__setattr__(self, "G_e", mat(self.G_e, ne))
        lo = np.array(self.q_lower, dtype=float).reshape(nm)
        hi = np.array(self.q_upper, dtype=float).reshape(nm)
        if np.any(lo >= hi):
            raise DomainError("q_domain needs lower < upper on every axis")
        object.__setattr__(self, "q_lower", lo)
        object.__setattr__(self, "q_upper", hi)
        minv = np.linalg.inv(self.M)
        minv.setflags(write=False)
        object.__setattr__(self, "M_inv", minv)

    @property
    def dim(self) -> int:
        return 2 * self.n_m + self.n_e

    def in_q_domain(self, q) -> bool:
        q = np.asarray(q, dtype=float)
        return bool(np.all(q > self.q_lower) and np.all(q < self.q_upper))


def split_state(sys: EMSystem, eta, check_domain: bool = False):
    """Return views ``(q, p, x_e)`` of a flat state, validating its length."""
    if isinstance(eta, StateVector):
        eta = eta.flat()
    eta = np.asarray(eta, dtype=float)
    if eta.ndim != 1 or eta.shape[0] != sys.dim:
        raise DimensionError(f"state has shape {eta.shape}, expected ({sys.dim},) for {sys.name}")
    nm = sys.n_m
    q, p, xe = eta[:nm], eta[nm : 2 * nm], eta[2 * nm :]
    if check_domain and not sys.in_q_domain(q):
        raise DomainError(f"q={q} outside q_domain ({sys.q_lower}, {sys.q_upper}) of {sys.name}")
    return q, p, xe


def _grad_parts(sys: EMSystem, q, p, xe):
    # Unchecked fast path shared by the controller and the integrator.
    if sys.gradient is not None:
        return sys.gradient(q, p, xe)
    return _chain_rule_parts(sys, q, p, xe)


def _chain_rule_parts(sys: EMSystem, q, p, xe):
    d = xe - sys.mu(q)
    psi_d = sys.Psi(q) @ d
    gq = sys.grad_V(q) - sys.jac_mu(q).T @ psi_d
    if sys.dPsi is not None:
        gq = gq + 0.5 * ((sys.dPsi(q) @ d) @ d)
    return gq, sys.M_inv @ p, psi_d


def hamiltonian(sys: EMSystem, eta) -> float:
    q, p, xe = split_state(sys, eta, check_domain=True)
    d = xe - sys.mu(q)
    return float(0.5 * p @ sys.M_inv @ p + sys.V(q) + 0.5 * d @ sys.Psi(q) @ d)


def grad_hamiltonian(sys: EMSystem, eta) -> np.ndarray:
    """Gradient ``[dH/dq; dH/dp; dH/dx_e]``.

    The coupling term contributes
    ``1/2 d^T (dPsi/dq_i) d - (dmu/dq_i)^T Psi d`` to ``dH/dq_i`` with
    ``d = x_e - mu(q)``.
    """
    q, p, xe = split_state(sys, eta, check_domain=True)
    return np.concatenate(_grad_parts(sys, q, p, xe))


def generic_gradient(sys: EMSystem, eta) -> np.ndarray:
    """Chain-rule gradient from the energy callbacks, ignoring any ``gradient`` override."""
    q, p, xe = split_state(sys, eta)
    return np.concatenate(_chain_rule_parts(sys, q, p, xe))


def fd_hessian(sys: EMSystem, eta, rel_step: float = 1e-5) -> np.ndarray:
    """Central differences of the gradient, step ``rel_step * (1 + |eta_i|)``."""
    q, p, xe = split_state(sys, eta)
    eta = np.concatenate([q, p, xe])
    n = eta.size
    hess = np.empty((n, n))
    for i in range(n):
        h = rel_step * (1.0 + abs(eta[i]))
        e = np.zeros(n)
        e[i] = h
        gp = np.concatenate(_grad_parts(sys, *split_state(sys, eta + e)))
        gm = np.concatenate(_grad_parts(sys, *split_state(sys, eta - e)))
        hess[:, i] = (gp - gm) / (2 * h)
    return 0.5 * (hess + hess.T)


def hessian_hamiltonian(sys: EMSystem, eta) -> np.ndarray:
    split_state(sys, eta, check_domain=True)
    if sys.hessian is not None:
        h = np.array(sys.hessian(np.asarray(eta, dtype=float)), dtype=float)
        return 0.5 * (h + h.T)
    h = fd_hessian(sys, eta)
    nm = sys.n_m
    h[nm : 2 * nm, :] = 0.0
    h[:, nm : 2 * nm] = 0.0
    h[nm : 2 * nm, nm : 2 * nm] = sys.M_inv
    return h


def open_loop_rhs(sys: EMSystem, eta, u) -> np.ndarray:
    q, p, xe = split_state(sys, eta, check_domain=True)
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.shape[0] != sys.n_e:
        raise DimensionError(f"input has length {u.shape[0]}, expected {sys.n_e}")
    gq, gp, gx = _grad_parts(sys, q, p, xe)
    return np.concatenate([gp, -gq - sys.R_m @ gp, (sys.J_e - sys.R_e) @ gx + sys.G_e @ u])


@dataclass
class Check:
    name: str
    ok: bool
    detail: str = ""
    witness: object = None

    def to_dict(self) -> dict:
        w = self.witness
        if isinstance(w, np.ndarray):
            w = w.tolist()
        return {"name": self.name, "ok": self.ok, "detail": self.detail, "witness": w}


@dataclass
class StructureReport:
    system: str
    checks: list

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    def failed(self) -> list:
        return [c.name for c in self.checks if not c.ok]

    def to_dict(self) -> dict:
        return {"system": self.system, "ok": self.ok, "checks": [c.to_dict() for c in self.checks]}


def _min_sym_eig(a: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(0.5 * (a + a.T)).min())


def q_grid(sys: EMSystem, points: int = 25) -> np.ndarray:
    """Interior grid of the (open) q box, shape ``(points**n_m, n_m)``."""
    axes = [np.linspace(lo, hi, points + 2)[1:-1] for lo, hi in zip(sys.q_lower, sys.q_upper)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, sys.n_m)


def check_structure(sys: EMSystem, points: int = 25, tol: float = 1e-12) -> StructureReport:
    """Evaluate every structural invariant of the plant; failures are entries, not exceptions."""
    checks = []
    for name, mat, strict in (("M_positive_definite", sys.M, True),
                              ("R_m_positive_definite", sys.R_m, True),
                              ("R_e_positive_semidefinite", sys.R_e, False)):
        lam = _min_sym_eig(mat)
        asym = float(np.abs(mat - mat.T).max())
        ok = (lam > tol if strict else lam >= -tol) and asym <= tol
        checks.append(Check(name, ok, f"min eigenvalue {lam:.6g}, asymmetry {asym:.3g}", lam))

    skew = float(np.abs(sys.J_e + sys.J_e.T).max())
    checks.append(Check("J_e_skew_symmetric", skew <= tol, f"|J_e + J_e^T|max = {skew:.3g}", skew))

    smin = float(np.linalg.svd(sys.G_e, compute_uv=False).min())
    checks.append(Check("G_e_full_rank", smin > tol, f"smallest singular value {smin:.6g}", smin))

    worst, worst_q = np.inf, None
    for q in q_grid(sys, points):
        lam = _min_sym_eig(np.asarray(sys.Psi(q), dtype=float).reshape(sys.n_e, sys.n_e))
        if lam < worst:
            worst, worst_q = lam, q
    checks.append(Check("Psi_positive_definite_on_q_domain", worst > tol,
                        f"min eigenvalue {worst:.6g} at q={worst_q}", worst_q))
    return StructureReport(sys.name, checks)
