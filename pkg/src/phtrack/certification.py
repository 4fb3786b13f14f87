"""Contraction certificate for a (plant, gains, domain) triple.

Pipeline: convexity of the potential on the domain, uniform bounds
``beta1 I < Hess(H + Theta) < beta2 I`` by grid sampling, Hurwitz test of the
target structure matrix ``P``, and an imaginary-axis test of the block matrix
``N(beta1, beta2, eps)`` over a sweep of ``eps``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .controller import ControllerGains
from .errors import CertificationError, DimensionError
from .model import EMSystem, fd_hessian, hessian_hamiltonian

RE_TOL = 1e-9
DEFAULT_EPSILONS = tuple(np.logspace(-4, 0, 13))


@dataclass(frozen=True)
class DomainBox:
    lower: np.ndarray
    upper: np.ndarray
    grid_points: int = 9

    def __post_init__(self):
        lo = np.array(self.lower, dtype=float).reshape(-1)
        hi = np.array(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise DimensionError("domain bounds differ in length")
        if np.any(lo >= hi):
            raise ValueError("domain needs lower < upper on every axis")
        if self.grid_points < 2:
            raise ValueError("grid_points must be >= 2")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    def grid(self, axes=None) -> np.ndarray:
        axes = range(self.dim) if axes is None else axes
        lin = [np.linspace(self.lower[i], self.upper[i], self.grid_points) for i in axes]
        return np.stack(np.meshgrid(*lin, indexing="ij"), axis=-1).reshape(-1, len(lin))

    def contains(self, pts) -> bool:
        pts = np.atleast_2d(pts)
        return bool(np.all((pts >= self.lower) & (pts <= self.upper)))

    def with_axis(self, i: int, lo: float, hi: float) -> "DomainBox":
        lower, upper = self.lower.copy(), self.upper.copy()
        lower[i], upper[i] = lo, hi
        return DomainBox(lower, upper, self.grid_points)

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist(), "grid_points": self.grid_points}


@dataclass
class Assumption1Result:
    ok: bool
    min_eigenvalue: float
    witness_q: np.ndarray


def check_assumption1(sys: EMSystem, domain: DomainBox) -> Assumption1Result:
    """Positive definiteness of the potential's Hessian on the q-projection of the grid."""
    if domain.dim != sys.dim:
        raise DimensionError(f"domain has {domain.dim} axes, system state has {sys.dim}")
    worst, wq = np.inf, None
    for q in domain.grid(range(sys.n_m)):
        lam = np.linalg.eigvalsh(np.atleast_2d(sys.hess_V(q))).min()
        if lam < worst:
            worst, wq = float(lam), q
    return Assumption1Result(worst > 0, worst, wq)


@dataclass
class HessianBounds:
    beta1: float
    beta2: float
    min_eigenvalue: float
    max_eigenvalue: float
    argmin: np.ndarray
    margin: float


def shaped_hessian(sys: EMSystem, gains: ControllerGains, eta) -> np.ndarray:
    h = hessian_hamiltonian(sys, eta)
    k = 2 * sys.n_m
    h[k:, k:] += gains.K_c
    return h


def estimate_hessian_bounds(sys: EMSystem, gains: ControllerGains, domain: DomainBox,
                            margin: float = 0.05) -> HessianBounds:
    """Grid estimate of ``beta1 < eig(Hess H + blockdiag(0, 0, K_c)) < beta2``."""
    if domain.dim != sys.dim:
        raise DimensionError(f"domain has {domain.dim} axes, system state has {sys.dim}")
    pts = domain.grid()
    # Grid points may sit on the boundary of the open q box; evaluate without the domain check.
    if sys.hessian is not None:
        stack = np.array([sys.hessian(eta) for eta in pts])
    else:
        stack = np.array([fd_hessian(sys, eta) for eta in pts])
        k = sys.n_m
        stack[:, k : 2 * k, :] = 0.0
        stack[:, :, k : 2 * k] = 0.0
        stack[:, k : 2 * k, k : 2 * k] = sys.M_inv
    stack = 0.5 * (stack + np.swapaxes(stack, 1, 2))
    k = 2 * sys.n_m
    stack[:, k:, k:] += gains.K_c
    eigs = np.linalg.eigvalsh(stack)
    lo, hi = eigs[:, 0], eigs[:, -1]
    i = int(np.argmin(lo))
    lam_min, lam_max = float(lo[i]), float(hi.max())
    if not lam_min > 0:
        raise CertificationError(
            f"shaped Hessian not uniformly positive on D0: min eigenvalue {lam_min:.6g} at eta={pts[i]}")
    return HessianBounds((1 - margin) * lam_min, (1 + margin) * lam_max, lam_min, lam_max, pts[i], margin)


def build_P(sys: EMSystem, gains: ControllerGains) -> np.ndarray:
    nm, ne = sys.n_m, sys.n_e
    P = np.zeros((sys.dim, sys.dim))
    P[:nm, nm : 2 * nm] = np.eye(nm)
    P[nm : 2 * nm, :nm] = -np.eye(nm)
    P[nm : 2 * nm, nm : 2 * nm] = -sys.R_m
    P[2 * nm :, 2 * nm :] = sys.J_e - gains.Rbar_e
    return P


def mechanical_block(R_m) -> np.ndarray:
    """``F1 = [[0, I], [-I, -R_m]]``."""
    R_m = np.atleast_2d(np.asarray(R_m, dtype=float))
    n = R_m.shape[0]
    return np.block([[np.zeros((n, n)), np.eye(n)], [-np.eye(n), -R_m]])


@dataclass
class HurwitzResult:
    ok: bool
    spectrum: np.ndarray
    max_real: float


def is_hurwitz(A, re_tol: float = RE_TOL) -> HurwitzResult:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise DimensionError(f"matrix must be square, got {A.shape}")
    try:
        lam = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise CertificationError(f"eigensolver failed: {exc}") from exc
    mr = float(lam.real.max())
    return HurwitzResult(mr < -re_tol, lam, mr)


def build_N(P, beta1: float, beta2: float, epsilon: float) -> np.ndarray:
    """``[[P, (1 - b1/b2) P P^T], [-(1 - b1/b2 + eps) I, -P^T]]``."""
    if not 0 < beta1 <= beta2:
        raise ValueError(f"need 0 < beta1 <= beta2, got beta1={beta1}, beta2={beta2}")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    P = np.atleast_2d(np.asarray(P, dtype=float))
    n = P.shape[0]
    r = 1.0 - beta1 / beta2
    return np.block([[P, r * P @ P.T], [-(r + epsilon) * np.eye(n), -P.T]])


@dataclass
class EpsilonResult:
    epsilon: float
    spectrum: np.ndarray
    min_abs_real: float
    ok: bool


def axis_test(N, re_tol: float = RE_TOL):
    lam = np.linalg.eigvals(N)
    m = float(np.abs(lam.real).min())
    return lam, m, m > re_tol


def _cpairs(z) -> list:
    return [[float(v.real), float(v.imag)] for v in np.asarray(z, dtype=complex).ravel()]


@dataclass
class CertificationReport:
    system: str
    assumption1_ok: bool = False
    assumption1_min_eig: Optional[float] = None
    assumption1_witness: Optional[np.ndarray] = None
    beta1: Optional[float] = None
    beta2: Optional[float] = None
    hessian_argmin: Optional[np.ndarray] = None
    P_spectrum: Optional[np.ndarray] = None
    P_hurwitz_ok: bool = False
    epsilon_tried: list = field(default_factory=list)
    N_results: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    settings: dict = field(default_factory=dict)
    re_tol: float = RE_TOL

    @property
    def passing_epsilons(self) -> list:
        return [r.epsilon for r in self.N_results if r.ok]

    @property
    def overall_ok(self) -> bool:
        betas = self.beta1 is not None and 0 < self.beta1 < self.beta2
        return bool(self.assumption1_ok and betas and self.P_hurwitz_ok and self.passing_epsilons)

    def to_dict(self) -> dict:
        arr = lambda a: None if a is None else np.asarray(a).tolist()
        return {
            "system": self.system,
            "overall_ok": self.overall_ok,
            "assumption1_ok": self.assumption1_ok,
            "assumption1_min_eig": self.assumption1_min_eig,
            "assumption1_witness": arr(self.assumption1_witness),
            "beta1": self.beta1,
            "beta2": self.beta2,
            "hessian_argmin": arr(self.hessian_argmin),
            "P_spectrum": None if self.P_spectrum is None else _cpairs(self.P_spectrum),
            "P_hurwitz_ok": self.P_hurwitz_ok,
            "epsilon_tried": list(self.epsilon_tried),
            "passing_epsilons": self.passing_epsilons,
            "N_spectrum_per_epsilon": {
                repr(r.epsilon): {"eigenvalues": _cpairs(r.spectrum), "min_abs_real": r.min_abs_real, "ok": r.ok}
                for r in self.N_results
            },
            "re_tol": self.re_tol,
            "errors": list(self.errors),
            "settings": self.settings,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def certify(sys: EMSystem, gains: ControllerGains, domain: DomainBox, epsilon_grid=DEFAULT_EPSILONS,
            margin: float = 0.05, re_tol: float = RE_TOL) -> CertificationReport:
    """Run every contraction condition; failures are recorded in the report, never raised."""
    eps = [float(e) for e in epsilon_grid]
    rep = CertificationReport(sys.name, re_tol=re_tol,
                              settings={"domain": domain.to_dict(), "margin": margin, "gains": gains.to_dict()})
    if not eps or any(e <= 0 for e in eps):
        rep.errors.append("epsilon grid must be nonempty and positive")
        return rep
    try:
        a1 = check_assumption1(sys, domain)
        rep.assumption1_ok, rep.assumption1_min_eig, rep.assumption1_witness = a1.ok, a1.min_eigenvalue, a1.witness_q
    except Exception as exc:  # noqa: BLE001 - report, don't raise
        rep.errors.append(f"assumption1: {exc}")
    try:
        hb = estimate_hessian_bounds(sys, gains, domain, margin)
        rep.beta1, rep.beta2, rep.hessian_argmin = hb.beta1, hb.beta2, hb.argmin
    except Exception as exc:  # noqa: BLE001
        rep.errors.append(f"hessian_bounds: {exc}")
    P = build_P(sys, gains)
    try:
        hw = is_hurwitz(P, re_tol)
        rep.P_spectrum, rep.P_hurwitz_ok = hw.spectrum, hw.ok
    except Exception as exc:  # noqa: BLE001
        rep.errors.append(f"hurwitz: {exc}")
    rep.epsilon_tried = eps
    if rep.beta1 is not None:
        for e in eps:
            try:
                lam, m, ok = axis_test(build_N(P, rep.beta1, rep.beta2, e), re_tol)
                rep.N_results.append(EpsilonResult(e, lam, m, ok))
            except Exception as exc:  # noqa: BLE001
                rep.errors.append(f"N(eps={e}): {exc}")
    return rep


def quadratic_roots(sigma: float) -> np.ndarray:
    """Roots of ``lam^2 + sigma lam + 1``."""
    disc = np.sqrt(complex(sigma * sigma - 4.0))
    return np.array([(-sigma + disc) / 2, (-sigma - disc) / 2])


def spectral_factorization_property(R_m, tol: float = 1e-8) -> bool:
    """Check ``eig(F1)`` against the per-eigenvalue quadratic roots of ``R_m``.

    Both spectra are sorted by (real, imag) and compared elementwise; an optimal
    matching is used as a tie-breaker when near-equal real parts reorder the sort.
    """
    R_m = np.atleast_2d(np.asarray(R_m, dtype=float))
    sigma = np.linalg.eigvalsh(0.5 * (R_m + R_m.T))
    expected = np.concatenate([quadratic_roots(s) for s in sigma])
    got = np.linalg.eigvals(mechanical_block(R_m)).astype(complex)

    def key(z):
        return (round(z.real, 7), z.imag)

    a, b = sorted(got, key=key), sorted(expected, key=key)
    diff = max(abs(x - y) for x, y in zip(a, b))
    if diff > tol:
        cost = np.abs(got[:, None] - expected[None, :])
        r, c = linear_sum_assignment(cost)
        diff = cost[r, c].max()
    return bool(diff <= tol and np.all(got.real < 0))
