"""Ready-made plants: two-phase stepper motor, capacitive microphone, loudspeaker.

Each factory returns a :class:`PresetBundle` with the published parameters,
gains, initial state and reference. Anything the published model leaves open
is a keyword argument, and every such choice is listed in ``bundle.notes``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .certification import DomainBox
from .controller import ControllerGains
from .model import EMSystem, check_structure
from .trajectory import (ReferenceTrajectory, Sinusoid, solved_trajectory, sqrt_law_trajectory,
                         stepper_trajectory)


@dataclass
class PresetBundle:
    name: str
    system: EMSystem
    gains: ControllerGains
    eta0: np.ndarray
    reference: ReferenceTrajectory
    domain: DomainBox
    signal: Sinusoid
    t_final: float = 10.0
    step: float = 1e-3
    params: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def validate(self) -> list:
        """Return a list of invariant violations (empty when the bundle is consistent)."""
        problems = []
        rep = check_structure(self.system)
        if not rep.ok:
            problems.append(f"check_structure failed: {', '.join(rep.failed())}")
        if not self.domain.contains(self.eta0):
            problems.append("eta0 outside the certification domain")
        ts = np.linspace(0.0, self.t_final, 201)
        if not self.domain.contains(self.reference.states(ts)):
            problems.append("reference leaves the certification domain")
        return problems


def _sinusoid_params(sig: Sinusoid) -> dict:
    return {"offset": sig.offset, "amplitude": sig.amplitude, "omega": sig.omega, "phase": sig.phase}


def stepper_motor(L_s: float = 1.0, signal: Sinusoid | None = None, **overrides) -> PresetBundle:
    p = dict(M=1.872e-4, R_m=2.0, R_s=0.9, k_m=2.25, k_D=0.0176, tau_L=1.720129, N_r=6,
             L_s=L_s, Rbar_e=[23.0, 25.0], K_c=35.0)
    p.update(overrides)
    M, Rm, km, kD, tL, Nr, Ls = p["M"], p["R_m"], p["k_m"], p["k_D"], p["tau_L"], p["N_r"], p["L_s"]
    sig = signal or Sinusoid(0.0, 0.5)

    def V(q):
        return -kD / (4 * Nr) * math.cos(4 * Nr * q[0]) + tL * q[0]

    def grad_V(q):
        return np.array([kD * math.sin(4 * Nr * q[0]) + tL])

    def hess_V(q):
        return np.array([[4 * Nr * kD * math.cos(4 * Nr * q[0])]])

    def mu(q):
        return (km / Nr) * np.array([math.cos(Nr * q[0]), math.sin(Nr * q[0])])

    def jac_mu(q):
        return km * np.array([[-math.sin(Nr * q[0])], [math.cos(Nr * q[0])]])

    psi = Ls * np.eye(2)

    def hessian(eta):
        q, x = eta[0], eta[2:]
        s, c = math.sin(Nr * q), math.cos(Nr * q)
        dmu = km * np.array([-s, c])
        ddmu = km * Nr * np.array([-c, -s])
        d = x - (km / Nr) * np.array([c, s])
        h = np.zeros((4, 4))
        h[0, 0] = 4 * Nr * kD * math.cos(4 * Nr * q) + Ls * dmu @ dmu - Ls * d @ ddmu
        h[0, 2:] = h[2:, 0] = -Ls * dmu
        h[1, 1] = 1.0 / M
        h[2:, 2:] = psi
        return h

    def gradient(q, p_, x):
        th = Nr * q[0]
        s, c = math.sin(th), math.cos(th)
        r = km / Nr
        d1, d2 = x[0] - r * c, x[1] - r * s
        gq = kD * math.sin(4 * th) + tL - Ls * km * (c * d2 - s * d1)
        return np.array([gq]), np.array([p_[0] / M]), np.array([Ls * d1, Ls * d2])

    sys = EMSystem("stepper", 1, 2, M=[[M]], R_m=[[Rm]], J_e=np.zeros((2, 2)), R_e=p["R_s"] * np.eye(2),
                   G_e=2 * np.eye(2), V=V, grad_V=grad_V, hess_V=hess_V, mu=mu, jac_mu=jac_mu,
                   Psi=lambda q: psi, dPsi=None, q_lower=[-math.pi], q_upper=[math.pi],
                   hessian=hessian, gradient=gradient, params=p)
    gains = ControllerGains.make(p["Rbar_e"], p["K_c"], 2)
    ref = stepper_trajectory(p, sig)
    # Bounding box of the closed-loop run and reference over [0, 15], each side widened by 25% of its range.
    domain = DomainBox([-0.7568, -0.025, -1.8352, -1.404], [0.7838, 0.0051, 2.287, 1.7427])
    notes = {
        "parameters": "M, R_m, R_s, k_m, k_D, tau_L, N_r, Rbar_e, K_c, eta0 and f(t) as published",
        "L_s": "not given in the published parameter list; default 1 (the closed-form reference is "
               "only feasible for L_s = 1 with Psi = L_s I, since the coupling torque scales with L_s^2)",
        "m": "the mass m in the reference formulas is identified with M",
        "K_c": "scalar gain read as K_c * I",
        "domain": "artifact choice; contains regions with cos(24 q) <= 0, so Assumption-1 fails here",
        "step": "RK4 needs h < 2.785 M / R_m ~ 2.6e-4 for the fast mechanical mode; default 2.5e-4",
    }
    return PresetBundle("stepper", sys, gains, np.array([0.2, -0.02, 1.6, -0.3]), ref, domain, sig,
                        t_final=15.0, step=2.5e-4, params={**p, "signal": _sinusoid_params(sig)}, notes=notes)


def microphone(signal: Sinusoid | None = None, branch: int = 1, reference: str = "paper",
               **overrides) -> PresetBundle:
    if reference not in ("solver", "paper"):
        raise ValueError("reference must be 'solver' or 'paper'")
    p = dict(M=1.0, R_m=1.0, R_e=1.0, k=1.0, gamma1=1.0, Rbar_e=30.0, K_c=55.0)
    p.update(overrides)
    M, Rm, k, g1 = p["M"], p["R_m"], p["k"], p["gamma1"]
    sig = signal or Sinusoid(0.3, 0.2)

    def hessian(eta):
        q, x = eta[0], eta[2]
        return np.array([[k, 0.0, x], [0.0, 1.0 / M, 0.0], [x, 0.0, q]])

    sys = EMSystem("microphone", 1, 1, M=[[M]], R_m=[[Rm]], J_e=[[0.0]], R_e=[[p["R_e"]]], G_e=[[1.0]],
                   V=lambda q: 0.5 * k * (q[0] - g1) ** 2, grad_V=lambda q: np.array([k * (q[0] - g1)]),
                   hess_V=lambda q: np.array([[k]]), mu=lambda q: np.zeros(1), jac_mu=lambda q: np.zeros((1, 1)),
                   Psi=lambda q: np.array([[q[0]]]), dPsi=lambda q: np.ones((1, 1, 1)),
                   q_lower=[0.0], q_upper=[1.0], hessian=hessian, params=p)
    gains = ControllerGains.make(p["Rbar_e"], p["K_c"], 1)
    if reference == "paper":
        ref = sqrt_law_trajectory(sig, M, Rm, k, g1, branch=branch)
    else:
        f0, f1, f2, _ = sig.derivatives(0.0)
        x0 = math.sqrt(2 * max(k * (g1 - f0) - Rm * f1 - M * f2, 1e-3))
        ref = solved_trajectory(sys, sig, [x0], branch=branch,
                                notes=("x_e* solved from the mechanical feasibility equation",))
    # Closed-loop bounding box widened by 25% of its range per side; q clipped to stay inside (0, 1).
    domain = DomainBox([0.01, -0.3066, 0.0396], [0.6201, 0.3331, 1.6022])
    notes = {
        "parameters": "M, R_m, R_e, k, gamma1, Rbar_e, K_c, eta0 and f(t) as published",
        "Psi": "Psi(q) = 1/C(q) = q",
        "q_domain": "(0, 1): positivity from the model, upper end an artifact choice",
        "branch": "positive square-root branch",
        "reference": f"'{reference}'; both satisfy x_e*^2 = 2 (k (gamma1 - f) - R_m f' - M f'')",
        "domain": "artifact choice",
    }
    return PresetBundle("microphone", sys, gains, np.array([0.02, -0.02, 0.3]), ref, domain, sig,
                        params={**p, "signal": _sinusoid_params(sig), "branch": branch, "reference": reference},
                        notes=notes)


LOUDSPEAKER_RE = {"numeric": 1.0, "model": 0.0}


def loudspeaker(reference: str = "solver", Re_variant: str = "numeric", signal: Sinusoid | None = None,
                branch: int = 1, **overrides) -> PresetBundle:
    if reference not in ("solver", "paper"):
        raise ValueError("reference must be 'solver' or 'paper'")
    if Re_variant not in LOUDSPEAKER_RE:
        raise ValueError(f"Re_variant must be one of {sorted(LOUDSPEAKER_RE)}")
    p = dict(M=1.0, R_m=1.0, R_e=LOUDSPEAKER_RE[Re_variant], k=1.0, alpha=4.0, Rbar_e=100.0, K_c=3.5)
    p.update(overrides)
    M, Rm, k, a = p["M"], p["R_m"], p["k"], p["alpha"]
    sig = signal or Sinusoid(-1.0, 0.3)

    def hessian(eta):
        q, x = eta[0], eta[2]
        return np.array([[k, 0.0, x / a], [0.0, 1.0 / M, 0.0], [x / a, 0.0, q / a]])

    sys = EMSystem("loudspeaker", 1, 1, M=[[M]], R_m=[[Rm]], J_e=[[0.0]], R_e=[[p["R_e"]]], G_e=[[1.0]],
                   V=lambda q: 0.5 * k * q[0] ** 2, grad_V=lambda q: np.array([k * q[0]]),
                   hess_V=lambda q: np.array([[k]]), mu=lambda q: np.zeros(1), jac_mu=lambda q: np.zeros((1, 1)),
                   Psi=lambda q: np.array([[q[0] / a]]), dPsi=lambda q: np.full((1, 1, 1), 1.0 / a),
                   q_lower=[-2.0], q_upper=[1.0], hessian=hessian, params=p)
    gains = ControllerGains.make(p["Rbar_e"], p["K_c"], 1)
    warnings = [
        "Psi(q) = q/alpha is negative for q < 0, yet the reference f(t) = 0.3 sin t - 1 is negative; "
        "the model states q in (0, inf). Shipped with the literal functions and q_domain (-2, 1).",
    ]
    if reference == "paper":
        ref = sqrt_law_trajectory(sig, M, Rm, k, 0.0, branch=branch,
                                  notes=("literal sqrt law with gamma1 = 0; omits the factor alpha and "
                                         "is infeasible for alpha != 1",))
    else:
        x0 = math.sqrt(2 * a * max(-k * sig(0.0) - Rm * sig.derivatives(0.0)[1], 1e-3))
        ref = solved_trajectory(sys, sig, [x0], branch=branch,
                                notes=("x_e* solved from the mechanical feasibility equation",))
    domain = DomainBox([-1.7666, -0.6602, 1.9291], [0.3773, 0.5419, 3.5268])
    notes = {
        "parameters": "M, R_m, k, alpha, Rbar_e, K_c, eta0 and f(t) as published",
        "R_e": f"variant '{Re_variant}': model text gives R_e = 0, parameter block gives R_e = 1",
        "reference": f"'{reference}'; the solver-derived reference satisfies x_e*^2 = 2 alpha (-k f - R_m f' - M f'')",
        "domain": "artifact choice (closed-loop bounding box widened by 25% of its range per side)",
    }
    return PresetBundle("loudspeaker", sys, gains, np.array([0.02, -0.02, 2.3]), ref, domain, sig,
                        params={**p, "signal": _sinusoid_params(sig), "reference": reference,
                                "Re_variant": Re_variant, "branch": branch},
                        notes=notes, warnings=warnings)


PRESETS = {"stepper": stepper_motor, "microphone": microphone, "loudspeaker": loudspeaker}


def get_preset(name: str, **kwargs) -> PresetBundle:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return factory(**kwargs)
