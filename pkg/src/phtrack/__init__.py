"""Contraction-based tracking control for port-Hamiltonian electromechanical systems."""

from .catalog import PresetBundle, get_preset, loudspeaker, microphone, stepper_motor
from .certification import (CertificationReport, DomainBox, build_N, build_P, certify,
                            check_assumption1, estimate_hessian_bounds, is_hurwitz,
                            spectral_factorization_property)
from .controller import ClosedLoop, ControllerGains, alpha, closed_loop_rhs, control_input, theta
from .errors import (CertificationError, DimensionError, DivergenceError, DomainError, FitFloorError,
                     GainError, PhTrackError, SolverError)
from .model import (EMSystem, StateVector, check_structure, grad_hamiltonian, hamiltonian,
                    hessian_hamiltonian, open_loop_rhs)
from .simulation import (SimulationResult, contraction_probe, estimate_convergence_rate, integrate,
                         run_tracking_experiment)
from .trajectory import (ReferenceTrajectory, Sinusoid, check_feasibility, solve_feasible_xe,
                         solved_trajectory, sqrt_law_trajectory, stepper_reference, stepper_trajectory)

__version__ = "0.1.0"
