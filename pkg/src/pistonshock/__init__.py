"""Inverse piston problem for spherically symmetric compressible flow.

Given the ambient density and a prescribed leading-shock trajectory, the
package reconstructs the piston trajectory and the smooth flow field in the
strip between them, and verifies the reconstruction by an independent forward
finite-volume solve. Quantitative small-density scalings are reproduced by
the sweep module.
"""

from .errors import (
    ConfigError,
    CoverageFailure,
    GradientBlowup,
    InvariantBreach,
    MarchingBreakdown,
    NoAdmissibleShock,
    PistonShockError,
    SolverFailure,
    SonicDegeneracy,
    StiffnessError,
    VacuumFormation,
    VacuumStateError,
)
from .gas import FluidState, GasModel, RiemannPair, eigenvalues, from_riemann, sound_speed, to_riemann
from .shock import (
    AmbientState,
    ShockTrace,
    ShockTrajectory,
    TraceDerivatives,
    check_lax,
    solve_rh,
    trace_derivatives,
    validate_trajectory,
)
from .selfsimilar import SelfSimilarProfile, flow_at, integrate_profile, profile_diagnostics
from .march import FlowField, MarchControls, MarchDiagnostics, PistonTrajectory, march, trace_characteristics, transport_gradients
from .fv import FvControls, compare_shock, simulate
from .sweep import SweepReport, reference_exponents, sweep

__version__ = "0.1.0"
