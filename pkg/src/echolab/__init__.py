"""echolab: a numerical laboratory for single-wave time-domain obstacle
probing.

One wave is launched from a ball-supported initial velocity, observed over
a finite time window on the ball (or on a surrounding sphere), and the
large-tau behaviour of the indicator functional extracts, in order: the
obstacle's distance, a curvature functional of its first reflection points,
the Gauss and mean curvatures, and the boundary-condition coefficient.
Every asymptotic coefficient is backed by an independent brute-force
oracle.
"""

from .errors import *  # noqa: F401,F403
from .fields import BallSource, grad_v_f, mean_value_ball, mean_value_sphere, v_f, varphi
from .geometry import (
    C_coefficient,
    GraphPatch,
    PatchAssembly,
    Reflector,
    Sphere,
    curvatures,
    det_gap,
    first_reflector,
    phase_derivatives,
    psi,
    reflect_point,
    sphere_patch,
    taylor_patch,
)
from .indicator import (
    IndicatorSeries,
    fit_dist,
    fit_log_asymptote,
    fit_moments,
    indicator_sphere,
    indicator_volume,
    j_mode_series,
    j_surface,
    laplace_transform,
    reduce_sphere,
)
from .oracle import (
    G0_laplacian,
    G0_laplacian_closed,
    LaplaceIntegrand,
    g0_eval,
    g1_eval,
    lemma31_check,
    tilde_integral,
    two_term_fit,
)
from .recovery import (
    RecoveryResult,
    direction_probe,
    gamma_sign_test,
    recover_A,
    recover_beta,
    recover_curvatures,
    recover_dist,
    recover_result,
)
from .scenario import Scenario
from .solver import (
    RobinFields,
    SimGrid,
    WaveRecording,
    build_grid,
    free_space_reference,
    run_forward,
)

__version__ = "0.1.0"
