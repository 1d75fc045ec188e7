"""srkit: numerical sub-Riemannian geometry on a single coordinate chart.

Normal geodesics via the Hamiltonian flow, endpoint-differential rank tests
for abnormality, shooting and direct-minimization boundary value solvers,
arc-length reparameterization and wavefront calibration checks.
"""

__version__ = "0.1.0"

from .errors import (ConfigError, DegenerateFrame, NoConvergence, NonHorizontal,  # noqa: E402
                     NormalizationFailure, OutOfChart, SingularJacobian, SRKitError,
                     StepFailure, TransversalityFailure, ZeroLength)
from .model import ChartModel, builtin_model, load_model, model_from_dict  # noqa: E402
from .hamflow import (IntegratorOptions, Trajectory, flow_linearization,  # noqa: E402
                      hamiltonian, integrate_geodesic)
from .endpoint import (AbnormalReport, ControlCurve, adjoint_integrate,  # noqa: E402
                       characteristic_test, controls_to_curve, curve_to_controls,
                       endpoint_differential_gramian, endpoint_map, uniform_controls)
from .solver import (BvpSolution, ShootOptions, SubmanifoldSpec, action,  # noqa: E402
                     ball_sample, direct_minimize, length, shoot_point_to_point,
                     shoot_to_submanifolds)
from .reparam import arclength_profile, unit_speed_reparam  # noqa: E402
from .minimality import (WavefrontChart, build_wavefront, calibration_check,  # noqa: E402
                         minimality_certificate)
from .kernels import compiled_available, get_backend, set_backend  # noqa: E402
