"""Joint-torque features for human motion understanding.

Modules:

- :mod:`torquefusion.dynamics` -- kinematic trees and inverse dynamics
- :mod:`torquefusion.encoding` -- torque normalization and the force encoder
- :mod:`torquefusion.fusion` -- feature-, token- and decision-level fusion
- :mod:`torquefusion.evaluation` -- retrieval/classification/caption metrics, t-tests
- :mod:`torquefusion.harness` -- synthetic cohorts, experiments, joint ablation
"""

from .dynamics import (
    ContactSet,
    Contact,
    Joint,
    KinematicChain,
    MotionSequence,
    MotionState,
    TorqueSequence,
    bias_forces,
    finite_difference_derivatives,
    inverse_dynamics,
    mass_matrix,
    torques_from_sequence,
)
from .encoding import (
    ForceNetParams,
    fit_encoder,
    fn_forward,
    fn_gradient,
    init_params,
    mask_joints,
    normalize_sequence,
)
from .evaluation import (
    cmc_rank_k,
    delta_report,
    distance_matrix,
    mean_average_precision,
    mean_inp,
    per_class_accuracy,
    rouge_l,
    t_test,
)

__version__ = "0.1.0"
