"""Initial-state-adaptive quantum Lyapunov control with learned predictors.

Core layers: ``quantum`` (eigenbasis linear algebra), ``lyapunov``
(feedback-form control fields and RK4 dynamics), ``optim`` (multi-start
box-constrained Nelder-Mead), ``mlp``/``grnn`` (the two predictors),
``dataset`` (seeded labeled corpora), ``experiments``/``cli`` (the
three-level benchmark).
"""

from .dataset import (
    LabeledSample,
    SampleSet,
    generate_set,
    label_classification,
    label_regression,
    load_samples,
    random_params,
    save_samples,
    split,
)
from .grnn import GrnnModel, avg_log_infidelity, grnn_build, grnn_predict, grnn_tune_sigma
from .lyapunov import (
    ControlledSystem,
    ControlTrajectory,
    LyapunovWeights,
    build_p,
    control_field,
    evolve,
    evolve_batch,
    lyapunov_rate_check,
    make_system,
)
from .mlp import (
    MlpNetwork,
    Normalizer,
    TrainConfig,
    classify,
    mlp_forward,
    mlp_init,
    mlp_train,
    mse,
    sigmoid,
)
from .optim import BoxBounds, OptimResult, minimize_multistart, optimize_lyapunov_weights
from .quantum import (
    EigenBasis,
    InitialStateParams,
    NumericError,
    ValidationError,
    eigendecompose,
    expectation,
    fidelity,
    state_from_params,
)

__version__ = "0.1.0"
