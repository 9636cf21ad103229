"""Contextual-POMDP planning with an information-directed objective."""

from .envs import (
    DiscreteEnv,
    LightDarkEnv,
    LineGridConfig,
    RolloutResult,
    linegrid_env,
    linegrid_model,
    rollout,
)
from .inference import (
    GaussianBelief,
    ObservableOperator,
    build_operator,
    discrete_obs_loglik,
    ekf_predict,
    ekf_update,
    lightdark_obs_loglik,
    mixture_obs_loglik,
)
from .invariance import EnumerationCapError, InvarianceVerdict, epsilon_invariance_check
from .loop import (
    CIDSConfig,
    RegretReport,
    info_gain_estimate,
    information_ratio,
    oracle_value,
    regret_decompose,
    run_cids,
)
from .model import (
    AllZeroPosteriorError,
    ContextPosterior,
    DiscreteCPOMDP,
    EpisodeRecord,
    LightDarkParams,
    Trajectory,
    model_from_json,
    model_to_json,
    posterior_entropy_bits,
    posterior_update,
    validate_model,
)
from .policy import PolicyParams, ScoreGradient, act, init_policy, score_gradient
from .solver import (
    SolverDivergenceError,
    TrainingCurve,
    VPGConfig,
    gibbs_log_target,
    train,
    vpg_gradient,
    vpg_weight,
)

__version__ = "0.1.0"
