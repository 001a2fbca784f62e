"""Sequential simulation-based calibration with actively chosen experiments.

The package estimates simulator parameters from a handful of real
observations by training a mixture-density posterior network on forward
simulations, scoring every candidate experiment with a Monte-Carlo
information-gain utility, executing the best one, and feeding the sharpened
posterior back in as the next round's prior.
"""

from asbi.density import (
    BoxPrior,
    KdeDensity,
    MoGDensity,
    TruncatedMoG,
    kde_fit,
    mog_log_pdf,
    mog_sample,
    truncated_log_pdf,
    truncated_sample,
)
from asbi.inference import (
    AllActionsUnusable,
    RoundError,
    RoundHistory,
    RunConfig,
    UtilityReport,
    alhi_posterior,
    alhi_utility,
    generate_training_set,
    run_alhi,
    run_asbi,
    run_experiment,
    run_nlhi,
    run_nsbi,
    select_action,
    train_nle,
    train_posterior_estimators,
    utility,
    validate_history_record,
)
from asbi.mdn import (
    MdnArchitecture,
    MdnEstimator,
    TrainConfig,
    TrainingDiverged,
    cross_log_prob,
    mdn_forward,
    nll_grad,
    nll_loss,
    train_mdn,
)
from asbi.metrics import MetricReport, inter_vol, log_prob_true, mesh_coverage, rep_err
from asbi.simulators import (
    Action,
    ActionGrid,
    Observation,
    Simulator,
    SimulatorSpec,
    TargetEnvironment,
    get_simulator,
)

__version__ = "0.1.0"
