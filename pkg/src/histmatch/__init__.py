"""History matching with Gaussian-process emulators and active learning.

Waves of emulate, sample the not-ruled-out-yet (NROY) space by annealing,
rank candidates with a learning criterion, pick a space-filling batch and
refit.
"""

__version__ = "0.1.0"

from .config import ExperimentConfig, load_config, parse_config
from .criteria import CRITERIA, eci, entropic_profile, expected_risk, lhs, rank_samples
from .design import SelectionConfig, latin_hypercube, maximin_select, select_batch
from .emulator import (
    HyperPrior,
    KernelSpec,
    PosteriorEnsemble,
    PredictiveMixture,
    TrainingSet,
    build_ensemble,
    mixture_moments,
    sample_hyperposterior,
)
from .errors import *  # noqa: F401,F403
from .implausibility import (
    SecondMaxSampler,
    TargetDatum,
    UncertaintyBudget,
    implausibility_pointwise,
    prob_nonimplausible,
    prob_second_max_exact,
    prob_second_max_nonimplausible,
    second_max_implausibility,
)
from .nroy import AnnealingConfig, NROYLevels, sample_nroy
from .orchestrator import (
    WaveState,
    initial_design,
    run_replications,
    run_sampler_only,
    run_wave,
    stopping_rule,
)
from .scoring import WaveMetrics, crps_mixture, wave_metrics
from .testbed import franke, load_tabulated, make_random_function, torus_implausibility
