"""Multi-modal (EEG + eye movement) triple-class RSVP target decoder."""

__version__ = "0.1.0"

from .dataio import (  # noqa: F401
    EM_COMPONENTS,
    EM_SUBSETS,
    LABEL_NAMES,
    PreprocessConfig,
    RawRecording,
    Trial,
    TrialSet,
    load_dataset,
    plan_folds,
    rebalance,
)
from .engine import (  # noqa: F401
    MetricsReport,
    TrainConfig,
    TrainedModel,
    compute_metrics,
    cross_validate,
    evaluate,
    load_checkpoint,
    run_ablations,
    saliency_maps,
    save_checkpoint,
    train_fold,
)
from .network import EegBaseline, MtreeNet  # noqa: F401
from .synth import SynthConfig, generate, generate_raw, oracle_metrics  # noqa: F401
