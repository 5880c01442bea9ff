"""Perturbation-based sensitivity analysis benchmark for time-series forecasters."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    AdapterError,
    ConfigError,
    ContractError,
    DataError,
    EmptyWindowSetError,
    EvaluationError,
    HandshakeError,
    InputError,
    ReportError,
    SchemaError,
    SensBenchError,
    TrainingError,
    UndefinedCorrelationError,
)
from .external import ExternalModel, connect_external  # noqa: E402
from .models import (  # noqa: E402
    ForecastModel,
    LinearDecompModel,
    MLPModel,
    ModelSpec,
    TrainConfig,
    decompose,
    load_model,
    save_model,
    train,
)
from .panel import (  # noqa: E402
    FeatureStats,
    GroundTruthRanking,
    Panel,
    PanelSchema,
    SynthConfig,
    WindowSet,
    feature_stats,
    load_panel,
    load_truth,
    make_windows,
    synth_generate,
    write_panel_csv,
    write_truth,
)
from .perturbation import (  # noqa: E402
    BaselinePolicy,
    MorrisConfig,
    OcclusionConfig,
    SensitivityReport,
    ablation,
    elementary_effect,
    morris,
    occlusion,
    scaled_morris,
)
from .ranking import CorrelationMatrix, RankVector, accuracy, agreement_matrix, rank, spearman  # noqa: E402
