"""Toolkit for training recognizers on synthetic data with a controlled
distribution gap: exact-density toy worlds, discriminator-driven rejection
sampling, and dual batch-normalization statistics."""

from .common import (
    AcceptanceFloorError,
    ConfigurationError,
    ContractError,
    DegenerateBatchError,
    Origin,
    TrainingDivergenceError,
    UndefinedRatioError,
    rng_for,
    seed_for,
)
from .worlds import (
    Dataset,
    GapSpec,
    Sample,
    StyleComponent,
    TokenAlphabet,
    TokenPrior,
    WorldSpec,
    identity_gap,
    log_density,
    make_artifact_style,
    oracle_ratio,
    sample_real,
    sample_synth,
    synthetic_stream,
)
from .metrics import DetCurve, WerBreakdown, avg_far, corpus_wer, det_curve, wer
from .recognizers import (
    CtcResult,
    KeywordDetector,
    SequenceRecognizer,
    build_keyword_model,
    build_sequence_model,
    cross_entropy,
    ctc_loss,
    frame_cross_entropy,
    greedy_decode,
    log_softmax,
)
from .curation import (
    CTC_MAX,
    Discriminator,
    DiscriminatorConfig,
    FeatureVector,
    OracleRatioScorer,
    RejectionSampler,
    RunReport,
    accept,
    compute_feature_matrix,
    compute_features,
    density_ratio,
    estimate_initial_M,
    fit_discriminator,
    sample_until,
    train_discriminator,
)
from .training import EpochRecord, MixPolicy, TrainConfig, evaluate, make_batches, train
from .experiment import (
    ABLATION_ROWS,
    CONDITIONS,
    ExperimentConfig,
    default_gap,
    default_world,
    render_report,
    run_experiment,
)

__version__ = "0.1.0"
