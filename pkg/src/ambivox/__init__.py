"""Gender-ambiguous voice synthesis with an attack-scenario harness."""

from .adversaries import (
    GenderClassifier,
    SpeakerVerifier,
    TemplateTranscriber,
    TrialPair,
    build_trials,
    score_trials,
)
from .corpus import (
    UtteranceRecord,
    build_corpus,
    load_manifest,
    sample_batch,
    save_manifest,
)
from .errors import (
    AmbivoxError,
    CheckpointError,
    DivergenceError,
    InvalidInput,
    MissingAsset,
    ParseError,
)
from .frontend import (
    MelFrontend,
    MelSpectrogram,
    Waveform,
    design_filterbank,
    read_wav,
    write_wav,
)
from .losses import (
    LossBreakdown,
    discriminator_loss,
    generator_loss,
    sample_soft_labels,
)
from .metrics import (
    MetricsReport,
    compute_eer,
    evaluate,
    normalized_eer,
    normalized_gr,
    word_accuracy,
    word_error_rate,
)
from .reporting import render_report
from .trainer import AmbiguousVoiceGan

__version__ = "0.1.0"

__all__ = [
    "AmbiguousVoiceGan",
    "AmbivoxError",
    "CheckpointError",
    "DivergenceError",
    "GenderClassifier",
    "InvalidInput",
    "LossBreakdown",
    "MelFrontend",
    "MelSpectrogram",
    "MetricsReport",
    "MissingAsset",
    "ParseError",
    "SpeakerVerifier",
    "TemplateTranscriber",
    "TrialPair",
    "UtteranceRecord",
    "Waveform",
    "build_corpus",
    "build_trials",
    "compute_eer",
    "design_filterbank",
    "discriminator_loss",
    "evaluate",
    "generator_loss",
    "load_manifest",
    "normalized_eer",
    "normalized_gr",
    "read_wav",
    "render_report",
    "sample_batch",
    "sample_soft_labels",
    "save_manifest",
    "score_trials",
    "word_accuracy",
    "word_error_rate",
    "write_wav",
]
