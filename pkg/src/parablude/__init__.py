"""Microphone-based contact detection and augmented-sports match engine.

The package is organized as a signal chain plus a game layer:

- :mod:`parablude.audio` -- PCM clips, WAV I/O, synthetic signal generation
- :mod:`parablude.dsp` -- low-pass front end, framing, log spectrograms
- :mod:`parablude.nn` -- depthwise-conv classifier with exact gradients
- :mod:`parablude.corpus` -- synthetic labeled corpora for training/tests
- :mod:`parablude.train` -- dataset splits, SGD loop, checkpoints
- :mod:`parablude.evaluate` -- confusion matrices and accuracy reports
- :mod:`parablude.detect` -- streaming sliding-window hit detection
- :mod:`parablude.game` -- HP/ATK/DEF match state with replayable logs
- :mod:`parablude.protocol` -- newline-delimited JSON wire messages
- :mod:`parablude.serve` -- TCP + WebSocket match service
- :mod:`parablude.cli` -- operator entry points
"""

from parablude.audio import (
    AudioClip,
    SynthSpec,
    downmix_mono,
    read_wav,
    synthesize,
    write_wav,
)
from parablude.corpus import CorpusSpec, generate_corpus
from parablude.detect import Detector, DetectorConfig, HitEvent, classify_window, detect_stream
from parablude.dsp import (
    BiquadCoeffs,
    FeatureConfig,
    Spectrogram,
    SpectrogramConfig,
    design_lowpass,
    features,
    filter_apply,
    spectrogram,
)
from parablude.evaluate import (
    ConfusionMatrix,
    confusion,
    merge_classes,
    overall_accuracy,
    per_class_accuracy,
    report,
)
from parablude.game import (
    Match,
    MatchConfig,
    MatchError,
    apply_event,
    damage,
    replay,
)
from parablude.nn import ModelParams, init_params, loss_and_gradients, predict_proba
from parablude.protocol import ProtocolError, WireMessage, decode, encode
from parablude.serve import MatchService, ServiceConfig, run_service
from parablude.train import (
    Checkpoint,
    DatasetManifest,
    LabelSet,
    TrainConfig,
    load_checkpoint,
    read_manifest,
    save_checkpoint,
    split_dataset,
    train_model,
    write_manifest,
)

__version__ = "0.1.0"

__all__ = [
    "AudioClip",
    "BiquadCoeffs",
    "Checkpoint",
    "ConfusionMatrix",
    "CorpusSpec",
    "DatasetManifest",
    "Detector",
    "DetectorConfig",
    "FeatureConfig",
    "HitEvent",
    "LabelSet",
    "Match",
    "MatchConfig",
    "MatchError",
    "MatchService",
    "ModelParams",
    "ProtocolError",
    "ServiceConfig",
    "Spectrogram",
    "SpectrogramConfig",
    "SynthSpec",
    "TrainConfig",
    "WireMessage",
    "apply_event",
    "classify_window",
    "confusion",
    "damage",
    "decode",
    "design_lowpass",
    "detect_stream",
    "downmix_mono",
    "encode",
    "features",
    "filter_apply",
    "generate_corpus",
    "init_params",
    "load_checkpoint",
    "loss_and_gradients",
    "merge_classes",
    "overall_accuracy",
    "per_class_accuracy",
    "predict_proba",
    "read_manifest",
    "read_wav",
    "replay",
    "report",
    "run_service",
    "save_checkpoint",
    "spectrogram",
    "split_dataset",
    "synthesize",
    "train_model",
    "write_manifest",
    "write_wav",
]
