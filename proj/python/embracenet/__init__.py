"""EmbraceNet multimodal fusion: Python bindings to the C++ core."""

from ._embracenet import (
    ConfigError,
    CountSketchPlan,
    DataError,
    EmbraceError,
    FusionModel,
    ModalityBatch,
    SyntheticSpec,
    UnrecoverableInputError,
    UsageError,
    adjust_probabilities,
    apply_missing_modalities,
    calibrate_probabilities,
    cmp_fuse,
    count_sketch,
    embrace_expected,
    enumerate_combinations,
    fft,
    generate_synthetic,
    sample_selection,
    train_config,
    weighted_f1,
)

__version__ = "0.1.0"
