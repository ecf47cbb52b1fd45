"""Single-trial EEG decoding of observed robot errors.

The package bundles the full offline pipeline. Continuous EEG is preprocessed
and cut into trials, which a deep ConvNet or one of two shrinkage-LDA decoders
(on binned voltages or on filter-bank CSP features) then classifies.
Permutation statistics and input-perturbation correlation maps evaluate the
decoders.
"""

from .errors import InvalidInputError
from .signal import (
    DecodingInterval,
    Recording,
    StandardizerConfig,
    TrialSet,
    common_average_reference,
    cut_trials,
    exp_moving_standardize,
    resample,
)

__all__ = [
    "InvalidInputError",
    "DecodingInterval",
    "Recording",
    "StandardizerConfig",
    "TrialSet",
    "common_average_reference",
    "cut_trials",
    "exp_moving_standardize",
    "resample",
]

__version__ = "0.1.0"
