"""Noise-robust exponential decay-rate estimation for reverberation time."""

from decayrate.errors import (
    DecayRateError,
    DegenerateInputError,
    FitRangeError,
    ParameterError,
    WavFormatError,
)
from decayrate.model import (
    DecayParams,
    SampledSignal,
    rho_to_t60,
    synth_polack,
    synth_rir,
    t60_to_rho,
)
from decayrate.estimators import (
    EstimateResult,
    NoiseEstimate,
    OpCounter,
    estimate_hybrid_mln,
    estimate_lr,
    estimate_ml,
    estimate_ni,
    estimate_noise_floor,
    estimate_schroeder,
)
from decayrate.bounds import FisherInfo, crb_rho, fisher_info

__version__ = "0.1.0"

__all__ = [
    "DecayRateError",
    "DegenerateInputError",
    "FitRangeError",
    "ParameterError",
    "WavFormatError",
    "DecayParams",
    "SampledSignal",
    "rho_to_t60",
    "t60_to_rho",
    "synth_polack",
    "synth_rir",
    "EstimateResult",
    "NoiseEstimate",
    "OpCounter",
    "estimate_ni",
    "estimate_lr",
    "estimate_ml",
    "estimate_hybrid_mln",
    "estimate_schroeder",
    "estimate_noise_floor",
    "FisherInfo",
    "fisher_info",
    "crb_rho",
]
