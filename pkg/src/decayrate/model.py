"""
Polack decay model: signal synthesis and decay-rate/T60 conversion.

The decay rate is handled per sample (``rho_d``) everywhere inside the
package. Seconds only appear at the edges through :func:`rho_to_t60` and
:func:`t60_to_rho`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from decayrate.errors import ParameterError

SeedLike = Union[int, np.random.SeedSequence, None]

LOG10_E = math.log10(math.e)


@dataclass(frozen=True)
class DecayParams:
    """Ground-truth parameters of the discrete Polack model.

    Parameters
    ----------
    rho_d : float
        Decay rate per sample (> 0).
    sigma_v2 : float
        Variance of the reverberation process.
    sigma_d2 : float
        Variance of the stationary background noise.
    """

    rho_d: float
    sigma_v2: float = 1.0
    sigma_d2: float = 0.0

    def __post_init__(self):
        for name in ("rho_d", "sigma_v2", "sigma_d2"):
            if not math.isfinite(getattr(self, name)):
                raise ParameterError(f"{name} must be finite")
        if self.sigma_v2 < 0 or self.sigma_d2 < 0:
            raise ParameterError("variances must be non-negative")
        if self.sigma_v2 == 0 and self.sigma_d2 == 0:
            raise ParameterError("sigma_v2 and sigma_d2 cannot both be zero")
        if self.sigma_v2 > 0 and self.rho_d <= 0:
            raise ParameterError(
                f"rho_d must be > 0 for a decaying signal, got {self.rho_d}")


@dataclass(frozen=True, eq=False)
class SampledSignal:
    """Uniformly sampled real signal.

    ``notes`` carries non-fatal diagnostics picked up while the signal was
    produced (e.g. a dropped channel or a looped noise source).
    """

    samples: np.ndarray
    sample_rate_hz: float
    notes: tuple = ()

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1 or x.size == 0:
            raise ParameterError("samples must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(x)):
            raise ParameterError("samples must be finite")
        if not self.sample_rate_hz > 0:
            raise ParameterError(
                f"sample_rate_hz must be > 0, got {self.sample_rate_hz}")
        x.flags.writeable = False
        object.__setattr__(self, "samples", x)

    def __len__(self):
        return self.samples.size

    @property
    def duration_s(self):
        return self.samples.size / self.sample_rate_hz

    def segment(self, start, end):
        """Copy of samples ``[start, end)`` with the same sample rate."""
        if not 0 <= start < end <= len(self):
            raise ParameterError(
                f"segment [{start}, {end}) outside signal of length {len(self)}")
        return SampledSignal(self.samples[start:end].copy(),
                             self.sample_rate_hz)


def _streams(seed: SeedLike):
    """Two independent generators: one for reverberation, one for noise."""
    ss = seed if isinstance(seed, np.random.SeedSequence) \
        else np.random.SeedSequence(seed)
    ss_v, ss_d = ss.spawn(2)
    return np.random.default_rng(ss_v), np.random.default_rng(ss_d)


def polack_samples(params: DecayParams, n_samples: int,
                   seed: SeedLike = None) -> np.ndarray:
    """Array version of :func:`synth_polack` (no wrapping, no validation
    beyond ``n_samples``)."""
    if n_samples < 1:
        raise ParameterError(f"n_samples must be >= 1, got {n_samples}")
    rng_v, rng_d = _streams(seed)
    n = np.arange(n_samples)
    v = rng_v.standard_normal(n_samples)
    d = rng_d.standard_normal(n_samples)
    x = math.sqrt(params.sigma_v2) * v * np.exp(-params.rho_d * n)
    if params.sigma_d2 > 0:
        x += math.sqrt(params.sigma_d2) * d
    return x


def synth_polack(params: DecayParams, n_samples: int, seed: SeedLike = None,
                 sample_rate_hz: float = 8000.0) -> SampledSignal:
    """Draw ``f(n) = v(n) exp(-n rho_d) + d(n)`` with Gaussian ``v`` and ``d``.

    ``v`` and ``d`` come from two generators spawned from ``seed``, so
    changing one variance never changes the draw of the other process.

    Parameters
    ----------
    params : DecayParams
        Model parameters.
    n_samples : int
        Signal length (>= 1).
    seed : int or numpy.random.SeedSequence, optional
        Seed; the output is a pure function of ``(params, n_samples, seed)``.
    sample_rate_hz : float, optional
        Sample rate attached to the result. Default 8 kHz.

    Returns
    -------
    SampledSignal
    """
    return SampledSignal(polack_samples(params, n_samples, seed),
                         sample_rate_hz)


def rho_to_t60(rho_d: float, sample_rate_hz: float) -> float:
    """Reverberation time in seconds for a per-sample decay rate.

    ``T60 = 3 / (rho log10(e))`` with ``rho = rho_d * fs`` in 1/s.
    """
    if not rho_d > 0 or not sample_rate_hz > 0:
        raise ParameterError(
            f"rho_d and sample_rate_hz must be > 0, got {rho_d}, "
            f"{sample_rate_hz}")
    return 3.0 / (rho_d * sample_rate_hz * LOG10_E)


def t60_to_rho(t60: float, sample_rate_hz: float) -> float:
    """Per-sample decay rate for a reverberation time in seconds."""
    if not t60 > 0 or not sample_rate_hz > 0:
        raise ParameterError(
            f"t60 and sample_rate_hz must be > 0, got {t60}, {sample_rate_hz}")
    return 3.0 / (t60 * sample_rate_hz * LOG10_E)


def synth_rir(t60: float, sample_rate_hz: float, length: int,
              noise_floor_db: float = -np.inf,
              seed: SeedLike = None) -> SampledSignal:
    """Synthetic room impulse response following the Polack model.

    The reverberant part has unit initial power; ``noise_floor_db`` sets the
    variance of the additive stationary noise relative to that power
    (``-inf`` for none).
    """
    if length < 1:
        raise ParameterError(f"length must be >= 1, got {length}")
    if np.isnan(noise_floor_db) or noise_floor_db == np.inf:
        raise ParameterError("noise_floor_db must be finite or -inf")
    rho_d = t60_to_rho(t60, sample_rate_hz)
    sigma_d2 = 0.0 if noise_floor_db == -np.inf else 10.0 ** (noise_floor_db / 10)
    params = DecayParams(rho_d, 1.0, sigma_d2)
    return synth_polack(params, length, seed, sample_rate_hz)
