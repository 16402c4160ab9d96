"""
File-based blind T60 experiment: reverberant excitation plus stationary
noise, decay segments listed in a manifest, per-segment blind estimates
summarized against the Schroeder T60 of each impulse response.

Manifest format (UTF-8 text)::

    # start end label      sample indices, end exclusive
    4000 5600 decay01
    0 3600 silence

Segments labelled ``silence`` are not estimated; they mark noise-only
regions used for the noise-power estimate.
"""

from __future__ import annotations

import csv
import math
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import signal as sps
from scipy.io import wavfile

from decayrate import estimators as est
from decayrate.errors import DecayRateError, ParameterError, WavFormatError
from decayrate.model import SampledSignal, synth_rir

SILENCE_LABEL = "silence"
BLIND_ESTIMATORS = ("ni", "hybrid_mln", "ml", "lr")

_FORMAT_PCM = 0x0001
_FORMAT_FLOAT = 0x0003
_FORMAT_EXTENSIBLE = 0xFFFE


# --------------------------------------------------------------------------
# WAV I/O
# --------------------------------------------------------------------------

def _check_fmt_chunk(path):
    """Reject encodings other than linear PCM / IEEE float, naming the
    offending chunk."""
    with open(path, "rb") as fh:
        head = fh.read(12)
        if len(head) < 12 or head[:4] not in (b"RIFF", b"RF64") \
                or head[8:12] != b"WAVE":
            raise WavFormatError(f"{path}: missing 'RIFF'/'WAVE' header chunk")
        while True:
            hdr = fh.read(8)
            if len(hdr) < 8:
                raise WavFormatError(f"{path}: no 'fmt ' chunk found")
            cid, size = hdr[:4], struct.unpack("<I", hdr[4:])[0]
            if cid != b"fmt ":
                fh.seek(size + (size & 1), os.SEEK_CUR)
                continue
            body = fh.read(size)
            if len(body) < 16:
                raise WavFormatError(f"{path}: truncated 'fmt ' chunk")
            tag, _ch, _rate, _bps, _align, bits = struct.unpack("<HHIIHH", body[:16])
            if tag == _FORMAT_EXTENSIBLE and len(body) >= 26:
                tag = struct.unpack("<H", body[24:26])[0]
            if tag == _FORMAT_PCM and bits in (8, 16, 24, 32):
                return
            if tag == _FORMAT_FLOAT and bits in (32, 64):
                return
            raise WavFormatError(
                f"{path}: unsupported encoding in 'fmt ' chunk "
                f"(format tag 0x{tag:04x}, {bits} bits)")


def load_wav(path) -> SampledSignal:
    """Read a linear-PCM or float WAV file, scaled to [-1, 1].

    Integer formats are divided by their full scale. For multi-channel files
    only the first channel is kept and a note is attached to the result.
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no such file: {path}")
    _check_fmt_chunk(path)
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        raise WavFormatError(f"{path}: {exc}") from exc
    notes = ()
    if data.ndim == 2:
        notes = (f"multi-channel file ({data.shape[1]} channels); "
                 f"using channel 0",)
        data = data[:, 0]
    if data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif np.issubdtype(data.dtype, np.integer):
        x = data.astype(np.float64) / float(2 ** (8 * data.dtype.itemsize - 1))
    else:
        x = data.astype(np.float64)
    return SampledSignal(x, float(rate), notes)


def write_wav(path, signal: SampledSignal) -> None:
    """Write ``signal`` as 16-bit PCM; values outside [-1, 1) are clipped."""
    q = np.clip(np.round(signal.samples * 32768.0), -32768, 32767)
    rate = int(round(signal.sample_rate_hz))
    wavfile.write(os.fspath(path), rate, q.astype(np.int16))


# --------------------------------------------------------------------------
# Signal operations
# --------------------------------------------------------------------------

def convolve(dry: SampledSignal, rir: SampledSignal) -> SampledSignal:
    """Full linear convolution, ``len(dry) + len(rir) - 1`` samples."""
    if dry.sample_rate_hz != rir.sample_rate_hz:
        raise ParameterError(
            f"sample rate mismatch: {dry.sample_rate_hz} vs "
            f"{rir.sample_rate_hz}")
    y = sps.convolve(dry.samples, rir.samples, mode="full")
    return SampledSignal(y, dry.sample_rate_hz)


def _mean_power(x):
    return float(np.mean(x * x))


def noise_gain(clean: SampledSignal, noise: SampledSignal,
               snr_db: float) -> float:
    """Amplitude factor putting ``noise`` ``snr_db`` below ``clean``."""
    p_clean = _mean_power(clean.samples)
    if p_clean == 0.0:
        raise ParameterError("clean signal is silent; SNR is undefined")
    p_noise = _mean_power(_fit_length(noise.samples, len(clean)))
    if p_noise == 0.0:
        raise ParameterError("noise signal is silent")
    return math.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))


def _fit_length(x, n):
    return x[:n] if x.size >= n else np.resize(x, n)


def mix_noise(clean: SampledSignal, noise: SampledSignal,
              snr_db: float) -> SampledSignal:
    """Add ``noise`` to ``clean`` at the given SNR over the full extent.

    A noise signal shorter than ``clean`` is looped; the result carries a
    note when that happens.
    """
    if clean.sample_rate_hz != noise.sample_rate_hz:
        raise ParameterError("sample rate mismatch between clean and noise")
    gain = noise_gain(clean, noise, snr_db)
    notes = ()
    if len(noise) < len(clean):
        notes = (f"noise looped: {len(noise)} samples stretched to "
                 f"{len(clean)}",)
    n = _fit_length(noise.samples, len(clean))
    return SampledSignal(clean.samples + gain * n, clean.sample_rate_hz, notes)


# --------------------------------------------------------------------------
# Segment manifest
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Segment:
    start: int
    end: int
    label: str


@dataclass(frozen=True)
class SegmentManifest:
    entries: tuple = ()

    def validate(self, length: int) -> None:
        for s in self.entries:
            if not 0 <= s.start < s.end <= length:
                raise ParameterError(
                    f"segment {s.label!r} [{s.start}, {s.end}) does not fit a "
                    f"signal of {length} samples")

    @property
    def decay_segments(self):
        return tuple(s for s in self.entries if s.label != SILENCE_LABEL)

    @property
    def silence_segments(self):
        return tuple(s for s in self.entries if s.label == SILENCE_LABEL)


def parse_manifest(text: str) -> SegmentManifest:
    entries = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split(None, 2)
        if len(parts) < 2:
            raise ParameterError(f"manifest line {lineno}: expected 'start end label'")
        try:
            start, end = int(parts[0]), int(parts[1])
        except ValueError:
            raise ParameterError(
                f"manifest line {lineno}: start/end must be integers") from None
        label = parts[2].strip() if len(parts) > 2 else f"seg{len(entries) + 1:02d}"
        if not 0 <= start < end:
            raise ParameterError(f"manifest line {lineno}: need 0 <= start < end")
        entries.append(Segment(start, end, label))
    return SegmentManifest(tuple(entries))


def read_manifest(path) -> SegmentManifest:
    with open(path, encoding="utf-8") as fh:
        return parse_manifest(fh.read())


def write_manifest(path, manifest: SegmentManifest) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# start end label (sample indices, end exclusive)\n")
        for s in manifest.entries:
            fh.write(f"{s.start} {s.end} {s.label}\n")


# --------------------------------------------------------------------------
# Experiment
# --------------------------------------------------------------------------

@dataclass
class ExperimentRow:
    rir_id: str
    t60_ground_truth_s: Optional[float]
    n_segments: int
    median_t60_s: dict = field(default_factory=dict)
    error_variance: dict = field(default_factory=dict)
    n_valid: dict = field(default_factory=dict)
    n_invalid: dict = field(default_factory=dict)
    sigma_d2_hat: Optional[float] = None
    error: Optional[str] = None

    @property
    def flagged(self):
        return self.error is not None or self.n_segments == 0


@dataclass(frozen=True)
class SegmentRecord:
    rir_id: str
    label: str
    start: int
    end: int
    estimator: str
    rho_hat: float
    t60_s: Optional[float]
    valid: bool
    error: str = ""


def estimate_segment(name: str, segment: SampledSignal,
                     noise: est.NoiseEstimate) -> est.EstimateResult:
    """Run one blind estimator by name."""
    if name == "ni":
        return est.estimate_ni(segment, noise)
    if name == "hybrid_mln":
        return est.estimate_hybrid_mln(segment, noise)
    if name == "ml":
        return est.estimate_ml(segment)
    if name == "lr":
        return est.estimate_lr(segment)
    raise ParameterError(f"unknown blind estimator {name!r}")


def noise_power(mixed: SampledSignal, manifest: SegmentManifest) -> est.NoiseEstimate:
    """Mean power over the manifest's silence segments, else over the
    trailing 10 % of the signal."""
    silent = manifest.silence_segments
    if not silent:
        return est.estimate_noise_floor(mixed, 0.1)
    x = np.concatenate([mixed.samples[s.start:s.end] for s in silent])
    return est.NoiseEstimate(float(np.mean(x * x)))


def _rir_id(path):
    return os.path.splitext(os.path.basename(os.fspath(path)))[0]


def _load_noise(noise_path, length, rate, noise_seed):
    if noise_path is not None:
        return load_wav(noise_path)
    rng = np.random.default_rng(noise_seed)
    return SampledSignal(rng.standard_normal(length), rate)


def process_rir(dry: SampledSignal, rir_path, manifest: SegmentManifest,
                snr_db: float, estimators: Sequence[str], noise_path=None,
                noise_seed: int = 0, fit_hi_db: float = -5.0,
                fit_lo_db: float = -25.0):
    """One row of the experiment plus its per-segment records.

    Errors are caught and attached to the row instead of propagating.
    """
    rir_id = _rir_id(rir_path)
    row = ExperimentRow(rir_id, None, len(manifest.decay_segments))
    records = []
    try:
        rir = load_wav(rir_path)
        row.t60_ground_truth_s = est.estimate_schroeder(
            rir, fit_hi_db, fit_lo_db).t60_s
        wet = convolve(dry, rir)
        noise = _load_noise(noise_path, len(wet), wet.sample_rate_hz, noise_seed)
        mixed = mix_noise(wet, noise, snr_db)
        noise_est = noise_power(mixed, manifest)
        row.sigma_d2_hat = noise_est.sigma_d2_hat
    except (DecayRateError, OSError) as exc:
        row.error = f"{type(exc).__name__}: {exc}"
        return row, records

    truth = row.t60_ground_truth_s
    for name in estimators:
        t60s = []
        invalid = 0
        for seg in manifest.decay_segments:
            try:
                res = estimate_segment(name, mixed.segment(seg.start, seg.end),
                                       noise_est)
            except DecayRateError as exc:
                invalid += 1
                records.append(SegmentRecord(rir_id, seg.label, seg.start,
                                             seg.end, name, math.nan, None,
                                             False, str(exc)))
                continue
            records.append(SegmentRecord(rir_id, seg.label, seg.start, seg.end,
                                         name, res.rho_hat, res.t60_s, res.valid))
            if res.valid:
                t60s.append(res.t60_s)
            else:
                invalid += 1
        row.n_valid[name] = len(t60s)
        row.n_invalid[name] = invalid
        if t60s:
            t = np.array(t60s)
            row.median_t60_s[name] = float(np.median(t))
            row.error_variance[name] = float(np.var(t - truth))
    return row, records


def run_experiment(dry_path, rir_paths: Sequence, manifest: SegmentManifest,
                   snr_db: float = 12.0, noise_path=None, noise_seed: int = 0,
                   estimators: Sequence[str] = BLIND_ESTIMATORS,
                   fit_hi_db: float = -5.0, fit_lo_db: float = -25.0,
                   workers: int = 1):
    """Run the blind-estimation experiment for every impulse response.

    Parameters
    ----------
    dry_path : path
        Dry excitation (speech or interrupted noise) WAV.
    rir_paths : sequence of paths
        Impulse responses; the file stem is the row id.
    manifest : SegmentManifest
        Decay segments and optional silence segments, in samples of the
        reverberant signal. Must fit inside the dry signal.
    snr_db : float
        Reverberant-signal to noise ratio over the full extent.
    noise_path : path, optional
        Noise WAV. When omitted, white Gaussian noise drawn from
        ``noise_seed`` is used.
    estimators : sequence of str
        Subset of :data:`BLIND_ESTIMATORS`.
    workers : int
        Process count; rows come back in ``rir_paths`` order regardless.

    Returns
    -------
    rows : list of ExperimentRow
    records : list of SegmentRecord
    """
    unknown = set(estimators) - set(BLIND_ESTIMATORS)
    if unknown:
        raise ParameterError(f"unknown blind estimators {sorted(unknown)}")
    dry = load_wav(dry_path)
    manifest.validate(len(dry))
    args = [(dry, p, manifest, snr_db, tuple(estimators), noise_path,
             noise_seed, fit_hi_db, fit_lo_db) for p in rir_paths]
    if workers > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(process_rir, *zip(*args)))
    else:
        out = [process_rir(*a) for a in args]
    rows = [r for r, _ in out]
    records = [rec for _, recs in out for rec in recs]
    return rows, records


def _f(x):
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) \
        else f"{x:.9g}"


def export_rows(rows: Sequence[ExperimentRow], path,
                estimators: Sequence[str] = BLIND_ESTIMATORS) -> None:
    """Wide CSV: one line per impulse response."""
    header = ["rir_id", "t60_ground_truth_s", "n_segments", "sigma_d2_hat"]
    for name in estimators:
        header += [f"{name}_median_t60_s", f"{name}_error_variance",
                   f"{name}_n_valid", f"{name}_n_invalid"]
    header.append("error")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            line = [r.rir_id, _f(r.t60_ground_truth_s), r.n_segments,
                    _f(r.sigma_d2_hat)]
            for name in estimators:
                line += [_f(r.median_t60_s.get(name)),
                         _f(r.error_variance.get(name)),
                         r.n_valid.get(name, 0), r.n_invalid.get(name, 0)]
            line.append(r.error or "")
            w.writerow(line)


def export_segments(records: Sequence[SegmentRecord], path) -> None:
    """Long CSV: one line per (impulse response, segment, estimator)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rir_id", "label", "start", "end", "estimator", "rho_hat",
                    "t60_s", "valid", "error"])
        for r in records:
            w.writerow([r.rir_id, r.label, r.start, r.end, r.estimator,
                        _f(r.rho_hat), _f(r.t60_s), int(r.valid), r.error])


# --------------------------------------------------------------------------
# Synthetic fixture
# --------------------------------------------------------------------------

def make_burst_fixture(out_dir, t60s=(0.2, 0.4, 0.6), sample_rate_hz=8000,
                       n_segments=20, seed=2024, lead_s=0.5,
                       burst_s=(0.2, 0.3), gap_s=0.55, segment_s=(0.12, 0.3),
                       rir_length_s=1.2, rir_noise_floor_db=-80.0):
    """Write an interrupted-noise excitation, synthetic RIRs and a manifest.

    Each burst is followed by a gap; one decay segment starts where the
    burst stops. The lead-in before the first burst is declared as
    ``silence``.

    Returns
    -------
    dict with keys ``dry``, ``rirs`` (list), ``manifest``, ``noise_seed``.
    """
    os.makedirs(out_dir, exist_ok=True)
    fs = int(sample_rate_hz)
    ss = np.random.SeedSequence(seed)
    s_layout, s_dry, s_noise, *s_rirs = ss.spawn(3 + len(t60s))
    layout = np.random.default_rng(s_layout)

    lead = int(lead_s * fs)
    gap = int(gap_s * fs)
    pieces = [np.zeros(lead)]
    entries = [Segment(0, lead - fs // 50, SILENCE_LABEL)]
    pos = lead
    dry_rng = np.random.default_rng(s_dry)
    for k in range(n_segments):
        blen = int(layout.uniform(*burst_s) * fs)
        burst = 0.25 * dry_rng.standard_normal(blen)
        pieces += [burst, np.zeros(gap)]
        end = pos + blen
        slen = int(layout.uniform(*segment_s) * fs)
        entries.append(Segment(end, end + slen, f"decay{k + 1:02d}"))
        pos = end + gap
    dry = SampledSignal(np.concatenate(pieces), fs)

    paths = {"dry": os.path.join(out_dir, "dry.wav"), "rirs": [],
             "manifest": os.path.join(out_dir, "manifest.txt"),
             "noise_seed": int(s_noise.generate_state(1)[0])}
    write_wav(paths["dry"], dry)
    for t60, s in zip(t60s, s_rirs):
        h = synth_rir(t60, fs, int(rir_length_s * fs), rir_noise_floor_db, s)
        h = SampledSignal(0.9 * h.samples / np.max(np.abs(h.samples)), fs)
        p = os.path.join(out_dir, f"rir_t60_{int(round(t60 * 1000)):04d}ms.wav")
        write_wav(p, h)
        paths["rirs"].append(p)
    write_manifest(paths["manifest"], SegmentManifest(tuple(entries)))
    return paths
