"""
Monte-Carlo benchmark of the decay-rate estimators on Polack-model signals.

Every trial draws its signal from ``SeedSequence(seed, spawn_key=(i_rho,
i_n, trial, 0))``, so any cell or trial can be regenerated on its own and the
sweep can be split over worker processes without changing a single bit of
the report.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from decayrate import estimators as est
from decayrate.bounds import CRB_MODES, crb_rho
from decayrate.errors import DecayRateError, ParameterError
from decayrate.model import DecayParams, SampledSignal, polack_samples

ESTIMATOR_NAMES = ("ni", "lr", "ml", "hybrid_mln")
NOISE_KNOWLEDGE = ("exact", "estimated")

REPORT_COLUMNS = ("estimator", "rho_true", "n", "bias", "variance", "mse",
                  "mse_db", "crb", "crb_db", "trials", "invalid", "failed",
                  "flagged")
_INT_COLUMNS = {"n", "trials", "invalid", "failed", "flagged"}
_FLOAT_COLUMNS = {"rho_true", "bias", "variance", "mse", "mse_db", "crb",
                  "crb_db"}


@dataclass(frozen=True)
class McConfig:
    """Monte-Carlo experiment grid.

    ``n_l_fraction`` sets the early window of hybrid MLN as a fraction of
    each ``n`` (default ``N / 5``).
    """

    rho_list: Sequence[float] = (0.008, 0.004, 0.002)
    n_list: Sequence[int] = tuple(range(100, 1001, 100))
    sigma_v2: float = 1.0
    sigma_d2: float = 0.01
    trials: int = 10_000
    seed: int = 0
    estimators: Sequence[str] = ESTIMATOR_NAMES
    noise_knowledge: str = "exact"
    crb_mode: str = "nuisance"
    n_l_fraction: float = 0.2
    refinements: int = 5

    def __post_init__(self):
        object.__setattr__(self, "rho_list", tuple(float(r) for r in self.rho_list))
        object.__setattr__(self, "n_list", tuple(int(n) for n in self.n_list))
        object.__setattr__(self, "estimators", tuple(self.estimators))
        if self.trials < 1:
            raise ParameterError(f"trials must be >= 1, got {self.trials}")
        if not self.rho_list or any(not r > 0 for r in self.rho_list):
            raise ParameterError("rho_list must be non-empty and positive")
        if not self.n_list or any(n < 3 for n in self.n_list):
            raise ParameterError("n_list must be non-empty with every n >= 3")
        if any(b <= a for a, b in zip(self.n_list, self.n_list[1:])):
            raise ParameterError("n_list must be strictly ascending")
        unknown = set(self.estimators) - set(ESTIMATOR_NAMES)
        if unknown or not self.estimators:
            raise ParameterError(
                f"unknown estimators {sorted(unknown)}; "
                f"choose from {ESTIMATOR_NAMES}")
        if self.noise_knowledge not in NOISE_KNOWLEDGE:
            raise ParameterError(
                f"noise_knowledge must be one of {NOISE_KNOWLEDGE}")
        if self.crb_mode not in CRB_MODES:
            raise ParameterError(f"crb_mode must be one of {CRB_MODES}")
        if not 0 < self.n_l_fraction <= 1:
            raise ParameterError("n_l_fraction must be in (0, 1]")
        DecayParams(self.rho_list[0], self.sigma_v2, self.sigma_d2)

    def params(self, rho):
        return DecayParams(rho, self.sigma_v2, self.sigma_d2)

    def n_l(self, n):
        return min(n, max(2, int(n * self.n_l_fraction)))


@dataclass(frozen=True)
class McRow:
    estimator: str
    rho_true: float
    n: int
    bias: float
    variance: float
    mse: float
    mse_db: float
    crb: float
    crb_db: float
    trials: int
    invalid: int = 0
    failed: int = 0
    flagged: int = 0

    def as_tuple(self):
        return tuple(getattr(self, c) for c in REPORT_COLUMNS)


@dataclass(frozen=True)
class McReport:
    rows: tuple = field(default_factory=tuple)

    def row(self, estimator, rho_true, n):
        for r in self.rows:
            if (r.estimator == estimator and r.n == n
                    and math.isclose(r.rho_true, rho_true)):
                return r
        raise KeyError((estimator, rho_true, n))

    def __len__(self):
        return len(self.rows)


def trial_seed(seed, i_rho, i_n, trial, stream=0):
    """Seed of one trial; ``stream`` 0 is the signal, 1 the noise-only
    realization used when the noise power is estimated."""
    return np.random.SeedSequence(seed, spawn_key=(i_rho, i_n, trial, stream))


def _estimate(name, signal, noise, config):
    n = len(signal)
    if name == "ni":
        return est.estimate_ni(signal, noise)
    if name == "lr":
        return est.estimate_lr(signal)
    if name == "ml":
        return est.estimate_ml(signal)
    return est.estimate_hybrid_mln(signal, noise, config.n_l(n),
                                   refinements=config.refinements)


def run_trials(config: McConfig, i_rho: int, i_n: int, start: int, stop: int):
    """Estimates for trials ``[start, stop)`` of one cell.

    Returns ``{estimator: (rho_hat, valid)}`` with NaN in ``rho_hat`` where
    the estimator raised.
    """
    rho, n = config.rho_list[i_rho], config.n_list[i_n]
    params = config.params(rho)
    m = stop - start
    out = {name: (np.full(m, np.nan), np.zeros(m, dtype=bool))
           for name in config.estimators}
    for j, trial in enumerate(range(start, stop)):
        x = polack_samples(params, n, trial_seed(config.seed, i_rho, i_n, trial))
        signal = SampledSignal(x, 1.0)
        if config.noise_knowledge == "exact":
            noise = est.NoiseEstimate(config.sigma_d2)
        else:
            rng = np.random.default_rng(
                trial_seed(config.seed, i_rho, i_n, trial, stream=1))
            d = math.sqrt(config.sigma_d2) * rng.standard_normal(n)
            noise = est.NoiseEstimate(float(np.mean(d * d)))
        for name in config.estimators:
            try:
                res = _estimate(name, signal, noise, config)
            except DecayRateError:
                continue
            out[name][0][j] = res.rho_hat
            out[name][1][j] = res.valid
    return out


def summarize(name, rho, n, rho_hat, valid, crb):
    """Bias, variance and MSE of one cell. Failed trials (NaN) are left out
    of the moments; invalid estimates stay in at their raw value."""
    ok = np.isfinite(rho_hat)
    trials = rho_hat.size
    failed = int(trials - ok.sum())
    invalid = int(np.sum(ok & ~valid))
    x = rho_hat[ok]
    if x.size:
        mean = float(np.mean(x))
        bias = mean - rho
        variance = float(np.mean((x - mean) ** 2))
        mse = variance + bias * bias
    else:
        bias = variance = mse = math.nan
    flagged = int((invalid + failed) > 0.5 * trials)
    with np.errstate(divide="ignore"):
        mse_db = float(10 * np.log10(mse)) if mse == mse else math.nan
    return McRow(name, rho, n, bias, variance, mse, mse_db, crb,
                 10 * math.log10(crb), trials, invalid, failed, flagged)


def _chunks(trials, parts):
    bounds = np.linspace(0, trials, parts + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def run_sweep(config: McConfig, workers: int = 1) -> McReport:
    """Run every (rho, N, estimator) cell of ``config``.

    ``workers > 1`` distributes trial chunks over processes; the report is
    identical for any worker count because trial seeds do not depend on the
    split and results are reassembled in trial order before aggregation.
    """
    if workers < 1:
        raise ParameterError(f"workers must be >= 1, got {workers}")
    cells = [(i, j) for i in range(len(config.rho_list))
             for j in range(len(config.n_list))]
    parts = 1 if workers == 1 else max(1, min(config.trials, 4 * workers))
    tasks = [(i, j, a, b) for i, j in cells for a, b in _chunks(config.trials, parts)]
    if workers == 1:
        results = [run_trials(config, *t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_trials, config, *t) for t in tasks]
            results = [f.result() for f in futures]

    per_cell = {}
    for (i, j, _a, _b), res in zip(tasks, results):
        per_cell.setdefault((i, j), []).append(res)
    rows = []
    for i, j in cells:
        rho, n = config.rho_list[i], config.n_list[j]
        crb = crb_rho(config.params(rho), n, config.crb_mode)
        for name in config.estimators:
            rho_hat = np.concatenate([r[name][0] for r in per_cell[(i, j)]])
            valid = np.concatenate([r[name][1] for r in per_cell[(i, j)]])
            rows.append(summarize(name, rho, n, rho_hat, valid, crb))
    return McReport(tuple(rows))


def _fmt(column, value):
    if column in _INT_COLUMNS:
        return str(int(value))
    if column in _FLOAT_COLUMNS:
        return f"{value:.9g}"
    return str(value)


def export_report(report: McReport, path) -> None:
    """Write ``report`` as CSV: header line, one row per cell, floats with 9
    significant digits."""
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(REPORT_COLUMNS)
            for row in report.rows:
                writer.writerow([_fmt(c, v) for c, v in
                                 zip(REPORT_COLUMNS, row.as_tuple())])
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc


def read_report(path) -> McReport:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != REPORT_COLUMNS:
            raise ParameterError(f"{path}: unexpected header {reader.fieldnames}")
        rows = []
        for rec in reader:
            kw = {}
            for c in REPORT_COLUMNS:
                if c in _INT_COLUMNS:
                    kw[c] = int(rec[c])
                elif c in _FLOAT_COLUMNS:
                    kw[c] = float(rec[c])
                else:
                    kw[c] = rec[c]
            rows.append(McRow(**kw))
    return McReport(tuple(rows))


def rounded(report: McReport) -> McReport:
    """The report as it reads back after :func:`export_report`."""
    rows = []
    for r in report.rows:
        kw = {c: (float(f"{v:.9g}") if c in _FLOAT_COLUMNS else v)
              for c, v in zip(REPORT_COLUMNS, r.as_tuple())}
        rows.append(McRow(**kw))
    return McReport(tuple(rows))
