"""
Decay-rate estimators mapping a signal segment to ``rho_hat`` per sample.

* :func:`estimate_ni` -- noise-compensated successive integration, solved as
  a 3x3 least-squares system.
* :func:`estimate_lr` -- straight line through ``ln f^2``.
* :func:`estimate_ml` -- maximum likelihood without a noise term.
* :func:`estimate_hybrid_mln` -- maximum likelihood with known noise power and
  the reverberant power taken from an early window.
* :func:`estimate_schroeder` -- backward-integrated energy decay curve, for
  impulse responses (non-blind ground truth).

All estimators use the unit-spaced time axis ``t_n = n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from decayrate.errors import DegenerateInputError, FitRangeError, ParameterError
from decayrate.model import LOG10_E, SampledSignal, rho_to_t60

RHO_MIN = 1e-4
RHO_MAX = 0.05
SEARCH_TOL = 1e-6
DET_RTOL = 1e-12
_INV_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class OpCounter:
    """Per-call tally of floating-point multiplications and divisions.

    Pass an instance through the ``ops`` argument of an estimator; the
    estimator adds the number of products it performs. Exponentials and
    logarithms are not counted.
    """

    def __init__(self):
        self.mul = 0

    def __call__(self, k=1):
        self.mul += int(k)

    def __repr__(self):
        return f"OpCounter(mul={self.mul})"


def _noop(k=1):
    pass


@dataclass(frozen=True)
class NoiseEstimate:
    """Estimated power of the stationary background noise."""

    sigma_d2_hat: float

    def __post_init__(self):
        if not (math.isfinite(self.sigma_d2_hat) and self.sigma_d2_hat >= 0):
            raise ParameterError(
                f"noise estimate must be finite and >= 0, got "
                f"{self.sigma_d2_hat}")


@dataclass(frozen=True)
class EstimateResult:
    """Output of every estimator.

    ``t60_s`` is ``None`` whenever ``valid`` is false; ``rho_hat`` is always
    the raw estimate so that callers can still aggregate it.
    """

    method: str
    rho_hat: float
    t60_s: Optional[float]
    valid: bool
    diagnostics: dict = field(default_factory=dict)


def _result(method, rho_hat, sample_rate_hz, valid, **diagnostics):
    valid = bool(valid and math.isfinite(rho_hat) and rho_hat > 0)
    t60 = rho_to_t60(rho_hat, sample_rate_hz) if valid else None
    return EstimateResult(method, float(rho_hat), t60, valid, diagnostics)


def _power(signal, ops):
    if not isinstance(signal, SampledSignal):
        raise ParameterError("expected a SampledSignal")
    x = signal.samples
    ops(x.size)
    return x * x


def _solve_gram(A, b, ops=_noop):
    """Solve a small symmetric positive semidefinite system ``A x = b``.

    Gaussian elimination with partial pivoting. The system is declared
    degenerate when ``|det A|`` falls below ``DET_RTOL`` times the product of
    the diagonal, which bounds ``det A`` from above for a Gram matrix.
    """
    A = [list(map(float, row)) for row in A]
    b = [float(v) for v in b]
    m = len(b)
    scale = 1.0
    for i in range(m):
        scale *= A[i][i]
    ops(m - 1)
    det = 1.0
    for k in range(m):
        piv = max(range(k, m), key=lambda i: abs(A[i][k]))
        if piv != k:
            A[k], A[piv] = A[piv], A[k]
            b[k], b[piv] = b[piv], b[k]
            det = -det
        if A[k][k] == 0.0:
            raise DegenerateInputError("singular normal equations")
        for i in range(k + 1, m):
            f = A[i][k] / A[k][k]
            for j in range(k + 1, m):
                A[i][j] -= f * A[k][j]
            b[i] -= f * b[k]
            ops(m - k + 1)
        det *= A[k][k]
    ops(m + 1)
    if not (scale > 0 and abs(det) >= DET_RTOL * scale):
        raise DegenerateInputError(
            f"normal equations are numerically singular "
            f"(|det|={abs(det):.3g}, diagonal product={scale:.3g})")
    x = [0.0] * m
    for i in range(m - 1, -1, -1):
        acc = b[i]
        for j in range(i + 1, m):
            acc -= A[i][j] * x[j]
        x[i] = acc / A[i][i]
        ops(m - i)
    return x


def _cumtrapz2(y):
    """Twice the cumulative trapezoid integral of ``y``; first element 0.

    Uses additions only, which keeps the multiply count of the caller at
    what the squaring and inner products need.
    """
    out = np.empty_like(y)
    out[0] = 0.0
    np.cumsum(y[:-1] + y[1:], out=out[1:])
    return out


def estimate_ni(signal: SampledSignal, noise: NoiseEstimate = NoiseEstimate(0.0),
                intercept: bool = True, ops=None) -> EstimateResult:
    """Noise-compensated successive-integration decay-rate estimator.

    With ``g(n)`` the cumulative integral of ``f^2`` minus ``n * sigma_d2_hat``
    and ``g_I(n)`` the cumulative integral of ``g`` (both trapezoid rule),
    fits ``g ~ a0 t + a1 g_I + a2`` by least squares and returns
    ``rho_hat = -a1 / 2``.

    Parameters
    ----------
    signal : SampledSignal
        Decaying segment, at least 3 samples.
    noise : NoiseEstimate
        Known or separately estimated noise power.
    intercept : bool, optional
        Fit the constant term ``a2``. Default True; False fits the
        two-parameter model.
    ops : OpCounter, optional
        Receives the number of multiplications performed.

    Returns
    -------
    EstimateResult
        ``valid`` is False when the fitted ``a1`` is not negative.

    Raises
    ------
    ParameterError
        Fewer than 3 samples.
    DegenerateInputError
        The normal equations are singular (e.g. an all-zero signal).

    Notes
    -----
    The sums are kept in scaled form, ``u = 2 g`` and ``w = 4 g_I``, so the
    trapezoid halvings cost nothing. Only ``f^2`` and three inner products
    need per-sample multiplies; ``<t, w>`` comes from a running sum. For
    a pure exponential ``f^2 = exp(-2 rho n)`` the fit is exact and returns
    ``tanh(rho)``.
    """
    ops = ops or _noop
    N = len(signal)
    if N < 3:
        raise ParameterError(f"NI needs at least 3 samples, got {N}")
    p = _power(signal, ops)

    u = _cumtrapz2(p)
    if noise.sigma_d2_hat:
        step = noise.sigma_d2_hat + noise.sigma_d2_hat
        ramp = np.empty(N)
        ramp[0] = 0.0
        ramp[1:] = step
        u -= np.cumsum(ramp)
    w = _cumtrapz2(u)
    t = np.arange(N, dtype=np.float64)

    s_t1 = N * (N - 1) / 2
    s_tt = s_t1 * (N + N - 1) / 3
    ops(4)
    s_w1 = float(np.sum(w))
    s_u1 = float(np.sum(u))
    s_tw = float(np.sum(s_w1 - np.cumsum(w)))
    s_ww = float(w @ w)
    s_wu = float(w @ u)
    s_tu = float(t @ u)
    ops(3 * N)

    if intercept:
        A = [[s_tt, s_tw, s_t1], [s_tw, s_ww, s_w1], [s_t1, s_w1, N]]
        b = [s_tu, s_wu, s_u1]
    else:
        A = [[s_tt, s_tw], [s_tw, s_ww]]
        b = [s_tu, s_wu]
    beta = _solve_gram(A, b, ops)

    # u = 2 a0 t + (a1 / 2) w + 2 a2
    alpha1 = beta[1] + beta[1]
    rho_hat = -beta[1]
    diag = {"alpha0": beta[0] * 0.5, "alpha1": alpha1}
    ops(1)
    if intercept:
        diag["alpha2"] = beta[2] * 0.5
        ops(1)
    return _result("ni", rho_hat, signal.sample_rate_hz, alpha1 < 0, **diag)


def estimate_lr(signal: SampledSignal,
                floor_eps: float = np.finfo(np.float64).tiny) -> EstimateResult:
    """Least-squares line through ``(n, ln(f^2 + floor_eps))``.

    ``floor_eps`` only guards against ``log(0)``; it is not a noise
    compensation.
    """
    N = len(signal)
    if N < 2:
        raise ParameterError(f"LR needs at least 2 samples, got {N}")
    if not floor_eps >= 0:
        raise ParameterError("floor_eps must be >= 0")
    with np.errstate(divide="ignore"):
        y = np.log(_power(signal, _noop) + floor_eps)
    if not np.all(np.isfinite(y)):
        raise DegenerateInputError("zero power sample with floor_eps = 0")
    t = np.arange(N, dtype=np.float64)
    tc = t - t.mean()
    slope = float(tc @ (y - y.mean())) / float(tc @ tc)
    intercept = float(y.mean()) - slope * float(t.mean())
    return _result("lr", -slope / 2, signal.sample_rate_hz, slope < 0,
                   slope=slope, intercept=intercept)


def golden_section_max(fun, lo, hi, tol=SEARCH_TOL):
    """Maximize a unimodal scalar function on ``[lo, hi]``.

    Returns ``(x, f(x), n_evaluations)``; the final bracket is narrower
    than ``tol``.
    """
    a, b = float(lo), float(hi)
    c = b - _INV_GOLDEN * (b - a)
    d = a + _INV_GOLDEN * (b - a)
    fc, fd = fun(c), fun(d)
    n_eval = 2
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INV_GOLDEN * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_GOLDEN * (b - a)
            fd = fun(d)
        n_eval += 1
    if fc >= fd:
        return c, fc, n_eval
    return d, fd, n_eval


def _logsumexp(z):
    m = np.max(z)
    if not np.isfinite(m):
        return m
    return m + math.log(float(np.sum(np.exp(z - m))))


def ml_concentrated_loglik(power: np.ndarray, rho: float, ops=_noop) -> float:
    """Noise-free Gaussian log-likelihood with the reverberant power
    profiled out: ``sigma_v2(rho) = mean(f^2 exp(2 n rho))``."""
    N = power.size
    n = np.arange(N, dtype=np.float64)
    with np.errstate(divide="ignore"):
        logp = np.log(power)
    two_rho = rho + rho
    ops(N + 3)
    log_sv2 = _logsumexp(logp + two_rho * n) - math.log(N)
    return -0.5 * (N * math.log(2 * math.pi) + N * log_sv2
                   - two_rho * (N * (N - 1) / 2) + N)


def estimate_ml(signal: SampledSignal, rho_min: float = RHO_MIN,
                rho_max: float = RHO_MAX, tol: float = SEARCH_TOL,
                ops=None) -> EstimateResult:
    """Maximum-likelihood decay rate for the noise-free Gaussian model.

    The reverberant power is concentrated out, which leaves a scalar search
    over ``rho`` in ``[rho_min, rho_max]`` (golden section to ``tol``).
    The concentrated likelihood is unimodal in ``rho``. An optimum pinned
    to either end of the bracket is reported as invalid.
    """
    ops = ops or _noop
    N = len(signal)
    if N < 2:
        raise ParameterError(f"ML needs at least 2 samples, got {N}")
    if not 0 < rho_min < rho_max:
        raise ParameterError("need 0 < rho_min < rho_max")
    p = _power(signal, ops)
    if not np.any(p > 0):
        raise DegenerateInputError("ML needs a non-zero signal")
    n = np.arange(N, dtype=np.float64)
    with np.errstate(divide="ignore"):
        logp = np.log(p)
    c_lin = N * (N - 1) / 2
    log_2pi_n = N * math.log(2 * math.pi)

    def loglik(rho):
        ops(N + 3)
        log_sv2 = _logsumexp(logp + (rho + rho) * n) - math.log(N)
        return -0.5 * (log_2pi_n + N * log_sv2 - (rho + rho) * c_lin + N)

    rho_hat, ll, n_eval = golden_section_max(loglik, rho_min, rho_max, tol)
    interior = rho_min + 2 * tol < rho_hat < rho_max - 2 * tol
    sv2 = math.exp(_logsumexp(logp + 2 * rho_hat * n)) / N
    return _result("ml", rho_hat, signal.sample_rate_hz, interior,
                   sigma_v2_hat=sv2, loglik=ll, evaluations=n_eval)


class _HybridModel:
    """Log-likelihood of the noisy Gaussian decay model along ``rho``, with
    the reverberant power re-estimated from the first ``n_l`` samples at
    every candidate decay rate."""

    def __init__(self, power, sigma_d2, n_l, ops):
        self.p = power
        self.d = sigma_d2
        self.N = power.size
        self.n = np.arange(self.N, dtype=np.float64)
        self.n_l = n_l
        self.pw = power[:n_l]
        self.nw = self.n[:n_l]
        self.ops = ops
        self.log_2pi_n = self.N * math.log(2 * math.pi)

    def sigma_v2(self, rho, order=0):
        """Early-window reverberant power and its first ``order`` derivatives
        in ``rho`` (zeroed when clipped at 0)."""
        L = self.n_l
        e = np.exp((rho + rho) * self.nw)
        pe = self.pw * e
        self.ops(2 * L)
        out = [(float(np.sum(pe)) - self.d * float(np.sum(e))) / L]
        self.ops(2)
        k = e.copy()
        kp = pe
        for _ in range(order):
            k = (self.nw + self.nw) * k
            kp = (self.nw + self.nw) * kp
            out.append((float(np.sum(kp)) - self.d * float(np.sum(k))) / L)
            self.ops(2 * L + 2)
        if out[0] <= 0.0:
            return [0.0] * (order + 1)
        return out

    def loglik(self, rho):
        a = self.sigma_v2(rho)[0]
        if a == 0.0 and self.d == 0.0:
            return -np.inf, a
        q = np.exp(-(rho + rho) * self.n)
        s = a * q + self.d
        r = self.p / s
        self.ops(3 * self.N + 1)
        with np.errstate(divide="ignore"):
            ll = -0.5 * (self.log_2pi_n + float(np.sum(np.log(s)))
                         + float(np.sum(r)))
        return ll, a

    def derivatives(self, rho):
        """First and second derivative of the log-likelihood in ``rho``."""
        a, a1, a2 = self.sigma_v2(rho, order=2)
        if a == 0.0:
            return 0.0, 0.0, a
        n = self.n
        q = np.exp(-(rho + rho) * n)
        s = a * q + self.d
        two_n = n + n
        ds = (a1 - two_n * a) * q
        d2s = (a2 - two_n * (a1 + a1) + two_n * two_n * a) * q
        inv_s = 1.0 / s
        r = self.p * inv_s
        one_minus_r = 1.0 - r
        g1 = -0.5 * float(np.sum(one_minus_r * inv_s * ds))
        g2 = -0.5 * float(np.sum((r + r - 1.0) * inv_s * inv_s * ds * ds
                                 + one_minus_r * inv_s * d2s))
        self.ops(18 * self.N + 2)
        return g1, g2, a


def estimate_hybrid_mln(signal: SampledSignal, noise: NoiseEstimate,
                        n_l: Optional[int] = None, refinements: int = 5,
                        rho_min: float = RHO_MIN, rho_max: float = RHO_MAX,
                        scan_points: int = 12, ops=None) -> EstimateResult:
    """Maximum-likelihood decay rate under known noise power.

    For each candidate ``rho`` the reverberant power is taken from the first
    ``n_l`` samples after removing the known noise contribution,
    ``max(0, mean(f^2 e^{2n rho}) - sigma_d2 * mean(e^{2n rho}))``, and the full
    noisy-model log-likelihood is evaluated with it. The maximum is located
    with a coarse log-spaced scan of the bracket followed by ``refinements``
    safeguarded Newton steps on the likelihood derivative.

    Parameters
    ----------
    signal : SampledSignal
        Decaying segment.
    noise : NoiseEstimate
        Noise power, assumed known.
    n_l : int, optional
        Early-window length, ``2 <= n_l <= N``. Defaults to ``N // 5``.
    refinements : int, optional
        Number of Newton iterations after the scan.
    rho_min, rho_max : float, optional
        Search bracket.
    scan_points : int, optional
        Size of the coarse scan.
    ops : OpCounter, optional
        Receives the number of multiplications performed.

    Returns
    -------
    EstimateResult
        Invalid when the reverberant power is zero over the whole scan, or
        the maximum sits on the edge of the bracket.
    """
    ops = ops or _noop
    N = len(signal)
    if n_l is None:
        n_l = max(2, N // 5)
    if not 2 <= n_l <= N:
        raise ParameterError(f"n_l must satisfy 2 <= n_l <= N={N}, got {n_l}")
    if refinements < 0 or scan_points < 3:
        raise ParameterError("refinements >= 0 and scan_points >= 3 required")
    if not 0 < rho_min < rho_max:
        raise ParameterError("need 0 < rho_min < rho_max")
    p = _power(signal, ops)
    model = _HybridModel(p, noise.sigma_d2_hat, n_l, ops)

    grid = np.geomspace(rho_min, rho_max, scan_points)
    scan = [model.loglik(float(r)) for r in grid]
    if all(a == 0.0 for _, a in scan):
        return _result("hybrid_mln", 0.0, signal.sample_rate_hz, False,
                       sigma_v2_hat=0.0, reason="no decaying component")
    lls = np.array([ll for ll, _ in scan])
    k = int(np.argmax(lls))
    lo = float(grid[max(k - 1, 0)])
    hi = float(grid[min(k + 1, scan_points - 1)])
    x = float(grid[k])
    for _ in range(refinements):
        g1, g2, _a = model.derivatives(x)
        if g1 > 0:
            lo = x
        elif g1 < 0:
            hi = x
        else:
            break
        x_new = 0.5 * (lo + hi)
        if g2 < 0:
            ops(1)
            if lo <= x - g1 / g2 <= hi:
                x_new = x - g1 / g2
        converged = abs(x_new - x) < SEARCH_TOL * 1e-3
        x = x_new
        if converged:
            break
    a = model.sigma_v2(x)[0]
    interior = rho_min + 2 * SEARCH_TOL < x < rho_max - 2 * SEARCH_TOL
    return _result("hybrid_mln", x, signal.sample_rate_hz,
                   interior and a > 0, sigma_v2_hat=a, n_l=n_l)


def energy_decay_curve(h: np.ndarray) -> np.ndarray:
    """Backward-integrated squared impulse response, ``sum_{k >= n} h^2(k)``."""
    h = np.asarray(h, dtype=np.float64)
    return np.cumsum((h * h)[::-1])[::-1]


def estimate_schroeder(rir: SampledSignal, fit_hi_db: float = -5.0,
                       fit_lo_db: float = -25.0) -> EstimateResult:
    """Decay rate of an impulse response from its energy decay curve.

    A line is fitted to ``10 log10(EDC / EDC(0))`` between ``fit_hi_db`` and
    ``fit_lo_db`` and its slope converted to a per-sample decay rate
    (equivalently, extrapolated to -60 dB for T60).

    Raises
    ------
    FitRangeError
        The curve never drops to ``fit_lo_db``; ``deepest_db`` holds the
        deepest level reached.
    """
    if not -60 < fit_lo_db < fit_hi_db <= 0:
        raise ParameterError(
            f"need -60 < fit_lo_db < fit_hi_db <= 0, got {fit_lo_db}, "
            f"{fit_hi_db}")
    edc = energy_decay_curve(rir.samples)
    if not edc[0] > 0:
        raise DegenerateInputError("impulse response has no energy")
    with np.errstate(divide="ignore"):
        level = 10 * np.log10(edc / edc[0])
    deepest = float(level[-1])
    if deepest > fit_lo_db:
        raise FitRangeError(
            f"energy decay curve only reaches {deepest:.2f} dB, above the "
            f"fit limit {fit_lo_db} dB", deepest)
    i0 = int(np.argmax(level <= fit_hi_db))
    i1 = int(np.argmax(level <= fit_lo_db))
    n = np.arange(i0, i1 + 1, dtype=np.float64)
    if n.size < 2:
        raise FitRangeError(
            "fewer than two samples inside the fit range", deepest)
    slope, intercept = np.polyfit(n, level[i0:i1 + 1], 1)
    rho_hat = -slope / (20 * LOG10_E)
    return _result("schroeder", rho_hat, rir.sample_rate_hz, slope < 0,
                   slope_db_per_sample=float(slope),
                   intercept_db=float(intercept), fit_start=i0, fit_stop=i1)


def estimate_noise_floor(signal: SampledSignal,
                         tail_fraction: float = 0.25) -> NoiseEstimate:
    """Mean power of the trailing ``tail_fraction`` of the signal.

    Any decay left in the tail inflates the estimate.
    """
    if not 0 < tail_fraction <= 0.5:
        raise ParameterError(
            f"tail_fraction must be in (0, 0.5], got {tail_fraction}")
    x = signal.samples
    k = max(1, int(round(tail_fraction * x.size)))
    tail = x[-k:]
    return NoiseEstimate(float(np.mean(tail * tail)))


ESTIMATORS = ("ni", "lr", "ml", "hybrid_mln")
