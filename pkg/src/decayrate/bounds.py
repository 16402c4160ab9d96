"""
Fisher information and Cramer-Rao bounds for the discrete Gaussian decay
model ``f(n) ~ N(0, s_n^2)`` with ``s_n^2 = sigma_v2 exp(-2 n rho) + sigma_d2``.

For a zero-mean Gaussian with parameter-dependent variance the information is

    I_jk = 1/2 sum_n s_n^-4 (d s_n^2 / d theta_j) (d s_n^2 / d theta_k)

over ``theta = (rho, sigma_v2, sigma_d2)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from decayrate.errors import DegenerateInputError, ParameterError
from decayrate.model import DecayParams

PARAM_NAMES = ("rho_d", "sigma_v2", "sigma_d2")

# nuisance: sigma_v2 unknown, noise power known (the benchmark default)
# full: sigma_v2 and sigma_d2 both unknown
# rho-only: every variance known
CRB_MODES = ("nuisance", "full", "rho-only")


@dataclass(frozen=True, eq=False)
class FisherInfo:
    matrix: np.ndarray
    crb_rho: float
    n: int
    known_noise: bool


def fisher_matrix(params: DecayParams, n: int) -> np.ndarray:
    """Full 3x3 information matrix over ``(rho_d, sigma_v2, sigma_d2)``."""
    if n < 2:
        raise ParameterError(f"n must be >= 2, got {n}")
    k = np.arange(n, dtype=np.float64)
    e = np.exp(-2.0 * params.rho_d * k)
    s2 = params.sigma_v2 * e + params.sigma_d2
    grads = np.stack([-2.0 * k * params.sigma_v2 * e, e, np.ones(n)])
    weighted = grads / s2
    return 0.5 * weighted @ weighted.T


def _crb_from_block(block, names):
    w, v = np.linalg.eigh(block)
    if w[0] <= 1e-12 * max(w[-1], 0.0):
        null = ", ".join(f"{nm}={c:+.3g}" for nm, c in zip(names, v[:, 0]))
        raise DegenerateInputError(
            f"Fisher information is singular along ({null})")
    return float(np.linalg.inv(block)[0, 0])


def fisher_info(params: DecayParams, n: int,
                known_noise: bool = True) -> FisherInfo:
    """Information matrix and Cramer-Rao bound on ``rho_d``.

    Parameters
    ----------
    params : DecayParams
        True parameters; ``sigma_v2`` must be positive.
    n : int
        Number of observations (>= 2).
    known_noise : bool, optional
        If True the bound treats ``sigma_d2`` as known and only ``sigma_v2``
        as a nuisance parameter (2x2 block). Otherwise all three parameters
        are estimated jointly.

    Returns
    -------
    FisherInfo
        ``matrix`` is always the full 3x3 matrix.
    """
    if not params.sigma_v2 > 0:
        raise ParameterError("sigma_v2 must be > 0 for a decay-rate bound")
    matrix = fisher_matrix(params, n)
    m = 2 if known_noise else 3
    crb = _crb_from_block(matrix[:m, :m], PARAM_NAMES[:m])
    return FisherInfo(matrix, crb, n, known_noise)


def crb_rho(params: DecayParams, n: int, mode: str = "nuisance") -> float:
    """Cramer-Rao bound on ``rho_d`` for one of :data:`CRB_MODES`."""
    if mode == "nuisance":
        return fisher_info(params, n, known_noise=True).crb_rho
    if mode == "full":
        return fisher_info(params, n, known_noise=False).crb_rho
    if mode == "rho-only":
        if not params.sigma_v2 > 0:
            raise ParameterError("sigma_v2 must be > 0 for a decay-rate bound")
        i_rr = fisher_matrix(params, n)[0, 0]
        if not i_rr > 0:
            raise DegenerateInputError("zero information on rho_d")
        return float(1.0 / i_rr)
    raise ParameterError(f"unknown CRB mode {mode!r}; choose from {CRB_MODES}")
