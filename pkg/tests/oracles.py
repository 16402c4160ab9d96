"""Independent reference computations shared by the test modules."""

import numpy as np


def expected_loglik_drop(theta, theta0, n):
    """E[LL(theta)] - E[LL(theta0)] under data drawn at theta0.

    Written as -1/2 sum(log1p(x) - x / (1 + x)) with x = s/s0 - 1 so the
    difference stays accurate close to the truth.
    """
    k = np.arange(n, dtype=np.float64)

    def var(th):
        rho, sv2, sd2 = th
        return sv2 * np.exp(-2 * rho * k) + sd2

    s0 = var(theta0)
    x = (var(theta) - s0) / s0
    return -0.5 * float(np.sum(np.log1p(x) - x / (1 + x)))


def fd_hessian(theta0, n):
    """Central-difference Hessian of the expected log-likelihood."""
    theta0 = np.asarray(theta0, dtype=float)
    k = np.arange(n)
    s0 = theta0[1] * np.exp(-2 * theta0[0] * k) + theta0[2]
    h = np.array([1e-4 / (2 * n),          # rho: keeps 2 n h small
                  1e-4 * theta0[1],
                  1e-4 * s0.min()])         # stays valid at sigma_d2 = 0
    H = np.empty((3, 3))
    f = lambda d: expected_loglik_drop(theta0 + d, theta0, n)
    for i in range(3):
        ei = np.eye(3)[i] * h[i]
        H[i, i] = (f(ei) - 2 * f(0 * ei) + f(-ei)) / h[i] ** 2
        for j in range(i + 1, 3):
            ej = np.eye(3)[j] * h[j]
            H[i, j] = H[j, i] = (f(ei + ej) - f(ei - ej) - f(-ei + ej)
                                 + f(-ei - ej)) / (4 * h[i] * h[j])
    return H
