import itertools

import numpy as np
import pytest

from decayrate.bounds import crb_rho, fisher_info, fisher_matrix
from decayrate.errors import DegenerateInputError, ParameterError
from decayrate.model import DecayParams
from oracles import fd_hessian

GRID = [(rho, 1.0, sd2, n) for rho, sd2, n in
        itertools.product((0.002, 0.004, 0.008), (0.0, 0.01), (100, 1000))]


class TestFisherInfo:
    def test_noiseless_nuisance_closed_form(self):
        N = 1000
        s1, s2 = N * (N - 1) / 2, (N - 1) * N * (2 * N - 1) / 6
        assert (s1, s2) == (499500, 332833500)
        closed = (N / 2) / (N * s2 - s1 ** 2)
        fi = fisher_info(DecayParams(0.008, 1.0, 0.0), N, known_noise=True)
        assert fi.crb_rho == pytest.approx(closed, rel=1e-9)
        assert fi.crb_rho == pytest.approx(6.000e-9, rel=1e-4)

    def test_noiseless_entries(self):
        N, sv2 = 1000, 2.0
        M = fisher_matrix(DecayParams(0.008, sv2, 0.0), N)
        s1, s2 = N * (N - 1) / 2, (N - 1) * N * (2 * N - 1) / 6
        assert M[0, 0] == pytest.approx(2 * s2, rel=1e-12)
        assert M[0, 1] == pytest.approx(-s1 / sv2, rel=1e-12)
        assert M[1, 1] == pytest.approx(N / (2 * sv2 ** 2), rel=1e-12)

    def test_rho_only(self):
        N = 1000
        s2 = (N - 1) * N * (2 * N - 1) / 6
        c = crb_rho(DecayParams(0.008, 1.0, 0.0), N, "rho-only")
        assert c == pytest.approx(1 / (2 * s2), rel=1e-12)
        assert c == pytest.approx(1.502e-9, rel=1e-3)

    @pytest.mark.parametrize("rho,sv2,sd2,n", GRID)
    def test_finite_difference_oracle(self, rho, sv2, sd2, n):
        theta0 = (rho, sv2, sd2)
        analytic = fisher_matrix(DecayParams(*theta0), n)
        numeric = -fd_hessian(theta0, n)
        np.testing.assert_allclose(numeric, analytic, rtol=1e-4)

    @pytest.mark.parametrize("mode", ["nuisance", "full", "rho-only"])
    def test_monotone_in_n(self, mode):
        p = DecayParams(0.004, 1.0, 0.01)
        c = [crb_rho(p, n, mode) for n in range(10, 1001, 30)]
        assert all(b < a for a, b in zip(c, c[1:]))

    @pytest.mark.parametrize("rho", [0.002, 0.004, 0.008])
    def test_noise_penalty(self, rho):
        assert crb_rho(DecayParams(rho, 1.0, 0.01), 500) > \
            crb_rho(DecayParams(rho, 1.0, 0.0), 500)

    def test_matrix_psd_symmetric(self):
        M = fisher_info(DecayParams(0.004, 1.0, 0.01), 300).matrix
        np.testing.assert_allclose(M, M.T)
        assert np.linalg.eigvalsh(M).min() > 0

    def test_mode_ordering(self):
        p = DecayParams(0.004, 1.0, 0.01)
        assert crb_rho(p, 500, "rho-only") < crb_rho(p, 500, "nuisance") \
            < crb_rho(p, 500, "full")

    def test_singular_names_direction(self):
        # constant variance: rho and sigma_v2 are not separable from sigma_d2
        p = DecayParams(1e-300, 1.0, 1.0)
        with pytest.raises(DegenerateInputError, match="rho_d=.*sigma_v2="):
            fisher_info(p, 50, known_noise=False)

    def test_validation(self):
        with pytest.raises(ParameterError):
            fisher_info(DecayParams(0.01, 1.0), 1)
        with pytest.raises(ParameterError):
            fisher_info(DecayParams(0.01, 0.0, 1.0), 100)
        with pytest.raises(ParameterError):
            crb_rho(DecayParams(0.01, 1.0), 100, "bogus")
