import math

import mpmath as mp
import numpy as np
import pytest
from scipy import special as sc

from solvdiff import specfun as sf
from solvdiff.logvalue import LogValue

# Values frozen from 40-digit mpmath evaluations of the defining series or
# integral representations; tests/oracles/specfun_values.py regenerates them.
I_25_10 = 2028.5127573919356691        # 60-term ascending series
K_3_001 = 7999900.0012498820461        # integral of exp(-z cosh t) cosh(3t)
M_25_35_8 = 768.69109042570432839      # 200-term ascending series
U_17_24_3 = 0.13674535441966952473     # Laplace integral representation
D_m25_12 = 0.13342715515958428221      # Laplace integral representation


def rel(a, b):
    return abs(a - b) / abs(b)


class TestGammaLn:
    @pytest.mark.parametrize("x,expected", [(5, math.log(24)), (1, 0.0), (0.5, math.log(math.sqrt(math.pi)))])
    def test_closed_forms(self, x, expected):
        assert sf.gamma_ln(x) == pytest.approx(expected, abs=1e-15)

    def test_range_accuracy(self):
        for x in np.geomspace(1e-3, 1e3, 25):
            ref = float(mp.loggamma(x))
            assert abs(sf.gamma_ln(x) - ref) <= 1e-13 * max(1.0, abs(ref))

    @pytest.mark.parametrize("x", [0.0, -1.0, -2.5])
    def test_domain(self, x):
        with pytest.raises(sf.DomainError):
            sf.gamma_ln(x)


class TestBessel:
    def test_i_at_zero(self):
        assert sf.bessel_i(0, 0).value() == 1.0
        v = sf.bessel_i(1.5, 0)
        assert v.sign == 0 and v.value() == 0.0

    def test_i_half_order(self):
        assert rel(sf.bessel_i(0.5, 1).value(), math.sqrt(2 / math.pi) * math.sinh(1)) < 1e-13

    def test_i_series_oracle(self):
        assert rel(sf.bessel_i(2.5, 10).value(), I_25_10) < 1e-12

    def test_k_half_order(self):
        assert rel(sf.bessel_k(0.5, 1).value(), math.sqrt(math.pi / 2) * math.exp(-1)) < 1e-13

    def test_k_integer_order_small_argument(self):
        v = sf.bessel_k(3, 0.01).value()
        assert rel(v, K_3_001) < 1e-12
        # leading small-argument term
        assert rel(v, 0.5 * math.gamma(3) * (2 / 0.01) ** 3) < 1e-3

    def test_wronskian_point(self):
        mu, z = 1.3, 2.7
        w = sf.bessel_i(mu, z) * sf.bessel_k(mu + 1, z) + sf.bessel_i(mu + 1, z) * sf.bessel_k(mu, z)
        assert rel(w.value(), 1 / z) < 1e-13

    def test_wronskian_identity_grid(self):
        mu, z = np.meshgrid(np.linspace(0, 10, 21), np.geomspace(0.1, 100, 31))
        w = sf.bessel_i(mu, z) * sf.bessel_k(mu + 1, z) + sf.bessel_i(mu + 1, z) * sf.bessel_k(mu, z)
        assert np.max(np.abs(w.value() * z - 1)) < 1e-10

    def test_against_mpmath(self):
        rng = np.random.default_rng(0)
        mu = rng.uniform(0, 50, 60)
        z = np.geomspace(1e-3, 700, 60)
        li, lk = sf.log_bessel_i(mu, z), sf.log_bessel_k(mu, z)
        for m, x, a, b in zip(mu, z, li, lk):
            assert abs(a - float(mp.log(mp.besseli(m, x)))) < 1e-10
            assert abs(b - float(mp.log(mp.besselk(m, x)))) < 1e-10

    def test_extreme_arguments_stay_finite(self):
        # scaled scipy values under/overflow here
        assert abs(sf.log_bessel_k(3, 1e-200) - float(mp.log(mp.besselk(3, mp.mpf("1e-200"))))) < 1e-10
        assert abs(sf.log_bessel_i(30, 1e-8) - float(mp.log(mp.besseli(30, mp.mpf("1e-8"))))) < 1e-10

    def test_monotone_and_positive(self):
        z = np.geomspace(1e-3, 700, 400)
        for mu in (0.0, 0.4, 1.0, 7.5, 40.0):
            i, k = sf.bessel_i(mu, z), sf.bessel_k(mu, z)
            assert np.all(i.sign == 1) and np.all(k.sign == 1)
            assert np.all(np.diff(i.log_abs) > 0)
            assert np.all(np.diff(k.log_abs) < 0)

    def test_domain(self):
        with pytest.raises(sf.DomainError):
            sf.bessel_k(1, 0)
        with pytest.raises(sf.DomainError):
            sf.bessel_i(-1, 1)
        with pytest.raises(sf.DomainError):
            sf.bessel_i(1, -1)


class TestKummer:
    def test_m_at_zero(self):
        for a, b in [(0.3, 1.2), (5, 0.5), (40, 60)]:
            assert sf.kummer_m(a, b, 0).value() == 1.0

    def test_m_closed_form(self):
        assert rel(sf.kummer_m(1, 2, 1).value(), math.e - 1) < 1e-14

    def test_m_series_oracle(self):
        assert rel(sf.kummer_m(2.5, 3.5, 8).value(), M_25_35_8) < 1e-12

    def test_m_against_mpmath(self):
        rng = np.random.default_rng(1)
        a, b, z = rng.uniform(0.01, 50, 60), rng.uniform(0.01, 60, 60), rng.uniform(0, 700, 60)
        got = sf.log_kummer_m(a, b, z)
        for ai, bi, zi, g in zip(a, b, z, got):
            assert abs(g - float(mp.log(mp.hyp1f1(ai, bi, zi)))) < 1e-10

    def test_m_large_argument(self):
        assert abs(sf.log_kummer_m(40, 1.5, 1500) - float(mp.log(mp.hyp1f1(40, 1.5, 1500)))) < 1e-10

    def test_m_signed_region(self):
        v = sf.kummer_m(-2.5, 1.5, 3.0).value()
        assert rel(v, float(mp.hyp1f1(-2.5, 1.5, 3.0))) < 1e-12

    @pytest.mark.parametrize("b", [0, -1, -3])
    def test_m_domain(self, b):
        with pytest.raises(sf.DomainError):
            sf.kummer_m(1.0, b, 1.0)

    def test_u_closed_form(self):
        assert rel(sf.kummer_u(1, 1, 1).value(), math.e * sc.exp1(1.0)) < 1e-13

    def test_u_integral_oracle(self):
        assert rel(sf.kummer_u(1.7, 2.4, 3).value(), U_17_24_3) < 1e-12

    def test_u_large_z(self):
        a = 2.3
        assert rel(sf.kummer_u(a, 1.7, 500).value() * 500**a, 1.0) < 0.01

    def test_u_against_mpmath(self):
        rng = np.random.default_rng(2)
        a = 10 ** rng.uniform(-2, np.log10(50), 60)
        b = 10 ** rng.uniform(-2, np.log10(60), 60)
        z = 10 ** rng.uniform(-6, np.log10(700), 60)
        got = sf.log_kummer_u(a, b, z)
        for ai, bi, zi, g in zip(a, b, z, got):
            assert abs(g - float(mp.log(mp.hyperu(ai, bi, zi)))) < 1e-9

    @pytest.mark.parametrize("a,z", [(0.0, 1.0), (-1.0, 1.0), (1.0, 0.0), (1.0, -2.0)])
    def test_u_domain(self, a, z):
        with pytest.raises(sf.DomainError):
            sf.kummer_u(a, 1.0, z)

    def test_positive(self):
        z = np.geomspace(1e-4, 700, 200)
        assert np.all(sf.kummer_m(3.3, 0.7, z).sign == 1)
        assert np.all(sf.kummer_u(3.3, 0.7, z).sign == 1)


class TestParabolicCylinder:
    def test_order_zero(self):
        assert rel(sf.pcf_d(0, 1.5).value(), math.exp(-1.5**2 / 4)) < 1e-15

    def test_order_minus_one(self):
        z = 0.8
        ref = math.exp(z * z / 4) * math.sqrt(math.pi / 2) * math.erfc(z / math.sqrt(2))
        assert rel(sf.pcf_d(-1, z).value(), ref) < 1e-13

    def test_integral_oracle(self):
        assert rel(sf.pcf_d(-2.5, 1.2).value(), D_m25_12) < 1e-12

    def test_against_mpmath(self):
        rng = np.random.default_rng(3)
        v = 10 ** rng.uniform(-2, np.log10(50), 60)
        z = rng.uniform(-35, 35, 60)
        got = sf.log_pcf_d(-v, z)
        for vi, zi, g in zip(v, z, got):
            assert abs(g - float(mp.log(mp.pcfd(-vi, zi)))) < 1e-9

    def test_positive(self):
        assert np.all(sf.pcf_d(-1.7, np.linspace(-35, 35, 141)).sign == 1)

    def test_domain(self):
        with pytest.raises(sf.DomainError):
            sf.pcf_d(0.5, 1.0)
        with pytest.raises(sf.DomainError):
            sf.pcf_d(-1.0, np.nan)


class TestDerivatives:
    def test_i0(self):
        assert rel(sf.bessel_i_deriv(0, 2).value(), sf.bessel_i(1, 2).value()) < 1e-14

    def test_m(self):
        assert rel(sf.kummer_m_deriv(1, 2, 1).value(), 0.5 * sf.kummer_m(2, 3, 1).value()) < 1e-14

    def test_k_sign(self):
        assert sf.bessel_k_deriv(2.2, 1.0).sign == -1

    @pytest.mark.parametrize(
        "f,df,draw",
        [
            (sf.bessel_i, sf.bessel_i_deriv, lambda r: (r.uniform(0, 10), r.uniform(0.2, 40))),
            (sf.bessel_k, sf.bessel_k_deriv, lambda r: (r.uniform(0, 10), r.uniform(0.2, 40))),
            (
                lambda a, z: sf.kummer_m(a, 1.3, z),
                lambda a, z: sf.kummer_m_deriv(a, 1.3, z),
                lambda r: (r.uniform(0.1, 10), r.uniform(0.1, 40)),
            ),
            (
                lambda a, z: sf.kummer_u(a, 2.2, z),
                lambda a, z: sf.kummer_u_deriv(a, 2.2, z),
                lambda r: (r.uniform(0.1, 10), r.uniform(0.1, 40)),
            ),
            (sf.pcf_d, sf.pcf_d_deriv, lambda r: (-r.uniform(0.1, 10), r.uniform(-10, 10))),
        ],
        ids=["bessel_i", "bessel_k", "kummer_m", "kummer_u", "pcf_d"],
    )
    def test_finite_difference(self, f, df, draw):
        rng = np.random.default_rng(4)
        for _ in range(10):
            p, z = draw(rng)
            h = 1e-5 * max(1.0, abs(z))
            fd = (f(p, z + h).value() - f(p, z - h).value()) / (2 * h)
            exact = df(p, z).value()
            assert abs(fd - exact) <= 1e-6 * max(abs(exact), 1e-300) + 1e-12 * abs(f(p, z).value())


def test_scalar_and_array_outputs():
    assert isinstance(sf.log_bessel_i(1.0, 2.0), float)
    out = sf.bessel_k(1.0, np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert isinstance(out, LogValue) and out.shape == (2, 2)
