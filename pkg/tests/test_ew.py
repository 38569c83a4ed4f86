import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats
from scipy.integrate import quad

from curesem.errors import DomainError, HazardOverflowError
from curesem.ew import (
    EwParams,
    HazardShape,
    ew_cdf,
    ew_hazard,
    ew_isf,
    ew_logpdf,
    ew_logsf,
    ew_pdf,
    ew_quantile,
    ew_raw_moment,
    ew_sample,
    ew_sample_truncated,
    ew_survival,
    hazard_shape,
)

shapes = st.floats(0.2, 5.0)
scales = st.floats(0.2, 5.0)
params = st.builds(EwParams, shapes, shapes, scales)


def test_rejects_nonpositive_parameters():
    for bad in [(0, 1, 1), (1, -1, 1), (1, 1, float("nan")), (1, 1, float("inf"))]:
        with pytest.raises(DomainError):
            EwParams(*bad)


def test_rejects_nonpositive_argument():
    p = EwParams(2, 1, 1)
    with pytest.raises(DomainError):
        ew_pdf(0.0, p)
    with pytest.raises(DomainError):
        ew_survival(np.array([1.0, -2.0]), p)
    with pytest.raises(DomainError):
        ew_quantile(1.0, p)


@given(params, st.floats(0.05, 4.0))
def test_matches_scipy_exponweib(p, y):
    ref = stats.exponweib(a=p.alpha, c=p.k, scale=p.lam)
    assert ew_pdf(y, p) == pytest.approx(ref.pdf(y), rel=1e-9, abs=1e-300)
    assert ew_cdf(y, p) == pytest.approx(ref.cdf(y), rel=1e-9, abs=1e-300)


@given(params, st.floats(0.05, 4.0))
def test_pdf_is_minus_derivative_of_survival(p, y):
    h = 1e-6 * y
    deriv = -(ew_survival(y + h, p) - ew_survival(y - h, p)) / (2 * h)
    assert deriv == pytest.approx(ew_pdf(y, p), rel=1e-5, abs=1e-9)


@given(params, st.floats(0.01, 0.99))
def test_quantile_inverts_cdf(p, u):
    assert ew_cdf(ew_quantile(u, p), p) == pytest.approx(u, rel=1e-10)


@given(params, st.floats(1e-12, 0.99))
def test_isf_inverts_survival(p, s):
    assert ew_survival(ew_isf(s, p), p) == pytest.approx(s, rel=1e-8)


def test_submodel_collapse_to_reference_densities():
    y = np.linspace(0.05, 6.0, 60)
    lam = 1.7
    exp = ew_pdf(y, EwParams(1, 1, lam))
    np.testing.assert_allclose(exp, np.exp(-y / lam) / lam, rtol=1e-12)
    ray = ew_pdf(y, EwParams(1, 2, lam))
    np.testing.assert_allclose(ray, 2 * y / lam**2 * np.exp(-(y / lam) ** 2), rtol=1e-12)
    k = 1.3
    wei = ew_pdf(y, EwParams(1, k, lam))
    np.testing.assert_allclose(
        wei, k / lam * (y / lam) ** (k - 1) * np.exp(-(y / lam) ** k), rtol=1e-12
    )
    a = 2.5
    ge = ew_pdf(y, EwParams(a, 1, lam))
    np.testing.assert_allclose(
        ge, a / lam * np.exp(-y / lam) * (1 - np.exp(-y / lam)) ** (a - 1), rtol=1e-12
    )
    bx = ew_pdf(y, EwParams(a, 2, lam))
    z = (y / lam) ** 2
    np.testing.assert_allclose(
        bx, 2 * a * y / lam**2 * np.exp(-z) * (1 - np.exp(-z)) ** (a - 1), rtol=1e-12
    )


@given(st.builds(EwParams, st.floats(0.5, 5.0), st.floats(0.5, 5.0), scales))
def test_cdf_is_integral_of_density(p):
    y = float(ew_quantile(0.7, p))
    lo = float(ew_quantile(0.1, p))
    mass, _ = quad(lambda v: ew_pdf(v, p), lo, y, limit=200, epsrel=1e-11)
    assert mass == pytest.approx(0.6, rel=1e-8)


def _moment_oracle(q, p):
    # substitute z = (y/lam)^k to keep the integrand smooth at the origin
    def f(z):
        return p.lam**q * z ** (q / p.k) * p.alpha * math.exp(-z) * (-math.expm1(-z)) ** (p.alpha - 1)
    return sum(quad(f, a, b, limit=400, epsabs=0, epsrel=1e-13)[0]
               for a, b in [(0, 1e-6), (1e-6, 1), (1, 40), (40, np.inf)])


@pytest.mark.parametrize("p", [EwParams(2, 1, 1.5), EwParams(3, 0.8, 0.5), EwParams(1, 2, 1.5)])
@pytest.mark.parametrize("q", [1, 2, 3])
def test_raw_moment_integer_alpha_matches_quadrature(p, q):
    assert ew_raw_moment(q, p) == pytest.approx(_moment_oracle(q, p), rel=1e-10)


@pytest.mark.parametrize("p", [EwParams(0.7, 1.4, 2.0), EwParams(3.3, 0.8, 0.5),
                               EwParams(1.5, 2.0, 1.0)])
@pytest.mark.parametrize("q", [1, 2])
def test_raw_moment_series_matches_quadrature(p, q):
    # the series stops at the first term below tol; its tail is not summed
    assert ew_raw_moment(q, p) == pytest.approx(_moment_oracle(q, p), rel=1e-6)


def test_raw_moment_edge_cases():
    assert ew_raw_moment(0, EwParams(0.7, 1, 1)) == 1.0
    assert ew_raw_moment(1, EwParams(1, 2, 1.5)) == pytest.approx(1.5 * math.gamma(1.5))
    assert ew_raw_moment(1, EwParams(1, 2, 1.5)) == pytest.approx(1.329, abs=5e-4)
    with pytest.raises(DomainError):
        ew_raw_moment(-1, EwParams(1, 1, 1))


def test_outlier_setting_mean():
    assert ew_raw_moment(1, EwParams(1, 0.3, 1)) == pytest.approx(math.gamma(1 + 1 / 0.3))
    assert ew_raw_moment(1, EwParams(1, 0.3, 1)) == pytest.approx(9.260, abs=1e-3)


def test_tail_log_survival_stays_finite():
    p = EwParams(2.0, 1.0, 1.0)
    y = np.array([50.0, 800.0, 5000.0])
    out = ew_logsf(y, p)
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, math.log(2.0) - y, rtol=1e-12)
    assert ew_logsf(1.0, p) == pytest.approx(math.log(ew_survival(1.0, p)), rel=1e-14)


def test_hazard_overflow_raises():
    with pytest.raises(HazardOverflowError):
        ew_hazard(1e4, EwParams(1, 1, 1))


@pytest.mark.parametrize(
    "alpha,k,shape",
    [
        (1, 1, HazardShape.CONSTANT),
        (1, 2, HazardShape.INCREASING),
        (1, 0.5, HazardShape.DECREASING),
        (2, 1, HazardShape.INCREASING),
        (0.5, 1, HazardShape.DECREASING),
        (2, 2, HazardShape.INCREASING),
        (0.5, 0.5, HazardShape.DECREASING),
        (0.3, 2, HazardShape.BATHTUB),
        (0.8, 2, HazardShape.INCREASING),
        (4, 0.5, HazardShape.UNIMODAL),
        (1.5, 0.5, HazardShape.DECREASING),
    ],
)
def test_hazard_shape_rules(alpha, k, shape):
    assert hazard_shape(EwParams(alpha, k, 1.0)) is shape


def _hazard_pattern(p):
    y = np.exp(np.linspace(np.log(1e-3), np.log(4.0), 400)) * p.lam
    d = np.sign(np.diff(ew_hazard(y, p)))
    d = d[d != 0]
    return d[0], d[-1]


@pytest.mark.parametrize("alpha,k", [(0.3, 2), (4, 0.5), (2, 2), (0.5, 0.5)])
def test_hazard_shape_agrees_with_numeric_hazard(alpha, k):
    p = EwParams(alpha, k, 1.0)
    first, last = _hazard_pattern(p)
    expected = {
        HazardShape.BATHTUB: (-1, 1),
        HazardShape.UNIMODAL: (1, -1),
        HazardShape.INCREASING: (1, 1),
        HazardShape.DECREASING: (-1, -1),
    }[hazard_shape(p)]
    assert (first, last) == expected


def test_sampling_matches_distribution():
    p = EwParams(2.0, 1.5, 0.8)
    draws = ew_sample(np.random.default_rng(1), p, 4000)
    assert stats.kstest(draws, lambda y: ew_cdf(y, p)).pvalue > 0.01


def test_truncated_sampling_support_and_law():
    p = EwParams(1.5, 1.2, 1.0)
    lower = 1.3
    draws = ew_sample_truncated(np.random.default_rng(2), p, lower, 4000)
    assert np.all(draws > lower)
    s0 = ew_survival(lower, p)
    assert stats.kstest(draws, lambda y: 1 - ew_survival(y, p) / s0).pvalue > 0.01


def test_truncated_sampling_deep_tail():
    p = EwParams(2.0, 1.0, 1.0)
    draws = ew_sample_truncated(np.random.default_rng(3), p, 900.0, 50)
    assert np.all(np.isfinite(draws)) and np.all(draws > 900.0)
