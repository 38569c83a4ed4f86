import math

import numpy as np
import pytest
from scipy import stats

from curesem.ew import EwParams, ew_logpdf, ew_survival
from curesem.model import SurvivalRecord, observed_loglik
from curesem.sem import (
    CURED,
    LifetimeScheme,
    PseudoRecord,
    PseudoSample,
    SemConfig,
    Selection,
    draw_cure_status,
    fit_sem,
    impute_lifetime,
    pseudo_complete_loglik,
    s_step,
    sem_m_step,
)

from conftest import theta_of


def test_config_validation():
    with pytest.raises(ValueError):
        SemConfig(total_iters=10, burn_in=10)
    with pytest.raises(ValueError):
        SemConfig(total_iters=0, burn_in=0)
    cfg = SemConfig(selection="average", scheme="b")
    assert cfg.selection is Selection.POST_BURNIN_AVERAGE
    assert cfg.scheme is LifetimeScheme.BERNOULLI_THEN_TRUNCATED


def test_observed_events_keep_their_time(truth):
    rng = np.random.default_rng(0)
    rec = SurvivalRecord(0.7, 1, (2.0,))
    assert draw_cure_status(rng, truth, rec) == 1
    assert impute_lifetime(rng, truth, rec, 1) == 0.7


def test_cured_status_returns_sentinel(truth):
    rec = SurvivalRecord(0.7, 0, (2.0,))
    assert impute_lifetime(np.random.default_rng(0), truth, rec, 0) is CURED


def test_cure_status_frequency_matches_weight(truth):
    from curesem.model import cure_rate, pop_survival

    rec = SurvivalRecord(1.2, 0, (2.0,))
    rng = np.random.default_rng(1)
    draws = [draw_cure_status(rng, truth, rec) for _ in range(4000)]
    w = 1 - cure_rate(truth, rec.x) / pop_survival(truth, rec.t, rec.x)
    assert np.mean(draws) == pytest.approx(w, abs=4 * math.sqrt(w * (1 - w) / 4000))


@pytest.mark.parametrize("scheme", ["a", "b"])
def test_imputed_lifetimes_exceed_censoring_time(small_data, truth, scheme):
    rng = np.random.default_rng(2)
    for _ in range(5):
        ps = s_step(rng, truth, small_data, scheme)
        sus_cz = (ps.eta == 1) & (small_data.delta == 0)
        assert np.all(ps.y[sus_cz] > small_data.t[sus_cz])
        np.testing.assert_array_equal(ps.y[small_data.events], small_data.t[small_data.events])
        assert np.all(ps.eta[small_data.events] == 1)
        assert np.all(np.isnan(ps.y[ps.eta == 0]))


def test_imputation_support_deep_in_tail():
    th = theta_of(-0.5, 0.3, 2.0, 1.0, 1.0)
    rec = SurvivalRecord(700.0, 0, (1.0,))
    y = impute_lifetime(np.random.default_rng(3), th, rec, 1)
    assert np.isfinite(y) and y > 700.0


def test_schemes_agree_on_susceptible_lifetime_law():
    th = theta_of(-0.3, 0.4, 1.8, 1.3, 1.1)
    rec = SurvivalRecord(0.9, 0, (2.0,))
    rng = np.random.default_rng(4)
    a = np.array([impute_lifetime(rng, th, rec, 1, "a") for _ in range(3000)])
    b = [impute_lifetime(rng, th, rec, 1, "b") for _ in range(6000)]
    b = np.array([v for v in b if v is not CURED])
    assert stats.ks_2samp(a, b).pvalue > 0.01
    s0 = ew_survival(rec.t, th.ew)
    assert stats.kstest(a, lambda y: 1 - ew_survival(y, th.ew) / s0).pvalue > 0.01


def test_scheme_b_cure_fraction_is_logistic(truth):
    rec = SurvivalRecord(0.9, 0, (2.0,))
    rng = np.random.default_rng(5)
    out = [impute_lifetime(rng, truth, rec, 1, "b") for _ in range(4000)]
    frac = np.mean([v is CURED for v in out])
    v = math.exp(truth.beta[0] + 2.0 * truth.beta[1])
    assert frac == pytest.approx(1 / (1 + v), abs=0.03)


def test_pseudo_loglik_composition():
    th = theta_of(-0.2, 0.5, 1.7, 1.2, 0.9)
    recs = [PseudoRecord(0.5, 1, (1.0,), 1), PseudoRecord(CURED, 0, (3.0,), 0),
            PseudoRecord(2.2, 0, (2.0,), 1)]
    expect = 0.0
    for r in recs:
        lin = th.beta[0] + th.beta[1] * r.x[0]
        expect -= math.log1p(math.exp(lin))
        if r.eta:
            expect += lin + ew_logpdf(r.y_star, th.ew)
    assert pseudo_complete_loglik(th, recs) == pytest.approx(expect, abs=1e-10)
    ps = PseudoSample.from_records(recs)
    assert ps.records()[1].y_star is CURED
    assert pseudo_complete_loglik(th, ps) == pytest.approx(expect, abs=1e-10)


def test_m_step_maximizes_pseudo_loglik(small_data, truth):
    ps = s_step(np.random.default_rng(6), truth, small_data)
    start = theta_of(0.0, 0.3, 1.0, 1.0, 1.0)
    new = sem_m_step(start, ps)
    base = pseudo_complete_loglik(new, ps)
    assert base >= pseudo_complete_loglik(start, ps)
    rng = np.random.default_rng(7)
    for _ in range(20):
        jitter = new.vector * (1 + 0.01 * rng.standard_normal(5))
        from curesem.model import Theta

        assert pseudo_complete_loglik(Theta.from_vector(jitter), ps) <= base + 1e-7


def test_m_step_profile_matches_direct_complete_mle(small_data, truth):
    from scipy.optimize import minimize

    ps = s_step(np.random.default_rng(8), truth, small_data)
    new = sem_m_step(truth, ps)
    y = ps.y[ps.eta == 1]

    def nll(z):
        return -np.sum(ew_logpdf(y, EwParams(*np.exp(z))))

    ref = minimize(nll, np.log(new.ew.as_tuple()), method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 10000})
    np.testing.assert_allclose(new.ew.as_tuple(), np.exp(ref.x), rtol=1e-3)


def test_fit_sem_chain_and_selection(small_data, truth):
    cfg = SemConfig(total_iters=60, burn_in=20, seed=9)
    res = fit_sem(small_data, truth, cfg)
    assert res.converged
    assert len(res.chain) == 60
    assert res.chain.header() == ["iter", *truth.names(), "loglik"]
    post = res.chain.logliks[20:]
    assert res.selected_iteration == 21 + int(np.argmax(post))
    assert res.loglik == pytest.approx(post.max())
    assert res.loglik == pytest.approx(observed_loglik(res.theta, small_data))


def test_fit_sem_average_selection(small_data, truth):
    cfg = SemConfig(total_iters=40, burn_in=10, seed=9, selection="average")
    res = fit_sem(small_data, truth, cfg)
    np.testing.assert_allclose(res.theta.vector, res.chain.thetas[10:].mean(axis=0))
    assert res.selected_iteration is None


def test_fit_sem_then_em(small_data, truth):
    cfg = SemConfig(total_iters=40, burn_in=10, seed=9, selection="sem-em")
    res = fit_sem(small_data, truth, cfg)
    assert res.em is not None and res.selected_iteration <= 10
    assert res.loglik >= res.chain.logliks[res.selected_iteration - 1] - 1e-6


def test_fit_sem_is_deterministic_given_seed(small_data, truth):
    cfg = SemConfig(total_iters=30, burn_in=10, seed=123)
    a = fit_sem(small_data, truth, cfg)
    b = fit_sem(small_data, truth, cfg)
    np.testing.assert_array_equal(a.chain.thetas, b.chain.thetas)
    c = fit_sem(small_data, truth, SemConfig(total_iters=30, burn_in=10, seed=124))
    assert not np.array_equal(a.chain.thetas, c.chain.thetas)


def test_fit_sem_fixed_parameters(small_data, truth):
    res = fit_sem(small_data, truth, SemConfig(total_iters=20, burn_in=5, seed=1),
                  fixed={"alpha": 1.0})
    assert np.all(res.chain.thetas[:, 2] == 1.0)


def test_fit_sem_bad_start_is_divergent(small_data):
    res = fit_sem(small_data, theta_of(80.0, 0, 1, 1, 1), SemConfig(total_iters=5, burn_in=1))
    assert res.divergent and res.reason.startswith("start")
