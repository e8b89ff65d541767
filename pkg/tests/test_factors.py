from __future__ import annotations

import numpy as np
import pytest
import statsmodels.api as sm
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from ivsfactors.errors import DomainError, EmptyResultError, InsufficientDataError, NumericError
from ivsfactors.factors import (
    betas,
    compound_index,
    eigenportfolio,
    factor_regressions,
    in_sample_run,
    ols,
    oi_factor_returns,
    period_regressions,
    rebalance_points,
    sliding_window_run,
    sorted_alignment,
    tracking_error_ratio,
    unitless_vega,
    weight,
    weight_panel,
)
from ivsfactors.market_data import SurfacePanel
from ivsfactors.returns import standardize
from ivsfactors.rmt_spectrum import SpectrumReport, svd_panel
from ivsfactors.synth import FactorMarketSpec, business_dates, gen_factor_market


def test_unitless_vega():
    assert unitless_vega(0.2, 50, 100) == pytest.approx(0.1)
    assert unitless_vega(0.3, 40, 60) == pytest.approx(0.2)
    assert unitless_vega(0.3, 0, 60) == 0
    with pytest.raises(DomainError):
        unitless_vega(0.2, 50, 0)


def test_weight():
    assert weight("plain_oi", 2751) == 2751
    assert weight("log_oi_vega", 0, 3.0) == 0
    assert weight("log_oi_vega", np.e - 1, 2.0) == pytest.approx(2.0)
    with pytest.raises(DomainError):
        weight("sqrt_oi", 1)


class TestFactorReturns:
    def test_hand_example(self):
        f = oi_factor_returns(np.array([[0.1], [0.0], [-0.1]]), np.array([[1.0], [2.0], [3.0]]))
        assert f.returns[0] == pytest.approx(-1 / 30)

    def test_equal_and_single_weight(self):
        rng = np.random.default_rng(0)
        r = rng.normal(size=(5, 8))
        np.testing.assert_allclose(oi_factor_returns(r, np.ones_like(r)).returns, r.mean(axis=0))
        w = np.zeros_like(r)
        w[2] = 7.0
        np.testing.assert_allclose(oi_factor_returns(r, w).returns, r[2])

    def test_zero_normalizer_names_day(self):
        dates = business_dates(3)
        w = np.ones((2, 3))
        w[:, 1] = 0
        with pytest.raises(NumericError, match=str(dates[1])):
            oi_factor_returns(np.zeros((2, 3)), w, dates)

    def test_scale_invariance(self):
        rng = np.random.default_rng(1)
        r = rng.normal(0, 0.02, size=(6, 10))
        w = rng.integers(1, 100, size=(6, 10)).astype(float)
        np.testing.assert_allclose(oi_factor_returns(r, w).returns, oi_factor_returns(r, 13.5 * w).returns,
                                   rtol=1e-13)

    def test_missing_returns_drop_out(self):
        r = np.array([[0.1, np.nan], [0.3, 0.2]])
        np.testing.assert_allclose(oi_factor_returns(r, np.ones_like(r)).returns, [0.2, 0.2])

    def test_negative_weights(self):
        with pytest.raises(DomainError):
            oi_factor_returns(np.zeros((2, 2)), -np.ones((2, 2)))


class TestCompound:
    def test_examples(self):
        np.testing.assert_allclose(compound_index([0.1, -0.1]), [1, 1.1, 0.99])
        np.testing.assert_array_equal(compound_index(np.zeros(4)), np.ones(5))
        assert compound_index(np.full(252, 0.01))[-1] == pytest.approx(1.01**252)
        assert compound_index(np.full(252, 0.01))[-1] == pytest.approx(12.27, abs=0.01)

    def test_wipeout(self):
        with pytest.raises(DomainError):
            compound_index([0.1, -1.0])

    @given(hnp.arrays(float, st.integers(0, 50), elements=st.floats(-0.9, 1.0)))
    def test_recursion(self, r):
        q = compound_index(r)
        assert q[0] == 1 and np.all(q > 0)
        np.testing.assert_allclose(q[1:], q[:-1] * (1 + r), rtol=1e-12)


class TestBetas:
    def test_exact_multiples(self):
        rng = np.random.default_rng(2)
        f = rng.normal(size=30)
        b = betas(np.vstack([2 * f, -f]), f)
        np.testing.assert_allclose(b.beta, [2.0, -1.0])
        assert b.h_q2 == pytest.approx(np.var(f, ddof=1))

    def test_independent_noise(self):
        rng = np.random.default_rng(3)
        b = betas(rng.normal(size=(200, 5000)), rng.normal(size=5000))
        assert np.abs(b.beta).max() < 0.06

    def test_errors(self):
        with pytest.raises(InsufficientDataError):
            betas(np.zeros((1, 2)), np.array([1.0, 2.0]))
        with pytest.raises(NumericError):
            betas(np.zeros((1, 4)), np.ones(4))


def _report(u1, s=(2.0, 1.0)):
    n = len(u1)
    u = np.zeros((n, 2))
    u[:, 0] = u1
    return SpectrumReport(np.array(s), u, np.eye(2), n, 2)


class TestEigenportfolio:
    def test_symmetric(self):
        rep = svd_panel(np.array([[1.0, -1.0], [1.0, -1.0], [0.0, 0.0]]))
        ep = eigenportfolio(rep, np.ones(3))
        np.testing.assert_allclose(ep.weights[:2], [0.5, 0.5])

    def test_h_scaling(self):
        ep = eigenportfolio(_report([1 / np.sqrt(2), 1 / np.sqrt(2)]), np.array([1.0, 2.0]))
        np.testing.assert_allclose(ep.weights, [2 / 3, 1 / 3])

    def test_errors(self):
        with pytest.raises(NumericError):
            eigenportfolio(_report([1.0, 1.0], s=(1.0, 1.0)), np.ones(2))
        with pytest.raises(NumericError):
            eigenportfolio(_report([1 / np.sqrt(2), -1 / np.sqrt(2)]), np.ones(2))
        with pytest.raises(DomainError):
            eigenportfolio(_report([1.0, 0.0]), np.array([1.0, 0.0]))

    def test_orthogonal_neutrality(self):
        rng = np.random.default_rng(4)
        raw = rng.normal(size=(40, 12)) * rng.uniform(0.5, 2, size=(40, 1)) + rng.normal(size=12)
        panel = standardize(raw)
        rep = svd_panel(panel)
        ep = eigenportfolio(rep, panel.row_stds, u_tilde=rep.U[:, 3])
        cov = np.cov(raw)
        assert abs(ep.weights @ cov @ ep.orthogonal) < 1e-8
        # any other direction orthogonal to u1 works as well
        v = rng.normal(size=40)
        v -= (v @ rep.U[:, 0]) * rep.U[:, 0]
        ep2 = eigenportfolio(rep, panel.row_stds, u_tilde=v)
        assert abs(ep2.weights @ cov @ ep2.orthogonal) < 1e-8 * np.abs(ep2.orthogonal).sum()

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(5)
        raw = rng.normal(size=(30, 10)) + 2 * rng.normal(size=10)
        perm = rng.permutation(30)
        p1 = standardize(raw)
        p2 = standardize(raw[perm])
        w1 = eigenportfolio(svd_panel(p1), p1.row_stds).weights
        w2 = eigenportfolio(svd_panel(p2), p2.row_stds).weights
        np.testing.assert_allclose(w2, w1[perm], atol=1e-12)

    def test_one_factor_alignment(self):
        fm = gen_factor_market(FactorMarketSpec(n_names=100, T=120, maturities=(30, 60), deltas=(50,), seed=6))
        run = in_sample_run(fm.surfaces)
        target = run.beta.beta / run.portfolio.h**2
        target /= target.sum()
        cos = run.portfolio.weights @ target / np.linalg.norm(run.portfolio.weights) / np.linalg.norm(target)
        assert cos > 0.99


class TestAlignment:
    def test_exact(self):
        rng = np.random.default_rng(7)
        pi = rng.dirichlet(np.ones(20))
        h = rng.uniform(0.5, 2.0, 20)
        rec = sorted_alignment(pi, 3 * h**2 * pi, h)
        np.testing.assert_allclose(rec.pi_sorted, rec.target_sorted)
        assert rec.spearman == pytest.approx(1.0)
        assert rec.max_gap_ratio == pytest.approx(0.0, abs=1e-12)
        assert np.all(np.diff(rec.pi_sorted) <= 0)

    def test_reversed(self):
        pi = np.array([0.4, 0.3, 0.2, 0.1])
        rec = sorted_alignment(pi, pi[::-1].copy(), np.ones(4))
        assert rec.spearman == pytest.approx(-1.0)


class TestOls:
    def test_perfect_fit(self):
        x = np.linspace(-1, 1, 20)
        fit = ols(2 * x, {"beta": x})
        assert fit.coef == pytest.approx([0.0, 2.0], abs=1e-12)
        assert fit.tstat[0] == 0.0
        assert fit.r2 == 1.0

    def test_constant_target(self):
        rng = np.random.default_rng(8)
        fit = ols(np.full(30, 0.3), {"beta": rng.normal(size=30)})
        assert fit.coef[1] == pytest.approx(0.0, abs=1e-12)
        assert fit.r2 == 0.0

    def test_against_statsmodels(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(250, 3))
        y = 0.001 + x @ [0.97, 0.05, -0.02] + rng.normal(0, 0.1, 250)
        fit = ols(y, {"beta": x[:, 0], "b_eq": x[:, 1], "b_vx": x[:, 2]})
        ref = sm.OLS(y, sm.add_constant(x)).fit()
        np.testing.assert_allclose(fit.coef, ref.params, rtol=1e-10)
        np.testing.assert_allclose(fit.se, ref.bse, rtol=1e-10)
        np.testing.assert_allclose(fit.tstat, ref.tvalues, rtol=1e-10)
        assert fit.r2 == pytest.approx(ref.rsquared, rel=1e-12)
        xd = np.column_stack([np.ones(250), x])
        np.testing.assert_allclose(xd.T @ fit.residuals, 0, atol=1e-8 * np.abs(y).sum())

    def test_collinear(self):
        x = np.arange(20.0)
        with pytest.raises(NumericError):
            ols(x, {"a": x, "b": 2 * x})

    def test_noisy_slope(self):
        rng = np.random.default_rng(10)
        x = rng.normal(0, 0.02, 500)
        rep = factor_regressions(0.97 * x + rng.normal(0, 0.002, 500), x)
        assert rep.one_factor.coef[1] == pytest.approx(0.97, abs=0.02)
        assert rep.one_factor.r2 > 0.95
        assert rep.two_factor is None and rep.notes

    def test_battery(self):
        rng = np.random.default_rng(11)
        f, eq, vx = rng.normal(size=(3, 60))
        y = f + 0.2 * eq + 0.1 * vx + rng.normal(0, 0.1, 60)
        vx[3] = np.nan
        rep = factor_regressions(y, f, eq, vx)
        assert rep.two_factor.n == 60 and rep.three_factor.n == 59
        d = rep.as_dict()
        assert set(d["three_factor"]) == {"n", "r2", "alpha", "alpha_t", "beta", "beta_t", "b_eq", "b_eq_t",
                                          "b_vx", "b_vx_t"}
        with pytest.raises(InsufficientDataError):
            factor_regressions(y[:9], f[:9])

    def test_periods(self):
        dates = business_dates(900)
        rng = np.random.default_rng(12)
        f = rng.normal(size=900)
        regs = period_regressions(dates, f + rng.normal(0, 0.1, 900), f)
        assert "all" in regs and "2010-2012" in regs
        assert all(0 <= r.one_factor.r2 <= 1 for r in regs.values())


class TestSlidingWindow:
    def test_rebalance_points(self):
        dates = business_dates(200)
        pts = rebalance_points(dates, 126)
        assert all(p >= 126 for p in pts)
        months = dates.astype("datetime64[M]")
        assert all(months[p] != months[p - 1] for p in pts)
        assert rebalance_points(dates, 126, 20) == [126, 146, 166, 186]

    def test_adapted_weights(self):
        fm = gen_factor_market(FactorMarketSpec(n_names=60, T=220, maturities=(30, 60), deltas=(50, 30), seed=1))
        run = sliding_window_run(fm.surfaces, window=100)
        first = run.rebalances[0]
        assert first.index >= 100
        # re-estimating on data truncated at the rebalance date gives the same weights
        cut = fm.surfaces.slice_dates(0, first.index + 1)
        raw = np.diff(cut.implied_vol, axis=0) / cut.implied_vol[:-1]
        block = raw.reshape(raw.shape[0], -1).T[:, first.index - 100:first.index]
        p = standardize(block)
        w = eigenportfolio(svd_panel(p), p.row_stds).weights
        np.testing.assert_allclose(first.weights, w, atol=1e-12)
        assert run.ep_index.size == run.dates.size + 1

    def test_shift_invariance(self):
        fm = gen_factor_market(FactorMarketSpec(n_names=60, T=260, maturities=(30, 60), deltas=(50, 30), seed=2))
        s = fm.surfaces
        a = sliding_window_run(s, window=100, rebalance=21)
        b = sliding_window_run(s.slice_dates(21, len(s.dates)), window=100, rebalance=21)
        assert [r.index for r in a.rebalances[:2]] == [100, 121]
        assert b.rebalances[0].index == 100
        np.testing.assert_allclose(b.rebalances[0].weights, a.rebalances[1].weights, atol=1e-12)
        np.testing.assert_allclose(b.ep_returns, a.ep_returns[21:], atol=1e-14)

    def test_constant_returns(self):
        days = 200
        dates = business_dates(days)
        shape = (days, 40, 2, 2)
        iv = 0.2 * 1.001 ** np.arange(days)[:, None, None, None] * np.ones(shape)
        s = SurfacePanel(dates, tuple(f"N{i}" for i in range(40)), iv, np.ones(shape, dtype=int), np.ones(shape),
                         np.full(shape[:2], 100.0), (30, 60), (50, 30))
        with pytest.raises(EmptyResultError):
            sliding_window_run(s, window=60)

    def test_tracking(self):
        fm = gen_factor_market(FactorMarketSpec(n_names=100, T=400, maturities=(30, 60), deltas=(50, 30), seed=3))
        run = sliding_window_run(fm.surfaces, window=126)
        assert np.corrcoef(run.ep_returns, run.factor_returns)[0, 1] > 0.95
        assert tracking_error_ratio(run.ep_returns, run.factor_returns) < 0.1

    def test_errors(self):
        fm = gen_factor_market(FactorMarketSpec(n_names=10, T=100, maturities=(30,), deltas=(50,), seed=4))
        with pytest.raises(DomainError):
            sliding_window_run(fm.surfaces, window=20)
        with pytest.raises(InsufficientDataError):
            sliding_window_run(fm.surfaces, window=90)

    def test_weight_panel(self):
        fm = gen_factor_market(FactorMarketSpec(n_names=3, T=5, maturities=(30,), deltas=(50,), seed=5))
        s = fm.surfaces
        w = weight_panel(s, "log_oi_vega")
        expect = np.log1p(s.open_interest) * s.implied_vol * s.vega / s.underlying[:, :, None, None]
        np.testing.assert_allclose(w, expect)
        np.testing.assert_array_equal(weight_panel(s, "plain_oi"), s.open_interest)
