import numpy as np
import pytest

import pandmort.annualize_forecast as af
import pandmort.synthetic as sy
from pandmort.datastore import CovidLayer, ScenarioSpec
from pandmort.errors import ValidationError
from util import assert_covid_constraints


def make_layer(ages, seed=3, amplitude=0.35):
    pand = sy.make_pandemic_truth(ages, seed=seed, amplitude=amplitude)
    return CovidLayer(
        country="AAA", gender="m", ages=tuple(ages), years=(2020, 2021),
        weeks_in_year={2020: 53, 2021: 52}, method=2,
        B=pand["B"], K=pand["K"],
    )


@pytest.fixture(scope="module")
def annualized():
    ages = np.arange(35, 91)
    layer = make_layer(ages)
    phi = sy.seasonal_phi(0.2)
    rng = np.random.default_rng(7)
    mu = rng.uniform(1e-3, 0.1, (len(ages), 2))
    return af.annualize(layer, phi, mu), phi, mu


def test_annualize_survival_identity(annualized):
    layer, phi, mu = annualized
    gap = af.annual_survival_gap(layer, phi, mu)
    assert gap.max() < 1e-10
    assert_covid_constraints(layer)
    assert layer.X.shape == (2,)
    # positive pandemic effect in both years
    assert (layer.X > 0).all()


def test_annualize_renormalization_preserves_products(annualized):
    layer, phi, mu = annualized
    # recompute without the final normalization: V'_x X'_t must match V_x X_t
    m = af.weekly_mean_factor(layer, phi)
    X_raw = np.log(m).sum(axis=0)
    from scipy.optimize import brentq

    V_raw = np.empty(len(layer.ages))
    for i in range(len(layer.ages)):
        V_raw[i] = brentq(
            lambda v: float((mu[i] * (np.exp(v * X_raw) - m[i])).sum()),
            -af.BRACKET, af.BRACKET, xtol=af.ROOT_TOL,
        )
    np.testing.assert_allclose(
        np.outer(V_raw, X_raw), np.outer(layer.V, layer.X), atol=1e-12
    )


def test_annualize_degenerate_zero_effect():
    ages = np.arange(40, 60)
    layer = make_layer(ages)
    layer = CovidLayer(
        country="AAA", gender="m", ages=layer.ages, years=layer.years,
        weeks_in_year=layer.weeks_in_year, method=2, B=layer.B,
        K=np.where(np.isnan(layer.K), np.nan, 0.0),
    )
    mu = np.full((20, 2), 0.01)
    out = af.annualize(layer, np.ones(53), mu)
    assert out.degenerate
    np.testing.assert_array_equal(out.X, 0.0)
    assert abs(np.linalg.norm(out.V) - 1.0) < 1e-12


def test_annualize_shape_check(annualized):
    layer, phi, mu = annualized
    with pytest.raises(ValidationError):
        af.annualize(layer, phi, mu[:-1])


def test_build_scenario_path():
    spec = ScenarioSpec("s", 1.0, 0.0, 0.5, 4)
    np.testing.assert_allclose(af.build_scenario(spec), [0.5, 0.25, 0.125, 0.0625])
    const = ScenarioSpec("s", 2.0, 2.0, 0.5, 3)
    np.testing.assert_allclose(af.build_scenario(const), 2.0)


def test_standard_scenarios_parameterization():
    scens = {s.name: s for s in af.standard_scenarios(0.8, eta=0.3, horizon=20)}
    assert len(scens) == 6
    assert scens["completely_incidental"].x_start == 0.0
    assert scens["completely_structural"].x_infinity == 0.8
    assert scens["growing_impact"].x_infinity == pytest.approx(1.0)
    assert scens["new_normal"].x_infinity == pytest.approx(0.2)
    assert scens["increased_resilience"].x_infinity == pytest.approx(-0.2)
    for s in scens.values():
        assert s.eta == 0.3 and s.horizon == 20


def test_extend_age_effect():
    V = np.array([0.5, 0.6, 0.7])
    ext = af.extend_age_effect(V, np.array([40, 41, 42]), np.arange(38, 46))
    np.testing.assert_allclose(ext, [0.0, 0.0, 0.5, 0.6, 0.7, 0.7, 0.7, 0.7])
    with pytest.raises(ValidationError):
        af.extend_age_effect(V, np.array([40, 41, 43]), np.arange(40, 44))


def test_extended_baseline_mu_loglinear_tail(baseline_model):
    years = np.arange(2022, 2025)
    mu = af.extended_baseline_mu(baseline_model, "AAA", "m", years)
    assert mu.shape == (121, 3)
    # the extrapolated tail continues the 80..90 log-linear trend
    lnmu = np.log(mu[:, 0])
    slope = np.polyfit(np.arange(80, 91, dtype=float), lnmu[80:91], 1)[0]
    tail_slopes = np.diff(lnmu[91:])
    np.testing.assert_allclose(tail_slopes, slope, rtol=1e-8)


def test_life_expectancy_flat_rates():
    # constant q: geometric survival, closed form for the truncated table
    q = 0.2
    max_age = 50
    ages = np.arange(0, 51)
    years = np.arange(2000, 2002)
    table = np.full((51, 2), q)
    e = af.life_expectancy(table, ages, years, 0, 2000, "period", max_age=max_age)
    k = np.arange(51)
    qs = np.full(51, q)
    qs[-1] = 1.0
    surv = np.concatenate([[1.0], np.cumprod(1.0 - qs[:-1])])
    expected = (surv * (1.0 - qs / 2.0)).sum()
    assert e == pytest.approx(expected, rel=1e-12)


def test_life_expectancy_period_equals_cohort_under_constant_q():
    ages = np.arange(0, 121)
    years = np.arange(2000, 2125)
    rng = np.random.default_rng(0)
    col = rng.uniform(0.01, 0.2, 121)
    table = np.tile(col[:, None], (1, len(years)))
    ep = af.life_expectancy(table, ages, years, 65, 2000, "period")
    ec = af.life_expectancy(table, ages, years, 65, 2000, "cohort")
    assert ep == pytest.approx(ec, rel=1e-12)


def test_life_expectancy_cohort_needs_horizon():
    ages = np.arange(0, 121)
    years = np.arange(2000, 2005)
    table = np.full((121, 5), 0.1)
    with pytest.raises(ValidationError):
        af.life_expectancy(table, ages, years, 0, 2003, "cohort")


def test_forecast_scenarios_end_to_end(baseline_model):
    calib_ages = np.arange(35, 91)
    rng = np.random.default_rng(1)
    V = np.abs(rng.normal(0.1, 0.05, len(calib_ages)))
    V /= np.linalg.norm(V)
    scens = af.standard_scenarios(0.8)
    fs = af.forecast_scenarios(baseline_model, "AAA", "m", V, calib_ages, 0.8,
                               scens, report_years=5)
    assert set(fs.mu) == {s.name for s in scens}
    assert fs.mu["new_normal"].shape == (121, 5)
    # structural scenario worsens mortality relative to incidental at V > 0 ages
    V_ext = af.extend_age_effect(V, calib_ages, fs.ages)
    pos = V_ext > 0
    assert (fs.mu["completely_structural"][pos] > fs.mu["completely_incidental"][pos]).all()
    assert (
        fs.e_period["completely_structural"][0, 0]
        < fs.e_period["completely_incidental"][0, 0]
    )
