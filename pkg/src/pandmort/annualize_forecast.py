"""Weekly-to-annual transformation of the pandemic effects, scenario paths
for the annual period effect, and mortality-rate / life-expectancy
forecasts.

The annual effects (V, X) are defined by matching the annual survival
probability to the product of weekly survival probabilities.  X has a closed
form under a temporary sum-one convention on V; V then solves a monotone
scalar equation per age, and both are renormalized to ||V|| = 1 at the end,
which leaves every product V_x * X_t unchanged.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np
from scipy.optimize import brentq

from .datastore import GENDERS, ForecastSet, ScenarioSpec
from .errors import NumericalError, ValidationError

BRACKET = 10.0
ROOT_TOL = 1e-12
DEGENERATE_TOL = 1e-12
DEFAULT_MAX_AGE = 120


def weekly_mean_factor(layer, phi):
    """m[x, t] = (1/w_t) sum_w phi_w exp(B_x K_{t,w}) for the fitted years."""
    m = np.empty((len(layer.ages), len(layer.years)))
    for j, t in enumerate(layer.years):
        wt = layer.weeks_in_year[t]
        k = layer.K[j, :wt]
        m[:, j] = (phi[None, :wt] * np.exp(np.outer(layer.B, k))).mean(axis=1)
    return m


def annualize(layer, phi, mu):
    """Transform the weekly pandemic effects into annual effects (V, X).

    ``phi`` is the length-53 seasonal vector used in the fit (ones under
    Method 1) and ``mu`` the annual baseline forces, shape (nages, nyears) on
    the layer's age indices and years.  Returns a new CovidLayer carrying V
    and X.  If X vanishes in every year the age effect is unidentifiable and
    a flagged uniform vector is returned instead of failing.
    """
    if mu.shape != (len(layer.ages), len(layer.years)):
        raise ValidationError("annualize: mu shape does not match the layer")
    m = weekly_mean_factor(layer, phi)
    X = np.log(m).sum(axis=0)

    if np.abs(X).max() < DEGENERATE_TOL:
        n = len(layer.ages)
        V = np.full(n, 1.0 / np.sqrt(n))
        return replace(layer, V=V, X=np.zeros_like(X), degenerate=True)

    V = np.empty(len(layer.ages))
    for i in range(len(layer.ages)):
        mu_i = mu[i]
        m_i = m[i]

        def gap(v):
            return float((mu_i * (np.exp(v * X) - m_i)).sum())

        lo, hi = gap(-BRACKET), gap(BRACKET)
        if lo == 0.0:
            V[i] = -BRACKET
        elif hi == 0.0:
            V[i] = BRACKET
        elif np.sign(lo) == np.sign(hi):
            raise NumericalError(
                f"annualize: no sign change in bracket for age index {i} "
                f"(gap({-BRACKET})={lo:.3g}, gap({BRACKET})={hi:.3g})"
            )
        else:
            V[i] = brentq(gap, -BRACKET, BRACKET, xtol=ROOT_TOL)

    norm = np.linalg.norm(V)
    if norm == 0:
        raise NumericalError("annualize: zero age-effect vector")
    return replace(layer, V=V / norm, X=X * norm)


def annual_survival_gap(layer, phi, mu):
    """Relative gap per age between the annual and weekly two-year survival
    probabilities; the defining identity of the annualization."""
    m = weekly_mean_factor(layer, phi)
    lhs = np.exp(-(mu * np.exp(np.outer(layer.V, layer.X))).sum(axis=1))
    rhs = np.exp(-(mu * m).sum(axis=1))
    return np.abs(lhs - rhs) / rhs


def build_scenario(spec, x_2021=None):
    """Annual pandemic period-effect path for h = 1..horizon:
    X_{start} * eta^h + (1 - eta^h) * X_{infinity}."""
    spec.validate()
    h = np.arange(1, spec.horizon + 1)
    w = spec.eta**h
    return spec.x_start * w + (1.0 - w) * spec.x_infinity


def standard_scenarios(x_2021, eta=0.5, horizon=50):
    """The six shipped scenario specifications, parameterized by the fitted
    final-year annual effect."""
    return (
        ScenarioSpec("completely_incidental", 0.0, 0.0, eta, horizon),
        ScenarioSpec("completely_structural", x_2021, x_2021, eta, horizon),
        ScenarioSpec("decreasing_impact", x_2021, 0.0, eta, horizon),
        ScenarioSpec("growing_impact", x_2021, 1.25 * x_2021, eta, horizon),
        ScenarioSpec("new_normal", x_2021, 0.25 * x_2021, eta, horizon),
        ScenarioSpec("increased_resilience", x_2021, -0.25 * x_2021, eta, horizon),
    )


def extend_age_effect(V, calib_ages, full_ages):
    """Extend the annual age effect to a full age range: zero below the
    calibrated range, constant at the top calibrated value above it."""
    calib_ages = np.asarray(calib_ages)
    full_ages = np.asarray(full_ages)
    out = np.zeros(len(full_ages), dtype=float)
    lookup = dict(zip(calib_ages.tolist(), np.asarray(V).tolist()))
    top = calib_ages.max()
    for i, x in enumerate(full_ages):
        if x < calib_ages.min():
            out[i] = 0.0
        elif x > top:
            out[i] = lookup[int(top)]
        else:
            if int(x) not in lookup:
                raise ValidationError(f"extend_age_effect: age {x} missing from calibrated range")
            out[i] = lookup[int(x)]
    return out


def scenario_mu(mu_pre, V_ext, x_path):
    """Scenario forces of mortality: mu_pre * exp(V_x X_t), plus the matching
    one-year death probabilities q = 1 - exp(-mu)."""
    mu = mu_pre * np.exp(np.outer(V_ext, x_path))
    return mu, 1.0 - np.exp(-mu)


def extended_baseline_mu(model, country, gender, years, max_age=DEFAULT_MAX_AGE,
                         extrap_ages=(80, 90)):
    """Central pre-pandemic projection on ages 0..max_age.

    Ages above the calibrated range are closed by log-linear extrapolation of
    ln(mu) over ``extrap_ages``, per year.
    """
    from .baseline import baseline_mu

    years = np.asarray(years)
    model_top = int(model.ages[-1])
    base = baseline_mu(model, country, gender, model.ages, years)
    if max_age <= model_top:
        return base[: max_age - int(model.ages[0]) + 1]
    lo, hi = extrap_ages
    sel = (model.ages >= lo) & (model.ages <= hi)
    xs = model.ages[sel].astype(float)
    lnmu = np.log(base[sel])
    out = np.empty((max_age - int(model.ages[0]) + 1, len(years)))
    out[: len(model.ages)] = base
    extra = np.arange(model_top + 1, max_age + 1, dtype=float)
    for j in range(len(years)):
        slope, intercept = np.polyfit(xs, lnmu[:, j], 1)
        out[len(model.ages) :, j] = np.exp(intercept + slope * extra)
    return out


def life_expectancy(q, ages, years, x0, t0, kind="period", max_age=DEFAULT_MAX_AGE):
    """Remaining life expectancy under the curtate-plus-half convention:
    e = sum_k (prod_{j<k} (1 - q_j)) * (1 - q_k / 2), truncated at
    ``max_age`` where q is forced to one.

    ``kind`` 'period' reads the column at t0; 'cohort' reads the diagonal
    q[x0 + k, t0 + k].
    """
    ages = np.asarray(ages)
    years = np.asarray(years)
    if kind not in ("period", "cohort"):
        raise ValidationError(f"unknown life expectancy kind {kind!r}")
    i0 = int(np.searchsorted(ages, x0))
    if i0 >= len(ages) or ages[i0] != x0:
        raise ValidationError(f"age {x0} not in table")
    j0 = int(np.searchsorted(years, t0))
    if j0 >= len(years) or years[j0] != t0:
        raise ValidationError(f"year {t0} not in table")
    n = max_age - x0 + 1
    if i0 + n > len(ages) + 1:
        raise ValidationError(f"table does not reach max age {max_age}")
    qs = np.empty(n)
    for k in range(n):
        i = i0 + k
        j = j0 + (k if kind == "cohort" else 0)
        if i >= len(ages):
            qs[k] = 1.0
            continue
        if j >= len(years):
            raise ValidationError(
                f"table shorter than needed horizon (year {t0 + k} missing)"
            )
        qs[k] = q[i, j]
    qs[-1] = 1.0
    surv = np.concatenate([[1.0], np.cumprod(1.0 - qs[:-1])])
    return float((surv * (1.0 - qs / 2.0)).sum())


def forecast_scenarios(model, country, gender, V, calib_ages, x_2021, scenarios,
                       first_year=2022, report_years=30, max_age=DEFAULT_MAX_AGE,
                       le_ages=(0, 65, 85)):
    """Build a ForecastSet for a list of ScenarioSpec.

    Internally projects far enough past the reporting window that cohort life
    expectancies up to ``max_age`` are computable for every reported year.
    """
    full_horizon = report_years + (max_age + 1)
    years_full = np.arange(first_year, first_year + full_horizon)
    ages_full = np.arange(0, max_age + 1)
    mu_pre = extended_baseline_mu(model, country, gender, years_full, max_age=max_age)
    V_ext = extend_age_effect(V, calib_ages, ages_full)
    report = np.arange(first_year, first_year + report_years)

    mu_out, q_out, ep_out, ec_out = {}, {}, {}, {}
    for spec in scenarios:
        spec = replace(spec, horizon=full_horizon)
        x_path = build_scenario(spec)
        mu, q = scenario_mu(mu_pre, V_ext, x_path)
        mu_out[spec.name] = mu[:, :report_years]
        q_out[spec.name] = q[:, :report_years]
        ep = np.empty((len(le_ages), report_years))
        ec = np.empty((len(le_ages), report_years))
        for ai, x0 in enumerate(le_ages):
            for j, t in enumerate(report):
                ep[ai, j] = life_expectancy(q, ages_full, years_full, x0, t, "period", max_age)
                ec[ai, j] = life_expectancy(q, ages_full, years_full, x0, t, "cohort", max_age)
        ep_out[spec.name] = ep
        ec_out[spec.name] = ec
    return ForecastSet(
        ages=ages_full, years=report, le_ages=tuple(le_ages), max_age=max_age,
        mu=mu_out, q=q_out, e_period=ep_out, e_cohort=ec_out,
    ).validate()
