"""Calibration of the pandemic layer: an age effect and a free week effect
fitted by Poisson MLE against pre-pandemic predicted deaths.

Method 1 sets the seasonal effect to one, so seasonality ends up inside the
week effect; Method 2 applies the fitted seasonal effect to the predictions
first, so the week effect captures only the pandemic deviation.
"""

from __future__ import annotations

import logging

import numpy as np

from .baseline import baseline_mu, fit_bilinear_poisson
from .datastore import MAX_WEEKS, AgeIndex, CovidLayer, WeeklyPanel
from .errors import NumericalError, ValidationError
from .exposures import disaggregate_deaths

log = logging.getLogger(__name__)


def group_baseline_mu(model, country, gender, ages, years):
    """Baseline mu per age index: individual ages directly, groups as the
    exposure-weighted mean of their member ages (exposure weights come from
    the last calibration year)."""
    mu = np.empty((len(ages), len(years)))
    for i, a in enumerate(ages):
        member = np.fromiter(a.ages, dtype=int)
        member = member[(member >= model.ages[0]) & (member <= model.ages[-1])]
        if len(member) == 0:
            raise ValidationError(f"age index {a.label} outside baseline range")
        sub = baseline_mu(model, country, gender, member, years)
        if len(member) == 1:
            mu[i] = sub[0]
        else:
            mu[i] = sub.mean(axis=0)
    return mu


def group_baseline_mu_weighted(model, country, gender, ages, years, exposures):
    """As `group_baseline_mu` but weighting member ages by given per-age
    exposures (vector aligned with individual ages covered by ``ages``)."""
    mu = np.empty((len(ages), len(years)))
    pos = 0
    for i, a in enumerate(ages):
        member = np.fromiter(a.ages, dtype=int)
        w = np.asarray(exposures[pos : pos + len(member)], dtype=float)
        pos += len(member)
        member_mask = (member >= model.ages[0]) & (member <= model.ages[-1])
        member, w = member[member_mask], w[member_mask]
        if len(member) == 0 or w.sum() <= 0:
            raise ValidationError(f"age index {a.label}: no usable member ages")
        sub = baseline_mu(model, country, gender, member, years)
        mu[i] = (w[:, None] * sub).sum(axis=0) / w.sum()
    return mu


def predicted_deaths(panel, mu, seasonal=None, method=2):
    """Expected weekly deaths from the pre-pandemic model: E * mu * phi.

    ``mu`` has shape (nages, nyears) on the panel's age indices; under
    Method 1 phi is identically one, under Method 2 the fitted SeasonalEffect
    is required.  Returns an array shaped like ``panel.deaths`` (NaN-padded).
    """
    if method not in (1, 2):
        raise ValidationError("method must be 1 or 2")
    if method == 2 and seasonal is None:
        raise ValidationError("Method 2 requires a fitted seasonal effect")
    panel.validate(require_exposures=True)
    phi = np.ones(MAX_WEEKS) if method == 1 else seasonal.phi
    pred = np.full_like(panel.deaths, np.nan)
    for j, t in enumerate(panel.years):
        wt = panel.weeks_in_year[t]
        pred[:, j, :wt] = panel.exposures[:, j, :wt] * mu[:, j : j + 1] * phi[None, :wt]
    return pred


def calibrate_covid(panel, pred, method, rel_tol=1e-10, max_iter=10_000):
    """Fit the pandemic age effect B and week effect K.

    Maximizes sum(D * B K - Dpred * exp(B K)) over used cells, with ||B|| = 1
    and sum(B) >= 0; K is free per (year, week).  Returns a CovidLayer.
    """
    nages = len(panel.ages)
    cols = []
    col_keys = []
    for j, t in enumerate(panel.years):
        for w in range(1, panel.weeks_in_year[t] + 1):
            cols.append((panel.deaths[:, j, w - 1], pred[:, j, w - 1]))
            col_keys.append((t, w))
    D = np.stack([c[0] for c in cols], axis=1)
    P = np.stack([c[1] for c in cols], axis=1)
    if not np.isfinite(D).all() or not np.isfinite(P).all():
        raise ValidationError("non-finite cells in pandemic calibration")
    if (P <= 0).any():
        raise ValidationError("predicted deaths must be positive on all used cells")
    if D.sum() == 0:
        raise NumericalError("all-zero death counts; pandemic layer undefined")

    # Start from a uniform age effect and week effects matching weekly totals.
    b0 = np.full(nages, 1.0 / np.sqrt(nages))
    tot_d = D.sum(axis=0)
    tot_p = P.sum(axis=0)
    with np.errstate(divide="ignore"):
        k0 = np.where(tot_d > 0, np.sqrt(nages) * np.log(np.maximum(tot_d, 1e-300) / tot_p), 0.0)
    _, b, k, trace = fit_bilinear_poisson(
        D, P, fit_level=False, b0=b0, k0=k0, rel_tol=rel_tol, max_iter=max_iter
    )
    if b.sum() < 0:
        b, k = -b, -k
    log.info(
        "pandemic stage %s/%s method %d: %d iterations, lnL=%.6f",
        panel.country, panel.gender, method, trace[-1][0], trace[-1][1],
    )
    K = np.full((len(panel.years), MAX_WEEKS), np.nan)
    for (t, w), kv in zip(col_keys, k):
        K[panel.years.index(t), w - 1] = kv
    return CovidLayer(
        country=panel.country, gender=panel.gender, ages=panel.ages,
        years=panel.years, weeks_in_year=dict(panel.weeks_in_year),
        method=method, B=b, K=K,
    ).validate()


def loglik_covid(b, k, D, P):
    eta = np.outer(b, k)
    return (D * eta - P * np.exp(eta)).sum()


def score_covid(b, k, D, P):
    """Analytic gradient of `loglik_covid` -> (db, dk)."""
    resid = D - P * np.exp(np.outer(b, k))
    return resid @ k, b @ resid


def flatten_weeks(layer_or_panel, array):
    """Flatten a (nyears, 53) NaN-padded week array to the used columns."""
    vals = []
    for j, t in enumerate(layer_or_panel.years):
        vals.extend(array[j, : layer_or_panel.weeks_in_year[t]])
    return np.array(vals)


GRANULARITY_LEVELS = {
    2: [(lo, min(lo + 4, 200)) for lo in range(0, 95, 5)],
    3: [(0, 14), (15, 64), (65, 74), (75, 84), (85, 200)],
}


def aggregate_to_groups(panel, bounds):
    """Sum an individual-age WeeklyPanel into contiguous age groups.

    ``bounds`` is a list of (low, high) pairs; the final group is clipped to
    the panel's top age.
    """
    if not all(a.is_individual for a in panel.ages):
        raise ValidationError("aggregation requires individual-age data")
    ages = np.array([a.low for a in panel.ages])
    top = ages.max()
    groups = []
    rows = []
    for lo, hi in bounds:
        hi = min(hi, top)
        if lo > top:
            break
        sel = (ages >= lo) & (ages <= hi)
        if not sel.any():
            continue
        groups.append(AgeIndex(lo, hi))
        rows.append(panel.deaths[sel].sum(axis=0))
    deaths = np.stack(rows)
    expo = None
    if panel.exposures is not None:
        expo = np.stack(
            [panel.exposures[(ages >= g.low) & (ages <= g.high)].sum(axis=0) for g in groups]
        )
    return WeeklyPanel(
        country=panel.country, gender=panel.gender, ages=tuple(groups),
        years=panel.years, weeks_in_year=dict(panel.weeks_in_year),
        deaths=deaths, exposures=expo,
    )


def run_granularity_study(panel, historical, model, seasonal, levels=(1, 2, 3),
                          method=2, hist_years=range(2015, 2020)):
    """Refit the pandemic layer at several data granularities.

    Level 1 uses individual-age deaths directly; levels 2 and 3 first
    aggregate them into age groups and then disaggregate back to individual
    ages by historical shares, exactly as for externally grouped data.
    Requires an individual-age ``panel`` with exposures.
    """
    if not all(a.is_individual for a in panel.ages):
        raise ValidationError("granularity study requires individual-age input data")
    panel.validate(require_exposures=True)
    results = {}
    for level in levels:
        if level == 1:
            work = panel
        else:
            grouped = aggregate_to_groups(panel, GRANULARITY_LEVELS[level])
            work = disaggregate_deaths(grouped, historical, hist_years)
            from dataclasses import replace

            work = replace(work, exposures=panel.exposures)
        years = work.years
        mu = group_baseline_mu(model, work.country, work.gender, work.ages, years)
        pred = predicted_deaths(work, mu, seasonal=seasonal, method=method)
        results[level] = calibrate_covid(work, pred, method)
    return results
