"""Two-stage Poisson maximum-likelihood calibration of the two-layer
multi-population baseline, plus the joint random-walk fit of the period
effects.

Both stages maximize a Poisson log-likelihood of the bilinear form
``sum(D * (base + a + b*k) - E * exp(base + a + b*k))`` with alternating
per-block Newton updates (the a-update is exact; the b- and k-updates are
damped Newton steps so the likelihood log is monotone).  Identification
constraints (mean-zero period effect, unit-norm age effect) are reapplied
after every sweep, which leaves the likelihood unchanged.
"""

from __future__ import annotations

import logging

import numpy as np

from .datastore import GENDERS, BaselineModel
from .errors import NumericalError, ValidationError

log = logging.getLogger(__name__)

REL_TOL = 1e-10
MAX_ITER = 10_000


def _loglik(D, E, base, a, b, k, mask):
    eta = base + a[:, None] + np.outer(b, k)
    with np.errstate(over="raise"):
        try:
            val = np.where(mask, D * eta - E * np.exp(eta), 0.0).sum()
        except FloatingPointError:
            return -np.inf
    return val


def _damped_update(D, E, base, a, b, k, mask, which, delta, lnl_before):
    """Apply a Newton step to one block, halving until lnL does not drop."""
    step = 1.0
    for _ in range(40):
        if which == "b":
            cand = _loglik(D, E, base, a, b + step * delta, k, mask)
            if cand >= lnl_before - 1e-13 * (abs(lnl_before) + 1.0):
                return b + step * delta, cand
        else:
            cand = _loglik(D, E, base, a, b, k + step * delta, mask)
            if cand >= lnl_before - 1e-13 * (abs(lnl_before) + 1.0):
                return k + step * delta, cand
        step *= 0.5
    return (b, lnl_before) if which == "b" else (k, lnl_before)


def fit_bilinear_poisson(D, E, base=None, fit_level=True, a0=None, b0=None, k0=None,
                         rel_tol=REL_TOL, max_iter=MAX_ITER):
    """Core alternating-Newton fit of ``D ~ Poisson(E * exp(base + a + b k))``.

    Cells with ``E == 0`` (or NaN in either array) are excluded from the
    likelihood.  When ``fit_level`` is False the per-age level ``a`` stays
    fixed at ``a0`` (zero by default) and the period effect is not centered.
    Returns ``(a, b, k, trace)`` where ``trace`` is the iteration log of
    (iteration, lnL, max parameter change) tuples.
    """
    D = np.asarray(D, dtype=float)
    E = np.asarray(E, dtype=float)
    nx, nt = D.shape
    mask = np.isfinite(D) & np.isfinite(E) & (E > 0)
    if not mask.any():
        raise NumericalError("no usable cells in likelihood")
    if (D[mask] < 0).any():
        raise ValidationError("negative death counts in likelihood")
    base = np.zeros((nx, nt)) if base is None else np.asarray(base, dtype=float)

    Dm = np.where(mask, D, 0.0)
    Em = np.where(mask, E, 0.0)
    if a0 is not None:
        a = np.asarray(a0, dtype=float).copy()
    elif fit_level:
        with np.errstate(divide="ignore"):
            rows_d = Dm.sum(axis=1)
            rows_e = (Em * np.exp(np.where(mask, base, 0.0))).sum(axis=1)
            a = np.where(rows_d > 0, np.log(np.maximum(rows_d, 1e-300) / np.maximum(rows_e, 1e-300)), -20.0)
    else:
        a = np.zeros(nx)
    b = (np.full(nx, 1.0 / np.sqrt(nx)) if b0 is None else np.asarray(b0, dtype=float).copy())
    k = (np.zeros(nt) if k0 is None else np.asarray(k0, dtype=float).copy())

    lnl = _loglik(D, E, base, a, b, k, mask)
    if not np.isfinite(lnl):
        raise NumericalError("non-finite log-likelihood at starting values")
    trace = [(0, lnl, np.inf)]
    for it in range(1, max_iter + 1):
        prev = (a.copy(), b.copy(), k.copy())
        eta = base + a[:, None] + np.outer(b, k)
        dhat = np.where(mask, Em * np.exp(eta), 0.0)

        if fit_level:
            rows_d = Dm.sum(axis=1)
            rows_h = dhat.sum(axis=1)
            ok = (rows_d > 0) & (rows_h > 0)
            a = a + np.where(ok, np.log(np.maximum(rows_d, 1e-300) / np.maximum(rows_h, 1e-300)), 0.0)
            eta = base + a[:, None] + np.outer(b, k)
            dhat = np.where(mask, Em * np.exp(eta), 0.0)
            lnl = _loglik(D, E, base, a, b, k, mask)

        resid = Dm - dhat
        num = resid @ k
        den = dhat @ (k * k)
        delta_b = np.where(den > 0, num / np.maximum(den, 1e-300), 0.0)
        b, lnl = _damped_update(D, E, base, a, b, k, mask, "b", delta_b, lnl)

        eta = base + a[:, None] + np.outer(b, k)
        dhat = np.where(mask, Em * np.exp(eta), 0.0)
        resid = Dm - dhat
        num = b @ resid
        den = (b * b) @ dhat
        delta_k = np.where(den > 0, num / np.maximum(den, 1e-300), 0.0)
        k, lnl = _damped_update(D, E, base, a, b, k, mask, "k", delta_k, lnl)

        # Reapply identification constraints; likelihood-neutral.
        if fit_level:
            shift = k.mean()
            k = k - shift
            a = a + b * shift
        norm = np.linalg.norm(b)
        if norm > 0:
            b = b / norm
            k = k * norm

        lnl_new = _loglik(D, E, base, a, b, k, mask)
        if not np.isfinite(lnl_new):
            raise NumericalError("non-finite log-likelihood during iteration", trace)
        change = max(
            np.abs(a - prev[0]).max(), np.abs(b - prev[1]).max(), np.abs(k - prev[2]).max()
        )
        trace.append((it, lnl_new, change))
        if abs(lnl_new - lnl_before_sweep(trace)) <= rel_tol * (abs(lnl_new) + 1.0):
            return a, b, k, trace
        lnl = lnl_new
    raise NumericalError(f"no convergence after {max_iter} iterations", trace)


def lnl_before_sweep(trace):
    return trace[-2][1]


def calibrate_common(panel, rel_tol=REL_TOL, max_iter=MAX_ITER):
    """Stage one: fit the common (A, B, K) per gender on aggregated data.

    The sign convention makes K decreasing overall (mortality improves);
    constraints: sum K = 0, ||B|| = 1.
    """
    D, E = panel.aggregate()
    out = {}
    for gi, g in enumerate(GENDERS):
        a, b, k, trace = fit_bilinear_poisson(D[gi], E[gi], rel_tol=rel_tol, max_iter=max_iter)
        if np.sum(np.diff(k)) > 0:
            b, k = -b, -k
        out[g] = (a, b, k, trace)
        log.info("common stage %s: %d iterations, lnL=%.6f", g, trace[-1][0], trace[-1][1])
    return out


def calibrate_country(panel, country, common, rel_tol=REL_TOL, max_iter=MAX_ITER):
    """Stage two: fit (alpha, beta, kappa) for one country given the common
    layer as a fixed offset.  Sign convention: sum(beta) >= 0."""
    D, E = panel.country(country)
    out = {}
    for gi, g in enumerate(GENDERS):
        _, B, K, _ = common[g]
        base = np.outer(B, K)
        a, b, k, trace = fit_bilinear_poisson(
            D[gi], E[gi], base=base, rel_tol=rel_tol, max_iter=max_iter
        )
        if b.sum() < 0:
            b, k = -b, -k
        out[g] = (a, b, k, trace)
        log.info("country stage %s/%s: %d iterations, lnL=%.6f", country, g, trace[-1][0], trace[-1][1])
    return out


def calibrate_baseline(panel, rel_tol=REL_TOL, max_iter=MAX_ITER, with_time_series=True,
                       traces=None):
    """Run both stages over all countries and genders; returns a BaselineModel.

    When ``traces`` is a dict it is populated with the iteration logs, keyed
    ("common", g) and (country, g).
    """
    common = calibrate_common(panel, rel_tol=rel_tol, max_iter=max_iter)
    A = {g: common[g][0] for g in GENDERS}
    B = {g: common[g][1] for g in GENDERS}
    K = {g: common[g][2] for g in GENDERS}
    if traces is not None:
        for g in GENDERS:
            traces[("common", g)] = common[g][3]
    alpha, beta, kappa = {}, {}, {}
    for c in panel.countries:
        stage2 = calibrate_country(panel, c, common, rel_tol=rel_tol, max_iter=max_iter)
        for g in GENDERS:
            alpha[(c, g)], beta[(c, g)], kappa[(c, g)], _ = stage2[g]
            if traces is not None:
                traces[(c, g)] = stage2[g][3]
    model = BaselineModel(
        countries=panel.countries, ages=panel.ages, years=panel.years,
        A=A, B=B, K=K, alpha=alpha, beta=beta, kappa=kappa,
    )
    if with_time_series:
        model = fit_time_series(model)
    return model.validate()


# ---------------------------------------------------------------------------
# likelihoods and analytic scores, exposed for gradient checking


def loglik_common(A, B, K, D, E):
    eta = A[:, None] + np.outer(B, K)
    mask = E > 0
    return np.where(mask, D * eta - E * np.exp(eta), 0.0).sum()


def score_common(A, B, K, D, E):
    """Analytic gradient of `loglik_common` -> (dA, dB, dK)."""
    eta = A[:, None] + np.outer(B, K)
    mask = E > 0
    resid = np.where(mask, D - E * np.exp(eta), 0.0)
    return resid.sum(axis=1), resid @ K, B @ resid


def loglik_country(alpha, beta, kappa, base, D, E):
    eta = base + alpha[:, None] + np.outer(beta, kappa)
    mask = E > 0
    return np.where(mask, D * (alpha[:, None] + np.outer(beta, kappa)) - E * np.exp(eta), 0.0).sum()


def score_country(alpha, beta, kappa, base, D, E):
    eta = base + alpha[:, None] + np.outer(beta, kappa)
    mask = E > 0
    resid = np.where(mask, D - E * np.exp(eta), 0.0)
    return resid.sum(axis=1), resid @ kappa, beta @ resid


# ---------------------------------------------------------------------------
# time-series layer


def series_labels(countries):
    labels = [f"K|{g}" for g in GENDERS]
    labels += [f"kappa|{c}|{g}" for c in countries for g in GENDERS]
    return tuple(labels)


def fit_time_series(model):
    """Joint random walk with drift for all period effects.

    Drift is the mean first difference per series; the innovation covariance
    is the MLE (divisor n) of the stacked residuals.  The country-specific
    drifts delta are reported with t-statistics but forced to zero for
    projection, so that countries do not diverge from the common trend.
    """
    nt = len(model.years)
    if nt < 3:
        raise NumericalError("time-series fit needs at least 3 time points")
    series = [model.K[g] for g in GENDERS]
    series += [model.kappa[(c, g)] for c in model.countries for g in GENDERS]
    diffs = np.stack([np.diff(s) for s in series])  # (nseries, nt-1)
    n = diffs.shape[1]
    drift = diffs.mean(axis=1)
    resid = diffs - drift[:, None]
    sigma = resid @ resid.T / n
    with np.errstate(divide="ignore", invalid="ignore"):
        tstat = np.where(np.diag(sigma) > 0, drift / np.sqrt(np.diag(sigma) / n), np.inf * np.sign(drift))
    theta = {g: drift[i] for i, g in enumerate(GENDERS)}
    delta, delta_tstat = {}, {}
    idx = len(GENDERS)
    for c in model.countries:
        for g in GENDERS:
            delta[(c, g)] = drift[idx]
            delta_tstat[(c, g)] = float(tstat[idx])
            idx += 1
    from dataclasses import replace

    return replace(
        model, theta=theta, delta=delta, delta_tstat=delta_tstat,
        sigma=sigma, series=series_labels(model.countries),
    )


def project_period_effects(model, years_ahead):
    """Central projection: common effect drifts at theta, country deviations
    stay at their last calibrated value (drift forced to zero)."""
    h = np.asarray(years_ahead)
    K = {g: model.K[g][-1] + model.theta[g] * h for g in GENDERS}
    kappa = {key: np.full(len(h), model.kappa[key][-1]) for key in model.kappa}
    return K, kappa


def baseline_mu(model, country, gender, ages, years):
    """Force of mortality mu[x, t] under the two-layer model.

    Calibration years return the fitted values; later years use the central
    projection (common drift, zero country drift).  Ages must lie inside the
    model's calibration range.
    """
    ages = np.atleast_1d(np.asarray(ages))
    years = np.atleast_1d(np.asarray(years))
    ai = np.searchsorted(model.ages, ages)
    if (ai >= len(model.ages)).any() or (model.ages[np.minimum(ai, len(model.ages) - 1)] != ages).any():
        raise ValidationError(f"ages outside model range {model.ages[0]}..{model.ages[-1]}")
    last = model.years[-1]
    K = np.empty(len(years))
    kap = np.empty(len(years))
    for j, t in enumerate(years):
        if t <= last:
            yj = np.searchsorted(model.years, t)
            if yj >= len(model.years) or model.years[yj] != t:
                raise ValidationError(f"year {t} before calibration range")
            K[j] = model.K[gender][yj]
            kap[j] = model.kappa[(country, gender)][yj]
        else:
            K[j] = model.K[gender][-1] + model.theta[gender] * (t - last)
            kap[j] = model.kappa[(country, gender)][-1]
    B = model.B[gender][ai]
    alpha = model.alpha[(country, gender)][ai]
    beta = model.beta[(country, gender)][ai]
    return np.exp(np.outer(B, K) + alpha[:, None] + np.outer(beta, kap))


def simulate_period_effects(model, horizon, n_sims, rng):
    """Draw joint random-walk paths for all period effects.

    Returns an array of shape (n_sims, nseries, horizon) of simulated levels;
    series order follows ``model.series``.  Country drifts are zero in
    projection per the central convention.
    """
    nseries = len(model.series)
    chol = np.linalg.cholesky(model.sigma + 1e-15 * np.eye(nseries))
    drift = np.array([model.theta[g] for g in GENDERS] + [0.0] * (nseries - len(GENDERS)))
    start = np.array(
        [model.K[g][-1] for g in GENDERS]
        + [model.kappa[(c, g)][-1] for c in model.countries for g in GENDERS]
    )
    eps = rng.standard_normal((n_sims, horizon, nseries)) @ chol.T
    steps = drift[None, None, :] + eps
    return start[None, :, None] + np.cumsum(steps, axis=1).transpose(0, 2, 1)
