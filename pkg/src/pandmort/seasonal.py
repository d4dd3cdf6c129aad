"""Estimation of the multiplicative weekly seasonal effect.

The weekly fraction of annual mortality is computed per historical year,
averaged across years, and smoothed with a periodic (cyclic) cubic spline so
that value and derivatives match across the week-52/week-1 boundary.  The
result is normalized to mean one over weeks 1..52; week 53 repeats week 52.
"""

from __future__ import annotations

import numpy as np
from scipy.interpolate import BSpline

from .datastore import MAX_WEEKS, SeasonalEffect
from .errors import NumericalError, ValidationError

PERIOD = 52.0
DEFAULT_KNOTS = 12


def weekly_fractions(panel):
    """Observed fraction of annual mortality per week, scaled so 1 means a
    uniform spread: f[t, w] = D[t, w] / sum_w D[t, w] * w_t.

    ``panel`` is a WeeklyPanel; deaths are summed over its age axis.  Returns
    a dict year -> fraction vector of length w_t.
    """
    if len(panel.years) < 2:
        raise ValidationError("weekly fractions need at least 2 years of data")
    out = {}
    for t in panel.years:
        d, _ = panel.cells(t)
        totals = d.sum(axis=0)
        year_total = totals.sum()
        if year_total <= 0:
            raise ValidationError(f"year {t} has zero total deaths")
        out[t] = totals / year_total * panel.weeks_in_year[t]
    return out


def _basis_knots(k):
    h = PERIOD / k
    return np.arange(-3, k + 4) * h


def cyclic_design_matrix(x, k, derivative=0):
    """Design matrix of the k-coefficient periodic cubic spline basis at x.

    Built from an ordinary cubic B-spline basis on [0, 52] whose columns are
    folded modulo k, which enforces periodic continuity up to the second
    derivative.
    """
    x = np.mod(np.asarray(x, dtype=float), PERIOD)
    t = _basis_knots(k)
    spl = BSpline.design_matrix(x, t, 3).toarray() if derivative == 0 else None
    if spl is None:
        n_basis = len(t) - 4
        spl = np.empty((len(x), n_basis))
        for j in range(n_basis):
            c = np.zeros(n_basis)
            c[j] = 1.0
            spl[:, j] = BSpline(t, c, 3)(x, nu=derivative)
    folded = np.zeros((len(x), k))
    for j in range(spl.shape[1]):
        folded[:, j % k] += spl[:, j]
    return folded


def evaluate_cyclic_spline(coeffs, x, derivative=0):
    return cyclic_design_matrix(x, len(coeffs), derivative) @ coeffs


def fit_seasonal_spline(fractions, country="", gender="", knots=DEFAULT_KNOTS):
    """Least-squares periodic-spline fit to the across-year average fraction.

    ``fractions`` is the output of :func:`weekly_fractions`.  Weeks beyond 52
    (from 53-week years) are folded into the week-52 average.  The fitted
    curve must stay strictly positive; otherwise fitting fails rather than
    truncating, because the effect multiplies a force of mortality.
    """
    if knots < 4:
        raise ValidationError("cyclic spline needs at least 4 knots")
    sums = np.zeros(52)
    counts = np.zeros(52)
    for f in fractions.values():
        n = min(len(f), 52)
        sums[:n] += f[:n]
        counts[:n] += 1
        if len(f) == 53:
            sums[51] += f[52]
            counts[51] += 1
    if (counts == 0).any():
        raise ValidationError("fractions must cover all 52 weeks")
    target = sums / counts
    weeks = np.arange(1, 53, dtype=float)
    X = cyclic_design_matrix(weeks, knots)
    coeffs, *_ = np.linalg.lstsq(X, target, rcond=None)
    phi52 = X @ coeffs

    # Positivity check on a fine grid, not just the week points.
    grid = np.linspace(0.0, PERIOD, 1041)
    if (evaluate_cyclic_spline(coeffs, grid) <= 0).any():
        raise NumericalError("fitted seasonal spline is non-positive")

    scale = phi52.mean()
    coeffs = coeffs / scale
    phi52 = phi52 / scale
    phi = np.empty(MAX_WEEKS)
    phi[:52] = phi52
    phi[52] = phi52[51]
    return SeasonalEffect(country=country, gender=gender, phi=phi, knots=knots, coeffs=coeffs).validate()
