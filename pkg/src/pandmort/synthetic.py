"""Synthetic dataset generation with known parameters.

Real annual and weekly mortality data cannot be redistributed, so the test
suite and the bundled end-to-end pipeline run on data sampled from known
two-layer baseline parameters, a known seasonal curve and known pandemic
effects, with Poisson observation noise.  Generators also write the raw
file formats the ingest module parses, so parsers are exercised end to end.
"""

from __future__ import annotations

import os

import numpy as np

from .datastore import GENDERS, AgeIndex, AnnualPanel, WeeklyPanel, MAX_WEEKS

PANDEMIC_YEARS = (2020, 2021)
PANDEMIC_WEEKS = {2020: 53, 2021: 52}


def _smooth_noise(n, rng, scale, width=7):
    raw = rng.standard_normal(n + 2 * width)
    kernel = np.hanning(2 * width + 1)
    kernel /= kernel.sum()
    return scale * np.convolve(raw, kernel, mode="same")[width:-width]


def make_baseline_truth(countries, ages, years, seed=0):
    """Known two-layer parameters satisfying all identification constraints.

    Returns a dict with per-gender A, B, K and per-(country, gender) alpha,
    beta, kappa, plus a ``ln_mu`` lookup of the true country-level log force.
    """
    rng = np.random.default_rng(seed)
    ages = np.asarray(list(ages))
    years = np.asarray(list(years))
    nx, nt = len(ages), len(years)
    truth = {"ages": ages, "years": years, "countries": tuple(countries)}
    A, B, K = {}, {}, {}
    alpha, beta, kappa = {}, {}, {}
    # Country deviations are small and arranged in opposite-signed pairs so
    # they cancel (to second order) in the aggregated intensity; otherwise
    # the two-stage decomposition is misspecified by construction and
    # recovery tests are meaningless.  With an odd country count the last
    # country carries no deviation.
    for gi, g in enumerate(GENDERS):
        A[g] = -4.6 + 4.4 * (1.0 - np.exp(-ages / 55.0)) + 0.1 * gi + _smooth_noise(nx, rng, 0.02)
        b = 1.0 + 0.5 * np.exp(-ages / 25.0) + _smooth_noise(nx, rng, 0.01)
        B[g] = b / np.linalg.norm(b)
        k = -0.4 * np.arange(nt, dtype=float) + np.cumsum(rng.standard_normal(nt)) * 0.05
        K[g] = k - k.mean()
        for ci, c in enumerate(countries):
            if ci % 2 == 0:
                a = _smooth_noise(nx, rng, 0.02)
                bb = 1.0 + _smooth_noise(nx, rng, 0.15)
                bb = bb / np.linalg.norm(bb)
                if bb.sum() < 0:
                    bb = -bb
                kk = np.cumsum(rng.standard_normal(nt)) * 0.025
                kk = kk - kk.mean()
            if ci == len(countries) - 1 and ci % 2 == 0:
                alpha[(c, g)] = A[g].copy()
                beta[(c, g)] = bb
                kappa[(c, g)] = np.zeros(nt)
            else:
                sgn = 1.0 if ci % 2 == 0 else -1.0
                alpha[(c, g)] = A[g] + sgn * a
                beta[(c, g)] = bb
                kappa[(c, g)] = sgn * kk
    truth.update(A=A, B=B, K=K, alpha=alpha, beta=beta, kappa=kappa)
    return truth


def true_ln_mu(truth, country, gender):
    """True country-level log force of mortality, shape (nages, nyears)."""
    g = gender
    return (
        np.outer(truth["B"][g], truth["K"][g])
        + truth["alpha"][(country, g)][:, None]
        + np.outer(truth["beta"][(country, g)], truth["kappa"][(country, g)])
    )


def sample_annual_panel(truth, exposure=1e7, seed=1, cohort_bump=None):
    """Poisson-sample an AnnualPanel from the truth at constant exposures.

    ``cohort_bump`` = (birth_year, factor) scales the exposures of the
    matching birth cohort, mimicking a baby-boom bulge.
    """
    rng = np.random.default_rng(seed)
    ages, years = truth["ages"], truth["years"]
    countries = truth["countries"]
    expos = np.full((len(countries), 2, len(ages), len(years)), float(exposure))
    if cohort_bump is not None:
        birth, factor = cohort_bump
        for j, t in enumerate(years):
            sel = ages == (t - birth)
            expos[:, :, sel, j] *= factor
    deaths = np.empty_like(expos)
    for ci, c in enumerate(countries):
        for gi, g in enumerate(GENDERS):
            lam = expos[ci, gi] * np.exp(true_ln_mu(truth, c, g))
            deaths[ci, gi] = rng.poisson(lam)
    return AnnualPanel(
        countries=countries, ages=ages, years=years, deaths=deaths, exposures=expos
    ).validate()


def make_pandemic_truth(ages, seed=2, amplitude=0.35):
    """Known pandemic age effect (unit norm, increasing with age) and week
    effect (two waves in 2020, one in 2021), on individual ages."""
    rng = np.random.default_rng(seed)
    ages = np.asarray(list(ages))
    b = 1.0 / (1.0 + np.exp(-(ages - 65.0) / 8.0)) + 0.05 + _smooth_noise(len(ages), rng, 0.01)
    b = np.maximum(b, 0.0)
    b = b / np.linalg.norm(b)
    K = np.full((len(PANDEMIC_YEARS), MAX_WEEKS), np.nan)

    def wave(center, width, height, n):
        w = np.arange(1, n + 1, dtype=float)
        return height * np.exp(-0.5 * ((w - center) / width) ** 2)

    k2020 = wave(14, 3.0, 9.0, 53) + wave(47, 5.0, 7.0, 53)
    k2021 = wave(4, 4.0, 4.0, 52) + wave(48, 4.0, 5.0, 52)
    K[0, :53] = amplitude * k2020
    K[1, :52] = amplitude * k2021
    return {"ages": ages, "B": b, "K": K}


def seasonal_phi(amplitude=0.2):
    """A mean-one cosine seasonal curve peaking in winter, length 53."""
    w = np.arange(1, 54, dtype=float)
    phi = 1.0 + amplitude * np.cos(2.0 * np.pi * (w - 1) / 52.0)
    phi[52] = phi[51]
    phi[:52] /= phi[:52].mean()
    phi[52] = phi[51]
    return phi


def sample_weekly_panel(country, gender, pandemic, mu_annual, phi=None, exposure_week=None,
                        seed=3, pandemic_on=True):
    """Poisson-sample a weekly individual-age panel for the pandemic years.

    ``mu_annual`` has shape (nages, 2) for 2020/2021; ``exposure_week`` is
    the weekly exposure per age, either (nages,) constant across years or
    (nages, 2) per year (defaults to 1e6 people * 7/365).  The sampling
    intensity is E * mu * phi * exp(B K).
    """
    rng = np.random.default_rng(seed)
    ages = pandemic["ages"]
    nx = len(ages)
    if exposure_week is None:
        exposure_week = np.full(nx, 1e6 * 7.0 / 365.0)
    exposure_week = np.asarray(exposure_week, dtype=float)
    if exposure_week.ndim == 1:
        exposure_week = np.tile(exposure_week[:, None], (1, 2))
    phi = np.ones(MAX_WEEKS) if phi is None else phi
    deaths = np.full((nx, 2, MAX_WEEKS), np.nan)
    expos = np.full((nx, 2, MAX_WEEKS), np.nan)
    for j, t in enumerate(PANDEMIC_YEARS):
        wt = PANDEMIC_WEEKS[t]
        bk = np.outer(pandemic["B"], pandemic["K"][j, :wt]) if pandemic_on else 0.0
        lam = exposure_week[:, j : j + 1] * mu_annual[:, j : j + 1] * phi[None, :wt] * np.exp(bk)
        deaths[:, j, :wt] = rng.poisson(lam)
        expos[:, j, :wt] = exposure_week[:, j : j + 1]
    return WeeklyPanel(
        country=country, gender=gender,
        ages=tuple(AgeIndex(a, a) for a in ages),
        years=PANDEMIC_YEARS, weeks_in_year=dict(PANDEMIC_WEEKS),
        deaths=deaths, exposures=expos,
    ).validate()


# ---------------------------------------------------------------------------
# raw-format writers for the end-to-end pipeline


def _write_hmd_file(path, years, ages, female, male):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("synthetic 1x1 data\n\n")
        fh.write("  Year          Age             Female            Male           Total\n")
        for j, t in enumerate(years):
            for i, x in enumerate(ages):
                label = "110+" if x == 110 else str(x)
                f, m = female[i, j], male[i, j]
                fh.write(f"  {t}   {label:>5}   {f:.2f}   {m:.2f}   {f + m:.2f}\n")


STMF_GROUPS = [(lo, lo + 4) for lo in range(0, 90, 5)]  # 90+ handled separately


def write_synthetic_dataset(outdir, seed=1234, countries=("AAA", "BBB")):
    """Write a complete raw dataset: annual 1x1 files, a weekly grouped
    deaths file and population snapshot files, all sampled from known
    parameters.  Deterministic for a fixed seed."""
    os.makedirs(outdir, exist_ok=True)
    rng = np.random.default_rng(seed)
    ages = np.arange(0, 111)
    years = np.arange(1970, 2020)
    truth = make_baseline_truth(countries, ages, years, seed=seed)
    panel = sample_annual_panel(truth, exposure=2e5, seed=seed + 1)

    for c in countries:
        ci = panel.country_index(c)
        _write_hmd_file(
            os.path.join(outdir, f"{c}_deaths.txt"), years, ages,
            panel.deaths[ci, 1], panel.deaths[ci, 0],
        )
        _write_hmd_file(
            os.path.join(outdir, f"{c}_exposures.txt"), years, ages,
            panel.exposures[ci, 1], panel.exposures[ci, 0],
        )

    # Weekly grouped deaths, 2010..2021; pandemic waves only in 2020/2021.
    phi = seasonal_phi(0.18)
    pandemic = make_pandemic_truth(ages, seed=seed + 2)
    group_cols = [f"D{lo}_{hi}" for lo, hi in STMF_GROUPS] + ["D90p"]
    stmf_path = os.path.join(outdir, "weekly_deaths.csv")
    with open(stmf_path, "w", encoding="utf-8") as fh:
        fh.write("CountryCode,Year,Week,Sex," + ",".join(group_cols) + "\n")
        for c in countries:
            ci = panel.country_index(c)
            for gi, g in enumerate(GENDERS):
                mu_2019 = np.exp(true_ln_mu(truth, c, g)[:, -1])
                e_week = panel.exposures[ci, gi, :, -1] * 7.0 / 365.0
                for t in range(2010, 2022):
                    from .ingest import weeks_in_iso_year

                    wt = weeks_in_iso_year(t)
                    for w in range(1, wt + 1):
                        if t in PANDEMIC_YEARS:
                            j = PANDEMIC_YEARS.index(t)
                            bk = pandemic["B"] * pandemic["K"][j, w - 1]
                        else:
                            bk = 0.0
                        lam = e_week * mu_2019 * phi[w - 1] * np.exp(bk)
                        dx = rng.poisson(lam)
                        vals = [dx[(ages >= lo) & (ages <= hi)].sum() for lo, hi in STMF_GROUPS]
                        vals.append(dx[ages >= 90].sum())
                        fh.write(f"{c},{t},{w},{g}," + ",".join(str(v) for v in vals) + "\n")

    # Start-of-year population snapshots for 2020 (exposure as head count).
    for c in countries:
        ci = panel.country_index(c)
        pop_path = os.path.join(outdir, f"{c}_population.csv")
        with open(pop_path, "w", encoding="utf-8") as fh:
            fh.write("date,age,sex,count\n")
            for gi, g in enumerate(GENDERS):
                for i, x in enumerate(ages):
                    fh.write(f"2020-01-01,{x},{g},{panel.exposures[ci, gi, i, -1]:.2f}\n")
    return truth, pandemic, phi
