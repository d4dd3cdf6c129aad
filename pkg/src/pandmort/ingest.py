"""Strict parsers for the annual, weekly and population input files.

Layouts (documented, no column-reordering tolerance):

* annual 1x1 files: a header line, then whitespace-separated columns
  ``Year Age Female Male Total``; age ``110+`` maps to 110; a ``.`` marker
  inside the requested range is an error, never a zero.
* weekly files: comma-separated ``CountryCode,Year,Week,Sex,<groups...>``
  with group columns named ``D<low>_<high>`` and ``D<low>p`` for the open
  final group; optional trailing ``Split``/``Forecast`` flag columns are
  ignored with a warning.
* population files: ``date(YYYY-MM-DD),age,sex,count``.
"""

from __future__ import annotations

import csv
import datetime
import logging

import numpy as np

from .datastore import MAX_WEEKS, AgeIndex, AnnualPanel, WeeklyPanel, check_age_partition
from .errors import IngestError
from .exposures import PopulationSnapshot

log = logging.getLogger(__name__)


def weeks_in_iso_year(year):
    """Number of ISO-8601 weeks (52 or 53) in a calendar year."""
    return datetime.date(year, 12, 28).isocalendar()[1]


def _read_hmd_file(path):
    """Read one 1x1 file -> {(year, age): (female, male)}."""
    cells = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    started = False
    for lineno, line in enumerate(lines, start=1):
        parts = line.split()
        if not parts:
            continue
        if not started:
            if parts[0] == "Year":
                if parts[:5] != ["Year", "Age", "Female", "Male", "Total"]:
                    raise IngestError(f"{path}: line {lineno}: unexpected column header")
                started = True
            continue
        if len(parts) != 5:
            raise IngestError(f"{path}: line {lineno}: expected 5 columns, got {len(parts)}")
        year = int(parts[0])
        age = 110 if parts[1] == "110+" else int(parts[1])
        cells[(year, age)] = (parts[2], parts[3])
    if not started:
        raise IngestError(f"{path}: no 'Year Age Female Male Total' header found")
    return cells


def _fill_panel(cells, path, years, ages, out, kind):
    for j, t in enumerate(years):
        for i, x in enumerate(ages):
            if (t, x) not in cells:
                raise IngestError(f"{path}: missing {kind} cell for year {t}, age {x}")
            f_raw, m_raw = cells[(t, x)]
            for gi, raw in ((0, m_raw), (1, f_raw)):
                if raw == ".":
                    raise IngestError(f"{path}: missing-value marker at year {t}, age {x}")
                val = float(raw)
                if val < 0:
                    raise IngestError(f"{path}: negative {kind} at year {t}, age {x}")
                out[gi, i, j] = val


def parse_hmd_annual(deaths_path, exposures_path, country, years, ages):
    """Parse a deaths/exposures file pair into a single-country AnnualPanel."""
    years = np.asarray(list(years))
    ages = np.asarray(list(ages))
    deaths = np.empty((1, 2, len(ages), len(years)))
    expos = np.empty((1, 2, len(ages), len(years)))
    _fill_panel(_read_hmd_file(deaths_path), deaths_path, years, ages, deaths[0], "death")
    _fill_panel(_read_hmd_file(exposures_path), exposures_path, years, ages, expos[0], "exposure")
    panel = AnnualPanel(countries=(country,), ages=ages, years=years, deaths=deaths, exposures=expos)
    return panel.validate()


def _parse_group_columns(names):
    groups = []
    for name in names:
        if not name.startswith("D"):
            raise IngestError(f"unexpected weekly-deaths column {name!r}")
        body = name[1:]
        if body.endswith("p"):
            groups.append(("open", int(body[:-1])))
        else:
            lo, _, hi = body.partition("_")
            if not hi:
                raise IngestError(f"unexpected weekly-deaths column {name!r}")
            groups.append(("closed", int(lo), int(hi)))
    return groups


def parse_stmf(path, country, open_group_high=110):
    """Parse a weekly grouped-deaths file into one WeeklyPanel per gender.

    Week-0 rows of year t are merged into week w_{t-1} of year t-1 (the two
    partial calendar weeks around New Year are one ISO week); sex 'b' rows
    are dropped.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise IngestError(f"{path}: empty file") from None
            rows = list(reader)
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    if header[:4] != ["CountryCode", "Year", "Week", "Sex"]:
        raise IngestError(f"{path}: expected columns CountryCode,Year,Week,Sex,...")
    flag_cols = [i for i, n in enumerate(header) if n in ("Split", "Forecast")]
    group_names = [n for i, n in enumerate(header[4:], start=4) if i not in flag_cols]
    specs = _parse_group_columns(group_names)
    ages = []
    for s in specs:
        if s[0] == "open":
            ages.append(AgeIndex(s[1], open_group_high))
        else:
            ages.append(AgeIndex(s[1], s[2]))
    check_age_partition(ages)
    ages = tuple(ages)
    ncols = len(group_names)

    data = {}  # (year, week, sex) -> counts vector
    flagged = 0
    for lineno, row in enumerate(rows, start=2):
        if not row:
            continue
        if row[0] != country:
            continue
        year, week, sex = int(row[1]), int(row[2]), row[3]
        if sex == "b":
            continue
        if sex not in ("m", "f"):
            raise IngestError(f"{path}: line {lineno}: unknown sex code {sex!r}")
        if not (0 <= week <= MAX_WEEKS):
            raise IngestError(f"{path}: line {lineno}: week {week} out of range")
        if (year, week, sex) in data:
            raise IngestError(f"{path}: duplicate row for year {year}, week {week}, sex {sex}")
        vals = [v for i, v in enumerate(row[4:], start=4) if i not in flag_cols]
        if len(vals) != ncols:
            raise IngestError(f"{path}: line {lineno}: expected {ncols} group values")
        if any(i in flag_cols and row[i] not in ("", "0") for i in range(len(row))):
            flagged += 1
        counts = np.array([float(v) for v in vals])
        if (counts < 0).any():
            raise IngestError(f"{path}: line {lineno}: negative death count")
        data[(year, week, sex)] = counts
    if flagged:
        log.warning("%s: %d rows carry Split/Forecast flags; counts used as-is", path, flagged)

    # Merge week 0 of year t into the final week of year t-1.
    for (year, week, sex) in sorted(k for k in data if k[1] == 0):
        counts = data.pop((year, week, sex))
        prev_wt = weeks_in_iso_year(year - 1)
        key = (year - 1, prev_wt, sex)
        if key in data:
            data[key] = data[key] + counts
        else:
            data[key] = counts

    years = tuple(sorted({y for (y, _, _) in data}))
    if not years:
        raise IngestError(f"{path}: no usable rows for country {country}")
    weeks_in_year = {}
    for t in years:
        observed = max(w for (y, w, _) in data if y == t)
        weeks_in_year[t] = 53 if observed == 53 else 52

    panels = {}
    for sex in ("m", "f"):
        deaths = np.full((len(ages), len(years), MAX_WEEKS), np.nan)
        for j, t in enumerate(years):
            for w in range(1, weeks_in_year[t] + 1):
                key = (t, w, sex)
                if key not in data:
                    raise IngestError(f"{path}: missing row for year {t}, week {w}, sex {sex}")
                deaths[:, j, w - 1] = data[key]
        panels[sex] = WeeklyPanel(
            country=country, gender=sex, ages=ages, years=years,
            weeks_in_year=weeks_in_year, deaths=deaths,
        ).validate()
    return panels


def parse_population(path, layout):
    """Parse a population file into PopulationSnapshot objects.

    ``layout`` is 'eurostat_annual' (one snapshot per 1 January) or
    'nl_monthly' (one per first-of-month); both share the CSV layout
    ``date,age,sex,count``.  Returns a list sorted by date.
    """
    if layout not in ("eurostat_annual", "nl_monthly"):
        raise IngestError(f"unknown population layout {layout!r}")
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            rows = list(reader)
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    if header != ["date", "age", "sex", "count"]:
        raise IngestError(f"{path}: expected columns date,age,sex,count")
    by_key = {}
    for lineno, row in enumerate(rows, start=2):
        if not row or row[0].startswith("#"):
            continue
        if len(row) != 4:
            raise IngestError(f"{path}: line {lineno}: expected 4 fields")
        try:
            y, m, d = (int(v) for v in row[0].split("-"))
        except ValueError:
            raise IngestError(f"{path}: line {lineno}: bad date {row[0]!r}") from None
        if d != 1 or (layout == "eurostat_annual" and m != 1):
            raise IngestError(f"{path}: line {lineno}: snapshot date must be a first-of-period")
        sex = row[2]
        if sex not in ("m", "f"):
            raise IngestError(f"{path}: line {lineno}: unknown sex code {sex!r}")
        age = int(row[1])
        count = float(row[3])
        if count < 0:
            raise IngestError(f"{path}: line {lineno}: negative population count")
        by_key.setdefault(((y, m, d), sex), {})[age] = count
    snapshots = []
    for (date, sex), per_age in sorted(by_key.items()):
        ages = np.array(sorted(per_age))
        if len(ages) != ages[-1] - ages[0] + 1:
            missing = sorted(set(range(ages[0], ages[-1] + 1)) - set(per_age))
            raise IngestError(f"{path}: snapshot {date} sex {sex}: missing ages {missing}")
        counts = np.array([per_age[a] for a in ages])
        snapshots.append(
            PopulationSnapshot(date=date, country="", gender=sex, ages=ages, counts=counts).validate()
        )
    if not snapshots:
        raise IngestError(f"{path}: no snapshots found")
    return snapshots
