"""Sighting ingestion, first-arrival extraction, covariate tables and design assembly."""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, field

import numpy as np

from .basis import SiteGrid, project_equal_area
from .errors import DataError, DomainError
from .process import DEFAULT_NEGATION_CONSTANT, negate_transform

__all__ = [
    "SightingRecord",
    "ParseReport",
    "SiteCovariates",
    "SiteTable",
    "ClimateTable",
    "ArrivalTable",
    "DesignBundle",
    "WINDOW_START",
    "WINDOW_END",
    "MIN_OBS",
    "SITE_COLUMNS",
    "CLIMATE_COLUMNS",
    "parse_sightings",
    "compute_first_arrivals",
    "read_sites",
    "read_climate",
    "assemble_design",
    "to_fit_data",
    "design_columns",
]

WINDOW_START = (3, 20)
WINDOW_END = (7, 20)
MIN_OBS = 12

SIGHTING_HEADER = ("site_id", "date", "count")
SITE_HEADER = ("site_id", "lon", "lat", "elevation_m", "forest_cover", "water_frac", "pop_density")
CLIMATE_HEADER = ("year", "temp_anom", "nao")
ARRIVAL_HEADER = ("site_id", "year", "arrival_day")

SITE_COLUMNS = SITE_HEADER[1:]
CLIMATE_COLUMNS = CLIMATE_HEADER[1:]


def _data_lines(fh):
    """Skip leading ``#`` provenance lines written by the CLI."""
    return (line for line in fh if not line.startswith("#"))


def _check_header(header, expected, path):
    if header is None:
        raise DataError(f"{path}: empty file, expected header {','.join(expected)}")
    header = [h.strip() for h in header]
    missing = [c for c in expected if c not in header]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    return {c: header.index(c) for c in expected}


@dataclass(frozen=True)
class SightingRecord:
    site_id: str
    date: dt.date
    count: int


@dataclass(frozen=True)
class ParseReport:
    """Parsed records plus ``(line_number, message)`` for every rejected row."""

    records: tuple
    errors: tuple = ()

    @property
    def ok(self):
        return not self.errors


def parse_sightings(path, known_sites=None) -> ParseReport:
    known = None if known_sites is None else {str(s) for s in known_sites}
    records, errors = [], []
    with open(path, newline="") as fh:
        rows = csv.reader(_data_lines(fh))
        cols = _check_header(next(rows, None), SIGHTING_HEADER, path)
        for lineno, row in enumerate(rows, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                site = row[cols["site_id"]].strip()
                date = dt.date.fromisoformat(row[cols["date"]].strip())
                count = int(row[cols["count"]])
            except (IndexError, ValueError) as exc:
                errors.append((lineno, f"{type(exc).__name__}: {exc}"))
                continue
            if not site:
                errors.append((lineno, "empty site_id"))
            elif count < 0:
                errors.append((lineno, f"negative count {count}"))
            elif known is not None and site not in known:
                errors.append((lineno, f"unknown site_id {site!r}"))
            else:
                records.append(SightingRecord(site, date, count))
    return ParseReport(tuple(records), tuple(errors))


def _day_in_window(date, start, end):
    lo = dt.date(date.year, *start)
    hi = dt.date(date.year, *end)
    if lo <= date <= hi:
        return (date - lo).days
    return None


@dataclass(frozen=True)
class ArrivalTable:
    """First-arrival days since the window start; ``nan`` marks a missing site-year."""

    years: tuple
    sites: tuple
    arrival_day: np.ndarray
    window_len: int = 122

    def __post_init__(self):
        a = np.array(self.arrival_day, dtype=float).reshape(len(self.years), len(self.sites))
        obs = a[np.isfinite(a)]
        if obs.size and (obs.min() < 0 or obs.max() > self.window_len):
            raise DomainError(f"arrival days must lie in [0, {self.window_len}]")
        a.setflags(write=False)
        object.__setattr__(self, "arrival_day", a)
        object.__setattr__(self, "years", tuple(int(y) for y in self.years))
        object.__setattr__(self, "sites", tuple(str(s) for s in self.sites))

    @property
    def mask(self):
        """True where the site-year is observed."""
        return np.isfinite(self.arrival_day)

    def negated(self, C=DEFAULT_NEGATION_CONSTANT):
        out = np.full(self.arrival_day.shape, np.nan)
        m = self.mask
        out[m] = negate_transform(self.arrival_day[m], C)
        return out

    def subset_sites(self, site_ids):
        idx = [self.sites.index(s) for s in site_ids]
        return ArrivalTable(self.years, tuple(site_ids), self.arrival_day[:, idx], self.window_len)

    def write_csv(self, path, header=None):
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(header + "\n")
            fh.write(",".join(ARRIVAL_HEADER) + "\n")
            for j in np.argsort(self.sites, kind="stable"):
                for i in np.argsort(self.years, kind="stable"):
                    v = self.arrival_day[i, j]
                    val = "" if not math.isfinite(v) else repr(float(v)).removesuffix(".0")
                    fh.write(f"{self.sites[j]},{self.years[i]},{val}\n")

    @classmethod
    def read_csv(cls, path, window_len=122):
        cells = {}
        with open(path, newline="") as fh:
            rows = csv.reader(_data_lines(fh))
            cols = _check_header(next(rows, None), ARRIVAL_HEADER, path)
            for lineno, row in enumerate(rows, start=2):
                if not row:
                    continue
                try:
                    key = (row[cols["site_id"]], int(row[cols["year"]]))
                    raw = row[cols["arrival_day"]].strip()
                    cells[key] = float(raw) if raw else np.nan
                except (IndexError, ValueError) as exc:
                    raise DataError(f"{path}:{lineno}: {exc}") from None
        sites = tuple(sorted({s for s, _ in cells}))
        years = tuple(sorted({y for _, y in cells}))
        a = np.full((len(years), len(sites)), np.nan)
        for (s, y), v in cells.items():
            a[years.index(y), sites.index(s)] = v
        return cls(years, sites, a, window_len)


def compute_first_arrivals(records, years=None, sites=None, window=(WINDOW_START, WINDOW_END),
                           min_obs=MIN_OBS) -> ArrivalTable:
    """Earliest in-window sighting per site-year, kept only with at least ``min_obs`` records.

    Every in-window record with a positive count counts once toward
    ``min_obs`` (duplicates on the same date included); zero-count rows
    are non-detections and are ignored.  No outliers are removed.
    """
    start, end = window
    window_len = (dt.date(2001, *end) - dt.date(2001, *start)).days
    counts, first = {}, {}
    for r in records:
        if r.count <= 0:
            continue
        day = _day_in_window(r.date, start, end)
        if day is None:
            continue
        key = (r.site_id, r.date.year)
        counts[key] = counts.get(key, 0) + 1
        first[key] = min(first.get(key, day), day)
    if sites is None:
        sites = sorted({s for s, _ in counts})
    if years is None:
        years = sorted({y for _, y in counts})
    sites, years = tuple(sorted(str(s) for s in sites)), tuple(sorted(int(y) for y in years))
    a = np.full((len(years), len(sites)), np.nan)
    for i, y in enumerate(years):
        for j, s in enumerate(sites):
            if counts.get((s, y), 0) >= min_obs:
                a[i, j] = first[(s, y)]
    return ArrivalTable(years, sites, a, window_len)


@dataclass(frozen=True)
class SiteCovariates:
    site_id: str
    lon: float
    lat: float
    elevation_m: float
    forest_cover: float
    water_frac: float
    pop_density: float

    def __post_init__(self):
        for name in ("forest_cover", "water_frac"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise DataError(f"site {self.site_id}: {name}={v} outside [0, 1]")
        if not self.pop_density >= 0.0:
            raise DataError(f"site {self.site_id}: negative population density")
        if not (abs(self.lat) <= 90.0 and math.isfinite(self.lon)):
            raise DataError(f"site {self.site_id}: invalid coordinates")


@dataclass(frozen=True)
class SiteTable:
    rows: tuple

    def __post_init__(self):
        ids = [r.site_id for r in self.rows]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate site ids in site table")

    @property
    def site_ids(self):
        return tuple(r.site_id for r in self.rows)

    def column(self, name, site_ids=None):
        lookup = {r.site_id: r for r in self.rows}
        ids = self.site_ids if site_ids is None else site_ids
        missing = [s for s in ids if s not in lookup]
        if missing:
            raise DataError(f"no covariates for sites {missing}")
        return np.array([getattr(lookup[s], name) for s in ids], dtype=float)

    def projection(self):
        """Standard parallel and central meridian shared by every subset of this table."""
        return float(np.mean(self.column("lat"))), float(np.mean(self.column("lon")))

    def grid(self, site_ids=None):
        """Equal-area projected sites, using the whole table's projection."""
        ids = self.site_ids if site_ids is None else tuple(site_ids)
        phi, lon0 = self.projection()
        xy, info = project_equal_area(self.column("lon", ids), self.column("lat", ids), phi, lon0)
        return SiteGrid(ids, xy), info


def read_sites(path) -> SiteTable:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(_data_lines(fh))
        cols = _check_header(next(reader, None), SITE_HEADER, path)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                vals = {c: (row[i].strip() if c == "site_id" else float(row[i]))
                        for c, i in cols.items()}
                rows.append(SiteCovariates(**vals))
            except (IndexError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    return SiteTable(tuple(rows))


@dataclass(frozen=True)
class ClimateTable:
    """Regional climate covariates, one row per year."""

    years: tuple
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        years = tuple(int(y) for y in self.years)
        if len(set(years)) != len(years):
            raise DataError("climate table has duplicate years")
        object.__setattr__(self, "years", years)
        vals = {k: np.asarray(v, dtype=float) for k, v in self.values.items()}
        for k, v in vals.items():
            if v.shape != (len(years),):
                raise DataError(f"climate column {k} has the wrong length")
        object.__setattr__(self, "values", vals)

    def column(self, name, years=None):
        years = self.years if years is None else tuple(int(y) for y in years)
        missing = [y for y in years if y not in self.years]
        if missing:
            raise DataError(f"no climate covariates for years {missing}")
        idx = [self.years.index(y) for y in years]
        return self.values[name][idx]

    @classmethod
    def constant(cls, years, **values):
        return cls(tuple(years), {k: np.full(len(years), float(v)) for k, v in values.items()})


def read_climate(path) -> ClimateTable:
    years, cols_out = [], {c: [] for c in CLIMATE_COLUMNS}
    with open(path, newline="") as fh:
        reader = csv.reader(_data_lines(fh))
        cols = _check_header(next(reader, None), CLIMATE_HEADER, path)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                years.append(int(row[cols["year"]]))
                for c in CLIMATE_COLUMNS:
                    cols_out[c].append(float(row[cols[c]]))
            except (IndexError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    return ClimateTable(tuple(years), cols_out)


@dataclass(frozen=True)
class DesignBundle:
    """Site (S x p) and year (T x q) covariate matrices, without intercepts.

    ``moments`` maps covariate name to the training ``(mean, sd)`` used for
    standardization, or is empty when the bundle is unstandardized.
    """

    site_ids: tuple
    years: tuple
    site_names: tuple
    year_names: tuple
    site_matrix: np.ndarray
    year_matrix: np.ndarray
    moments: dict = field(default_factory=dict)

    def site_design(self, sites: SiteTable, site_ids=None):
        """Site covariates for new sites, standardized with the stored moments."""
        ids = tuple(site_ids) if site_ids is not None else sites.site_ids
        cols = [self._scale(n, sites.column(n, ids)) for n in self.site_names]
        return np.column_stack(cols) if cols else np.zeros((len(ids), 0))

    def year_design(self, climate: ClimateTable, years):
        cols = [self._scale(n, climate.column(n, years)) for n in self.year_names]
        return np.column_stack(cols) if cols else np.zeros((len(years), 0))

    def _scale(self, name, x):
        if name not in self.moments:
            return np.asarray(x, dtype=float)
        mean, sd = self.moments[name]
        return (np.asarray(x, dtype=float) - mean) / sd

    def observation_rows(self):
        """``(site_id, year, site covariates..., year covariates...)`` per site-year."""
        out = []
        for j, s in enumerate(self.site_ids):
            for i, y in enumerate(self.years):
                out.append((s, y, *self.site_matrix[j], *self.year_matrix[i]))
        return out

    def to_json(self):
        return {"site_names": list(self.site_names), "year_names": list(self.year_names),
                "moments": {k: list(v) for k, v in self.moments.items()}}

    @classmethod
    def from_json(cls, d):
        """Scaling-only bundle (no training matrices) for prediction-time designs."""
        return cls((), (), tuple(d["site_names"]), tuple(d["year_names"]),
                   np.zeros((0, len(d["site_names"]))), np.zeros((0, len(d["year_names"]))),
                   {k: tuple(v) for k, v in d["moments"].items()})


def _standardize(x, name):
    mean = float(np.mean(x))
    sd = float(np.std(x))
    if not sd > 0.0:
        raise DataError(f"covariate {name} is constant and cannot be standardized")
    return (x - mean) / sd, (mean, sd)


def assemble_design(arrivals: ArrivalTable, sites: SiteTable, climate: ClimateTable | None,
                    standardize=True, site_columns=SITE_COLUMNS,
                    climate_columns=CLIMATE_COLUMNS) -> DesignBundle:
    missing_sites = [s for s in arrivals.sites if s not in set(sites.site_ids)]
    missing_years = ([] if climate is None or not climate_columns
                     else [y for y in arrivals.years if y not in climate.years])
    if missing_sites or missing_years:
        raise DataError(f"missing covariate rows: sites={missing_sites} years={missing_years}")
    if climate is None:
        climate_columns = ()
    moments = {}
    site_cols, year_cols = [], []
    for name in site_columns:
        x = sites.column(name, arrivals.sites)
        if standardize:
            x, moments[name] = _standardize(x, name)
        site_cols.append(x)
    for name in climate_columns:
        x = climate.column(name, arrivals.years)
        if standardize:
            x, moments[name] = _standardize(x, name)
        year_cols.append(x)
    S, T = len(arrivals.sites), len(arrivals.years)
    return DesignBundle(
        site_ids=arrivals.sites, years=arrivals.years,
        site_names=tuple(site_columns), year_names=tuple(climate_columns),
        site_matrix=np.column_stack(site_cols) if site_cols else np.zeros((S, 0)),
        year_matrix=np.column_stack(year_cols) if year_cols else np.zeros((T, 0)),
        moments=moments)


def to_fit_data(arrivals: ArrivalTable, design: DesignBundle, sites: SiteTable,
                climate: ClimateTable | None, mu_site=None, mu_year=None, gamma_site=(),
                gamma_year=(), C=DEFAULT_NEGATION_CONSTANT):
    """Negated observations plus intercept-led designs, ready for :func:`run_chain`.

    Covariates are standardized with the moments stored in ``design``, so
    holdout or prediction sites use the training scaling.  Subsets default
    to every covariate for the location and an intercept-only log-scale.
    """
    from .inference import FitData

    mu_site = design.site_names if mu_site is None else tuple(mu_site)
    mu_year = design.year_names if mu_year is None else tuple(mu_year)
    grid, _ = sites.grid(arrivals.sites)
    x_site = design.site_design(sites, arrivals.sites)
    x_year = (design.year_design(climate, arrivals.years) if design.year_names
              else np.zeros((len(arrivals.years), 0)))
    return FitData(
        sites=grid, years=arrivals.years, z=arrivals.negated(C),
        x_mu_site=design_columns(x_site, design.site_names, mu_site, intercept=True),
        x_mu_year=design_columns(x_year, design.year_names, mu_year),
        x_gamma_site=design_columns(x_site, design.site_names, gamma_site, intercept=True),
        x_gamma_year=design_columns(x_year, design.year_names, gamma_year),
        mu_names=("intercept", *mu_site, *mu_year),
        gamma_names=("intercept", *gamma_site, *gamma_year))


def design_columns(matrix, names, chosen, intercept=False):
    """Select ``chosen`` columns by name, optionally led by an intercept."""
    names = tuple(names)
    unknown = [c for c in chosen if c not in names]
    if unknown:
        raise DataError(f"unknown covariates {unknown}; available {list(names)}")
    rows = matrix.shape[0]
    cols = [matrix[:, names.index(c)] for c in chosen]
    if intercept:
        cols = [np.ones(rows)] + cols
    return np.column_stack(cols) if cols else np.zeros((rows, 0))
