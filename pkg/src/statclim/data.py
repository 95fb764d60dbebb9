"""Ingestion, validation and writing of observation/covariate/scenario tables.

Canonical CSV schemas (UTF-8, LF, header row required, empty cell = missing,
missing allowed in observations only):

    observations.csv  year,c_star,s_ocn_star,s_lnd_star,f_co2_star,
                      t_m_star,t_d_star,ohc_star
    covariates.csv    year,e_ff,e_luc,f_nonco2,f_nat
    scenario.csv      year,e_ff,e_luc,f_nonco2,f_nat
                      (or year,e_total,f_nonco2,f_nat)

Upstream providers ship their own formats; convert once into these schemas.
Temperature series keep their native baselines (the model's intercepts absorb
baseline differences), and ocean heat content is expected in W yr m^-2
(convert_ohc_units converts from ZJ).
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

OBS_COLUMNS = ("year", "c_star", "s_ocn_star", "s_lnd_star", "f_co2_star",
               "t_m_star", "t_d_star", "ohc_star")
COV_COLUMNS = ("year", "e_ff", "e_luc", "f_nonco2", "f_nat")
SCEN_COLUMNS_MERGED = ("year", "e_total", "f_nonco2", "f_nat")

# Loose physical sanity ranges; violations warn but do not fail the load.
_SANITY_RANGES = {
    "c_star": (500.0, 1500.0),
    "s_ocn_star": (-10.0, 20.0),
    "s_lnd_star": (-10.0, 20.0),
    "f_co2_star": (-2.0, 10.0),
    "t_m_star": (-2.0, 4.0),
    "t_d_star": (-1.0, 2.0),
    "ohc_star": (-100.0, 500.0),
}


class TableError(ValueError):
    """Malformed input table (bad header, rows, or year grid)."""


@dataclass
class ObservationTable:
    """Yearly observations of the 7 measured series, NaN where missing."""

    years: np.ndarray
    values: np.ndarray  # (n, 7) in OBS_COLUMNS[1:] order

    def __post_init__(self):
        self.years = np.asarray(self.years, dtype=int)
        self.values = np.asarray(self.values, dtype=float)
        n = len(self.years)
        if self.values.shape != (n, 7):
            raise TableError(f"observation values must be (n, 7), got "
                             f"{self.values.shape}")
        _check_contiguous(self.years)
        empty = ~np.any(np.isfinite(self.values), axis=1)
        if np.any(empty):
            bad = self.years[empty]
            raise TableError(f"years with every series missing: {bad.tolist()}")

    @property
    def n_years(self) -> int:
        return len(self.years)

    def subset(self, year_from: int, year_to: int) -> "ObservationTable":
        keep = (self.years >= year_from) & (self.years <= year_to)
        return ObservationTable(self.years[keep], self.values[keep])


@dataclass
class CovariateTable:
    """Complete yearly covariates: emissions split and exogenous forcings."""

    years: np.ndarray
    e_ff: np.ndarray
    e_luc: np.ndarray
    f_nonco2: np.ndarray
    f_nat: np.ndarray

    def __post_init__(self):
        self.years = np.asarray(self.years, dtype=int)
        for name in ("e_ff", "e_luc", "f_nonco2", "f_nat"):
            arr = np.asarray(getattr(self, name), dtype=float)
            setattr(self, name, arr)
            if arr.shape != self.years.shape:
                raise TableError(f"covariate column {name} misaligned")
            if not np.all(np.isfinite(arr)):
                missing_years = self.years[~np.isfinite(arr)]
                raise TableError(
                    f"missing covariate cells in {name} at years "
                    f"{missing_years.tolist()}")
        _check_contiguous(self.years)

    @property
    def e_total(self) -> np.ndarray:
        return self.e_ff + self.e_luc

    @property
    def f_ex(self) -> np.ndarray:
        return self.f_nonco2 + self.f_nat

    def subset(self, year_from: int, year_to: int) -> "CovariateTable":
        keep = (self.years >= year_from) & (self.years <= year_to)
        return CovariateTable(self.years[keep], self.e_ff[keep],
                              self.e_luc[keep], self.f_nonco2[keep],
                              self.f_nat[keep])


@dataclass
class ScenarioTable(CovariateTable):
    """Future covariate path; identical layout to CovariateTable.

    When loaded from the merged schema the fossil/land-use split is not
    known and all emissions are carried in e_ff.
    """

    merged_emissions: bool = field(default=False)

    def check_follows(self, last_history_year: int) -> None:
        if self.years[0] != last_history_year + 1:
            raise TableError(
                f"scenario must start the year after history ends: got "
                f"{self.years[0]}, expected {last_history_year + 1}")


def _check_contiguous(years: np.ndarray) -> None:
    if len(years) == 0:
        raise TableError("table has no data rows")
    if len(years) > 1 and np.any(np.diff(years) != 1):
        raise TableError(f"years must be contiguous, got {years.tolist()}")


def _read_rows(path) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TableError(f"{path}: empty file") from None
        rows = [row for row in reader if any(cell.strip() for cell in row)]
    if not rows:
        raise TableError(f"{path}: header only, no data rows")
    return [h.strip() for h in header], rows


def _parse_cell(cell: str, path, line: int, col: str,
                allow_missing: bool) -> float:
    cell = cell.strip()
    if cell == "":
        if allow_missing:
            return np.nan
        raise TableError(f"{path}:{line}: missing value in column {col}")
    try:
        return float(cell)
    except ValueError:
        raise TableError(
            f"{path}:{line}: cannot parse {cell!r} in column {col}") from None


def _parse_table(path, columns, allow_missing) -> dict[str, np.ndarray]:
    header, rows = _read_rows(path)
    if header != list(columns):
        raise TableError(f"{path}: expected header {','.join(columns)}, "
                         f"got {','.join(header)}")
    out = {c: [] for c in columns}
    for i, row in enumerate(rows, start=2):
        if len(row) != len(columns):
            raise TableError(f"{path}:{i}: expected {len(columns)} cells, "
                             f"got {len(row)}")
        for col, cell in zip(columns, row):
            missing_ok = allow_missing and col != "year"
            out[col].append(_parse_cell(cell, path, i, col, missing_ok))
    return {c: np.asarray(v) for c, v in out.items()}


def load_observations(path) -> ObservationTable:
    """Load and validate an observations CSV; warns on implausible values."""
    cols = _parse_table(path, OBS_COLUMNS, allow_missing=True)
    table = ObservationTable(cols["year"].astype(int),
                             np.column_stack([cols[c] for c in OBS_COLUMNS[1:]]))
    for j, name in enumerate(OBS_COLUMNS[1:]):
        lo, hi = _SANITY_RANGES[name]
        col = table.values[:, j]
        bad = np.isfinite(col) & ((col < lo) | (col > hi))
        if np.any(bad):
            warnings.warn(
                f"{path}: {name} outside [{lo}, {hi}] in years "
                f"{table.years[bad].tolist()} (check units)", stacklevel=2)
    return table


def load_covariates(path, impute_trailing: bool = True,
                    fit_window: int = 5) -> CovariateTable:
    """Load a covariates CSV.

    Forcing columns (f_nonco2, f_nat) may have missing cells at the tail of
    the sample; with impute_trailing these are filled by a linear trend
    fitted to the last fit_window observed years, mirroring how shorter
    forcing records are extended to match the emissions record.
    """
    cols = _parse_table(path, COV_COLUMNS, allow_missing=True)
    years = cols["year"].astype(int)
    for name in ("f_nonco2", "f_nat"):
        col = cols[name]
        missing = ~np.isfinite(col)
        if np.any(missing) and impute_trailing:
            n_tail = _trailing_missing(col)
            if n_tail != missing.sum():
                raise TableError(
                    f"{path}: {name} has interior missing cells; only a "
                    f"trailing gap can be imputed")
            filled = impute_linear_trend(col[:-n_tail], fit_window=fit_window,
                                         horizon=n_tail)
            cols[name] = filled
    return CovariateTable(years, cols["e_ff"], cols["e_luc"],
                          cols["f_nonco2"], cols["f_nat"])


def load_scenario(path) -> ScenarioTable:
    """Load a scenario CSV in either the split or merged-emissions schema."""
    header, _ = _read_rows(path)
    if header == list(SCEN_COLUMNS_MERGED):
        cols = _parse_table(path, SCEN_COLUMNS_MERGED, allow_missing=False)
        zeros = np.zeros_like(cols["e_total"])
        return ScenarioTable(cols["year"].astype(int), cols["e_total"], zeros,
                             cols["f_nonco2"], cols["f_nat"],
                             merged_emissions=True)
    cols = _parse_table(path, COV_COLUMNS, allow_missing=False)
    return ScenarioTable(cols["year"].astype(int), cols["e_ff"], cols["e_luc"],
                         cols["f_nonco2"], cols["f_nat"])


def _fmt(x: float) -> str:
    return "" if not np.isfinite(x) else repr(float(x))


def write_observations(table: ObservationTable, path) -> None:
    _write_csv(path, OBS_COLUMNS,
               [[int(y)] + [_fmt(v) for v in row]
                for y, row in zip(table.years, table.values)])


def write_covariates(table: CovariateTable, path) -> None:
    _write_csv(path, COV_COLUMNS,
               [[int(y), _fmt(a), _fmt(b), _fmt(c), _fmt(d)]
                for y, a, b, c, d in zip(table.years, table.e_ff, table.e_luc,
                                         table.f_nonco2, table.f_nat)])


def _write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="\n", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _trailing_missing(col: np.ndarray) -> int:
    n = 0
    for v in col[::-1]:
        if np.isfinite(v):
            break
        n += 1
    return n


def impute_linear_trend(series, fit_window: int = 5,
                        horizon: int = 1) -> np.ndarray:
    """Extend a series by an OLS line fitted to its trailing window.

    Returns the input with `horizon` extrapolated values appended.  The
    trailing fit_window values must all be present.
    """
    series = np.asarray(series, dtype=float)
    if horizon < 0 or fit_window < 2:
        raise ValueError("need horizon >= 0 and fit_window >= 2")
    if len(series) < fit_window or not np.all(np.isfinite(series[-fit_window:])):
        raise ValueError(
            f"need {fit_window} trailing non-missing values to fit the trend")
    tail = series[-fit_window:]
    x = np.arange(1, fit_window + 1, dtype=float)
    slope, intercept = np.polyfit(x, tail, 1)
    x_new = np.arange(fit_window + 1, fit_window + horizon + 1, dtype=float)
    return np.concatenate([series, intercept + slope * x_new])


EARTH_AREA_M2 = 5.101e14
SECONDS_PER_YEAR = 3.1557e7


def convert_ohc_units(value_zj, earth_area: float = EARTH_AREA_M2,
                      seconds_per_year: float = SECONDS_PER_YEAR):
    """Convert ocean heat content from ZJ (10^21 J) to W yr m^-2."""
    return np.asarray(value_zj, dtype=float) * 1e21 / (earth_area
                                                       * seconds_per_year)
