"""Firm-year panels: CSV ingestion, cleaning filters, tenure filter, half splits.

A panel is held as a pandas DataFrame with the canonical columns

    firm_id, year, sector, area, value_added, capital, labor

plus any optional columns named in the schema (``employees`` is parsed as a
number, everything else is kept as text). Areas are ``"AMD"`` (above-median
density) and ``"BMD"`` (below-median density).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from ._utils import check_int

logger = logging.getLogger(__name__)

AREAS = ("AMD", "BMD")
KEY_COLUMNS = ("firm_id", "year", "sector", "area")
INPUT_COLUMNS = ("value_added", "capital", "labor")
REQUIRED_COLUMNS = KEY_COLUMNS + INPUT_COLUMNS

#: Order in which cleaning rules are checked; a record violating several
#: rules is attributed to the first one.
RULE_ORDER = ("missing", "nonpositive", "excluded_sector", "max_employees", "include_filter")


class PanelError(ValueError):
    """Raised for malformed panel input (missing columns, duplicate keys)."""


@dataclass(frozen=True)
class ParseFailure:
    line: int
    column: str
    value: str


@dataclass(frozen=True)
class PanelDataset:
    """Immutable collection of firm-year observations.

    ``frame`` must not be mutated once the dataset is built; every operation
    in this package returns a new dataset.
    """

    frame: pd.DataFrame
    parse_failures: tuple = ()

    def __post_init__(self):
        missing = [c for c in REQUIRED_COLUMNS if c not in self.frame.columns]
        if missing:
            raise PanelError(f"panel frame lacks columns {missing}")

    def __len__(self):
        return len(self.frame)

    @property
    def n_firms(self):
        return self.frame["firm_id"].nunique()

    def sectors(self):
        return sorted(self.frame["sector"].dropna().unique().tolist())

    def cell(self, sector, area):
        mask = (self.frame["sector"] == sector) & (self.frame["area"] == area)
        return PanelDataset(self.frame.loc[mask].reset_index(drop=True))

    def firm_series(self):
        """Yield one :class:`FirmSeries` per firm, in firm_id order."""
        frame = self.frame.sort_values(["firm_id", "year"], kind="mergesort")
        for firm_id, obs in frame.groupby("firm_id", sort=True):
            yield FirmSeries(
                firm_id=firm_id,
                sector=obs["sector"].iloc[0],
                area=obs["area"].iloc[0],
                observations=obs.reset_index(drop=True),
            )

    @classmethod
    def from_frame(cls, frame, parse_failures=()):
        frame = frame.copy()
        frame["firm_id"] = frame["firm_id"].astype(str)
        frame["year"] = frame["year"].astype("int64")
        frame["sector"] = frame["sector"].astype(str)
        frame["area"] = frame["area"].astype(str)
        for col in INPUT_COLUMNS:
            frame[col] = frame[col].astype(float)
        _check_unique_keys(frame)
        return cls(frame.reset_index(drop=True), tuple(parse_failures))


@dataclass(frozen=True)
class FirmSeries:
    firm_id: str
    sector: str
    area: str
    observations: pd.DataFrame

    def __post_init__(self):
        years = self.observations["year"].to_numpy()
        if np.any(np.diff(years) <= 0):
            raise PanelError(f"firm {self.firm_id}: years must be strictly increasing")
        for col in ("sector", "area"):
            if col in self.observations and self.observations[col].nunique(dropna=False) > 1:
                raise PanelError(f"firm {self.firm_id}: observations disagree on {col}")

    @property
    def tenure(self):
        return len(self.observations)


@dataclass
class CleaningConfig:
    """Settings for :func:`clean_panel` and the tenure filter.

    ``include_column``/``include_values`` keep only records whose value in a
    categorical column is listed; ``max_employees`` applies only when the
    panel carries an ``employees`` column.
    """

    min_tenure: int = 15
    drop_nonpositive: bool = True
    excluded_sectors: frozenset = frozenset()
    max_employees: float | None = None
    include_column: str | None = None
    include_values: frozenset | None = None
    require_consecutive_years: bool = False

    def __post_init__(self):
        check_int(self.min_tenure, "min_tenure", minimum=2)
        self.excluded_sectors = frozenset(str(s) for s in self.excluded_sectors)
        if self.include_values is not None:
            self.include_values = frozenset(str(v) for v in self.include_values)

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc or {})
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown cleaning options: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self):
        return {
            "min_tenure": self.min_tenure,
            "drop_nonpositive": self.drop_nonpositive,
            "excluded_sectors": sorted(self.excluded_sectors),
            "max_employees": self.max_employees,
            "include_column": self.include_column,
            "include_values": None if self.include_values is None else sorted(self.include_values),
            "require_consecutive_years": self.require_consecutive_years,
        }


@dataclass
class CleaningReport:
    input_records: int
    retained_records: int
    dropped: dict = field(default_factory=lambda: {rule: 0 for rule in RULE_ORDER})
    relabeled_records: int = 0
    firms_per_cell: dict = field(default_factory=dict)

    @property
    def total_dropped(self):
        return sum(self.dropped.values())

    def to_dict(self):
        return {
            "input_records": int(self.input_records),
            "retained_records": int(self.retained_records),
            "dropped": {k: int(v) for k, v in self.dropped.items()},
            "relabeled_records": int(self.relabeled_records),
            "firms_per_cell": [
                {"sector": s, "area": a, "firms": int(n)}
                for (s, a), n in sorted(self.firms_per_cell.items())
            ],
        }


def _check_unique_keys(frame):
    keyed = frame.dropna(subset=["firm_id", "year"])
    dup = keyed.duplicated(subset=["firm_id", "year"], keep=False)
    if dup.any():
        first = keyed.loc[dup, ["firm_id", "year"]].iloc[0]
        raise PanelError(
            f"duplicate (firm_id, year) = ({first['firm_id']}, {first['year']}); "
            f"{int(dup.sum())} rows affected"
        )


def load_panel(path, schema=None):
    """Read a firm-year panel from a UTF-8 CSV file.

    Parameters
    ----------
    path : str or Path
        CSV file with a header row.
    schema : dict, optional
        Maps canonical names (``firm_id``, ``year``, ``sector``, ``area``,
        ``value_added``, ``capital``, ``labor`` and optional extras such as
        ``employees``) to header names in the file. Unmapped canonical
        columns are looked up under their own name.

    Returns
    -------
    PanelDataset
        Rows whose mapped fields cannot be parsed are left out and listed in
        ``parse_failures``. Empty cells are kept as missing values so that
        :func:`clean_panel` can account for them.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"panel file not found: {path}")
    mapping = {c: c for c in REQUIRED_COLUMNS}
    mapping.update(schema or {})

    raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    absent = [src for src in mapping.values() if src not in raw.columns]
    if absent:
        raise PanelError(f"{path}: mapped columns missing from header: {absent}")

    failures = []
    bad_rows = np.zeros(len(raw), dtype=bool)
    out = {}
    lines = np.arange(len(raw)) + 2  # header is line 1

    def note(mask, canonical, values):
        for i in np.flatnonzero(mask & ~bad_rows):
            failures.append(ParseFailure(int(lines[i]), canonical, str(values.iloc[i])))
        bad_rows[mask] = True

    for canonical, source in mapping.items():
        text = raw[source].str.strip()
        empty = (text == "").to_numpy()
        if canonical in INPUT_COLUMNS or canonical == "employees":
            values = pd.to_numeric(text.where(~empty), errors="coerce")
            note(values.isna().to_numpy() & ~empty, canonical, raw[source])
            out[canonical] = values.astype(float)
        elif canonical == "year":
            values = pd.to_numeric(text.where(~empty), errors="coerce")
            integral = values.notna() & (values == np.round(values))
            note(~integral.to_numpy() & ~empty, canonical, raw[source])
            out[canonical] = values.where(integral).astype("Int64")
        elif canonical == "area":
            upper = text.str.upper()
            note(~upper.isin(AREAS).to_numpy() & ~empty, canonical, raw[source])
            out[canonical] = upper.where(~empty & upper.isin(AREAS))
        else:
            out[canonical] = text.where(~empty)

    frame = pd.DataFrame(out).loc[~bad_rows].reset_index(drop=True)
    _check_unique_keys(frame)
    if failures:
        logger.warning("%s: %d row(s) with unparseable fields", path, int(bad_rows.sum()))
    return PanelDataset(frame, tuple(failures))


def _harmonize(frame, column):
    """Relabel each firm to its most frequent ``column`` value (ties: smallest)."""
    known = frame.dropna(subset=["firm_id", column])
    if known.empty:
        return frame, 0
    counts = known.groupby(["firm_id", column]).size().rename("n").reset_index()
    counts = counts.sort_values(["firm_id", "n", column], ascending=[True, False, True])
    modal = counts.drop_duplicates("firm_id").set_index("firm_id")[column]
    target = frame["firm_id"].map(modal)
    change = target.notna() & frame[column].notna() & (target != frame[column])
    frame = frame.copy()
    frame.loc[change, column] = target[change]
    return frame, int(change.sum())


def clean_panel(dataset, config=None):
    """Apply the record-level cleaning rules.

    Firms carrying several sector (or area) labels are first relabeled to
    their most frequent one. Records are then checked against the rules in
    ``RULE_ORDER``; each dropped record is counted once, under the first
    rule it violates. Cleaning never raises on bad records.

    Returns
    -------
    (PanelDataset, CleaningReport)
    """
    config = config or CleaningConfig()
    frame = dataset.frame
    n_in = len(frame)

    frame, relabeled_sector = _harmonize(frame, "sector")
    frame, relabeled_area = _harmonize(frame, "area")

    rules = {}
    rules["missing"] = frame[list(REQUIRED_COLUMNS)].isna().any(axis=1).to_numpy()
    if config.drop_nonpositive:
        rules["nonpositive"] = (frame[list(INPUT_COLUMNS)] <= 0).any(axis=1).to_numpy()
    if config.excluded_sectors:
        rules["excluded_sector"] = frame["sector"].isin(config.excluded_sectors).to_numpy()
    if config.max_employees is not None and "employees" in frame.columns:
        rules["max_employees"] = (frame["employees"] > config.max_employees).to_numpy()
    if config.include_column is not None:
        if config.include_column not in frame.columns:
            raise PanelError(f"include column {config.include_column!r} not in panel")
        allowed = config.include_values or frozenset()
        rules["include_filter"] = (~frame[config.include_column].astype(str).isin(allowed)).to_numpy()

    dropped = {rule: 0 for rule in RULE_ORDER}
    taken = np.zeros(n_in, dtype=bool)
    for rule in RULE_ORDER:
        if rule in rules:
            hit = rules[rule] & ~taken
            dropped[rule] = int(hit.sum())
            taken |= hit

    kept = frame.loc[~taken].reset_index(drop=True)
    kept = kept.astype({"year": "int64"}) if kept["year"].dtype != "int64" else kept
    firms = kept.groupby(["sector", "area"])["firm_id"].nunique()
    report = CleaningReport(
        input_records=n_in,
        retained_records=len(kept),
        dropped=dropped,
        relabeled_records=relabeled_sector + relabeled_area,
        firms_per_cell={k: int(v) for k, v in firms.items()},
    )
    return PanelDataset(kept, dataset.parse_failures), report


def filter_min_periods(dataset, min_tenure, require_consecutive_years=False):
    """Keep only firms observed at least ``min_tenure`` times.

    Firms are dropped as units. With ``require_consecutive_years`` firms
    whose observed years have calendar gaps are dropped as well.
    """
    min_tenure = check_int(min_tenure, "min_tenure", minimum=2)
    frame = dataset.frame
    groups = frame.groupby("firm_id")["year"]
    tenure = groups.transform("size")
    keep = tenure >= min_tenure
    if require_consecutive_years:
        span = groups.transform("max") - groups.transform("min") + 1
        keep &= span == tenure
    return PanelDataset(frame.loc[keep].reset_index(drop=True), dataset.parse_failures)


def split_halves(series):
    """Split a firm's series into two contiguous halves.

    The first half holds the first ``T // 2`` observations and the second
    half the rest, so for odd ``T`` the second half is one longer.
    """
    if series.tenure < 2:
        raise ValueError(f"firm {series.firm_id}: need at least 2 observations to split, got {series.tenure}")
    h = series.tenure // 2
    obs = series.observations
    first = FirmSeries(series.firm_id, series.sector, series.area, obs.iloc[:h].reset_index(drop=True))
    second = FirmSeries(series.firm_id, series.sector, series.area, obs.iloc[h:].reset_index(drop=True))
    return first, second


def write_panel(dataset, path):
    """Write a panel in the canonical CSV layout read by :func:`load_panel`."""
    cols = list(REQUIRED_COLUMNS) + [c for c in dataset.frame.columns if c not in REQUIRED_COLUMNS]
    dataset.frame[cols].to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
