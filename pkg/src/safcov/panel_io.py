"""CSV ingestion, standardization, serialization, and run manifests.

Panels travel as CSV with a header row, a leading ISO-date column, and
one column per asset; internally they become (N, T) arrays (assets by
time).  Parse failures carry the offending row and column.  Covariance
matrices serialize as labeled CSV at 17 significant digits — enough to
round-trip float64 exactly — with a JSON sidecar for estimator
metadata.  Every CLI run writes a :class:`RunManifest` echoing the
command, configuration, seed, and any per-cell errors.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInput, PanelFormatError
from .rivals import ObservedFactors
from .saf import CovarianceEstimate

__all__ = [
    "Panel",
    "FactorTable",
    "RunManifest",
    "load_panel",
    "save_panel",
    "rescale_covariance",
    "load_factor_table",
    "load_riskfree",
    "save_covariance",
    "load_covariance",
    "save_manifest",
    "load_manifest",
]

#: float64 round-trips exactly at 17 significant digits.
_FLOAT_FMT = "%.17g"


@dataclass
class Panel:
    """A return panel with its date axis and optional standardization.

    ``values`` is (N, T); when ``standardized`` the per-asset means
    and scale factors (1/T-convention standard deviations) are stored
    so covariance outputs can be mapped back to the original units via
    :func:`rescale_covariance`.
    """

    values: np.ndarray
    dates: tuple
    labels: tuple
    standardized: bool = False
    means: np.ndarray = None
    scales: np.ndarray = None

    @property
    def n_assets(self):
        return self.values.shape[0]

    @property
    def n_periods(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class FactorTable:
    """Observed factor series plus the risk-free rate, date aligned."""

    dates: tuple
    mkt_rf: np.ndarray
    smb: np.ndarray
    hml: np.ndarray
    rf: np.ndarray

    def observed(self, q):
        """The q-factor :class:`ObservedFactors` view (q in {1, 3})."""
        if q == 1:
            return ObservedFactors(series=self.mkt_rf[:, None],
                                   labels=("mkt_rf",))
        if q == 3:
            return ObservedFactors(
                series=np.column_stack([self.mkt_rf, self.smb, self.hml]),
                labels=("mkt_rf", "smb", "hml"))
        raise DegenerateInput("observed factor count must be 1 or 3")


@dataclass
class RunManifest:
    """Provenance of one CLI run; every result file references one."""

    command: str
    config: dict
    seed: int
    version: str
    wall_time: float = 0.0
    errors: list = field(default_factory=list)


def _read_rows(path):
    """Header and body rows of a CSV file, blank lines skipped."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PanelFormatError("file is empty", row=0, column=0) from None
        body = []
        for rnum, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            body.append((rnum, row))
    return [cell.strip() for cell in header], body


def _parse_cell(cell, rnum, cnum):
    try:
        return float(cell)
    except ValueError:
        raise PanelFormatError(f"non-numeric cell {cell!r}",
                               row=rnum, column=cnum) from None


def load_panel(path, standardize=False):
    """Load a return panel from CSV.

    The file needs a header row and a leading date column; every other
    cell must be numeric.  Rows arrive in time order; duplicate dates
    are rejected.  With ``standardize`` each asset is demeaned and
    scaled to unit variance (1/T divisor); a constant series then
    raises :class:`DegenerateInput`.
    """
    header, body = _read_rows(path)
    if len(header) < 2:
        raise PanelFormatError(
            "need a date column plus at least one asset column",
            row=0, column=len(header))
    labels = tuple(header[1:])
    dates, rows = [], []
    seen = set()
    for rnum, row in body:
        if len(row) != len(header):
            raise PanelFormatError(
                f"expected {len(header)} cells, found {len(row)}",
                row=rnum, column=len(row))
        date = row[0].strip()
        if date in seen:
            raise PanelFormatError(f"duplicate date {date!r}",
                                   row=rnum, column=0)
        seen.add(date)
        dates.append(date)
        rows.append([_parse_cell(cell, rnum, cnum)
                     for cnum, cell in enumerate(row[1:], start=1)])
    if len(rows) < 2:
        raise PanelFormatError("need at least two observation rows",
                               row=len(rows), column=0)
    values = np.asarray(rows, dtype=np.float64).T
    means = scales = None
    if standardize:
        means = values.mean(axis=1)
        centered = values - means[:, None]
        scales = np.sqrt((centered ** 2).mean(axis=1))
        flat = np.flatnonzero(scales <= 0)
        if flat.size:
            raise DegenerateInput(
                f"series {labels[flat[0]]!r} is constant; cannot standardize")
        values = centered / scales[:, None]
    return Panel(values=values, dates=tuple(dates), labels=labels,
                 standardized=bool(standardize), means=means, scales=scales)


def save_panel(panel, path):
    """Write a panel back to CSV (dates down the first column)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", *panel.labels])
        for t, date in enumerate(panel.dates):
            writer.writerow(
                [date, *(_FLOAT_FMT % v for v in panel.values[:, t])])


def rescale_covariance(matrix, scales):
    """Map a standardized-units covariance back to original units."""
    scales = np.asarray(scales, dtype=np.float64)
    return matrix * np.outer(scales, scales)


def _column_index(header, name, path):
    lowered = [h.lower() for h in header]
    if name not in lowered:
        raise PanelFormatError(f"missing required column {name!r} in {path}",
                               row=0, column=0)
    return lowered.index(name)


def load_factor_table(path):
    """Load the observed-factor CSV: date, mkt_rf, smb, hml, rf columns."""
    header, body = _read_rows(path)
    idx = {name: _column_index(header, name, path)
           for name in ("date", "mkt_rf", "smb", "hml", "rf")}
    dates, columns = [], {name: [] for name in ("mkt_rf", "smb", "hml", "rf")}
    seen = set()
    for rnum, row in body:
        if len(row) != len(header):
            raise PanelFormatError(
                f"expected {len(header)} cells, found {len(row)}",
                row=rnum, column=len(row))
        date = row[idx["date"]].strip()
        if date in seen:
            raise PanelFormatError(f"duplicate date {date!r}",
                                   row=rnum, column=idx["date"])
        seen.add(date)
        dates.append(date)
        for name in columns:
            columns[name].append(
                _parse_cell(row[idx[name]], rnum, idx[name]))
    return FactorTable(
        dates=tuple(dates),
        mkt_rf=np.asarray(columns["mkt_rf"]),
        smb=np.asarray(columns["smb"]),
        hml=np.asarray(columns["hml"]),
        rf=np.asarray(columns["rf"]),
    )


def load_riskfree(path):
    """Load a (date, rf) CSV; returns ``(dates, values)``.

    Uses the column named ``rf`` when present, otherwise the second
    column.
    """
    header, body = _read_rows(path)
    if len(header) < 2:
        raise PanelFormatError("need a date column plus a rate column",
                               row=0, column=len(header))
    lowered = [h.lower() for h in header]
    cnum = lowered.index("rf") if "rf" in lowered else 1
    dates, values = [], []
    for rnum, row in body:
        dates.append(row[0].strip())
        values.append(_parse_cell(row[cnum], rnum, cnum))
    return tuple(dates), np.asarray(values)


def _jsonable(obj):
    """Recursively convert numpy scalars/arrays for JSON emission."""
    if obj is None or isinstance(obj, (str, bool)):
        return obj
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    return str(obj)


def _sidecar_path(path):
    return f"{path}.json"


def save_covariance(estimate, path, labels=None):
    """Write a covariance matrix as labeled CSV plus a JSON sidecar.

    The CSV holds 17-significant-digit entries with asset labels on
    both axes; the sidecar records the estimator id and parameters.
    """
    matrix = estimate.matrix
    n = matrix.shape[0]
    if labels is None:
        labels = [f"v{i + 1:04d}" for i in range(n)]
    labels = [str(lab) for lab in labels]
    if len(labels) != n:
        raise DegenerateInput("need one label per matrix row")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["", *labels])
        for i in range(n):
            writer.writerow([labels[i], *(_FLOAT_FMT % v
                                          for v in matrix[i])])
    with open(_sidecar_path(path), "w") as fh:
        json.dump({
            "estimator_id": estimate.estimator_id,
            "params": _jsonable(estimate.params),
            "labels": labels,
        }, fh, indent=2)
        fh.write("\n")


def load_covariance(path):
    """Read a covariance CSV (and its sidecar when present)."""
    header, body = _read_rows(path)
    labels = tuple(header[1:])
    n = len(labels)
    matrix = np.empty((n, n))
    if len(body) != n:
        raise PanelFormatError(
            f"expected {n} matrix rows, found {len(body)}",
            row=len(body), column=0)
    for i, (rnum, row) in enumerate(body):
        if len(row) != n + 1:
            raise PanelFormatError(
                f"expected {n + 1} cells, found {len(row)}",
                row=rnum, column=len(row))
        matrix[i] = [_parse_cell(cell, rnum, cnum)
                     for cnum, cell in enumerate(row[1:], start=1)]
    estimator_id, params = "unknown", {}
    try:
        with open(_sidecar_path(path)) as fh:
            meta = json.load(fh)
        estimator_id = meta.get("estimator_id", "unknown")
        params = meta.get("params", {})
    except FileNotFoundError:
        pass
    return CovarianceEstimate(matrix=matrix, estimator_id=estimator_id,
                              params=params)


def save_manifest(manifest, path):
    """Write a run manifest as pretty-printed JSON."""
    with open(path, "w") as fh:
        json.dump(_jsonable(vars(manifest)), fh, indent=2)
        fh.write("\n")


def load_manifest(path):
    """Read a run manifest back."""
    with open(path) as fh:
        data = json.load(fh)
    return RunManifest(**data)
