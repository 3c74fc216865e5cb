"""Panel container, CSV ingestion, series transforms, standardization.

A panel is a complete T x N table of finite floats: rows are time points,
columns are series.  CSV layout: UTF-8, one header row, optional leading time
column signalled by the header cell "time" (case-insensitive); values are
written with 17 significant digits so save/load round trips are bit-identical.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Panel",
    "TRANSFORM_CODES",
    "load_panel",
    "save_panel",
    "apply_transform",
    "invert_transform",
    "standardize",
]

TRANSFORM_CODES = ("level", "diff", "diff2", "log", "log-diff", "log-diff2", "pct-diff")


@dataclass(frozen=True)
class Panel:
    """Immutable T x N data panel.

    Parameters
    ----------
    values : ndarray, shape (T, N)
        Finite float observations, rows indexed by time.
    series_ids : tuple of str
        Unique column identifiers, length N.
    time_labels : tuple of str
        Unique row labels, length T.
    """

    values: np.ndarray
    series_ids: tuple = field(default=None)
    time_labels: tuple = field(default=None)

    def __post_init__(self):
        arr = np.array(self.values, dtype=float, copy=True)
        if arr.ndim != 2:
            raise ValueError("panel values must be a 2-d array, got ndim=%d" % arr.ndim)
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("panel must have at least one row and one column")
        if not np.all(np.isfinite(arr)):
            t, i = np.argwhere(~np.isfinite(arr))[0]
            raise ValueError(
                "panel values must be finite; offending entry at row %d, column %d" % (t + 1, i + 1)
            )
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

        T, N = arr.shape
        sids = self.series_ids
        if sids is None:
            sids = tuple("s%d" % (i + 1) for i in range(N))
        else:
            sids = tuple(str(s) for s in sids)
        tlabs = self.time_labels
        if tlabs is None:
            tlabs = tuple("t%d" % (t + 1) for t in range(T))
        else:
            tlabs = tuple(str(t) for t in tlabs)
        if len(sids) != N:
            raise ValueError("series_ids length %d does not match N=%d" % (len(sids), N))
        if len(tlabs) != T:
            raise ValueError("time_labels length %d does not match T=%d" % (len(tlabs), T))
        if len(set(sids)) != N:
            raise ValueError("series_ids must be unique")
        if len(set(tlabs)) != T:
            raise ValueError("time_labels must be unique")
        object.__setattr__(self, "series_ids", sids)
        object.__setattr__(self, "time_labels", tlabs)

    @property
    def shape(self):
        return self.values.shape

    @property
    def n_periods(self):
        return self.values.shape[0]

    @property
    def n_series(self):
        return self.values.shape[1]

    def series(self, sid):
        """Return one column by id as a fresh 1-d array."""
        try:
            j = self.series_ids.index(str(sid))
        except ValueError:
            raise KeyError("unknown series id %r" % (sid,)) from None
        return self.values[:, j].copy()


def load_panel(path, orientation="time-rows"):
    """Read a rectangular numeric CSV into a :class:`Panel`.

    orientation "time-rows" (default) treats data rows as time points and the
    header as series ids; "series-rows" treats data rows as series (the result
    is transposed into time-rows form, header cells become time labels).  A
    first column holding labels is detected by the header cell "time".
    """
    if orientation not in ("time-rows", "series-rows"):
        raise ValueError("orientation must be 'time-rows' or 'series-rows', got %r" % (orientation,))
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = [row for row in csv.reader(fh)]
    rows = [row for row in rows if row and not all(cell.strip() == "" for cell in row)]
    if not rows:
        raise ValueError("empty file: %s" % (path,))
    header = [cell.strip() for cell in rows[0]]
    if len(rows) == 1:
        raise ValueError("no data rows in %s" % (path,))
    has_label_col = header[0].strip().lower() == "time"
    width = len(header)
    ncol = width - 1 if has_label_col else width

    labels = []
    data = np.empty((len(rows) - 1, ncol), dtype=float)
    for ridx, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise ValueError(
                "ragged row %d in %s: expected %d cells, found %d" % (ridx, path, width, len(row))
            )
        body = row[1:] if has_label_col else row
        if has_label_col:
            labels.append(row[0].strip())
        for cidx, cell in enumerate(body):
            col_no = cidx + 2 if has_label_col else cidx + 1
            try:
                val = float(cell)
            except ValueError:
                raise ValueError(
                    "non-numeric cell %r at row %d, column %d of %s" % (cell, ridx, col_no, path)
                ) from None
            if not math.isfinite(val):
                raise ValueError(
                    "non-finite cell %r at row %d, column %d of %s" % (cell, ridx, col_no, path)
                )
            data[ridx - 2, cidx] = val

    names = header[1:] if has_label_col else header
    if orientation == "time-rows":
        return Panel(data, series_ids=names, time_labels=labels if labels else None)
    # series-rows: data rows are series, columns are time points
    return Panel(data.T, series_ids=labels if labels else None, time_labels=names)


def save_panel(panel, path):
    """Write a panel as CSV; values at 17 significant digits for exact round trips."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time"] + list(panel.series_ids))
        for t in range(panel.n_periods):
            writer.writerow([panel.time_labels[t]] + ["%.17g" % v for v in panel.values[t]])


def apply_transform(series, code):
    """Apply one named transform to a 1-d series.

    Codes: level, diff, diff2, log, log-diff, log-diff2, pct-diff.  Differencing
    shortens the output by the difference order; log codes require positive
    inputs; pct-diff is x_t / x_{t-1} - 1 and requires nonzero predecessors.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise ValueError("series must be 1-d")
    if code not in TRANSFORM_CODES:
        raise ValueError("unknown transform code %r; valid: %s" % (code, ", ".join(TRANSFORM_CODES)))
    order = {"diff": 1, "diff2": 2, "log-diff": 1, "log-diff2": 2, "pct-diff": 1}.get(code, 0)
    if x.size < order + 1:
        raise ValueError("series of length %d too short for %s" % (x.size, code))

    if code == "level":
        return x.copy()
    if code in ("log", "log-diff", "log-diff2"):
        bad = np.nonzero(x <= 0)[0]
        if bad.size:
            raise ValueError(
                "log transform requires positive values; series[%d] = %g" % (bad[0], x[bad[0]])
            )
        lx = np.log(x)
        if code == "log":
            return lx
        if code == "log-diff":
            return np.diff(lx)
        return np.diff(lx, n=2)
    if code == "diff":
        return np.diff(x)
    if code == "diff2":
        return np.diff(x, n=2)
    # pct-diff
    prev = x[:-1]
    bad = np.nonzero(prev == 0)[0]
    if bad.size:
        raise ValueError("pct-diff requires nonzero predecessors; series[%d] = 0" % bad[0])
    return x[1:] / prev - 1.0


def invert_transform(transformed, code, anchor=None):
    """Invert :func:`apply_transform` where defined.

    ``anchor`` supplies the initial level(s) removed by differencing: a scalar
    for first-order codes, a pair (x0, x1) of initial *levels* for the
    second-order codes.  Level and log need no anchor.
    """
    d = np.asarray(transformed, dtype=float)
    if code not in TRANSFORM_CODES:
        raise ValueError("unknown transform code %r" % (code,))
    if code == "level":
        return d.copy()
    if code == "log":
        return np.exp(d)
    if code in ("diff", "log-diff", "pct-diff"):
        if anchor is None or np.ndim(anchor) != 0:
            raise ValueError("%s inversion needs a scalar anchor (initial level)" % code)
        x0 = float(anchor)
        if code == "diff":
            return np.concatenate(([x0], x0 + np.cumsum(d)))
        if code == "log-diff":
            return np.concatenate(([x0], x0 * np.exp(np.cumsum(d))))
        return np.concatenate(([x0], x0 * np.cumprod(1.0 + d)))
    # second-order codes: anchor is the pair of initial levels
    if anchor is None or np.size(anchor) != 2:
        raise ValueError("%s inversion needs two anchor levels (x0, x1)" % code)
    x0, x1 = (float(a) for a in np.asarray(anchor, dtype=float))
    if code == "diff2":
        first = np.concatenate(([x1 - x0], (x1 - x0) + np.cumsum(d)))
        return np.concatenate(([x0], x0 + np.cumsum(first)))
    # log-diff2
    l0, l1 = math.log(x0), math.log(x1)
    first = np.concatenate(([l1 - l0], (l1 - l0) + np.cumsum(d)))
    return np.exp(np.concatenate(([l0], l0 + np.cumsum(first))))


def standardize(panel):
    """Scale every series to sample mean 0, sample sd 1 (divisor n-1).

    Returns the standardized panel and the list of (mean, sd) pairs that invert
    the map exactly.  Constant series are rejected.
    """
    X = panel.values
    if X.shape[0] < 2:
        raise ValueError("standardize needs at least 2 rows")
    means = X.mean(axis=0)
    sds = X.std(axis=0, ddof=1)
    flat = np.nonzero(sds == 0)[0]
    if flat.size:
        raise ValueError(
            "constant series cannot be standardized: %r" % (panel.series_ids[flat[0]],)
        )
    Z = (X - means) / sds
    out = Panel(Z, series_ids=panel.series_ids, time_labels=panel.time_labels)
    return out, [(float(m), float(s)) for m, s in zip(means, sds)]
