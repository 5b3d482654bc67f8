"""Synthetic mobile-crowdsensing task datasets.

Class-conditional sampling follows the fake/legitimate task table: hour,
duration and battery requirement depend on the label, everything else is
drawn class-independently so that it carries no label signal.
"""

import csv
import io
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from fedsense.errors import ConfigurationError, DomainError, ParseError

# Timmins, ON: roughly a 10 km x 10 km box around the town centre.
DEFAULT_BOX = (48.430, 48.520, -81.400, -81.265)

COLUMNS = (
    "id",
    "latitude",
    "longitude",
    "day",
    "hour",
    "minute",
    "duration",
    "remaining_time",
    "battery_pct",
    "coverage",
    "grid_number",
    "on_peak_hour",
    "legitimacy",
    "task_value",
)
FEATURES = tuple(c for c in COLUMNS if c not in ("id", "legitimacy", "task_value"))
FLOAT_COLUMNS = ("latitude", "longitude", "coverage")

COVERAGE_RANGE = (50.0, 500.0)


@dataclass(frozen=True)
class Task:
    id: int
    latitude: float
    longitude: float
    day: int
    hour: int
    minute: int
    duration: int
    remaining_time: int
    battery_pct: int
    coverage: float
    grid_number: int
    on_peak_hour: bool
    legitimacy: int
    task_value: int


@dataclass(frozen=True)
class GenSpec:
    n_tasks: int = 1000
    fake_fraction: float = 0.11
    rng_seed: int = 42
    bounding_box: tuple = DEFAULT_BOX
    grid_rows: int = 10
    grid_cols: int = 10
    # half-open hour interval [start, end)
    peak_window: tuple = (7, 17)

    def validate(self):
        if not isinstance(self.n_tasks, (int, np.integer)) or self.n_tasks < 1:
            raise ConfigurationError(f"n_tasks must be a positive integer, got {self.n_tasks!r}")
        if not 0.0 < self.fake_fraction < 1.0:
            raise ConfigurationError("fake_fraction must lie in (0, 1)")
        if len(self.bounding_box) != 4:
            raise ConfigurationError("bounding_box is (lat_min, lat_max, lon_min, lon_max)")
        lat0, lat1, lon0, lon1 = self.bounding_box
        if not (lat0 < lat1 and lon0 < lon1):
            raise ConfigurationError("bounding_box is degenerate")
        if self.grid_rows < 1 or self.grid_cols < 1:
            raise ConfigurationError("grid dimensions must be >= 1")
        s, e = self.peak_window
        if not 0 <= s < e <= 24:
            raise ConfigurationError("peak_window must satisfy 0 <= start < end <= 24")
        return self


class Dataset:
    """Column-oriented task table with a fixed column order.

    ``cols`` maps every name in ``COLUMNS`` to a 1-d numpy array. Integer
    columns are int64, the three real columns are float64 and
    ``on_peak_hour`` is bool.
    """

    feature_schema = FEATURES

    def __init__(self, cols):
        missing = [c for c in COLUMNS if c not in cols]
        if missing:
            raise DomainError(f"missing column {missing[0]}")
        n = len(cols["id"])
        self.cols = {}
        for c in COLUMNS:
            dtype = np.float64 if c in FLOAT_COLUMNS else (bool if c == "on_peak_hour" else np.int64)
            a = np.asarray(cols[c], dtype=dtype)
            if a.shape != (n,):
                raise DomainError(f"column {c} has length {a.shape[0]}, expected {n}")
            self.cols[c] = a
        if len(np.unique(self.cols["id"])) != n:
            raise DomainError("task ids must be unique")

    def __len__(self):
        return len(self.cols["id"])

    def __getitem__(self, i):
        kw = {}
        for f in fields(Task):
            v = self.cols[f.name][i]
            kw[f.name] = bool(v) if f.name == "on_peak_hour" else v.item()
        return Task(**kw)

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return all(np.array_equal(self.cols[c], other.cols[c]) for c in COLUMNS)

    @property
    def tasks(self):
        return list(self)

    @property
    def labels(self):
        return self.cols["legitimacy"]

    @property
    def task_values(self):
        return self.cols["task_value"]

    @property
    def ids(self):
        return self.cols["id"]

    def features(self):
        """(n, 11) float matrix in ``feature_schema`` order."""
        return np.column_stack(
            [self.cols[c].astype(np.float64) for c in FEATURES]
        ) if len(self) else np.empty((0, len(FEATURES)))

    def take(self, index):
        index = np.asarray(index, dtype=np.int64)
        return Dataset({c: a[index] for c, a in self.cols.items()})

    @classmethod
    def from_tasks(cls, tasks):
        tasks = list(tasks)
        return cls({c: [getattr(t, c) for t in tasks] for c in COLUMNS})


def grid_of(lat, lon, spec):
    """Cell index ``row * grid_cols + col`` of an even partition of the box.

    Rows follow latitude, columns longitude. Points on an interior cell
    boundary go to the higher-index cell; the box's max edges are clamped
    into the last row/column.
    """
    lat0, lat1, lon0, lon1 = spec.bounding_box
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    if ((lat < lat0) | (lat > lat1) | (lon < lon0) | (lon > lon1)).any():
        raise DomainError("point outside the bounding box")
    row = np.floor((lat - lat0) / (lat1 - lat0) * spec.grid_rows).astype(np.int64)
    col = np.floor((lon - lon0) / (lon1 - lon0) * spec.grid_cols).astype(np.int64)
    row = np.minimum(row, spec.grid_rows - 1)
    col = np.minimum(col, spec.grid_cols - 1)
    cell = row * spec.grid_cols + col
    return int(cell) if cell.ndim == 0 else cell


def on_peak(hour, spec):
    s, e = spec.peak_window
    hour = np.asarray(hour)
    return (hour >= s) & (hour < e)


def _two_stage(rng, n, p_first, first, second):
    """Bernoulli(p_first) branch, then uniform integer within the branch."""
    branch = rng.random(n) < p_first
    a = rng.integers(first[0], first[1] + 1, size=n)
    b = rng.integers(second[0], second[1] + 1, size=n)
    return np.where(branch, a, b)


def n_fake_for(spec):
    # round half up; Python's round() would go to even
    return int(math.floor(spec.fake_fraction * spec.n_tasks + 0.5))


def generate(spec):
    """Sample ``spec.n_tasks`` tasks; the result depends only on ``spec``."""
    spec.validate()
    rng = np.random.default_rng(spec.rng_seed)
    n = spec.n_tasks
    n_fake = n_fake_for(spec)

    label = np.ones(n, dtype=np.int64)
    label[:n_fake] = 0
    label = rng.permutation(label)
    fake = label == 0
    nf, nl = int(fake.sum()), int((~fake).sum())

    hour = np.empty(n, dtype=np.int64)
    hour[fake] = _two_stage(rng, nf, 0.80, (7, 11), (12, 17))
    hour[~fake] = _two_stage(rng, nl, 0.08, (0, 5), (6, 23))

    duration = np.empty(n, dtype=np.int64)
    duration[fake] = 10 * _two_stage(rng, nf, 0.70, (4, 6), (1, 3))
    duration[~fake] = 10 * rng.integers(1, 7, size=nl)

    battery = np.empty(n, dtype=np.int64)
    battery[fake] = _two_stage(rng, nf, 0.80, (7, 10), (1, 6))
    battery[~fake] = rng.integers(1, 11, size=nl)

    lat0, lat1, lon0, lon1 = spec.bounding_box
    lat = rng.uniform(lat0, lat1, size=n)
    lon = rng.uniform(lon0, lon1, size=n)
    day = rng.integers(1, 7, size=n)
    minute = rng.integers(0, 60, size=n)
    # uniform over {10, 20, ..., duration}
    remaining = 10 * (1 + np.floor(rng.random(n) * (duration // 10)).astype(np.int64))
    coverage = rng.uniform(*COVERAGE_RANGE, size=n)
    task_value = rng.integers(1, 11, size=n)

    return Dataset(
        {
            "id": np.arange(n),
            "latitude": lat,
            "longitude": lon,
            "day": day,
            "hour": hour,
            "minute": minute,
            "duration": duration,
            "remaining_time": remaining,
            "battery_pct": battery,
            "coverage": coverage,
            "grid_number": grid_of(lat, lon, spec),
            "on_peak_hour": on_peak(hour, spec),
            "legitimacy": label,
            "task_value": task_value,
        }
    )


def _stratified_pick(labels, n_pick, rng):
    """Indices of ``n_pick`` rows drawn so each class keeps its share.

    Per-class quotas use the largest-remainder method; the rest goes to the
    complement. Both returned index arrays are sorted.
    """
    classes = np.unique(labels)
    n = len(labels)
    counts = np.array([(labels == c).sum() for c in classes])
    exact = counts * n_pick / n
    quota = np.floor(exact).astype(np.int64)
    short = n_pick - quota.sum()
    # ties broken towards the smaller class index for determinism
    order = np.argsort(-(exact - quota), kind="stable")
    quota[order[:short]] += 1
    picked = []
    for c, q in zip(classes, quota):
        members = np.flatnonzero(labels == c)
        picked.append(rng.permutation(members)[:q])
    picked = np.sort(np.concatenate(picked))
    rest = np.setdiff1d(np.arange(n), picked)
    return picked, rest


def split(d, train_n, seed):
    """Stratified, seed-deterministic train/test split."""
    if not 0 < train_n < len(d):
        raise ConfigurationError(
            f"train_n must satisfy 0 < train_n < {len(d)}, got {train_n}"
        )
    rng = np.random.default_rng(seed)
    test_idx, train_idx = _stratified_pick(d.labels, len(d) - train_n, rng)
    return d.take(train_idx), d.take(test_idx)


def halve_training(train, seed):
    """Split DT_0 into stratified halves DT_1, DT_2 (DT_1 gets an odd extra)."""
    n = len(train)
    if n < 2:
        raise ConfigurationError("need at least 2 tasks to halve a training set")
    rng = np.random.default_rng(seed)
    first, second = _stratified_pick(train.labels, (n + 1) // 2, rng)
    return train.take(first), train.take(second)


def _format(col, v):
    if col in FLOAT_COLUMNS:
        return repr(float(v))
    if col == "on_peak_hour":
        return "1" if v else "0"
    return str(int(v))


def to_csv_text(d):
    buf = io.StringIO()
    buf.write(",".join(COLUMNS) + "\n")
    arrays = [d.cols[c] for c in COLUMNS]
    for i in range(len(d)):
        buf.write(",".join(_format(c, a[i]) for c, a in zip(COLUMNS, arrays)) + "\n")
    return buf.getvalue()


def save_csv(d, path):
    Path(path).write_text(to_csv_text(d), encoding="utf-8", newline="")


_RANGES = {
    "day": (1, 6),
    "hour": (0, 23),
    "minute": (0, 59),
    "battery_pct": (1, 10),
    "legitimacy": (0, 1),
    "task_value": (1, 10),
    "on_peak_hour": (0, 1),
}


def _parse_row(row, line):
    out = {}
    for c, raw in zip(COLUMNS, row):
        try:
            if c in FLOAT_COLUMNS:
                v = float(raw)
                if not math.isfinite(v):
                    raise ValueError
            else:
                v = int(raw)
        except ValueError:
            raise ParseError(f"bad value {raw!r} for column {c}", line) from None
        lo_hi = _RANGES.get(c)
        if lo_hi and not lo_hi[0] <= v <= lo_hi[1]:
            raise ParseError(f"{c}={raw} outside [{lo_hi[0]}, {lo_hi[1]}]", line)
        out[c] = v
    if out["id"] < 0 or out["grid_number"] < 0:
        raise ParseError("id and grid_number must be non-negative", line)
    if out["duration"] not in (10, 20, 30, 40, 50, 60):
        raise ParseError(f"duration={out['duration']} not in 10..60 step 10", line)
    if not 0 < out["remaining_time"] <= out["duration"]:
        raise ParseError("remaining_time must satisfy 0 < remaining_time <= duration", line)
    if out["coverage"] <= 0:
        raise ParseError("coverage must be positive", line)
    return out


def load_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", 1) from None
        for c in COLUMNS:
            if c not in header:
                raise ParseError(f"missing column {c}", 1)
        if tuple(header) != COLUMNS:
            raise ParseError("columns out of order or unexpected extra columns", 1)
        rows = []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(COLUMNS):
                raise ParseError(f"expected {len(COLUMNS)} fields, got {len(row)}", line)
            rows.append(_parse_row(row, line))
    cols = {c: [r[c] for r in rows] for c in COLUMNS}
    try:
        return Dataset(cols)
    except DomainError as e:
        raise ParseError(str(e)) from None
