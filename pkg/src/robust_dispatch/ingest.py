"""Trip parsing, spatial/temporal discretization, demand aggregation, and
synthetic demand generation.

Demand vectors are concatenations of per-stage region counts: entry
``k*n + i`` is the demand of region ``i`` during slot ``t + k`` (0-based
stage ``k < tau``).  Counts are stored as reals.
"""

from __future__ import annotations

import csv
import datetime
import io
import json
import os
import re
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

SECONDS_PER_DAY = 86400

TRIP_COLUMNS = (
    "date",
    "pickup_time",
    "dropoff_time",
    "pickup_lon",
    "pickup_lat",
    "dropoff_lon",
    "dropoff_lat",
)

_TIME_RE = re.compile(r"^(\d{1,2}):(\d{2}):(\d{2})$")


class OutOfBoundsError(ValueError):
    """Position falls outside the grid bounding box."""


@dataclass(frozen=True)
class TripRecord:
    """One taxi trip: day, second-of-day endpoints, lon/lat endpoints."""

    date: datetime.date
    pickup_time: int
    dropoff_time: int
    pickup_pos: tuple[float, float]
    dropoff_pos: tuple[float, float]

    def __post_init__(self):
        if not (0 <= self.pickup_time < SECONDS_PER_DAY):
            raise ValueError("pickup_time outside the day")
        if not (self.pickup_time <= self.dropoff_time < SECONDS_PER_DAY):
            raise ValueError("dropoff must follow pickup within the same day")
        for lon, lat in (self.pickup_pos, self.dropoff_pos):
            if not (np.isfinite(lon) and np.isfinite(lat)):
                raise ValueError("coordinates must be finite")
            if not (-180.0 <= lon <= 180.0 and -90.0 <= lat <= 90.0):
                raise ValueError("coordinates out of range")


@dataclass(frozen=True)
class RegionGrid:
    """Row-major rectangular grid over a lon/lat bounding box.

    Cell (row, col) covers the half-open box [lo, hi) on both axes; the
    top and right edges of the bbox are closed so the bbox is covered
    exactly.  Region index = row * cols + col, row 0 at lat_min.
    """

    bbox: tuple[float, float, float, float]  # lon_min, lat_min, lon_max, lat_max
    rows: int
    cols: int

    def __post_init__(self):
        lon0, lat0, lon1, lat1 = self.bbox
        if not (lon1 > lon0 and lat1 > lat0):
            raise ValueError("bbox degenerate")
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid must have at least one cell")

    @property
    def n(self) -> int:
        return self.rows * self.cols

    def cell_center(self, index: int) -> tuple[float, float]:
        lon0, lat0, lon1, lat1 = self.bbox
        r, c = divmod(int(index), self.cols)
        w = (lon1 - lon0) / self.cols
        h = (lat1 - lat0) / self.rows
        return (lon0 + (c + 0.5) * w, lat0 + (r + 0.5) * h)


@dataclass(frozen=True)
class TimeDiscretization:
    """Equal slots partitioning one day; slot_seconds must divide 86400."""

    slot_seconds: int

    def __post_init__(self):
        if self.slot_seconds <= 0 or SECONDS_PER_DAY % self.slot_seconds != 0:
            raise ValueError("slot_seconds must divide 86400 exactly")

    @property
    def slots_per_day(self) -> int:
        return SECONDS_PER_DAY // self.slot_seconds

    def slot_of(self, seconds_of_day: int) -> int:
        return int(seconds_of_day) // self.slot_seconds


@dataclass(frozen=True)
class DemandSample:
    """Concatenated demand vector observed on one date at start slot t."""

    date: datetime.date
    t: int
    label: str
    r_c: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.r_c, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "r_c", v)
        if v.ndim != 1:
            raise ValueError("demand vector must be 1-D")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("demand entries must be finite and >= 0")

    @property
    def dim(self) -> int:
        return int(self.r_c.size)


@dataclass
class SampleSet:
    """All demand samples sharing a start slot and category label."""

    t: int
    label: str
    samples: list[DemandSample] = field(default_factory=list)

    def __post_init__(self):
        for s in self.samples:
            if s.t != self.t or s.label != self.label:
                raise ValueError("sample (t, label) mismatch")
            if s.dim != self.dim:
                raise ValueError("sample dimension mismatch")

    @property
    def dim(self) -> int:
        if not self.samples:
            raise ValueError("empty sample set has no dimension")
        return self.samples[0].dim

    def __len__(self) -> int:
        return len(self.samples)

    def matrix(self) -> np.ndarray:
        """Samples stacked as rows, shape (len(self), dim)."""
        return np.array([s.r_c for s in self.samples], dtype=float)


@dataclass(frozen=True)
class TransitionMatrix:
    """Row-stochastic matrix: P[i, j] = probability an idle vehicle that
    served region i next turns vacant in region j."""

    P: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        P.setflags(write=False)
        object.__setattr__(self, "P", P)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValueError("transition matrix must be square")
        if np.any(P < 0) or np.any(P > 1):
            raise ValueError("transition entries must lie in [0, 1]")
        if np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("transition rows must sum to 1")

    @property
    def n(self) -> int:
        return self.P.shape[0]


@dataclass
class ParseResult:
    trips: list[TripRecord]
    skipped: int
    skip_reasons: Counter = field(default_factory=Counter)


def _parse_time(text: str) -> int:
    m = _TIME_RE.match(text.strip())
    if not m:
        raise ValueError(f"bad time {text!r}")
    h, mi, s = (int(g) for g in m.groups())
    if h > 23 or mi > 59 or s > 59:
        raise ValueError(f"bad time {text!r}")
    return h * 3600 + mi * 60 + s


def parse_trips(source, schema: dict[str, str] | None = None) -> ParseResult:
    """Parse a trip CSV into TripRecords.

    `source` is a path, a text stream, or a CSV string.  `schema` maps
    field names (TRIP_COLUMNS) to actual column headers; identity by
    default.  A missing column is a hard error; rows that fail to parse
    or validate are skipped and tallied.
    """
    colmap = dict(zip(TRIP_COLUMNS, TRIP_COLUMNS))
    if schema:
        colmap.update(schema)

    if hasattr(source, "read"):
        stream = source
    elif isinstance(source, str) and "\n" in source:
        stream = io.StringIO(source)
    else:
        stream = open(source, "r", encoding="utf-8", newline="")

    try:
        reader = csv.DictReader(stream)
        if reader.fieldnames is None:
            raise ValueError("trip CSV has no header")
        missing = [c for f, c in colmap.items() if c not in reader.fieldnames]
        if missing:
            raise ValueError(f"trip CSV missing required columns: {missing}")

        trips: list[TripRecord] = []
        skipped = 0
        reasons: Counter = Counter()
        for row in reader:
            try:
                rec = TripRecord(
                    date=datetime.date.fromisoformat(row[colmap["date"]].strip()),
                    pickup_time=_parse_time(row[colmap["pickup_time"]]),
                    dropoff_time=_parse_time(row[colmap["dropoff_time"]]),
                    pickup_pos=(
                        float(row[colmap["pickup_lon"]]),
                        float(row[colmap["pickup_lat"]]),
                    ),
                    dropoff_pos=(
                        float(row[colmap["dropoff_lon"]]),
                        float(row[colmap["dropoff_lat"]]),
                    ),
                )
            except (ValueError, TypeError, KeyError) as exc:
                skipped += 1
                reasons[type(exc).__name__] += 1
                continue
            trips.append(rec)
        return ParseResult(trips=trips, skipped=skipped, skip_reasons=reasons)
    finally:
        if stream is not source and not isinstance(source, io.StringIO):
            stream.close()


def trips_to_csv(trips: list[TripRecord]) -> str:
    """Serialize trips back to the canonical CSV layout."""
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(TRIP_COLUMNS)

    def hms(sec: int) -> str:
        return f"{sec // 3600:02d}:{sec % 3600 // 60:02d}:{sec % 60:02d}"

    for tr in trips:
        w.writerow(
            [
                tr.date.isoformat(),
                hms(tr.pickup_time),
                hms(tr.dropoff_time),
                repr(tr.pickup_pos[0]),
                repr(tr.pickup_pos[1]),
                repr(tr.dropoff_pos[0]),
                repr(tr.dropoff_pos[1]),
            ]
        )
    return out.getvalue()


def assign_region(pos: tuple[float, float], grid: RegionGrid) -> int:
    """Row-major cell index of a lon/lat position; raises OutOfBoundsError."""
    lon, lat = pos
    lon0, lat0, lon1, lat1 = grid.bbox
    if not (lon0 <= lon <= lon1 and lat0 <= lat <= lat1):
        raise OutOfBoundsError(f"position {pos} outside bbox {grid.bbox}")
    # half-open cells [lo, hi); the closed top/right edge folds into the last cell
    col = min(int((lon - lon0) / (lon1 - lon0) * grid.cols), grid.cols - 1)
    row = min(int((lat - lat0) / (lat1 - lat0) * grid.rows), grid.rows - 1)
    return row * grid.cols + col


def aggregate_demand(
    trips: list[TripRecord],
    grid: RegionGrid,
    disc: TimeDiscretization,
    tau: int,
    label: str = "all",
) -> list[DemandSample]:
    """Count pickups per (region, slot) and emit one concatenated demand
    vector per (date, start slot t) with t + tau <= slots_per_day."""
    if tau < 1:
        raise ValueError("tau must be >= 1")
    n = grid.n
    K = disc.slots_per_day
    by_date: dict[datetime.date, np.ndarray] = {}
    for tr in trips:
        counts = by_date.setdefault(tr.date, np.zeros((K, n)))
        counts[disc.slot_of(tr.pickup_time), assign_region(tr.pickup_pos, grid)] += 1.0

    out: list[DemandSample] = []
    for date in sorted(by_date):
        counts = by_date[date]
        for t in range(K - tau + 1):
            r_c = counts[t : t + tau].reshape(tau * n)
            out.append(DemandSample(date=date, t=t, label=label, r_c=r_c.copy()))
    return out


def partition(samples: list[DemandSample], label_fn) -> dict[tuple[int, str], SampleSet]:
    """Split samples into SampleSets keyed by (t, label_fn(date))."""
    groups: dict[tuple[int, str], list[DemandSample]] = {}
    for s in samples:
        lab = str(label_fn(s.date))
        groups.setdefault((s.t, lab), []).append(replace(s, label=lab))
    return {
        key: SampleSet(t=key[0], label=key[1], samples=members)
        for key, members in sorted(groups.items())
    }


def estimate_transition(
    trips: list[TripRecord],
    grid: RegionGrid,
    disc: TimeDiscretization,
    slot: int,
) -> TransitionMatrix:
    """Empirical pickup-region to dropoff-region frequencies for one slot.

    Rows with no observed trips fall back to the uniform distribution.
    """
    n = grid.n
    counts = np.zeros((n, n))
    for tr in trips:
        if disc.slot_of(tr.pickup_time) != slot:
            continue
        i = assign_region(tr.pickup_pos, grid)
        j = assign_region(tr.dropoff_pos, grid)
        counts[i, j] += 1.0
    totals = counts.sum(axis=1)
    P = np.full((n, n), 1.0 / n)
    seen = totals > 0
    P[seen] = counts[seen] / totals[seen, None]
    return TransitionMatrix(P=P)


def build_weight_matrix(grid: RegionGrid, scale: float = 1.0) -> np.ndarray:
    """One-norm distances between cell centers, times a degrees-to-distance
    scale factor.  Symmetric with zero diagonal."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    centers = np.array([grid.cell_center(i) for i in range(grid.n)])
    diff = centers[:, None, :] - centers[None, :, :]
    return scale * np.abs(diff).sum(axis=2)


@dataclass(frozen=True)
class GeneratorComponent:
    """One mixture component: a label, weight, mean, and covariance spec."""

    label: str
    weight: float
    mean: np.ndarray
    cov: np.ndarray  # full covariance matrix, validated PSD

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        if self.weight < 0:
            raise ValueError("component weight must be >= 0")
        if cov.shape != (mean.size, mean.size):
            raise ValueError("covariance shape does not match mean")
        if np.any(np.abs(cov - cov.T) > 1e-12):
            raise ValueError("covariance must be symmetric")
        evals = np.linalg.eigvalsh(cov)
        if evals.min() < -1e-10 * max(1.0, evals.max()):
            raise ValueError("covariance not positive semidefinite")


@dataclass(frozen=True)
class GeneratorConfig:
    """Synthetic demand model: a (possibly 1-component) Gaussian mixture
    over the concatenated demand vector, optionally truncated at 0."""

    n: int
    tau: int
    t: int
    n_samples: int
    components: tuple[GeneratorComponent, ...]
    truncate_at_zero: bool = True
    start_date: datetime.date = datetime.date(2024, 1, 1)

    def __post_init__(self):
        if self.n < 1 or self.tau < 1 or self.n_samples < 1:
            raise ValueError("n, tau, n_samples must be positive")
        if not self.components:
            raise ValueError("at least one mixture component required")
        dim = self.n * self.tau
        for c in self.components:
            if c.mean.size != dim:
                raise ValueError("component dimension must equal tau*n")
        wsum = sum(c.weight for c in self.components)
        if wsum <= 0:
            raise ValueError("mixture weights must sum to a positive value")


def synth_generate(config: GeneratorConfig, seed: int) -> list[DemandSample]:
    """Draw demand samples from the mixture; deterministic per seed.

    Sample i gets date start_date + i days; its component index is drawn
    from the mixture weights and recorded as the sample label.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    weights = np.array([c.weight for c in config.components], dtype=float)
    weights = weights / weights.sum()
    idx = rng.choice(len(config.components), size=config.n_samples, p=weights)
    chols = []
    for c in config.components:
        # PSD but possibly singular covariance: factor via eigenvalues
        evals, evecs = np.linalg.eigh(c.cov)
        chols.append(evecs * np.sqrt(np.clip(evals, 0.0, None)))
    out = []
    for i in range(config.n_samples):
        c = config.components[idx[i]]
        z = rng.standard_normal(c.mean.size)
        v = c.mean + chols[idx[i]] @ z
        if config.truncate_at_zero:
            v = np.maximum(v, 0.0)
        elif np.any(v < 0):
            raise ValueError("negative sample generated with truncation disabled")
        out.append(
            DemandSample(
                date=config.start_date + datetime.timedelta(days=i),
                t=config.t,
                label=c.label,
                r_c=v,
            )
        )
    return out


def generator_config_to_json(config: GeneratorConfig) -> str:
    """Serialize a GeneratorConfig; see generator_config_from_json."""
    doc = {
        "n": config.n,
        "tau": config.tau,
        "t": config.t,
        "n_samples": config.n_samples,
        "truncate_at_zero": config.truncate_at_zero,
        "start_date": config.start_date.isoformat(),
        "components": [
            {
                "label": c.label,
                "weight": c.weight,
                "mean": list(map(float, c.mean)),
                "cov": [list(map(float, row)) for row in c.cov],
            }
            for c in config.components
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def generator_config_from_json(text: str) -> GeneratorConfig:
    """Parse the JSON generator schema.

    Required keys: n, tau, t, n_samples, components (list of {label,
    weight, mean, cov}); cov may be a full matrix, a diagonal vector, or
    a scalar (isotropic).  Optional: truncate_at_zero, start_date.
    """
    doc = json.loads(text)
    dim = int(doc["n"]) * int(doc["tau"])
    comps = []
    for c in doc["components"]:
        cov = c["cov"]
        if np.isscalar(cov):
            cov_m = float(cov) * np.eye(dim)
        else:
            cov_a = np.asarray(cov, dtype=float)
            cov_m = np.diag(cov_a) if cov_a.ndim == 1 else cov_a
        comps.append(
            GeneratorComponent(
                label=str(c["label"]),
                weight=float(c["weight"]),
                mean=np.asarray(c["mean"], dtype=float),
                cov=cov_m,
            )
        )
    return GeneratorConfig(
        n=int(doc["n"]),
        tau=int(doc["tau"]),
        t=int(doc["t"]),
        n_samples=int(doc["n_samples"]),
        components=tuple(comps),
        truncate_at_zero=bool(doc.get("truncate_at_zero", True)),
        start_date=datetime.date.fromisoformat(doc.get("start_date", "2024-01-01")),
    )


def write_sample_archive(directory, sets: dict[tuple[int, str], SampleSet]) -> list[str]:
    """Write one CSV per (t, label): each row is date, then tau*n reals."""
    os.makedirs(directory, exist_ok=True)
    written = []
    for (t, label), sset in sorted(sets.items()):
        name = f"samples_t{t:03d}_{label}.csv"
        path = os.path.join(directory, name)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            dim = sset.dim
            w.writerow(["date"] + [f"c{i}" for i in range(dim)])
            for s in sset.samples:
                w.writerow([s.date.isoformat()] + [repr(float(v)) for v in s.r_c])
        written.append(path)
    return written


def read_sample_archive(directory) -> dict[tuple[int, str], SampleSet]:
    """Read every samples_t*_*.csv in `directory` back into SampleSets."""
    pat = re.compile(r"^samples_t(\d+)_(.+)\.csv$")
    out: dict[tuple[int, str], SampleSet] = {}
    for name in sorted(os.listdir(directory)):
        m = pat.match(name)
        if not m:
            continue
        t, label = int(m.group(1)), m.group(2)
        samples = []
        with open(os.path.join(directory, name), encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            next(reader)  # header
            for row in reader:
                samples.append(
                    DemandSample(
                        date=datetime.date.fromisoformat(row[0]),
                        t=t,
                        label=label,
                        r_c=np.array([float(v) for v in row[1:]]),
                    )
                )
        out[(t, label)] = SampleSet(t=t, label=label, samples=samples)
    return out


def group_samples(samples: list[DemandSample]) -> dict[tuple[int, str], SampleSet]:
    """Group already-labeled samples into SampleSets keyed by (t, label)."""
    groups: dict[tuple[int, str], list[DemandSample]] = {}
    for s in samples:
        groups.setdefault((s.t, s.label), []).append(s)
    return {
        key: SampleSet(t=key[0], label=key[1], samples=members)
        for key, members in sorted(groups.items())
    }
