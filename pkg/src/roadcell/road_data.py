"""Road detector time-series: ingestion, gap filling, lag alignment, noise,
corridor topology and a synthetic generator.

Slots are 5 minutes long and only Monday to Friday exist on the slot axis:
``slot_index = (week * 5 + weekday) * 288 + time_of_day`` relative to an
epoch Monday, so Friday 23:55 is immediately followed by Monday 00:00.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    CalendarMismatchError,
    ConfigError,
    DataValidationError,
    ParseError,
    UnknownDetectorError,
)

log = logging.getLogger(__name__)

SLOT_MINUTES = 5
SLOT_SECONDS = SLOT_MINUTES * 60
SLOTS_PER_DAY = 288
WEEKDAYS_PER_WEEK = 5
SLOTS_PER_WEEK = SLOTS_PER_DAY * WEEKDAYS_PER_WEEK
WEEKDAY_NAMES = ("Mon", "Tue", "Wed", "Thu", "Fri")
CSV_HEADER = ("timestamp", "flow", "speed")
DEFAULT_EPOCH = date(2022, 3, 28)  # a Monday
DEFAULT_MAX_GAP = 6


def _monday_of(d: date) -> date:
    return d - timedelta(days=d.weekday())


def slot_calendar(slot_index):
    """Map slot indices to ``(week, weekday, time_of_day)``; works on scalars and arrays."""
    day, tod = np.divmod(slot_index, SLOTS_PER_DAY)
    week, weekday = np.divmod(day, WEEKDAYS_PER_WEEK)
    return week, weekday, tod


def slot_day(slot_index):
    """Weekday-axis day number of a slot (day 0 is the epoch Monday)."""
    return np.floor_divide(slot_index, SLOTS_PER_DAY)


def day_to_date(day: int, epoch: date) -> date:
    week, weekday = divmod(int(day), WEEKDAYS_PER_WEEK)
    return epoch + timedelta(days=7 * week + weekday)


def slot_to_timestamp(slot_index: int, epoch: date) -> datetime:
    week, weekday, tod = (int(v) for v in slot_calendar(int(slot_index)))
    d = epoch + timedelta(days=7 * week + weekday)
    return datetime(d.year, d.month, d.day) + timedelta(minutes=SLOT_MINUTES * tod)


def timestamp_to_slot(ts: datetime, epoch: date) -> int:
    if ts.second or ts.microsecond or ts.minute % SLOT_MINUTES:
        raise ValueError(f"{ts.isoformat()} is not on a 5-minute boundary")
    days = (ts.date() - epoch).days
    if days < 0:
        raise ValueError(f"{ts.isoformat()} precedes epoch {epoch.isoformat()}")
    week, dow = divmod(days, 7)
    if dow >= WEEKDAYS_PER_WEEK:
        raise ValueError(f"{ts.isoformat()} falls on a weekend")
    tod = (ts.hour * 60 + ts.minute) // SLOT_MINUTES
    return (week * WEEKDAYS_PER_WEEK + dow) * SLOTS_PER_DAY + tod


@dataclass(frozen=True)
class RoadSlot:
    slot_index: int
    flow: int
    speed: float

    def __post_init__(self):
        if self.flow < 0 or self.speed < 0:
            raise DataValidationError(
                f"slot {self.slot_index}: flow and speed must be non-negative")


def _frozen(a, dtype) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True).reshape(-1)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class RoadSeries:
    """Per-detector flow (vehicles/slot) and mean speed (mph), one value per slot."""

    detector_id: str
    slot_index: np.ndarray
    flow: np.ndarray
    speed: np.ndarray
    epoch: date = DEFAULT_EPOCH

    def __post_init__(self):
        idx = _frozen(self.slot_index, np.int64)
        flow = np.asarray(self.flow)
        if flow.size and not np.all(np.equal(np.mod(flow, 1), 0)):
            raise DataValidationError(f"{self.detector_id}: flow must be integral")
        flow = _frozen(flow, np.int64)
        speed = _frozen(self.speed, np.float64)
        if not (idx.shape == flow.shape == speed.shape):
            raise DataValidationError(f"{self.detector_id}: array lengths differ")
        if idx.size > 1 and np.any(np.diff(idx) <= 0):
            raise DataValidationError(
                f"{self.detector_id}: slot_index must be strictly increasing")
        if np.any(flow < 0) or np.any(speed < 0) or not np.all(np.isfinite(speed)):
            raise DataValidationError(
                f"{self.detector_id}: flow and speed must be non-negative and finite")
        if self.epoch.weekday() != 0:
            raise DataValidationError("epoch must be a Monday")
        object.__setattr__(self, "slot_index", idx)
        object.__setattr__(self, "flow", flow)
        object.__setattr__(self, "speed", speed)

    def __len__(self) -> int:
        return int(self.slot_index.size)

    @property
    def slots(self) -> list[RoadSlot]:
        return [RoadSlot(int(i), int(f), float(s))
                for i, f, s in zip(self.slot_index, self.flow, self.speed)]

    def calendar(self, slot_index: int) -> tuple[int, str, str]:
        """``(week, weekday name, HH:MM)`` of a slot."""
        week, weekday, tod = (int(v) for v in slot_calendar(int(slot_index)))
        minutes = tod * SLOT_MINUTES
        return week, WEEKDAY_NAMES[weekday], f"{minutes // 60:02d}:{minutes % 60:02d}"

    def timestamps(self) -> list[datetime]:
        return [slot_to_timestamp(i, self.epoch) for i in self.slot_index]

    @property
    def days(self) -> np.ndarray:
        return np.unique(slot_day(self.slot_index))

    def replace(self, **changes) -> "RoadSeries":
        return dataclasses.replace(self, **changes)

    def select(self, mask) -> "RoadSeries":
        mask = np.asarray(mask)
        return self.replace(slot_index=self.slot_index[mask], flow=self.flow[mask],
                            speed=self.speed[mask])

    def restrict_to(self, slot_index) -> "RoadSeries":
        return self.select(np.isin(self.slot_index, slot_index))

    def rebase(self, epoch: date) -> "RoadSeries":
        """Re-express slot indices relative to an earlier (or later) epoch Monday."""
        if epoch.weekday() != 0:
            raise DataValidationError("epoch must be a Monday")
        weeks = (self.epoch - epoch).days // 7
        shifted = self.slot_index + weeks * SLOTS_PER_WEEK
        if shifted.size and shifted[0] < 0:
            raise DataValidationError("rebasing would produce negative slot indices")
        return self.replace(slot_index=shifted, epoch=epoch)

    def equals(self, other: "RoadSeries") -> bool:
        return (self.detector_id == other.detector_id and self.epoch == other.epoch
                and np.array_equal(self.slot_index, other.slot_index)
                and np.array_equal(self.flow, other.flow)
                and np.array_equal(self.speed, other.speed))


# --------------------------------------------------------------------------- CSV

def parse_road_csv(path, detector_id: str, epoch: date | None = None,
                   known_detectors: Iterable[str] | None = None) -> RoadSeries:
    """Read a ``timestamp,flow,speed`` file into a RoadSeries.

    Weekend rows are skipped. Missing slots are kept as gaps; see
    :func:`validate_and_fill`.
    """
    path = Path(path)
    if known_detectors is not None and detector_id not in set(known_detectors):
        raise UnknownDetectorError(detector_id, "not part of the corridor")
    if not path.exists():
        raise UnknownDetectorError(detector_id, f"no road file at {path}")

    stamps: list[tuple[datetime, int, float, int]] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip().lower() for h in header) != CSV_HEADER:
            raise ParseError(f"expected header {','.join(CSV_HEADER)}", str(path), 1)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise ParseError(f"expected 3 fields, got {len(row)}", str(path), lineno)
            try:
                ts = datetime.fromisoformat(row[0].strip())
                flow = int(row[1])
                speed = float(row[2])
            except ValueError as exc:
                raise ParseError(f"malformed row {row!r}: {exc}", str(path), lineno) from None
            if ts.tzinfo is not None:
                ts = ts.replace(tzinfo=None)
            if not math.isfinite(speed):
                raise ParseError(f"non-finite speed {row[2]!r}", str(path), lineno)
            if flow < 0 or speed < 0:
                raise DataValidationError(
                    f"{path}:{lineno}: negative flow or speed ({flow}, {speed})")
            stamps.append((ts, flow, speed, lineno))

    if epoch is None:
        weekday_dates = [s[0].date() for s in stamps if s[0].weekday() < 5]
        epoch = _monday_of(min(weekday_dates)) if weekday_dates else DEFAULT_EPOCH

    seen: dict[int, int] = {}
    rows = []
    weekend = 0
    for ts, flow, speed, lineno in stamps:
        if ts.weekday() >= WEEKDAYS_PER_WEEK:
            weekend += 1
            continue
        try:
            idx = timestamp_to_slot(ts, epoch)
        except ValueError as exc:
            raise ParseError(str(exc), str(path), lineno) from None
        if idx in seen:
            raise ParseError(f"duplicate timestamp {ts.isoformat()} "
                             f"(first seen on line {seen[idx]})", str(path), lineno)
        seen[idx] = lineno
        rows.append((idx, flow, speed))
    if weekend:
        log.info("%s: skipped %d weekend rows", path, weekend)

    rows.sort()
    if rows:
        idx, flow, speed = (list(c) for c in zip(*rows))
    else:
        idx, flow, speed = [], [], []
    return RoadSeries(detector_id, np.array(idx, dtype=np.int64), np.array(flow, dtype=np.int64),
                      np.array(speed, dtype=np.float64), epoch)


def write_road_csv(series: RoadSeries, path) -> Path:
    """Write the canonical form: ISO timestamps, integer flow, shortest-repr speed."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for i, f, s in zip(series.slot_index, series.flow, series.speed):
            ts = slot_to_timestamp(int(i), series.epoch)
            w.writerow((ts.isoformat(timespec="seconds"), int(f), repr(float(s))))
    return path


# -------------------------------------------------------------------- validation

@dataclass
class ValidationReport:
    detector_id: str
    filled: list[dict] = field(default_factory=list)
    excluded_days: list[dict] = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not self.filled and not self.excluded_days

    def to_dict(self) -> dict:
        return {"detector_id": self.detector_id, "filled": self.filled,
                "excluded_days": self.excluded_days}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _round_half_up(x):
    return np.floor(np.asarray(x, dtype=float) + 0.5).astype(np.int64)


def _missing_runs(missing: np.ndarray) -> list[tuple[int, int]]:
    """Inclusive (start, end) of each run of consecutive integers."""
    if missing.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(missing) != 1)
    starts = np.concatenate(([missing[0]], missing[breaks + 1]))
    ends = np.concatenate((missing[breaks], [missing[-1]]))
    return list(zip(starts.tolist(), ends.tolist()))


def validate_and_fill(series: RoadSeries, max_gap: int = DEFAULT_MAX_GAP
                      ) -> tuple[RoadSeries, ValidationReport]:
    """Fill short gaps by linear interpolation; drop days that contain longer ones.

    A gap of at most ``max_gap`` slots with a present neighbour on both sides
    is interpolated (flow rounded half-up). Any other gap, including one at
    either end of the covered days, excludes every day it touches.
    """
    if len(series) == 0:
        raise DataValidationError(f"{series.detector_id}: road series is empty")
    report = ValidationReport(series.detector_id)
    idx = series.slot_index
    first_day, last_day = int(slot_day(idx[0])), int(slot_day(idx[-1]))
    full = np.arange(first_day * SLOTS_PER_DAY, (last_day + 1) * SLOTS_PER_DAY, dtype=np.int64)
    missing = np.setdiff1d(full, idx, assume_unique=True)

    new_idx, new_flow, new_speed = [idx], [series.flow], [series.speed]
    excluded: dict[int, str] = {}
    for a, b in _missing_runs(missing):
        length = b - a + 1
        left = np.searchsorted(idx, a) - 1
        has_left = left >= 0 and idx[left] == a - 1
        has_right = left + 1 < idx.size and idx[left + 1] == b + 1
        if length <= max_gap and has_left and has_right:
            frac = np.arange(1, length + 1) / (length + 1)
            f0, f1 = series.flow[left], series.flow[left + 1]
            s0, s1 = series.speed[left], series.speed[left + 1]
            fill_idx = np.arange(a, b + 1, dtype=np.int64)
            fill_flow = _round_half_up(f0 + frac * (f1 - f0))
            fill_speed = s0 + frac * (s1 - s0)
            new_idx.append(fill_idx)
            new_flow.append(fill_flow)
            new_speed.append(fill_speed)
            for i, f, s in zip(fill_idx, fill_flow, fill_speed):
                report.filled.append({
                    "slot_index": int(i),
                    "timestamp": slot_to_timestamp(int(i), series.epoch).isoformat(),
                    "flow": int(f), "speed": float(s)})
        else:
            reason = (f"gap of {length} slots exceeds max_gap={max_gap}" if length > max_gap
                      else f"gap of {length} slots at the edge of the covered days")
            for d in range(int(slot_day(a)), int(slot_day(b)) + 1):
                excluded.setdefault(d, reason)

    order_idx = np.concatenate(new_idx)
    order = np.argsort(order_idx, kind="stable")
    out = series.replace(slot_index=order_idx[order], flow=np.concatenate(new_flow)[order],
                         speed=np.concatenate(new_speed)[order])
    if excluded:
        keep = ~np.isin(slot_day(out.slot_index), list(excluded))
        out = out.select(keep)
        report.filled = [f for f in report.filled
                         if int(slot_day(f["slot_index"])) not in excluded]
        for d in sorted(excluded):
            report.excluded_days.append({"day": d,
                                         "date": day_to_date(d, series.epoch).isoformat(),
                                         "reason": excluded[d]})
    return out, report


def lag_align(series: RoadSeries, lag: int = 1) -> RoadSeries:
    """Shift measurements forward by ``lag`` slots.

    Slot ``t`` of the result carries what the input held at ``t - lag``; slots
    whose source is absent are dropped, so a contiguous input of length ``n``
    yields ``n - |lag|`` slots.
    """
    if len(series) < 2:
        raise DataValidationError(f"{series.detector_id}: lag_align needs at least 2 slots")
    target = series.slot_index + lag
    keep = np.isin(target, series.slot_index)
    return series.replace(slot_index=target[keep], flow=series.flow[keep],
                          speed=series.speed[keep])


@dataclass(frozen=True)
class NoiseConfig:
    sigma_fraction: float
    seed: int = 0

    def __post_init__(self):
        if not (self.sigma_fraction >= 0 and math.isfinite(self.sigma_fraction)):
            raise ConfigError("sigma_fraction must be a finite non-negative number")


def add_flow_noise(series: RoadSeries, cfg: NoiseConfig) -> RoadSeries:
    """Perturb flow with zero-mean Gaussian noise of std ``sigma_fraction * flow``."""
    rng = np.random.default_rng(cfg.seed)
    eps = rng.standard_normal(len(series)) * (cfg.sigma_fraction * series.flow)
    noisy = np.maximum(_round_half_up(series.flow + eps), 0)
    return series.replace(flow=noisy)


def align_calendars(series: Sequence[RoadSeries]) -> list[RoadSeries]:
    """Restrict every series to the slots present in all of them (common epoch required)."""
    if not series:
        return []
    epochs = {s.epoch for s in series}
    if len(epochs) != 1:
        raise CalendarMismatchError("series use different epochs; rebase first")
    common = series[0].slot_index
    for s in series[1:]:
        common = np.intersect1d(common, s.slot_index, assume_unique=True)
    if common.size == 0:
        raise CalendarMismatchError("road series share no common slots")
    return [s.restrict_to(common) for s in series]


# ---------------------------------------------------------------------- corridor

@dataclass(frozen=True)
class CellSite:
    bs_id: str
    range_miles: float
    detector_id: str
    position: int

    def __post_init__(self):
        if not (self.range_miles > 0 and math.isfinite(self.range_miles)):
            raise ConfigError(f"site {self.bs_id}: range_miles must be positive, "
                              f"got {self.range_miles}")


@dataclass(frozen=True)
class Corridor:
    """Cell sites in travel order; traffic flows from position 0 upward."""

    sites: tuple[CellSite, ...]

    def __post_init__(self):
        object.__setattr__(self, "sites", tuple(self.sites))
        if not self.sites:
            raise ConfigError("corridor needs at least one site")
        if [s.position for s in self.sites] != list(range(len(self.sites))):
            raise ConfigError("site positions must be 0..n-1 in order")
        for attr in ("detector_id", "bs_id"):
            ids = [getattr(s, attr) for s in self.sites]
            dup = {i for i in ids if ids.count(i) > 1}
            if dup:
                raise ConfigError(f"duplicate {attr}: {sorted(dup)}")

    def __len__(self) -> int:
        return len(self.sites)

    def __iter__(self):
        return iter(self.sites)

    def __getitem__(self, i) -> CellSite:
        return self.sites[i]

    def site(self, key: str) -> CellSite:
        for s in self.sites:
            if key in (s.bs_id, s.detector_id):
                return s
        raise UnknownDetectorError(key, "not in corridor")

    @property
    def detector_ids(self) -> list[str]:
        return [s.detector_id for s in self.sites]

    def to_rows(self) -> list[dict]:
        return [{"bs_id": s.bs_id, "detector_id": s.detector_id,
                 "range_miles": s.range_miles} for s in self.sites]


def build_corridor(config: Iterable[Mapping | Sequence]) -> Corridor:
    """Build a corridor from entries in travel order.

    Each entry is a mapping with ``detector_id``, ``range_miles`` and an
    optional ``bs_id`` (defaults to the detector id), or a
    ``(bs_id, detector_id, range_miles)`` tuple.
    """
    sites = []
    for pos, entry in enumerate(config):
        if isinstance(entry, Mapping):
            det = str(entry["detector_id"])
            bs = str(entry.get("bs_id") or det)
            rng = entry["range_miles"]
        else:
            bs, det, rng = entry
            bs, det = str(bs), str(det)
        try:
            rng = float(rng)
        except (TypeError, ValueError):
            raise ConfigError(f"site {bs}: bad range {rng!r}") from None
        sites.append(CellSite(bs, rng, det, pos))
    return Corridor(tuple(sites))


def load_corridor(path) -> Corridor:
    """Read a corridor config: CSV with ``bs_id,detector_id,range_miles`` or a JSON list."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"corridor config not found: {path}")
    if path.suffix.lower() == ".json":
        data = json.loads(path.read_text())
        if isinstance(data, Mapping):
            data = data.get("sites", [])
        return build_corridor(data)
    with path.open(newline="") as fh:
        rows = [r for r in csv.DictReader(
            (line for line in fh if line.strip() and not line.lstrip().startswith("#")))]
    missing = {"detector_id", "range_miles"} - set(rows[0] if rows else {})
    if missing:
        raise ConfigError(f"{path}: corridor config lacks columns {sorted(missing)}")
    return build_corridor(rows)


def write_corridor(corridor: Corridor, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["bs_id", "detector_id", "range_miles"],
                           lineterminator="\n")
        w.writeheader()
        w.writerows(corridor.to_rows())
    return path


TABLE_II = (
    ("3086071", 7.67),
    ("3086081", 1.62),
    ("320287", 13.27),
    ("320280", 13.41),
    ("317706", 3.89),
    ("3054051", 0.99),
    ("3410061", 3.22),
    ("317715", 1.46),
)


def us50_corridor() -> Corridor:
    """The eight US-50 eastbound detectors, BS range = distance to the next detector."""
    return build_corridor({"detector_id": d, "range_miles": r} for d, r in TABLE_II)


def load_road_dir(road_dir, corridor: Corridor, max_gap: int = DEFAULT_MAX_GAP
                  ) -> tuple[list[RoadSeries], list[ValidationReport]]:
    """Parse, validate and calendar-align ``<road_dir>/<detector_id>.csv`` for every site."""
    road_dir = Path(road_dir)
    parsed = [parse_road_csv(road_dir / f"{d}.csv", d) for d in corridor.detector_ids]
    epoch = min(s.epoch for s in parsed)
    validated, reports = [], []
    for s in parsed:
        v, rep = validate_and_fill(s.rebase(epoch), max_gap=max_gap)
        validated.append(v)
        reports.append(rep)
    return align_calendars(validated), reports


# --------------------------------------------------------------------- synthetic

def _bump(hours: np.ndarray, centre: float, width: float) -> np.ndarray:
    return np.exp(-0.5 * ((hours - centre) / width) ** 2)


@dataclass(frozen=True, eq=False)
class SyntheticProfile:
    """Per-time-of-day mean flow and speed, plus day-to-day level variation.

    ``day_variability`` is the log-scale std of a multiplicative level drawn
    once per day; ``weekday_factors`` scale Monday..Friday.
    """

    flow_mean: np.ndarray
    speed_mean: np.ndarray
    speed_jitter: float = 2.0
    day_variability: float = 0.0
    weekday_factors: tuple[float, ...] = (1.0, 1.0, 1.0, 1.0, 1.0)

    def __post_init__(self):
        fm = _frozen(self.flow_mean, np.float64)
        sm = _frozen(self.speed_mean, np.float64)
        if fm.shape != (SLOTS_PER_DAY,) or sm.shape != (SLOTS_PER_DAY,):
            raise ConfigError("profile curves need one value per 5-minute slot (288)")
        if np.any(fm < 0) or np.any(sm <= 0):
            raise ConfigError("profile flow must be >= 0 and speed > 0")
        if len(self.weekday_factors) != WEEKDAYS_PER_WEEK or min(self.weekday_factors) < 0:
            raise ConfigError("weekday_factors needs 5 non-negative values")
        if self.speed_jitter < 0 or self.day_variability < 0:
            raise ConfigError("speed_jitter and day_variability must be >= 0")
        object.__setattr__(self, "flow_mean", fm)
        object.__setattr__(self, "speed_mean", sm)
        object.__setattr__(self, "weekday_factors", tuple(float(w) for w in self.weekday_factors))

    @classmethod
    def flat(cls, flow: float, speed: float = 60.0, speed_jitter: float = 0.0) -> "SyntheticProfile":
        return cls(np.full(SLOTS_PER_DAY, float(flow)), np.full(SLOTS_PER_DAY, float(speed)),
                   speed_jitter=speed_jitter)

    @classmethod
    def diurnal(cls, peak_flow: float = 120.0, night_flow: float = 6.0,
                free_speed: float = 65.0, congestion_depth: float = 0.35,
                speed_jitter: float = 2.0, day_variability: float = 0.1,
                weekday_factors=(0.95, 0.97, 1.0, 1.03, 1.12)) -> "SyntheticProfile":
        """Commuter-style day: morning and evening peaks over a daytime plateau,
        with speed dips at the peaks."""
        hours = (np.arange(SLOTS_PER_DAY) + 0.5) * SLOT_MINUTES / 60.0
        plateau = 1.0 / (1.0 + np.exp(-(hours - 6.5) * 1.6)) / (1.0 + np.exp((hours - 20.5) * 1.2))
        am, pm = _bump(hours, 8.0, 1.1), _bump(hours, 17.0, 1.5)
        shape = np.clip(0.6 * plateau + 0.35 * am + 0.45 * pm, 0.0, None)
        shape = shape / shape.max()
        flow = night_flow + (peak_flow - night_flow) * shape
        speed = free_speed * (1.0 - congestion_depth * np.maximum(am * 0.8, pm))
        return cls(flow, speed, speed_jitter=speed_jitter, day_variability=day_variability,
                   weekday_factors=tuple(weekday_factors))

    @classmethod
    def from_dict(cls, opts: Mapping) -> "SyntheticProfile":
        opts = dict(opts)
        kind = opts.pop("kind", "diurnal")
        try:
            if kind == "flat":
                return cls.flat(**opts)
            if kind == "diurnal":
                return cls.diurnal(**opts)
            if kind == "curves":
                return cls(**opts)
        except TypeError as exc:
            raise ConfigError(f"bad {kind} profile: {exc}") from None
        raise ConfigError(f"unknown profile kind {kind!r}")


def _profile_means(profile: SyntheticProfile, weeks: int, rng: np.random.Generator):
    n = weeks * SLOTS_PER_WEEK
    idx = np.arange(n, dtype=np.int64)
    _, weekday, tod = slot_calendar(idx)
    n_days = weeks * WEEKDAYS_PER_WEEK
    dv = profile.day_variability
    level = np.exp(rng.normal(-0.5 * dv * dv, dv, n_days)) if dv > 0 else np.ones(n_days)
    factors = np.asarray(profile.weekday_factors)
    mean_flow = profile.flow_mean[tod] * factors[weekday] * level[idx // SLOTS_PER_DAY]
    return idx, mean_flow, profile.speed_mean[tod]


def _jittered_speed(speed_mean, jitter, rng):
    speed = speed_mean + (rng.normal(0.0, jitter, speed_mean.shape) if jitter > 0 else 0.0)
    return np.round(np.maximum(speed, 5.0), 1)


def synth_road(profile: SyntheticProfile, weeks: int, seed: int, detector_id: str = "SYN0",
               epoch: date = DEFAULT_EPOCH) -> RoadSeries:
    """Draw a weekday-only series: Poisson flow around the profile mean,
    speed with Gaussian jitter clamped at 5 mph (rounded to 0.1 mph)."""
    if int(weeks) < 1:
        raise ConfigError("weeks must be >= 1")
    rng = np.random.default_rng(seed)
    idx, mean_flow, mean_speed = _profile_means(profile, int(weeks), rng)
    flow = rng.poisson(mean_flow)
    speed = _jittered_speed(mean_speed, profile.speed_jitter, rng)
    return RoadSeries(detector_id, idx, flow, speed, epoch)


def synth_corridor(profile: SyntheticProfile, detector_ids: Sequence[str], weeks: int,
                   seed: int, flow_scales: Sequence[float] | None = None,
                   through_fraction: float = 0.9, epoch: date = DEFAULT_EPOCH
                   ) -> list[RoadSeries]:
    """Correlated detector series along a corridor.

    The first detector is :func:`synth_road`. Each next one keeps a binomial
    share of the previous detector's vehicles and adds independent Poisson
    on-ramp traffic, so every marginal stays Poisson with mean
    ``flow_scales[k]`` times the profile mean.
    """
    if int(weeks) < 1:
        raise ConfigError("weeks must be >= 1")
    n = len(detector_ids)
    if n == 0:
        raise ConfigError("need at least one detector")
    scales = np.ones(n) if flow_scales is None else np.asarray(flow_scales, dtype=float)
    if scales.shape != (n,) or np.any(scales < 0):
        raise ConfigError("flow_scales needs one non-negative value per detector")
    if not 0 <= through_fraction <= 1:
        raise ConfigError("through_fraction must be within [0, 1]")

    root = np.random.SeedSequence(seed)
    level_rng, *site_rngs = (np.random.default_rng(s) for s in root.spawn(n + 1))
    idx, base_mean, mean_speed = _profile_means(profile, int(weeks), level_rng)

    out = []
    prev_flow, prev_scale = None, None
    for k, det in enumerate(detector_ids):
        rng = site_rngs[k]
        mean_k = base_mean * scales[k]
        if prev_flow is None or prev_scale == 0:
            flow = rng.poisson(mean_k)
        else:
            p = min(through_fraction, scales[k] / prev_scale)
            onramp = np.maximum(mean_k - p * base_mean * prev_scale, 0.0)
            flow = rng.binomial(prev_flow, p) + rng.poisson(onramp)
        speed = _jittered_speed(mean_speed, profile.speed_jitter, rng)
        out.append(RoadSeries(str(det), idx, flow, speed, epoch))
        prev_flow, prev_scale = flow, scales[k]
    return out
