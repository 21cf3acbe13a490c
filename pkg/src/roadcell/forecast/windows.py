"""Feature tables, chronological week splits and day-bounded sliding windows."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Sequence

import numpy as np

from ..cellgen import CellSeries
from ..errors import ConfigError, DataValidationError
from ..road_data import SLOTS_PER_DAY, WEEKDAYS_PER_WEEK, RoadSeries

log = logging.getLogger(__name__)

DEFAULT_HISTORY = 6
TARGET_COLUMN = "total"


class FeatureSet(Enum):
    C = ("total",)
    FSC = ("flow", "speed", "total")
    NHC = ("new", "handover", "total")
    FSNHC = ("flow", "speed", "new", "handover", "total")

    @property
    def columns(self) -> tuple[str, ...]:
        return self.value

    @property
    def uses_road(self) -> bool:
        return "flow" in self.value

    @property
    def uses_handover(self) -> bool:
        return "handover" in self.value

    @classmethod
    def parse(cls, names) -> list["FeatureSet"]:
        if isinstance(names, str):
            names = [n for n in names.split(",") if n.strip()]
        out = []
        for n in names:
            try:
                out.append(n if isinstance(n, cls) else cls[str(n).strip().upper()])
            except KeyError:
                raise ConfigError(f"unknown feature set {n!r}; "
                                  f"choose from {[f.name for f in cls]}") from None
        return out


@dataclass(frozen=True, eq=False)
class FeatureTable:
    """Per-slot feature columns for one base station, keyed by slot index."""

    slot_index: np.ndarray
    columns: dict[str, np.ndarray]

    def __len__(self) -> int:
        return int(self.slot_index.size)

    def matrix(self, feature_set: FeatureSet) -> np.ndarray:
        return np.column_stack([self.columns[c] for c in feature_set.columns]).astype(float)

    @property
    def target(self) -> np.ndarray:
        return self.columns[TARGET_COLUMN].astype(float)


def assemble_features(cells: CellSeries, road: RoadSeries | None) -> FeatureTable:
    """Join a cell series with road measurements on slot index.

    The road row joined to cell slot ``t`` is whatever measurement the
    caller keys at ``t``; the pipeline passes the raw detector series, whose
    slot ``t`` reading is the traffic that occupies the cell during ``t + 1``.
    """
    idx = cells.slot_index
    cols = {"new": cells.new_calls, "handover": cells.handover_calls,
            "total": cells.total_calls}
    if road is not None:
        idx = np.intersect1d(cells.slot_index, road.slot_index, assume_unique=True)
        ci = np.searchsorted(cells.slot_index, idx)
        ri = np.searchsorted(road.slot_index, idx)
        cols = {k: v[ci] for k, v in cols.items()}
        cols["flow"] = road.flow[ri]
        cols["speed"] = road.speed[ri]
    return FeatureTable(np.asarray(idx, dtype=np.int64), cols)


@dataclass(frozen=True)
class Split:
    """Week ranges (0-based, relative to the first week of data)."""

    train: range
    val: range
    test: range

    def which(self, week: int) -> str | None:
        for name in ("train", "val", "test"):
            if week in getattr(self, name):
                return name
        return None


def split_chronological(n_weeks: int, ratios: Sequence[int]) -> Split:
    """Contiguous train/val/test week blocks, e.g. 24 weeks at 12:6:6."""
    if len(ratios) != 3 or any(int(r) != r or r < 1 for r in ratios):
        raise ConfigError(f"ratios must be three positive integers, got {list(ratios)}")
    a, b, c = (int(r) for r in ratios)
    if a + b + c > n_weeks:
        raise DataValidationError(
            f"insufficient weeks: split {a}:{b}:{c} needs {a + b + c}, data has {n_weeks}")
    if a + b + c != n_weeks:
        raise ConfigError(f"split {a}:{b}:{c} does not sum to the {n_weeks} weeks of data")
    return Split(range(0, a), range(a, a + b), range(a + b, a + b + c))


@dataclass(frozen=True)
class WindowSample:
    inputs: np.ndarray
    target: float
    slot_index: int


@dataclass(frozen=True, eq=False)
class WindowSet:
    """``X`` is (N, M, p); ``y`` the next-slot total calls; ``slot_index`` of each target."""

    X: np.ndarray
    y: np.ndarray
    slot_index: np.ndarray

    def __len__(self) -> int:
        return int(self.y.size)

    def __iter__(self) -> Iterator[WindowSample]:
        for x, y, s in zip(self.X, self.y, self.slot_index):
            yield WindowSample(x, float(y), int(s))

    def take(self, rows) -> "WindowSet":
        return WindowSet(self.X[rows], self.y[rows], self.slot_index[rows])

    @classmethod
    def empty(cls, history: int, n_features: int) -> "WindowSet":
        return cls(np.empty((0, history, n_features)), np.empty(0), np.empty(0, np.int64))


def build_windows(table: FeatureTable, feature_set: FeatureSet, history: int, split: Split,
                  seed: int = 0, first_week: int | None = None) -> dict[str, WindowSet]:
    """Windows of ``history`` consecutive slots followed by their target slot.

    History and target always lie in the same day, so a complete day gives
    ``288 - history`` windows. Training and validation windows are shuffled
    once; test windows stay in time order.
    """
    if history < 1:
        raise ConfigError("history length must be >= 1")
    idx = table.slot_index
    mat = table.matrix(feature_set)
    target = table.target
    p = mat.shape[1]
    out = {name: WindowSet.empty(history, p) for name in ("train", "val", "test")}
    if idx.size <= history:
        return out

    day = idx // SLOTS_PER_DAY
    for d in np.unique(day):
        if np.count_nonzero(day == d) < history + 1:
            log.warning("day %d has fewer than %d slots; skipped", int(d), history + 1)

    j = np.arange(history, idx.size)
    ok = (idx[j] - idx[j - history] == history) & (day[j] == day[j - history])
    j = j[ok]
    views = np.lib.stride_tricks.sliding_window_view(mat, history, axis=0)  # (n-M+1, p, M)
    X = np.ascontiguousarray(views[j - history].transpose(0, 2, 1))
    y = target[j]
    slots = idx[j]

    week = day[j] // WEEKDAYS_PER_WEEK
    week = week - (int(day.min() // WEEKDAYS_PER_WEEK) if first_week is None else first_week)
    rng = np.random.default_rng(seed)
    for name in ("train", "val", "test"):
        r = getattr(split, name)
        rows = np.flatnonzero((week >= r.start) & (week < r.stop))
        if name != "test":
            rows = rng.permutation(rows)
        out[name] = WindowSet(X[rows], y[rows], slots[rows])
    return out
