"""Synthetic cellular call load driven by road detector series.

Every vehicle a detector counts in a slot enters the cell at a uniformly
placed instant of that slot (a Poisson process conditioned on the measured
count), stays for range / speed with a small multiplicative speed
perturbation, and places calls as a Poisson process of rate ``lambda`` while
inside. Call durations come from a log-normal mixture. A call still running
when its vehicle leaves the cell is handed over to the next cell; when the
next detector sees fewer vehicles than the current one, handovers entering in
that slot are thinned at random.

Times are minutes since the epoch on the weekday slot axis
(``slot_index * 5``).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import CalendarMismatchError, ConfigError, DataValidationError
from .road_data import SLOT_MINUTES, CellSite, Corridor, RoadSeries, RoadSlot

DWELL_MIN_MINUTES = 0.05
DWELL_MAX_MINUTES = 120.0
ETA_BOUND = 0.9

NEW, HANDOVER = "new", "handover"
_PHASE_NEW, _PHASE_RECONCILE, _PHASE_HANDOVER = 0, 1, 2

DEFAULT_DURATION_MIX = ((0.5, 1.0, 3.0), (0.5, 10.0, 30.0))


@dataclass(frozen=True)
class GenParams:
    """Generator inputs.

    ``duration_mix`` holds ``(weight, mean_min, variance_min2)`` per
    log-normal component; ``speed_noise_std`` is the std of the fractional
    speed perturbation.
    """

    lambda_per_min: float = 0.2
    duration_mix: tuple[tuple[float, float, float], ...] = DEFAULT_DURATION_MIX
    speed_noise_std: float = 0.05
    seed: int = 0

    def __post_init__(self):
        mix = tuple(tuple(float(v) for v in c) for c in self.duration_mix)
        object.__setattr__(self, "duration_mix", mix)
        if not (self.lambda_per_min > 0 and math.isfinite(self.lambda_per_min)):
            raise ConfigError("lambda_per_min must be positive")
        if not mix or any(len(c) != 3 for c in mix):
            raise ConfigError("duration_mix needs (weight, mean, variance) triples")
        weights = [c[0] for c in mix]
        if any(not 0 < w <= 1 for w in weights) or abs(sum(weights) - 1) > 1e-9:
            raise ConfigError("mixture weights must lie in (0, 1] and sum to 1")
        if any(c[1] <= 0 or c[2] <= 0 for c in mix):
            raise ConfigError("mixture means and variances must be positive")
        if not self.speed_noise_std >= 0:
            raise ConfigError("speed_noise_std must be >= 0")

    def to_dict(self) -> dict:
        return {"lambda_per_min": self.lambda_per_min,
                "duration_mix": [list(c) for c in self.duration_mix],
                "speed_noise_std": self.speed_noise_std, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: Mapping) -> "GenParams":
        known = {"lambda_per_min", "duration_mix", "speed_noise_std", "seed"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown generator parameters {sorted(extra)}")
        return cls(**{k: (tuple(tuple(c) for c in v) if k == "duration_mix" else v)
                      for k, v in d.items()})


def stream(seed: int, site: int, phase: int) -> np.random.Generator:
    """Independent RNG for one (seed, site, phase) so that scheduling never matters."""
    return np.random.default_rng([int(seed), int(site), int(phase)])


# ------------------------------------------------------------------ primitives

def lognormal_params(mean: float, variance: float) -> tuple[float, float]:
    """Underlying normal ``(mu, sigma^2)`` of a log-normal with the given moments."""
    sigma2 = math.log1p(variance / (mean * mean))
    return math.log(mean) - 0.5 * sigma2, sigma2


def sample_duration(mix, rng: np.random.Generator, size=None):
    """Call durations (minutes) from a log-normal mixture."""
    mix = tuple(mix)
    weights = np.array([c[0] for c in mix])
    params = np.array([lognormal_params(c[1], c[2]) for c in mix])
    n = 1 if size is None else int(np.prod(size))
    comp = rng.choice(len(mix), size=n, p=weights / weights.sum())
    out = rng.lognormal(params[comp, 0], np.sqrt(params[comp, 1]))
    return float(out[0]) if size is None else out.reshape(size)


def _speed_eta(std: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Zero-mean Gaussian perturbations truncated to (-0.9, 0.9) by redrawing."""
    if std == 0:
        return np.zeros(n)
    eta = rng.normal(0.0, std, n)
    bad = np.abs(eta) >= ETA_BOUND
    while bad.any():
        eta[bad] = rng.normal(0.0, std, int(bad.sum()))
        bad = np.abs(eta) >= ETA_BOUND
    return eta


def _dwell_minutes(range_miles, speed_mph, eta):
    return np.clip(60.0 * np.asarray(range_miles) / (np.asarray(speed_mph) * (1.0 + eta)),
                   DWELL_MIN_MINUTES, DWELL_MAX_MINUTES)


def dwell_time(range_miles: float, speed_mph: float, params: GenParams,
               rng: np.random.Generator) -> float:
    """Minutes a vehicle spends crossing a cell of ``range_miles`` at ``speed_mph``."""
    if not range_miles > 0:
        raise DataValidationError(f"range must be positive, got {range_miles}")
    if not speed_mph > 0:
        raise DataValidationError(f"speed must be positive to compute dwell, got {speed_mph}")
    eta = _speed_eta(params.speed_noise_std, 1, rng)
    return float(_dwell_minutes(range_miles, speed_mph, eta)[0])


def keep_probability(f_up, f_down):
    """Chance that a handover survives when the next detector sees ``f_down``
    vehicles against ``f_up`` upstream: 1 if the flow does not shrink, the
    flow ratio otherwise, 0 when upstream saw nothing."""
    f_up = np.asarray(f_up, dtype=float)
    f_down = np.asarray(f_down, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(f_down < f_up, f_down / f_up, 1.0)
    return np.where(f_up == 0, 0.0, p)


def gen_arrivals(slot: RoadSlot, rng: np.random.Generator) -> np.ndarray:
    """Exactly ``slot.flow`` sorted arrival times (minutes) inside the slot."""
    if slot.flow < 0:
        raise DataValidationError("flow must be non-negative")
    offsets = np.sort(rng.random(int(slot.flow))) * SLOT_MINUTES
    return slot.slot_index * SLOT_MINUTES + offsets


# -------------------------------------------------------------- call records

@dataclass(frozen=True)
class VehicleTransit:
    vehicle_id: int
    cell_position: int
    arrival_time: float
    dwell_min: float

    def __post_init__(self):
        if not self.dwell_min > 0:
            raise DataValidationError("dwell must be positive")

    @property
    def departure_time(self) -> float:
        return self.arrival_time + self.dwell_min


@dataclass(frozen=True)
class Segment:
    cell_position: int
    enter_time: float
    leave_time: float
    kind: str

    @property
    def span(self) -> float:
        return self.leave_time - self.enter_time


@dataclass
class CallRecord:
    call_id: int
    vehicle_id: int
    start_time: float
    total_duration_min: float
    segments: list[Segment] = field(default_factory=list)

    @property
    def end_time(self) -> float:
        return self.start_time + self.total_duration_min

    def to_dict(self) -> dict:
        return {"call_id": self.call_id, "vehicle_id": self.vehicle_id,
                "start_time": self.start_time, "total_duration_min": self.total_duration_min,
                "segments": [[s.cell_position, s.enter_time, s.leave_time, s.kind]
                             for s in self.segments]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "CallRecord":
        return cls(int(d["call_id"]), int(d["vehicle_id"]), float(d["start_time"]),
                   float(d["total_duration_min"]),
                   [Segment(int(p), float(a), float(b), str(k)) for p, a, b, k in d["segments"]])


def gen_calls_for_transit(transit: VehicleTransit, params: GenParams,
                          rng: np.random.Generator, first_call_id: int = 0) -> list[CallRecord]:
    """Calls placed while the vehicle is inside the cell, each with its first segment."""
    n = int(rng.poisson(params.lambda_per_min * transit.dwell_min))
    starts = np.sort(transit.arrival_time + rng.random(n) * transit.dwell_min)
    durations = sample_duration(params.duration_mix, rng, size=n)
    calls = []
    for i, (s, d) in enumerate(zip(starts, durations)):
        leave = min(s + d, transit.departure_time)
        calls.append(CallRecord(first_call_id + i, transit.vehicle_id, float(s), float(d),
                                [Segment(transit.cell_position, float(s), float(leave), NEW)]))
    return calls


def _speed_at(series: RoadSeries, t: float) -> float:
    slot = math.floor(t / SLOT_MINUTES)
    i = int(np.searchsorted(series.slot_index, slot))
    if i >= len(series) or series.slot_index[i] != slot:
        raise DataValidationError(f"{series.detector_id}: no speed for slot {slot}")
    return float(series.speed[i])


def _flow_at(series: RoadSeries, t: float) -> int:
    slot = math.floor(t / SLOT_MINUTES)
    i = int(np.searchsorted(series.slot_index, slot))
    if i >= len(series) or series.slot_index[i] != slot:
        raise DataValidationError(f"{series.detector_id}: no flow for slot {slot}")
    return int(series.flow[i])


def _road_by_position(corridor: Corridor, road) -> list[RoadSeries]:
    if isinstance(road, Mapping):
        try:
            return [road[s.detector_id] for s in corridor]
        except KeyError as exc:
            raise DataValidationError(f"no road series for detector {exc.args[0]}") from None
    road = list(road)
    if len(road) != len(corridor):
        raise DataValidationError("need one road series per corridor site")
    return road


def propagate_handovers(call: CallRecord, corridor: Corridor, road, params: GenParams,
                        rng: np.random.Generator) -> CallRecord:
    """Extend a call cell by cell until it ends or the vehicle leaves the corridor."""
    if not call.segments or call.segments[0].kind != NEW:
        raise DataValidationError(f"call {call.call_id} has no initial segment")
    road = _road_by_position(corridor, road)
    segments = list(call.segments)
    end = call.end_time
    while end > segments[-1].leave_time and segments[-1].cell_position + 1 < len(corridor):
        site = corridor[segments[-1].cell_position + 1]
        enter = segments[-1].leave_time
        dwell = dwell_time(site.range_miles, _speed_at(road[site.position], enter), params, rng)
        segments.append(Segment(site.position, enter, min(end, enter + dwell), HANDOVER))
    return CallRecord(call.call_id, call.vehicle_id, call.start_time, call.total_duration_min,
                      segments)


def reconcile_flows(upstream_site: CellSite, downstream_site: CellSite,
                    handover_calls: Sequence[CallRecord], road,
                    rng: np.random.Generator) -> list[CallRecord]:
    """Thin handovers into ``downstream_site`` where its detector sees fewer vehicles.

    A dropped call loses its handover segment into the downstream cell and
    everything after it; calls without such a segment pass through unchanged.
    """
    if downstream_site.position != upstream_site.position + 1:
        raise DataValidationError("reconcile_flows needs adjacent sites")
    if isinstance(road, Mapping):
        up, down = road[upstream_site.detector_id], road[downstream_site.detector_id]
    else:
        up, down = road[upstream_site.position], road[downstream_site.position]
    out = []
    for call in handover_calls:
        k = next((i for i, s in enumerate(call.segments)
                  if s.kind == HANDOVER and s.cell_position == downstream_site.position), None)
        if k is None:
            out.append(call)
            continue
        enter = call.segments[k].enter_time
        p = float(keep_probability(_flow_at(up, enter), _flow_at(down, enter)))
        if rng.random() < p:
            out.append(call)
        else:
            out.append(CallRecord(call.call_id, call.vehicle_id, call.start_time,
                                  call.total_duration_min, list(call.segments[:k])))
    return out


# ------------------------------------------------------------------ generation

@dataclass(frozen=True, eq=False)
class CellSeries:
    """Per-slot new, handover and total call counts at one base station."""

    bs_id: str
    slot_index: np.ndarray
    new_calls: np.ndarray
    handover_calls: np.ndarray
    total_calls: np.ndarray | None = None

    def __post_init__(self):
        idx = np.asarray(self.slot_index, dtype=np.int64)
        new = np.asarray(self.new_calls, dtype=np.int64)
        ho = np.asarray(self.handover_calls, dtype=np.int64)
        total = new + ho if self.total_calls is None else np.asarray(self.total_calls, np.int64)
        if not (idx.shape == new.shape == ho.shape == total.shape):
            raise DataValidationError(f"{self.bs_id}: cell series arrays differ in length")
        if np.any(new < 0) or np.any(ho < 0):
            raise DataValidationError(f"{self.bs_id}: negative call counts")
        if not np.array_equal(total, new + ho):
            raise DataValidationError(f"{self.bs_id}: total_calls != new_calls + handover_calls")
        for name, arr in (("slot_index", idx), ("new_calls", new),
                          ("handover_calls", ho), ("total_calls", total)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return int(self.slot_index.size)

    def equals(self, other: "CellSeries") -> bool:
        return self.bs_id == other.bs_id and all(
            np.array_equal(getattr(self, a), getattr(other, a))
            for a in ("slot_index", "new_calls", "handover_calls", "total_calls"))


CELL_CSV_HEADER = ("slot_index", "new_calls", "handover_calls", "total_calls")


def write_cell_csv(series: CellSeries, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CELL_CSV_HEADER)
        w.writerows(zip(series.slot_index.tolist(), series.new_calls.tolist(),
                        series.handover_calls.tolist(), series.total_calls.tolist()))
    return path


def read_cell_csv(path, bs_id: str) -> CellSeries:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CELL_CSV_HEADER:
            raise DataValidationError(f"{path}: expected header {','.join(CELL_CSV_HEADER)}")
        rows = np.array([[int(v) for v in r] for r in reader if r], dtype=np.int64)
    rows = rows.reshape(-1, 4)
    return CellSeries(bs_id, rows[:, 0], rows[:, 1], rows[:, 2], rows[:, 3])


@dataclass
class CallLog:
    """Column store of every call and segment of one generation run."""

    call_id: np.ndarray
    vehicle_id: np.ndarray
    start_time: np.ndarray
    duration: np.ndarray
    seg_call: np.ndarray
    seg_position: np.ndarray
    seg_enter: np.ndarray
    seg_leave: np.ndarray
    seg_kind: np.ndarray  # 0 new, 1 handover

    def __len__(self) -> int:
        return int(self.call_id.size)

    def records(self) -> Iterator[CallRecord]:
        order = np.lexsort((self.seg_enter, self.seg_call))
        seg_call = self.seg_call[order]
        bounds = np.searchsorted(seg_call, self.call_id, side="left")
        ends = np.searchsorted(seg_call, self.call_id, side="right")
        kinds = (NEW, HANDOVER)
        for i in range(len(self)):
            sl = order[bounds[i]:ends[i]]
            yield CallRecord(int(self.call_id[i]), int(self.vehicle_id[i]),
                             float(self.start_time[i]), float(self.duration[i]),
                             [Segment(int(self.seg_position[j]), float(self.seg_enter[j]),
                                      float(self.seg_leave[j]), kinds[int(self.seg_kind[j])])
                              for j in sl])

    def write_jsonl(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as fh:
            for rec in self.records():
                fh.write(json.dumps(rec.to_dict()) + "\n")
        return path


@dataclass
class GenerationResult:
    cells: list[CellSeries]
    log: CallLog | None = None
    vehicles: list[int] = field(default_factory=list)


def _slot_positions(times: np.ndarray, slot_index: np.ndarray) -> np.ndarray:
    """Position of each time's slot in ``slot_index``; -1 where the slot is absent."""
    slots = np.floor(times / SLOT_MINUTES).astype(np.int64)
    pos = np.searchsorted(slot_index, slots)
    pos_c = np.minimum(pos, slot_index.size - 1)
    ok = (pos < slot_index.size) & (slot_index[pos_c] == slots)
    return np.where(ok, pos_c, -1)


def _check_speed(series: RoadSeries, pos: np.ndarray):
    bad = series.speed[pos] <= 0
    if bad.any():
        slot = int(series.slot_index[pos[np.argmax(bad)]])
        raise DataValidationError(
            f"{series.detector_id}: non-positive speed at slot {slot} where vehicles need a dwell time")


def generate(corridor: Corridor, road, params: GenParams, keep_log: bool = False
             ) -> GenerationResult:
    """Per-site new/handover/total call counts for the whole corridor.

    ``road`` is one validated series per site (sequence in corridor order or
    mapping by detector id); all must share the same slots. New calls count
    in the slot where they start, handovers in the slot where they enter the
    receiving cell. Calls that would start or enter outside the covered slots
    are cut at that point.
    """
    road = _road_by_position(corridor, road)
    idx = road[0].slot_index
    for s in road[1:]:
        if not np.array_equal(s.slot_index, idx):
            raise CalendarMismatchError(
                f"{s.detector_id} and {road[0].detector_id} cover different slots")
    n_slots = idx.size
    seed = params.seed

    new_counts, ho_counts, vehicles = [], [], []
    logs: dict[str, list] = {k: [] for k in (
        "call_id", "vehicle_id", "start", "duration",
        "seg_call", "seg_pos", "seg_enter", "seg_leave", "seg_kind")}
    next_call, next_vehicle = 0, 0

    # Calls active in the current cell: id, end time, departure from the current cell.
    act_id = np.empty(0, np.int64)
    act_end = np.empty(0)
    act_dep = np.empty(0)

    for site in corridor:
        k = site.position
        series = road[k]

        if k > 0:
            # Handovers from site k-1 into site k.
            pending = act_end > act_dep
            h_id, h_end, h_enter = act_id[pending], act_end[pending], act_dep[pending]
            epos = _slot_positions(h_enter, idx)
            inside = epos >= 0
            h_id, h_end, h_enter, epos = h_id[inside], h_end[inside], h_enter[inside], epos[inside]
            p = keep_probability(road[k - 1].flow[epos], series.flow[epos])
            survive = stream(seed, k, _PHASE_RECONCILE).random(h_id.size) < p
            h_id, h_end, h_enter, epos = h_id[survive], h_end[survive], h_enter[survive], epos[survive]
            _check_speed(series, epos)
            eta = _speed_eta(params.speed_noise_std, h_id.size, stream(seed, k, _PHASE_HANDOVER))
            h_dep = h_enter + _dwell_minutes(site.range_miles, series.speed[epos], eta)
            ho_counts.append(np.bincount(epos, minlength=n_slots))
            if keep_log:
                logs["seg_call"].append(h_id)
                logs["seg_pos"].append(np.full(h_id.size, k))
                logs["seg_enter"].append(h_enter)
                logs["seg_leave"].append(np.minimum(h_end, h_dep))
                logs["seg_kind"].append(np.ones(h_id.size, np.int8))
        else:
            h_id, h_end, h_dep = act_id, act_end, act_dep
            ho_counts.append(np.zeros(n_slots, np.int64))

        # Vehicles and new calls at site k.
        rng = stream(seed, k, _PHASE_NEW)
        flow = series.flow
        n_veh = int(flow.sum())
        vslot = np.repeat(np.arange(n_slots), flow)
        offsets = rng.random(n_veh) * SLOT_MINUTES
        order = np.lexsort((offsets, vslot))
        arrival = idx[vslot] * SLOT_MINUTES + offsets[order]
        if n_veh:
            _check_speed(series, vslot)
        eta = _speed_eta(params.speed_noise_std, n_veh, rng)
        dwell = _dwell_minutes(site.range_miles, series.speed[vslot], eta)
        depart = arrival + dwell

        ncalls = rng.poisson(params.lambda_per_min * dwell)
        cveh = np.repeat(np.arange(n_veh), ncalls)
        start = arrival[cveh] + rng.random(cveh.size) * dwell[cveh]
        order = np.lexsort((start, cveh))
        start = start[order]
        duration = sample_duration(params.duration_mix, rng, size=cveh.size)
        spos = _slot_positions(start, idx)
        inside = spos >= 0
        cveh, start, duration, spos = cveh[inside], start[inside], duration[inside], spos[inside]
        end = start + duration
        c_dep = depart[cveh]
        c_id = next_call + np.arange(cveh.size, dtype=np.int64)
        next_call += cveh.size
        new_counts.append(np.bincount(spos, minlength=n_slots))
        vehicles.append(n_veh)
        if keep_log:
            logs["call_id"].append(c_id)
            logs["vehicle_id"].append(next_vehicle + cveh)
            logs["start"].append(start)
            logs["duration"].append(duration)
            logs["seg_call"].append(c_id)
            logs["seg_pos"].append(np.full(c_id.size, k))
            logs["seg_enter"].append(start)
            logs["seg_leave"].append(np.minimum(end, c_dep))
            logs["seg_kind"].append(np.zeros(c_id.size, np.int8))
        next_vehicle += n_veh

        act_id = np.concatenate([h_id, c_id])
        act_end = np.concatenate([h_end, end])
        act_dep = np.concatenate([h_dep, c_dep])

    cells = [CellSeries(site.bs_id, idx, new_counts[site.position], ho_counts[site.position])
             for site in corridor]
    log = None
    if keep_log:
        cat = {k: (np.concatenate(v) if v else np.empty(0)) for k, v in logs.items()}
        log = CallLog(cat["call_id"].astype(np.int64), cat["vehicle_id"].astype(np.int64),
                      cat["start"].astype(float), cat["duration"].astype(float),
                      cat["seg_call"].astype(np.int64), cat["seg_pos"].astype(np.int64),
                      cat["seg_enter"].astype(float), cat["seg_leave"].astype(float),
                      cat["seg_kind"].astype(np.int8))
    return GenerationResult(cells, log, vehicles)
