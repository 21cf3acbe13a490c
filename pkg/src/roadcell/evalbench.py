"""Error metrics, multi-seed summaries, improvement percentages and the
feature-set comparison experiments (clean and with noisy flow)."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .cellgen import GenParams, generate
from .errors import ConfigError, DataValidationError, RoadcellError
from .forecast import (
    DEFAULT_HIDDEN,
    DEFAULT_HISTORY,
    FeatureSet,
    LstmModel,
    TrainConfig,
    apply_scaler,
    assemble_features,
    build_windows,
    fit_scaler,
    predict,
    split_chronological,
    train,
)
from .road_data import (
    SLOTS_PER_DAY,
    WEEKDAYS_PER_WEEK,
    Corridor,
    NoiseConfig,
    RoadSeries,
    add_flow_noise,
    lag_align,
)

log = logging.getLogger(__name__)

METRICS = ("mae", "mse", "mape", "rmse")
METRIC_LABELS = {"mae": "MAE", "mse": "MSE", "mape": "MAPE", "rmse": "RMSE"}
DEFAULT_MAPE_FLOOR = 1e-6
DEFAULT_SEEDS = (1, 2, 3, 4, 5)

# (baseline, enriched) pairs reported for the clean and the noisy-flow experiment.
PAIRINGS = (("C", "FSC"), ("NHC", "FSNHC"), ("C", "NHC"), ("FSC", "FSNHC"), ("NHC", "FSC"))
NOISE_PAIRINGS = (("C", "FSC"), ("NHC", "FSNHC"), ("NHC", "FSC"))


# --------------------------------------------------------------------- metrics

@dataclass(frozen=True)
class MetricValues:
    mae: float
    mse: float
    mape_percent: float | None
    rmse: float
    mape_excluded: int = 0

    def get(self, metric: str) -> float | None:
        return self.mape_percent if metric == "mape" else getattr(self, metric)

    def to_dict(self) -> dict:
        return {"mae": self.mae, "mse": self.mse, "mape": self.mape_percent,
                "rmse": self.rmse, "mape_excluded": self.mape_excluded}

    @classmethod
    def from_dict(cls, d) -> "MetricValues":
        return cls(d["mae"], d["mse"], d["mape"], d["rmse"], d.get("mape_excluded", 0))


def compute_metrics(predictions, targets, mape_floor: float = DEFAULT_MAPE_FLOOR) -> MetricValues:
    """MAE, MSE, RMSE and MAPE (percent).

    MAPE skips targets with ``|y| <= mape_floor`` and is ``None`` when every
    target is skipped.
    """
    pred = np.asarray(predictions, dtype=float).ravel()
    y = np.asarray(targets, dtype=float).ravel()
    if pred.size == 0 or pred.size != y.size:
        raise DataValidationError("metrics need equal-length, non-empty inputs")
    err = pred - y
    mae = float(np.mean(np.abs(err)))
    mse = float(np.mean(err * err))
    use = np.abs(y) > mape_floor
    mape = float(100.0 * np.mean(np.abs(err[use]) / np.abs(y[use]))) if use.any() else None
    return MetricValues(mae, mse, mape, math.sqrt(mse), int(y.size - use.sum()))


def improvement(err_base: float, err_enriched: float) -> float:
    """Percentage error reduction of the enriched model relative to the baseline."""
    if err_base == 0:
        raise ValueError("baseline error is zero; improvement undefined")
    return 100.0 * (err_base - err_enriched) / err_base


@dataclass(frozen=True)
class RunSummary:
    """Per-metric (min, median, max) over runs; the median of an even count is
    the lower middle value so it is always an observed run."""

    stats: dict[str, tuple[float, float, float] | None]
    run_count: int

    def get(self, metric: str, stat: str = "median") -> float | None:
        s = self.stats.get(metric)
        if s is None:
            return None
        return s[("min", "median", "max").index(stat)]

    def to_dict(self) -> dict:
        return {"run_count": self.run_count,
                **{m: (None if s is None else {"min": s[0], "median": s[1], "max": s[2]})
                   for m, s in self.stats.items()}}

    @classmethod
    def from_dict(cls, d) -> "RunSummary":
        return cls({m: (None if d[m] is None else (d[m]["min"], d[m]["median"], d[m]["max"]))
                    for m in METRICS}, d["run_count"])


def _order_stats(values: Sequence[float]) -> tuple[float, float, float]:
    v = sorted(values)
    return v[0], v[(len(v) - 1) // 2], v[-1]


def summarize_runs(runs: Sequence[MetricValues]) -> RunSummary:
    if not runs:
        raise ValueError("need at least one run")
    stats = {}
    for m in METRICS:
        vals = [r.get(m) for r in runs if r.get(m) is not None]
        stats[m] = _order_stats(vals) if vals else None
    return RunSummary(stats, len(runs))


def improvement_table(base: RunSummary, enriched: RunSummary) -> dict[str, dict | None]:
    """Improvement of each order statistic, per metric (``None`` where undefined)."""
    out = {}
    for m in METRICS:
        b, e = base.stats.get(m), enriched.stats.get(m)
        if b is None or e is None or any(x == 0 for x in b):
            out[m] = None
        else:
            out[m] = {s: improvement(bv, ev) for s, bv, ev in zip(("min", "median", "max"), b, e)}
    return out


# -------------------------------------------------------------- experiments

@dataclass
class Scenario:
    """Everything an experiment needs; ``road`` holds the validated raw
    detector series (one per site, shared calendar)."""

    corridor: Corridor
    road: list[RoadSeries]
    gen: GenParams = field(default_factory=GenParams)
    train: TrainConfig = field(default_factory=TrainConfig)
    feature_sets: tuple[FeatureSet, ...] = tuple(FeatureSet)
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    ratios: tuple[int, int, int] = (12, 6, 6)
    history: int = DEFAULT_HISTORY
    hidden_size: int = DEFAULT_HIDDEN
    mape_floor: float = DEFAULT_MAPE_FLOOR
    jobs: int = 1

    def __post_init__(self):
        self.feature_sets = tuple(FeatureSet.parse(self.feature_sets))
        self.seeds = tuple(int(s) for s in self.seeds)
        self.ratios = tuple(int(r) for r in self.ratios)
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if len(self.road) != len(self.corridor):
            raise ConfigError("need one road series per corridor site")

    @property
    def n_weeks(self) -> int:
        weeks = self.road[0].slot_index // (SLOTS_PER_DAY * WEEKDAYS_PER_WEEK)
        return int(weeks.max() - weeks.min() + 1)

    @property
    def first_week(self) -> int:
        return int(self.road[0].slot_index.min() // (SLOTS_PER_DAY * WEEKDAYS_PER_WEEK))

    def config_dict(self) -> dict:
        return {
            "corridor": self.corridor.to_rows(),
            "generator": {k: v for k, v in self.gen.to_dict().items() if k != "seed"},
            "train": {k: v for k, v in self.train.to_dict().items() if k != "seed"},
            "feature_sets": [f.name for f in self.feature_sets],
            "seeds": list(self.seeds),
            "ratios": list(self.ratios),
            "history": self.history,
            "hidden_size": self.hidden_size,
            "mape_floor": self.mape_floor,
            "weeks": self.n_weeks,
            "slots": int(len(self.road[0])),
        }


def applicable(feature_set: FeatureSet, position: int) -> bool:
    """The first site receives no handovers, so handover features say nothing there."""
    return not (feature_set.uses_handover and position == 0)


@dataclass
class CellResult:
    bs_id: str
    position: int
    feature_set: str
    seed: int
    metrics: MetricValues
    metrics_original: MetricValues
    epochs: int
    best_epoch: int


def _noise_seed(seed: int, position: int) -> int:
    return int(np.random.SeedSequence([seed, position, 7]).generate_state(1)[0])


def _generate_cells(scenario: Scenario, seed: int):
    # Vehicles a detector counts during slot t occupy its cell during t + 1.
    in_cell = [lag_align(r) for r in scenario.road]
    return generate(scenario.corridor, in_cell, replace(scenario.gen, seed=seed)).cells


def _fit_one(job) -> CellResult:
    (bs_id, position, fs, seed, table, split, first_week, history, hidden, tcfg,
     mape_floor) = job
    sets = build_windows(table, fs, history, split, seed=seed, first_week=first_week)
    if len(sets["train"]) == 0 or len(sets["test"]) == 0:
        raise DataValidationError(f"BS {bs_id}: empty train or test split")
    scaler = fit_scaler(sets["train"])
    tr, va, te = (apply_scaler(scaler, sets[k]) for k in ("train", "val", "test"))
    model = LstmModel.initialize(len(fs.columns), hidden, seed=seed)
    context = f"BS {bs_id}, feature set {fs.name}, seed {seed}"
    model, hist = train(model, tr, va, replace(tcfg, seed=seed), context=context)
    preds = predict(model, scaler, te)
    return CellResult(bs_id, position, fs.name, seed,
                      compute_metrics(preds.pred_norm, preds.target_norm, mape_floor),
                      compute_metrics(preds.pred, preds.target, mape_floor),
                      hist.epochs_run, hist.best_epoch)


def _run_jobs(jobs: list, n_workers: int) -> list[CellResult]:
    if n_workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            return list(pool.map(_fit_one, jobs))
    out = []
    for job in jobs:
        log.info("training BS %s, %s, seed %d", job[0], job[2].name, job[3])
        out.append(_fit_one(job))
    return out


def _grid(scenario: Scenario, feature_sets: Iterable[FeatureSet],
          noise_sigma: float | None) -> list[CellResult]:
    split = split_chronological(scenario.n_weeks, scenario.ratios)
    jobs = []
    for seed in scenario.seeds:
        try:
            cells = _generate_cells(scenario, seed)
        except RoadcellError as exc:
            raise type(exc)(f"seed {seed}: {exc}") from exc
        for site, cs in zip(scenario.corridor, cells):
            road = scenario.road[site.position]
            clean = assemble_features(cs, road)
            noisy = None
            if noise_sigma is not None:
                noisy_road = add_flow_noise(
                    road, NoiseConfig(noise_sigma, _noise_seed(seed, site.position)))
                noisy = assemble_features(cs, noisy_road)
            for fs in feature_sets:
                if not applicable(fs, site.position):
                    continue
                table = noisy if (noisy is not None and fs.uses_road) else clean
                jobs.append((site.bs_id, site.position, fs, seed, table, split,
                             scenario.first_week, scenario.history, scenario.hidden_size,
                             scenario.train, scenario.mape_floor))
    return _run_jobs(jobs, scenario.jobs)


@dataclass
class SiteResult:
    bs_id: str
    position: int
    runs: dict[str, list[MetricValues]]
    runs_original: dict[str, list[MetricValues]]
    summaries: dict[str, RunSummary | None]
    summaries_original: dict[str, RunSummary | None]

    def to_dict(self) -> dict:
        fs = {}
        for name in self.summaries:
            s = self.summaries[name]
            if s is None:
                fs[name] = {"status": "not_applicable"}
                continue
            fs[name] = {"status": "ok",
                        "summary": s.to_dict(),
                        "summary_original_units": self.summaries_original[name].to_dict(),
                        "runs": [r.to_dict() for r in self.runs[name]],
                        "runs_original_units": [r.to_dict() for r in self.runs_original[name]]}
        return {"bs_id": self.bs_id, "position": self.position, "feature_sets": fs}

    @classmethod
    def from_dict(cls, d) -> "SiteResult":
        runs, runs_o, summ, summ_o = {}, {}, {}, {}
        for name, v in d["feature_sets"].items():
            if v["status"] != "ok":
                summ[name] = summ_o[name] = None
                continue
            runs[name] = [MetricValues.from_dict(r) for r in v["runs"]]
            runs_o[name] = [MetricValues.from_dict(r) for r in v["runs_original_units"]]
            summ[name] = RunSummary.from_dict(v["summary"])
            summ_o[name] = RunSummary.from_dict(v["summary_original_units"])
        return cls(d["bs_id"], d["position"], runs, runs_o, summ, summ_o)


@dataclass
class ErrorReport:
    """Summaries per BS and feature set plus baseline/enriched improvements."""

    title: str
    sites: list[SiteResult]
    pairings: tuple[tuple[str, str], ...]
    config: dict
    noise_sigma: float | None = None
    notes: list[str] = field(default_factory=list)

    def site(self, bs_id: str) -> SiteResult:
        for s in self.sites:
            if s.bs_id == bs_id:
                return s
        raise KeyError(bs_id)

    def improvements(self) -> list[dict]:
        rows = []
        for s in self.sites:
            for base, enr in self.pairings:
                b, e = s.summaries.get(base), s.summaries.get(enr)
                if b is None or e is None:
                    continue
                for m, v in improvement_table(b, e).items():
                    rows.append({"bs_id": s.bs_id, "baseline": base, "enriched": enr,
                                 "metric": m, **(v or {"min": None, "median": None,
                                                       "max": None})})
        return rows

    def improvement(self, bs_id: str, baseline: str, enriched: str, metric: str,
                    stat: str = "median") -> float | None:
        for r in self.improvements():
            if (r["bs_id"], r["baseline"], r["enriched"], r["metric"]) == (
                    bs_id, baseline, enriched, metric):
                return r[stat]
        return None

    def to_dict(self) -> dict:
        return {"title": self.title, "noise_sigma_fraction": self.noise_sigma,
                "notes": list(self.notes), "config": self.config,
                "pairings": [list(p) for p in self.pairings],
                "sites": [s.to_dict() for s in self.sites],
                "improvements": self.improvements()}

    @classmethod
    def from_dict(cls, d) -> "ErrorReport":
        return cls(d["title"], [SiteResult.from_dict(s) for s in d["sites"]],
                   tuple(tuple(p) for p in d["pairings"]), d["config"],
                   d.get("noise_sigma_fraction"), list(d.get("notes", [])))

    def render_text(self) -> str:
        return render_report_text(self)

    def plot_rows(self) -> dict[str, list[dict]]:
        """Improvement bars per pairing, one row per BS and metric."""
        out: dict[str, list[dict]] = {}
        for r in self.improvements():
            out.setdefault(f"{r['baseline']}_vs_{r['enriched']}", []).append(
                {k: r[k] for k in ("bs_id", "metric", "min", "median", "max")})
        return out


def _assemble(title: str, scenario: Scenario, results: list[CellResult],
              feature_sets: Sequence[FeatureSet], pairings, noise_sigma=None) -> ErrorReport:
    by_key: dict[tuple[str, str], list[CellResult]] = {}
    for r in results:
        by_key.setdefault((r.bs_id, r.feature_set), []).append(r)
    sites = []
    for site in scenario.corridor:
        runs, runs_o, summ, summ_o = {}, {}, {}, {}
        for fs in feature_sets:
            got = sorted(by_key.get((site.bs_id, fs.name), []), key=lambda r: r.seed)
            if not applicable(fs, site.position) or not got:
                summ[fs.name] = summ_o[fs.name] = None
                continue
            runs[fs.name] = [r.metrics for r in got]
            runs_o[fs.name] = [r.metrics_original for r in got]
            summ[fs.name] = summarize_runs(runs[fs.name])
            summ_o[fs.name] = summarize_runs(runs_o[fs.name])
        sites.append(SiteResult(site.bs_id, site.position, runs, runs_o, summ, summ_o))
    present = {fs.name for fs in feature_sets}
    pairs = tuple(p for p in pairings if p[0] in present and p[1] in present)
    notes = ["each seed drives both the cellular data generation and the model "
             "initialisation / shuffling of that run",
             "metrics are computed on min-max normalised targets; MAPE excludes "
             f"targets with |y| <= {scenario.mape_floor}"]
    if noise_sigma is not None:
        notes.append(f"flow fed to the model carries Gaussian noise with std "
                     f"{noise_sigma} x flow; cellular load is generated from the true flow")
    return ErrorReport(title, sites, pairs, scenario.config_dict(), noise_sigma, notes)


def run_experiment(scenario: Scenario) -> ErrorReport:
    """Train and test one model per (BS, feature set, seed) on identically generated data."""
    results = _grid(scenario, scenario.feature_sets, None)
    return _assemble("feature-set comparison", scenario, results, scenario.feature_sets,
                     PAIRINGS)


def run_noise_experiment(scenario: Scenario, sigma_fraction: float,
                         baseline: ErrorReport | None = None) -> ErrorReport:
    """Road-enriched sets fed a noisy flow, compared with the clean C / NHC baselines.

    Passing the clean ``baseline`` report of the same scenario reuses its C
    and NHC results (they are identical by construction) instead of retraining.
    """
    NoiseConfig(sigma_fraction)  # validates
    wanted = [fs for fs in scenario.feature_sets]
    noisy_sets = [fs for fs in wanted if fs.uses_road]
    clean_sets = [fs for fs in wanted if not fs.uses_road]
    results = _grid(scenario, noisy_sets, sigma_fraction)
    if baseline is not None:
        for s in baseline.sites:
            for fs in clean_sets:
                for r, ro in zip(s.runs.get(fs.name, []), s.runs_original.get(fs.name, [])):
                    results.append(CellResult(s.bs_id, s.position, fs.name, 0, r, ro, 0, 0))
    else:
        results += _grid(scenario, clean_sets, None)
    return _assemble("feature-set comparison with noisy flow", scenario, results, wanted,
                     NOISE_PAIRINGS, noise_sigma=sigma_fraction)


# ------------------------------------------------------------------ rendering

def _fmt(v: float | None, metric: str) -> str:
    if v is None:
        return "NA"
    return f"{v:.1f}" if metric == "mape" else f"{v:.3f}"


def render_report_text(report: ErrorReport) -> str:
    lines = [f"# {report.title}"]
    if report.noise_sigma is not None:
        lines.append(f"# flow noise sigma_fraction = {report.noise_sigma}")
    names = []
    for s in report.sites:
        for n in s.summaries:
            if n not in names:
                names.append(n)
    bs_w = max([2] + [len(s.bs_id) for s in report.sites])
    head = " | ".join(f"{METRIC_LABELS[m]:^20}" for m in METRICS)
    sub = " | ".join(f"{'min':>6} {'mdn':>6} {'max':>6}" for _ in METRICS)
    for name in names:
        lines += ["", f"## {name}", f"{'BS':<{bs_w}} | {head}", f"{'':<{bs_w}} | {sub}"]
        for s in report.sites:
            summ = s.summaries.get(name)
            if summ is None:
                cells = " | ".join(f"{'-':>6} {'-':>6} {'-':>6}" for _ in METRICS)
            else:
                cells = " | ".join(
                    " ".join(f"{_fmt(summ.get(m, st), m):>6}" for st in ("min", "median", "max"))
                    for m in METRICS)
            lines.append(f"{s.bs_id:<{bs_w}} | {cells}")
    imps = report.improvements()
    for base, enr in report.pairings:
        rows = [r for r in imps if (r["baseline"], r["enriched"]) == (base, enr)]
        if not rows:
            continue
        lines += ["", f"## improvement % {base} -> {enr}", f"{'BS':<{bs_w}} | {head}",
                  f"{'':<{bs_w}} | {sub}"]
        for s in report.sites:
            row = {r["metric"]: r for r in rows if r["bs_id"] == s.bs_id}
            if not row:
                continue
            cells = " | ".join(
                " ".join(f"{('NA' if row[m][st] is None else f'{row[m][st]:.1f}'):>6}"
                         for st in ("min", "median", "max")) for m in METRICS)
            lines.append(f"{s.bs_id:<{bs_w}} | {cells}")
    for n in report.notes:
        lines.append(f"# note: {n}")
    return "\n".join(lines) + "\n"


def write_plot_csvs(report: ErrorReport, out_dir, prefix: str = "plot") -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, rows in report.plot_rows().items():
        p = out_dir / f"{prefix}_{name}.csv"
        with p.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["bs_id", "metric", "min", "median", "max"],
                               lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
        paths.append(p)
    return paths


def report_json(reports: Mapping[str, ErrorReport | None], metadata: Mapping | None = None) -> str:
    doc = {k: (None if v is None else v.to_dict()) for k, v in reports.items()}
    if metadata is not None:
        doc["metadata"] = dict(metadata)
    return json.dumps(doc, indent=1, sort_keys=False) + "\n"
