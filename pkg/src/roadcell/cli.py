"""``roadcell`` command line: synthesise, validate, generate, run and report."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .cellgen import write_cell_csv
from .cellgen import generate as generate_cells
from .config import ExperimentConfig, build_scenario, load_config, load_inputs, resolve_path
from .errors import ConfigError, DataValidationError, RoadcellError, TrainingDivergedError
from .evalbench import (
    ErrorReport,
    render_report_text,
    report_json,
    run_experiment,
    run_noise_experiment,
    write_plot_csvs,
)
from .road_data import (
    DEFAULT_MAX_GAP,
    TABLE_II,
    SyntheticProfile,
    build_corridor,
    lag_align,
    load_corridor,
    load_road_dir,
    synth_corridor,
    write_corridor,
    write_road_csv,
)

log = logging.getLogger("roadcell")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRAINING = 0, 1, 2, 3

# Settings that must agree before two run directories can share one table.
MERGE_KEYS = ("generator", "train", "feature_sets", "seeds", "ratios", "history",
              "hidden_size", "mape_floor", "weeks", "slots")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _write_json(path: Path, doc) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1) + "\n")
    return path


def _int_list(text: str) -> list[int]:
    try:
        out = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not out:
        raise argparse.ArgumentTypeError("list must not be empty")
    return out


def _name_list(text: str) -> list[str]:
    out = [t.strip() for t in text.split(",") if t.strip()]
    if not out:
        raise argparse.ArgumentTypeError("list must not be empty")
    return out


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _load_profile(source: str) -> SyntheticProfile:
    if source in ("diurnal", "flat"):
        return SyntheticProfile.from_dict({"kind": source} if source == "diurnal"
                                          else {"kind": "flat", "flow": 100.0})
    p = Path(source)
    if not p.exists():
        raise ConfigError(f"profile must be 'diurnal', 'flat' or a JSON file, got {source!r}")
    try:
        return SyntheticProfile.from_dict(json.loads(p.read_text()))
    except (json.JSONDecodeError, ValueError) as exc:
        raise ConfigError(f"{p}: bad profile: {exc}") from None


# ------------------------------------------------------------------ commands

def cmd_synth_road(args) -> int:
    if args.corridor is not None:
        corridor = load_corridor(resolve_path(args.corridor))
    else:
        corridor = build_corridor(
            {"detector_id": f"SYN{k}", "range_miles": TABLE_II[k % len(TABLE_II)][1]}
            for k in range(args.sites))
    profile = _load_profile(args.profile)
    out = Path(args.out)
    series = synth_corridor(profile, corridor.detector_ids, args.weeks, args.seed,
                            flow_scales=args.flow_scales)
    for s in series:
        write_road_csv(s, out / f"{s.detector_id}.csv")
        print(f"{s.detector_id}: {len(s)} slots, mean flow {s.flow.mean():.2f}/slot, "
              f"max flow {int(s.flow.max())}, mean speed {s.speed.mean():.2f} mph")
    if args.corridor is None:
        write_corridor(corridor, out / "corridor.csv")
    _write_json(out / "manifest.json", {
        "command": "synth-road", "version": __version__, "weeks": args.weeks,
        "seed": args.seed, "profile": args.profile, "flow_scales": args.flow_scales,
        "through_fraction": 0.9, "corridor": corridor.to_rows()})
    return EXIT_OK


def cmd_ingest_validate(args) -> int:
    corridor = load_corridor(resolve_path(args.corridor))
    road, reports = load_road_dir(args.road_dir, corridor, max_gap=args.max_gap)
    for rep in reports:
        print(rep.to_json())
    print(f"{len(corridor)} detectors, {len(road[0])} common slots")
    if args.out is not None:
        out = Path(args.out)
        for s in road:
            write_road_csv(s, out / f"{s.detector_id}.csv")
        _write_json(out / "validation.json", [r.to_dict() for r in reports])
    return EXIT_OK


def _config_from_args(args) -> ExperimentConfig:
    overrides = {"seeds": getattr(args, "seeds", None),
                 "feature_sets": getattr(args, "feature_sets", None),
                 "noise": getattr(args, "noise", None),
                 "jobs": getattr(args, "jobs", None)}
    cfg = load_config(args.config, **overrides)
    if getattr(args, "out", None) is not None:
        cfg.out = Path(args.out)
    if cfg.out is None:
        raise ConfigError("no output directory: pass --out or set 'out' in the config")
    return cfg


def cmd_generate(args) -> int:
    cfg = _config_from_args(args)
    seed = cfg.seeds[0] if args.seed is None else args.seed
    corridor, road, reports = load_inputs(cfg)
    params = replace(cfg.gen_params(), seed=seed)
    res = generate_cells(corridor, [lag_align(r) for r in road], params, keep_log=args.call_log)
    out = cfg.out
    files = []
    for site, cs in zip(corridor, res.cells):
        files.append(write_cell_csv(cs, out / f"{site.bs_id}.csv").name)
        print(f"{site.bs_id}: {len(cs)} slots, new {int(cs.new_calls.sum())}, "
              f"handover {int(cs.handover_calls.sum())}")
    if res.log is not None:
        res.log.write_jsonl(out / "calls.jsonl")
        files.append("calls.jsonl")
    _write_json(out / "manifest.json", {
        "command": "generate", "version": __version__, "created_utc": _utc_now(),
        "seed": seed, "generator": params.to_dict(), "config": cfg.resolved(),
        "validation": [r.to_dict() for r in reports], "files": files})
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config_from_args(args)
    scenario, reports = build_scenario(cfg)
    report = run_experiment(scenario)
    noise = None
    if cfg.noise > 0:
        noise = run_noise_experiment(scenario, cfg.noise, baseline=report)
    _write_outputs(cfg.out, report, noise)
    _write_json(cfg.out / "manifest.json", {
        "command": "run", "version": __version__, "created_utc": _utc_now(),
        "config": cfg.resolved(), "scenario": scenario.config_dict(),
        "validation": [r.to_dict() for r in reports]})
    print(_render(report, noise), end="")
    return EXIT_OK


def _render(report: ErrorReport, noise: ErrorReport | None) -> str:
    text = render_report_text(report)
    if noise is not None:
        text += "\n" + render_report_text(noise)
    return text


def _write_outputs(out: Path, report: ErrorReport, noise: ErrorReport | None):
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report_json(
        {"experiment": report, "noise": noise},
        metadata={"created_utc": _utc_now(), "version": __version__}))
    (out / "report.txt").write_text(_render(report, noise))
    write_plot_csvs(report, out, prefix="plot")
    if noise is not None:
        write_plot_csvs(noise, out, prefix="plot_noise")


def _read_run(d: Path) -> tuple[ErrorReport, ErrorReport | None]:
    p = d / "report.json"
    if not p.exists():
        raise ConfigError(f"{d}: no report.json (not a run directory?)")
    doc = json.loads(p.read_text())
    noise = doc.get("noise")
    return (ErrorReport.from_dict(doc["experiment"]),
            None if noise is None else ErrorReport.from_dict(noise))


def merge_reports(reports: list[ErrorReport], label: str = "report") -> ErrorReport:
    """One report over the union of sites; settings must agree."""
    first = reports[0]
    sites, rows = [], []
    seen: dict[str, dict] = {}
    for in_dir, rep in enumerate(reports):
        for key in MERGE_KEYS:
            if rep.config.get(key) != first.config.get(key):
                raise ConfigError(f"{label} {in_dir}: incompatible {key!r}: "
                                  f"{rep.config.get(key)!r} vs {first.config.get(key)!r}")
        if rep.noise_sigma != first.noise_sigma or rep.pairings != first.pairings:
            raise ConfigError(f"{label} {in_dir}: incompatible noise setting or pairings")
        for s in rep.sites:
            d = s.to_dict()
            if s.bs_id in seen:
                if seen[s.bs_id] != d:
                    raise ConfigError(f"BS {s.bs_id} appears with different results")
                continue
            seen[s.bs_id] = d
            sites.append(s)
            rows += [r for r in rep.config.get("corridor", []) if r.get("bs_id") == s.bs_id]
    config = {**first.config, "corridor": rows}
    return ErrorReport(first.title, sites, first.pairings, config, first.noise_sigma,
                       list(first.notes))


def cmd_report(args) -> int:
    runs = [_read_run(Path(d)) for d in args.dirs]
    report = merge_reports([r for r, _ in runs])
    noises = [n for _, n in runs]
    if any(n is None for n in noises) and not all(n is None for n in noises):
        raise ConfigError("some run directories have a noise section and others do not")
    noise = None if noises[0] is None else merge_reports(noises, "noise report")
    if args.out is not None:
        _write_outputs(Path(args.out), report, noise)
    print(_render(report, noise), end="")
    return EXIT_OK


# -------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="roadcell", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth-road", help="write synthetic detector CSVs")
    s.add_argument("--weeks", type=_positive_int, default=4)
    grp = s.add_mutually_exclusive_group()
    grp.add_argument("--sites", type=_positive_int, default=3,
                     help="number of synthetic detectors (ids SYN0, SYN1, ...)")
    grp.add_argument("--corridor", help="corridor config whose detectors to synthesise")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--profile", default="diurnal",
                   help="'diurnal', 'flat' or a JSON profile file")
    s.add_argument("--flow-scales", type=lambda t: [float(x) for x in t.split(",")],
                   default=None, help="per-detector flow multipliers")
    s.add_argument("--out", default="road")
    s.set_defaults(func=cmd_synth_road)

    s = sub.add_parser("ingest-validate", help="parse, fill and check detector CSVs")
    s.add_argument("--corridor", required=True)
    s.add_argument("--road-dir", required=True)
    s.add_argument("--max-gap", type=_positive_int, default=DEFAULT_MAX_GAP)
    s.add_argument("--out", default=None, help="write filled series and validation.json here")
    s.set_defaults(func=cmd_ingest_validate)

    s = sub.add_parser("generate", help="generate per-BS cell series")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int, default=None, help="default: first seed of the config")
    s.add_argument("--call-log", action="store_true", help="also write calls.jsonl")
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("run", help="train and evaluate the feature-set grid")
    s.add_argument("--config", required=True)
    s.add_argument("--seeds", type=_int_list, default=None)
    s.add_argument("--feature-sets", type=_name_list, default=None)
    s.add_argument("--noise", type=float, default=None, help="flow noise sigma_fraction")
    s.add_argument("--jobs", type=_positive_int, default=None)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("report", help="merge run directories into one table")
    s.add_argument("dirs", nargs="+")
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except TrainingDivergedError as exc:
        print(f"roadcell: training failed: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except ConfigError as exc:
        print(f"roadcell: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataValidationError as exc:
        print(f"roadcell: invalid data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except RoadcellError as exc:
        print(f"roadcell: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
