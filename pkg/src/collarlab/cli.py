"""collarlab command-line interface.

Exit codes: 0 success, 2 usage error, 3 input error, 4 pipeline error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, dsp
from .activity import ACTIVITY_LEVELS, ForestConfig
from .cohortio import (
    dog_days_from_logs,
    load_truth_labels,
    process_data_dir,
    score_data_dir,
    train_activity_model_from_dir,
)
from .errors import CollarLabError, InvalidConfig, IoFailure, MalformedRecord, MissingLabels
from .features.matrix import GROUP_PRESETS, FeatureMatrix, build_feature_matrix
from .ingest import parse_sensor_log, qc_session
from .mlharness import fig6_7_csv, run_grid, table2_csv, table3_csv
from .pipeline import ActivityModel, PipelineConfig, calibrate_day, classify_day, condition_day, desk_profile
from .stats import effects_csv, effects_markdown, rank_effects
from .synthgen import CohortConfig, Coupling, emit_fixture, generate_cohort

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_PIPELINE = 4

CONFIG_KEYS = {
    "seed", "tz_offset_min", "resample_hz", "cutoff_hz", "std_thresh_g",
    "min_coverage", "workers", "rate_hz", "model", "out_dir",
}

INPUT_ERRORS = (IoFailure, InvalidConfig, MalformedRecord, MissingLabels, FileNotFoundError)


def env_seed(default: int = 0) -> int:
    raw = os.environ.get("COLLARLAB_SEED")
    return int(raw) if raw else default


def load_run_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise IoFailure(f"config file not found: {p}")
    cfg = json.loads(p.read_text())
    unknown = set(cfg) - CONFIG_KEYS
    if unknown:
        raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
    if "model" in cfg and not Path(cfg["model"]).exists():
        raise InvalidConfig(f"config references missing model file: {cfg['model']}")
    return cfg


def pipeline_config(cfg: dict) -> PipelineConfig:
    base = desk_profile().to_dict()
    for key in ("resample_hz", "cutoff_hz", "std_thresh_g", "min_coverage"):
        if cfg.get(key) is not None:
            base[key] = cfg[key]
    return PipelineConfig(**base)


def load_activity_model(path: str | None) -> ActivityModel:
    if path is None:
        text = resources.files("collarlab.data").joinpath("pretrained_activity.json").read_text()
        return ActivityModel.from_json(text)
    p = Path(path)
    if not p.exists():
        raise IoFailure(f"activity model not found: {p}")
    return ActivityModel.from_json(p.read_text())


def merged(args: argparse.Namespace) -> dict:
    """Config file values with command-line overrides on top."""
    cfg = load_run_config(getattr(args, "config", None))
    for key in CONFIG_KEYS:  # argparse dests share the config key names
        if getattr(args, key, None) is not None:
            cfg[key] = getattr(args, key)
    cfg.setdefault("seed", env_seed())
    cfg.setdefault("tz_offset_min", 0)
    cfg.setdefault("workers", 1)
    return cfg


def _ensure_dir(path: str | Path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _require_dir(path: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise IoFailure(f"input directory not found: {p}")
    return p


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    cfg = merged(args)
    couplings = None
    if args.null:
        couplings = []
    elif args.coupling:
        couplings = []
        for spec in args.coupling:
            trait, statistic, period, strength = spec.split(":")
            couplings.append(Coupling(trait, statistic, period.upper(), float(strength)))
    cohort_cfg = CohortConfig(
        n_dogs=args.dogs,
        n_days=args.days,
        seed=cfg["seed"],
        rate_hz=cfg.get("rate_hz") or args.rate,
    )
    if couplings is not None:
        cohort_cfg.couplings = couplings
    if args.strength is not None:
        cohort_cfg = cohort_cfg.with_strength(args.strength)
    cohort_cfg.validate()
    cohort = generate_cohort(cohort_cfg)
    summary = emit_fixture(cohort, _ensure_dir(args.out))
    print(f"wrote {summary['n_dogs']} dogs x {summary['n_days']} days "
          f"({summary['n_records']} records) to {args.out}")
    return EXIT_OK


def cmd_ingest(args) -> int:
    cfg = merged(args)
    data = _require_dir(args.data)
    out = _ensure_dir(args.out)
    rows = ["dog_id,date,coverage_fraction,n_gaps,rate_drift_ppm,clipped,verdict"]
    n_days = 0
    for dog_id, days in dog_days_from_logs(data, cfg["tz_offset_min"]).items():
        for day in days:
            rep = qc_session(day, cfg.get("min_coverage") or 0.8)
            rows.append(
                f"{rep.dog_id},{rep.date.isoformat()},{rep.coverage_fraction:.6f},"
                f"{len(rep.gap_list)},{rep.rate_drift_ppm:.1f},"
                f"{rep.clipped_sample_count},{rep.verdict}"
            )
            n_days += 1
    (out / "qc_report.csv").write_text("\n".join(rows) + "\n")
    print(f"QC over {n_days} dog-days -> {out / 'qc_report.csv'}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = merged(args)
    data = _require_dir(args.data)
    out = _ensure_dir(args.out)
    pipe = pipeline_config(cfg)
    for dog_id, days in dog_days_from_logs(data, cfg["tz_offset_min"]).items():
        params = calibrate_day(days[0], pipe)
        (out / f"calibration_{dog_id}.json").write_text(params.to_json())
        print(f"{dog_id}: gain={np.round(params.gain, 4).tolist()} "
              f"offset={np.round(params.offset, 4).tolist()} "
              f"rms={params.residual_rms:.2e} ({params.n_static_windows} windows)")
    return EXIT_OK


def cmd_train_activity(args) -> int:
    cfg = merged(args)
    data = _require_dir(args.data)
    pipe = pipeline_config(cfg)
    model = train_activity_model_from_dir(
        data, pipe,
        ForestConfig(n_trees=args.trees, seed=cfg["seed"]),
        dog_ids=args.dogs.split(",") if args.dogs else None,
        max_windows_per_class=args.max_windows,
        tz_offset_min=cfg["tz_offset_min"],
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(model.to_json())
    oob = model.forest.oob_accuracy
    print(f"trained {args.trees} trees (oob accuracy {oob:.3f}) -> {out}" if oob is not None
          else f"trained {args.trees} trees -> {out}")
    return EXIT_OK


def cmd_classify(args) -> int:
    cfg = merged(args)
    log_path = Path(args.log)
    if not log_path.exists():
        raise IoFailure(f"log file not found: {log_path}")
    model = load_activity_model(cfg.get("model"))
    session = parse_sensor_log(log_path.read_bytes(), "binary")
    from .ingest import assemble_dog_days

    calibration = None
    if args.calibration:
        calibration = dsp.CalibrationParams.from_json(Path(args.calibration).read_text())
    out = _ensure_dir(args.out)
    for day in assemble_dog_days([session], cfg["tz_offset_min"]):
        cond = condition_day(day, model.pipe, calibration)
        timeline = classify_day(cond, model)
        path = out / f"timeline_{day.dog_id}_{day.date.isoformat()}.csv"
        path.write_text(timeline.to_csv())
        print(f"{day.dog_id} {day.date.isoformat()}: {len(timeline.window_starts_ms)} windows -> {path}")
    return EXIT_OK


def cmd_process(args) -> int:
    cfg = merged(args)
    data = _require_dir(args.data)
    out = _ensure_dir(args.out)
    model = load_activity_model(cfg.get("model"))
    result = process_data_dir(data, model, tz_offset_min=cfg["tz_offset_min"],
                              min_coverage=cfg.get("min_coverage"))
    tl_dir = _ensure_dir(out / "timelines")
    for (dog_id, date), timeline in sorted(result.timelines.items()):
        (tl_dir / f"{dog_id}_{date}.csv").write_text(timeline.to_csv())
    cal_dir = _ensure_dir(out / "calibrations")
    for dog_id, params in sorted(result.calibrations.items()):
        (cal_dir / f"{dog_id}.json").write_text(params.to_json())
    rows = ["dog_id,date,coverage_fraction,verdict"]
    rows += [f"{r.dog_id},{r.date.isoformat()},{r.coverage_fraction:.6f},{r.verdict}"
             for r in result.qc]
    (out / "qc_report.csv").write_text("\n".join(rows) + "\n")
    print(f"processed {len(result.timelines)} dog-days -> {out}")
    return EXIT_OK


def cmd_score(args) -> int:
    data = _require_dir(args.data)
    out = _ensure_dir(args.out)
    scores, labels = score_data_dir(data)
    rows = ["dog_id,questionnaire,trait,score"]
    rows += [f"{s.dog_id},{s.questionnaire},{s.trait},{s.score:.6f}" for s in scores]
    (out / "trait_scores.csv").write_text("\n".join(rows) + "\n")
    rows = ["dog_id," + ",".join(sorted(labels.labels))]
    dog_ids = sorted({s.dog_id for s in scores})
    for dog_id in dog_ids:
        vals = [str(labels.labels[slug].get(dog_id, "")) for slug in sorted(labels.labels)]
        rows.append(dog_id + "," + ",".join(vals))
    (out / "trait_labels.csv").write_text("\n".join(rows) + "\n")
    med = ["trait,median"] + [f"{slug},{m:.6f}" for slug, m in sorted(labels.medians.items())]
    (out / "trait_medians.csv").write_text("\n".join(med) + "\n")
    print(f"scored {len(dog_ids)} dogs, {len(labels.labels)} traits -> {out}")
    if labels.excluded:
        print(f"excluded degenerate traits: {labels.excluded}", file=sys.stderr)
    return EXIT_OK


def cmd_features(args) -> int:
    cfg = merged(args)
    data = _require_dir(args.data)
    out = _ensure_dir(args.out)
    model = load_activity_model(cfg.get("model"))
    result = process_data_dir(data, model, tz_offset_min=cfg["tz_offset_min"],
                              min_coverage=cfg.get("min_coverage"))
    groups = set(g.upper().replace("OINFO", "O-INFO") for g in args.groups.split(","))
    periods = [p.upper() for p in args.periods.split(",")]
    for period in periods:
        matrix = build_feature_matrix(result.bundle, groups, period)
        path = out / f"features_{period}.csv"
        path.write_text(matrix.to_csv())
        print(f"{period}: {matrix.X.shape[0]} instances x {matrix.X.shape[1]} features -> {path}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    matrix_path = Path(args.matrix)
    if not matrix_path.exists():
        raise IoFailure(f"feature matrix not found: {matrix_path}")
    out = _ensure_dir(args.out)
    matrix = FeatureMatrix.from_csv(matrix_path.read_text())
    traits = args.traits.split(",") if args.traits != "all" else matrix.label_names
    ranked = {}
    for trait in traits:
        ranked[trait] = rank_effects(matrix, trait, k=args.top_k, m=args.bonferroni_m)
    (out / "effects.csv").write_text(effects_csv(ranked))
    (out / "effects.md").write_text(effects_markdown(ranked))
    print(f"ranked effects for {len(ranked)} traits -> {out}")
    return EXIT_OK


def cmd_infer(args) -> int:
    cfg = merged(args)
    feat_dir = _require_dir(args.features)
    out = _ensure_dir(args.out)
    periods = [p.upper() for p in args.periods.split(",")]
    matrices = {}
    for period in periods:
        path = feat_dir / f"features_{period}.csv"
        if not path.exists():
            raise IoFailure(f"missing feature matrix: {path}")
        matrices[period] = FeatureMatrix.from_csv(path.read_text())
    any_matrix = next(iter(matrices.values()))
    traits = args.traits.split(",") if args.traits != "all" else any_matrix.label_names
    models = [m.lower() for m in args.models.split(",")]
    presets = [g.upper() for g in args.groups.split(",")]
    for preset in presets:
        if preset not in GROUP_PRESETS:
            raise InvalidConfig(f"unknown group preset {preset!r}")
    grid = run_grid(traits, models, presets, periods, matrices,
                    seed=cfg["seed"], workers=cfg["workers"])
    (out / "experiments.csv").write_text(_experiments_csv(grid))
    (out / "table2.csv").write_text(table2_csv(grid, traits, models))
    (out / "table3.csv").write_text(table3_csv(grid, traits))
    (out / "fig6_7.csv").write_text(fig6_7_csv(grid, traits))
    best_lines = ["trait,best_period,best_preset,auc_mean,auc_std"]
    for trait in traits:
        best = grid.best_for_trait(trait)
        if best:
            period, preset, r = best
            best_lines.append(f"{trait},{period},{preset},{r.auc_mean:.4f},{r.auc_std:.4f}")
        else:
            best_lines.append(f"{trait},n/a,n/a,nan,nan")
    (out / "best_cells.csv").write_text("\n".join(best_lines) + "\n")
    render_report(out, out / "report.md")
    print(f"{len(grid.results)} grid cells -> {out}")
    return EXIT_OK


def _experiments_csv(grid) -> str:
    lines = ["trait,model,preset,period,auc_mean,auc_std,aucs,k_components,error"]
    for key in sorted(grid.results):
        r = grid.results[key]
        s = r.spec
        aucs = ";".join(f"{v:.6f}" for v in r.per_iteration)
        ks = ";".join(str(k) for k in r.k_components)
        err = (r.error or "").replace(",", ";")
        lines.append(f"{s.trait},{s.model},{s.preset},{s.period},"
                     f"{r.auc_mean:.6f},{r.auc_std:.6f},{aucs},{ks},{err}")
    return "\n".join(lines) + "\n"


def render_report(run_dir: Path, out_path: Path) -> None:
    """Markdown summary: per-dog activity profiles plus any result tables."""
    sections = ["# collarlab run report", ""]

    tl_dir = run_dir / "timelines"
    if tl_dir.is_dir():
        from .activity import ActivityTimeline

        per_dog: dict[str, list] = {}
        for path in sorted(tl_dir.glob("*.csv")):
            dog_id, date = path.stem.rsplit("_", 1)
            per_dog.setdefault(dog_id, []).append(
                ActivityTimeline.from_csv(path.read_text(), dog_id=dog_id, date=date)
            )
        sections.append("## Activity profiles")
        sections.append("")
        sections.append("| dog | days | " + " | ".join(f"{l} min/day" for l in ACTIVITY_LEVELS) + " |")
        sections.append("|---|---|" + "---|" * 4)
        for dog_id, timelines in sorted(per_dog.items()):
            counts = np.zeros(4)
            for tl in timelines:
                counts += np.bincount(tl.smoothed_labels, minlength=4)
            per_day = counts / len(timelines)
            cells = " | ".join(f"{v:.0f}" for v in per_day)
            sections.append(f"| {dog_id} | {len(timelines)} | {cells} |")
        sections.append("")

    for name, title in (("table2.csv", "Model comparison (AUC)"),
                        ("table3.csv", "Feature-group comparison (AUC, RF)"),
                        ("fig6_7.csv", "Best preset per period"),
                        ("best_cells.csv", "Best cell per trait")):
        path = run_dir / name
        if path.exists():
            sections.append(f"## {title}")
            sections.append("")
            lines = path.read_text().strip().split("\n")
            sections.append("| " + " | ".join(lines[0].split(",")) + " |")
            sections.append("|" + "---|" * len(lines[0].split(",")))
            for ln in lines[1:]:
                sections.append("| " + " | ".join(ln.split(",")) + " |")
            sections.append("")

    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text("\n".join(sections) + "\n")


def cmd_report(args) -> int:
    run_dir = _require_dir(args.run)
    out_path = Path(args.out)
    render_report(run_dir, out_path)
    print(f"report -> {out_path}")
    return EXIT_OK


def cmd_evaluate_activity(args) -> int:
    """Compare predicted timelines against truth label files."""
    cfg = merged(args)
    data = _require_dir(args.data)
    tl_dir = _require_dir(args.timelines)
    from .activity import ActivityTimeline

    confusion = np.zeros((4, 4), dtype=np.int64)
    for path in sorted(tl_dir.glob("*.csv")):
        dog_id, date = path.stem.replace("timeline_", "").rsplit("_", 1)
        truth_path = data / "truth" / f"{dog_id}_{date}.csv"
        if not truth_path.exists():
            continue
        tl = ActivityTimeline.from_csv(path.read_text(), dog_id=dog_id, date=date)
        starts, labels = load_truth_labels(truth_path)
        ref = dict(zip(starts.tolist(), labels.tolist()))
        for w, pred in zip(tl.window_starts_ms.tolist(), tl.smoothed_labels.tolist()):
            if w in ref and ref[w] >= 0:
                confusion[ref[w], pred] += 1
    if confusion.sum() == 0:
        raise IoFailure("no overlapping truth labels found")
    print("per-class accuracy:")
    for c, name in enumerate(ACTIVITY_LEVELS):
        n_c = confusion[c].sum()
        acc = confusion[c, c] / n_c if n_c else float("nan")
        print(f"  {name}: {acc:.4f} ({n_c} windows)")
    print(f"overall: {np.trace(confusion) / confusion.sum():.4f}")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="collarlab",
        description="Collar-worn IMU pipeline: activity levels, features, trait inference.",
    )
    parser.add_argument("--version", action="version", version=f"collarlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run config; flags override its values")
        p.add_argument("--seed", type=int, default=None,
                       help="random seed (default: $COLLARLAB_SEED or 0)")
        p.add_argument("--tz-offset-min", dest="tz_offset_min", type=int, default=None,
                       help="local-time offset in minutes for day assembly")

    p = sub.add_parser("synth", help="generate a synthetic cohort fixture")
    common(p)
    p.add_argument("--out", required=True, help="fixture output directory")
    p.add_argument("--dogs", type=int, default=12)
    p.add_argument("--days", type=int, default=7)
    p.add_argument("--rate", type=float, default=4.0, help="IMU sampling rate in Hz")
    p.add_argument("--strength", type=float, default=None,
                   help="override every coupling strength (0 disables signal)")
    p.add_argument("--null", action="store_true", help="drop all trait couplings")
    p.add_argument("--coupling", action="append",
                   help="trait:statistic:period:strength (repeatable)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="parse logs, assemble dog-days, run QC")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-coverage", dest="min_coverage", type=float, default=None)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("calibrate", help="fit per-dog gain/offset calibration")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("train-activity", help="train the activity classifier on labeled data")
    common(p)
    p.add_argument("--data", required=True, help="fixture with logs/ and truth/")
    p.add_argument("--out", required=True, help="model JSON path")
    p.add_argument("--dogs", default=None, help="comma-separated dog ids to train on")
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--max-windows", dest="max_windows", type=int, default=1500,
                   help="per-class training window budget")
    p.set_defaults(func=cmd_train_activity)

    p = sub.add_parser("classify", help="classify one log file into a timeline")
    common(p)
    p.add_argument("--log", required=True, help="binary .pklg log file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--model", default=None, help="activity model JSON (default: shipped)")
    p.add_argument("--calibration", default=None, help="calibration JSON to apply")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("process", help="run the full pipeline over a data directory")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model", default=None, help="activity model JSON (default: shipped)")
    p.add_argument("--min-coverage", dest="min_coverage", type=float, default=None)
    p.set_defaults(func=cmd_process)

    p = sub.add_parser("score", help="score questionnaires and binarize traits")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("features", help="build labeled feature matrices")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--groups", default="act,stat,dem,oinfo",
                   help="comma set from act,stat,dem,oinfo")
    p.add_argument("--periods", default="n,m,a,all")
    p.add_argument("--min-coverage", dest="min_coverage", type=float, default=None)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("analyze", help="rank per-feature effects per trait")
    common(p)
    p.add_argument("--matrix", required=True, help="feature matrix CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--traits", default="all")
    p.add_argument("--top-k", dest="top_k", type=int, default=5)
    p.add_argument("--bonferroni-m", dest="bonferroni_m", type=int, default=None)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("infer", help="run the trait-inference experiment grid")
    common(p)
    p.add_argument("--features", required=True, help="directory with features_<PERIOD>.csv")
    p.add_argument("--out", required=True)
    p.add_argument("--traits", default="all")
    p.add_argument("--models", default="baseline,rf,nb")
    p.add_argument("--groups", default="B1,B2,B3,G1,G2,G3,G4,G5,G6")
    p.add_argument("--periods", default="n,m,a,all")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("report", help="render the run report (activity profiles + tables)")
    common(p)
    p.add_argument("--run", required=True, help="directory holding pipeline outputs")
    p.add_argument("--out", required=True, help="markdown report path")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("evaluate-activity", help="score timelines against truth labels")
    common(p)
    p.add_argument("--data", required=True, help="fixture with truth/")
    p.add_argument("--timelines", required=True, help="directory of timeline CSVs")
    p.set_defaults(func=cmd_evaluate_activity)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except INPUT_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except CollarLabError as e:
        print(f"pipeline error: {e}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
