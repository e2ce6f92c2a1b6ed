"""File-based cohort processing: readers for the fixture layout plus the
orchestration that turns a data directory into timelines and feature matrices.

Layout consumed (as written by `collarlab synth` / emit_fixture):
    logs/<dog>_<date>.pklg      raw binary sensor logs
    truth/<dog>_<date>.csv      ground-truth window labels (synthetic only)
    responses_dpq.csv           dog_id,item_id,response
    responses_mcpqr.csv
    owner_tipi.csv
    demographics.csv            dog_id,sex,weight_kg,age_years,neutered,training_rating,owner_sex
    ground_truth.json           generator manifest (synthetic only)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dsp
from .activity import LEVEL_INDEX_BY_NAME, ActivityTimeline, ForestConfig
from .errors import InvalidConfig, IoFailure, MissingLabels
from .features.manifests import STAT_MANIFEST_ID, WINDOW_MANIFEST_ID
from .features.matrix import CohortBundle
from .ingest import DogDay, QcReport, assemble_dog_days, parse_sensor_log
from .personality import binarize_traits, dpq_spec, mcpqr_spec, score_questionnaire, tipi_spec
from .pipeline import (
    ActivityModel,
    PipelineConfig,
    calibrate_day,
    classify_day,
    condition_day,
    day_instance_features,
    day_window_features,
    fit_activity_model,
)

logger = logging.getLogger(__name__)


def read_simple_csv(path: Path) -> list[dict[str, str]]:
    lines = path.read_text().strip().split("\n")
    header = lines[0].split(",")
    return [dict(zip(header, ln.split(","))) for ln in lines[1:]]


def load_responses(path: Path) -> dict[str, dict[str, int]]:
    out: dict[str, dict[str, int]] = {}
    for row in read_simple_csv(path):
        out.setdefault(row["dog_id"], {})[row["item_id"]] = int(row["response"])
    return out


def load_demographics(path: Path) -> tuple[dict[str, dict[str, float]], dict[str, float]]:
    dem: dict[str, dict[str, float]] = {}
    owner_sex: dict[str, float] = {}
    for row in read_simple_csv(path):
        dem[row["dog_id"]] = {
            "sex": float(row["sex"]),
            "weight_kg": float(row["weight_kg"]),
            "age_years": float(row["age_years"]),
            "neutered": float(row["neutered"]),
            "training_rating": float(row["training_rating"]),
        }
        owner_sex[row["dog_id"]] = float(row["owner_sex"])
    return dem, owner_sex


def load_truth_labels(path: Path) -> tuple[np.ndarray, np.ndarray]:
    starts, labels = [], []
    for row in read_simple_csv(path):
        starts.append(int(row["window_start_ms"]))
        labels.append(LEVEL_INDEX_BY_NAME[row["level"]])
    return np.asarray(starts, dtype=np.int64), np.asarray(labels, dtype=np.int64)


def iter_log_files(data_dir: Path):
    logs = sorted((data_dir / "logs").glob("*.pklg"))
    if not logs:
        raise IoFailure(f"no .pklg logs under {data_dir / 'logs'}")
    for path in logs:
        yield path


def dog_days_from_logs(data_dir: Path, tz_offset_min: int = 0) -> dict[str, list[DogDay]]:
    """Parse every log and assemble per-dog DogDays."""
    sessions: dict[str, list] = {}
    for path in iter_log_files(data_dir):
        session = parse_sensor_log(path.read_bytes(), "binary")
        sessions.setdefault(session.dog_id, []).append(session)
    return {
        dog: assemble_dog_days(sess, tz_offset_min)
        for dog, sess in sorted(sessions.items())
    }


def score_data_dir(data_dir: Path):
    """Trait scores and binary labels from the response files."""
    dpq = load_responses(data_dir / "responses_dpq.csv")
    mcpqr = load_responses(data_dir / "responses_mcpqr.csv")
    scores = []
    for dog_id in sorted(dpq):
        scores += score_questionnaire(dpq_spec(), dpq[dog_id], dog_id=dog_id)
    for dog_id in sorted(mcpqr):
        scores += score_questionnaire(mcpqr_spec(), mcpqr[dog_id], dog_id=dog_id)
    if not scores:
        raise MissingLabels(f"no questionnaire responses under {data_dir}")
    return scores, binarize_traits(scores)


def owner_info_from_dir(data_dir: Path) -> dict[str, dict[str, float]]:
    _, owner_sex = load_demographics(data_dir / "demographics.csv")
    tipi_responses = load_responses(data_dir / "owner_tipi.csv")
    spec = tipi_spec()
    out: dict[str, dict[str, float]] = {}
    for dog_id, responses in tipi_responses.items():
        info = {"owner_sex": owner_sex.get(dog_id, 0.0)}
        for s in score_questionnaire(spec, responses, dog_id=dog_id):
            info[f"owner_tipi_{s.trait.lower().replace(' ', '_')}"] = s.score
        out[dog_id] = info
    return out


@dataclass
class ProcessedData:
    bundle: CohortBundle
    timelines: dict[tuple[str, str], ActivityTimeline] = field(default_factory=dict)
    qc: list[QcReport] = field(default_factory=list)
    calibrations: dict[str, dsp.CalibrationParams] = field(default_factory=dict)


def process_data_dir(
    data_dir: Path,
    model: ActivityModel,
    cfg: PipelineConfig | None = None,
    tz_offset_min: int = 0,
    min_coverage: float | None = None,
) -> ProcessedData:
    """Full pipeline over an on-disk data directory."""
    cfg = cfg or model.pipe
    if min_coverage is not None:
        cfg = PipelineConfig(**{**cfg.to_dict(), "min_coverage": min_coverage})
    _, labels = score_data_dir(data_dir)
    demographics, _ = load_demographics(data_dir / "demographics.csv")
    owner_info = owner_info_from_dir(data_dir)

    out = ProcessedData(bundle=CohortBundle(
        instances=[], demographics=demographics, owner_info=owner_info,
        labels=labels.labels, manifest_ids=(WINDOW_MANIFEST_ID, STAT_MANIFEST_ID),
    ))
    for dog_id, days in dog_days_from_logs(data_dir, tz_offset_min).items():
        calibration = None
        for day in days:
            if calibration is None:
                calibration = calibrate_day(day, cfg)
                out.calibrations[dog_id] = calibration
            cond = condition_day(day, cfg, calibration)
            out.qc.append(cond.qc)
            if cond.qc.verdict == "fail":
                logger.warning("%s %s: QC fail, skipped", day.dog_id, day.date)
                continue
            vectors = day_window_features(cond, cfg)
            timeline = classify_day(cond, model, vectors)
            out.timelines[(day.dog_id, day.date.isoformat())] = timeline
            out.bundle.instances.append(day_instance_features(cond, timeline))
    return out


def train_activity_model_from_dir(
    data_dir: Path,
    cfg: PipelineConfig,
    forest_cfg: ForestConfig | None = None,
    dog_ids: list[str] | None = None,
    max_windows_per_class: int = 1500,
    tz_offset_min: int = 0,
) -> ActivityModel:
    """Train the activity classifier from logs plus truth label files."""
    forest_cfg = forest_cfg or ForestConfig()
    truth_dir = data_dir / "truth"
    if not truth_dir.is_dir():
        raise InvalidConfig(f"{truth_dir} not found: training needs labeled windows")
    X_parts, y_parts, sequences = [], [], []
    for dog_id, days in dog_days_from_logs(data_dir, tz_offset_min).items():
        if dog_ids is not None and dog_id not in dog_ids:
            continue
        for day in days:
            truth_path = truth_dir / f"{dog_id}_{day.date.isoformat()}.csv"
            if not truth_path.exists():
                logger.warning("%s: no truth labels, day skipped", truth_path.name)
                continue
            starts, labels = load_truth_labels(truth_path)
            cond = condition_day(day, cfg)
            vectors = day_window_features(cond, cfg)
            label_by_start = dict(zip(starts.tolist(), labels.tolist()))
            keep = [(v, label_by_start[v.window_start_ms]) for v in vectors
                    if label_by_start.get(v.window_start_ms, -1) >= 0]
            if not keep:
                continue
            X_parts.append(np.vstack([v.values for v, _ in keep]))
            y_parts.append(np.array([lbl for _, lbl in keep], dtype=np.int64))
            sequences.append(labels[labels >= 0])
    if not X_parts:
        raise InvalidConfig("no labeled training windows found")
    return fit_activity_model(X_parts, y_parts, sequences, cfg, forest_cfg, max_windows_per_class)
