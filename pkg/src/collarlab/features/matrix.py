"""Assembly of per-(dog, day[, period]) instances into a labeled feature matrix."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import MissingDemographics, MissingLabels
from ..personality import TRAIT_SLUGS
from .levels import PERIODS, ActivityLevelFeatures
from .manifests import (
    ACTIVITY_LEVEL_FEATURES,
    DEMOGRAPHIC_FEATURES,
    OWNER_INFO_FEATURES,
    STAT_MANIFEST_ID,
    WINDOW_MANIFEST_ID,
    stat_manifest,
)

logger = logging.getLogger(__name__)

FEATURE_GROUPS = ("ACT", "STAT", "DEM", "O-INFO")

GROUP_PRESETS: dict[str, frozenset[str]] = {
    "B1": frozenset(),
    "B2": frozenset({"O-INFO"}),
    "B3": frozenset({"DEM"}),
    "G1": frozenset({"ACT"}),
    "G2": frozenset({"STAT"}),
    "G3": frozenset({"ACT", "DEM"}),
    "G4": frozenset({"STAT", "DEM"}),
    "G5": frozenset({"ACT", "STAT"}),
    "G6": frozenset({"ACT", "STAT", "DEM"}),
}


@dataclass
class InstanceFeatures:
    """Sensed features for one dog-day: per-period ACT and STAT vectors."""

    dog_id: str
    date: str  # ISO date
    act: dict[str, ActivityLevelFeatures] = field(default_factory=dict)   # period -> features
    stat: dict[str, np.ndarray] = field(default_factory=dict)             # period -> 56 values


@dataclass
class CohortBundle:
    """Everything build_feature_matrix needs for one cohort."""

    instances: list[InstanceFeatures]
    demographics: dict[str, dict[str, float]]     # dog_id -> DEM columns
    owner_info: dict[str, dict[str, float]]       # dog_id -> O-INFO columns
    labels: dict[str, dict[str, int]]             # trait slug -> dog_id -> 0/1
    manifest_ids: tuple[str, str] = (WINDOW_MANIFEST_ID, STAT_MANIFEST_ID)


@dataclass
class FeatureMatrix:
    rows: list[tuple[str, str, str]]          # (dog_id, date, period tag)
    feature_names: list[str]
    feature_groups: list[str]                 # parallel to feature_names
    feature_periods: list[str]                # N/M/A or "" for period-free columns
    X: np.ndarray                             # (n, F)
    label_names: list[str]
    Y: np.ndarray                             # (n, T) of 0/1
    manifest_id: str = f"{WINDOW_MANIFEST_ID}+{STAT_MANIFEST_ID}"

    @property
    def dog_ids(self) -> list[str]:
        return [r[0] for r in self.rows]

    def columns_for_groups(self, groups: set[str]) -> list[int]:
        return [i for i, g in enumerate(self.feature_groups) if g in groups]

    def label_column(self, slug: str) -> np.ndarray:
        return self.Y[:, self.label_names.index(slug)]

    def to_csv(self) -> str:
        header = ["dog_id", "date", "period"] + self.feature_names + [
            f"label_{s}" for s in self.label_names
        ]
        lines = [",".join(header)]
        for i, (dog, date, period) in enumerate(self.rows):
            vals = [repr(float(v)) for v in self.X[i]]
            labs = [str(int(v)) for v in self.Y[i]]
            lines.append(",".join([dog, date, period] + vals + labs))
        meta = [
            "# groups," + ",".join(self.feature_groups),
            "# periods," + ",".join(p or "-" for p in self.feature_periods),
            "# manifest," + self.manifest_id,
        ]
        return "\n".join(lines + meta) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "FeatureMatrix":
        lines = [ln for ln in text.strip().split("\n")]
        meta = {ln.split(",", 1)[0]: ln.split(",", 1)[1] for ln in lines if ln.startswith("#")}
        body = [ln for ln in lines if not ln.startswith("#")]
        header = body[0].split(",")
        feat_names = [h for h in header[3:] if not h.startswith("label_")]
        label_names = [h[len("label_"):] for h in header[3:] if h.startswith("label_")]
        nf = len(feat_names)
        rows, X, Y = [], [], []
        for ln in body[1:]:
            parts = ln.split(",")
            rows.append((parts[0], parts[1], parts[2]))
            X.append([float(v) for v in parts[3:3 + nf]])
            Y.append([int(v) for v in parts[3 + nf:]])
        groups = meta["# groups"].split(",")
        periods = [p if p != "-" else "" for p in meta["# periods"].split(",")]
        return cls(
            rows=rows,
            feature_names=feat_names,
            feature_groups=groups,
            feature_periods=periods,
            X=np.array(X, dtype=np.float64).reshape(len(rows), nf),
            label_names=label_names,
            Y=np.array(Y, dtype=np.int64).reshape(len(rows), len(label_names)),
            manifest_id=meta.get("# manifest", ""),
        )


_STAT_NAMES = stat_manifest()


def _sensed_columns(groups: set[str], period: str) -> list[tuple[str, str, str]]:
    """(name, group, period) for the sensed columns of one period."""
    cols = []
    if "ACT" in groups:
        cols += [(n, "ACT", period) for n in ACTIVITY_LEVEL_FEATURES]
    if "STAT" in groups:
        cols += [(n, "STAT", period) for n in _STAT_NAMES]
    return cols


def standardization_params(X: np.ndarray, row_idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-column mean/std over the given (training) rows; std floored at 1e-12."""
    sub = X[row_idx]
    return sub.mean(axis=0), np.maximum(sub.std(axis=0), 1e-12)


def build_feature_matrix(
    bundle: CohortBundle,
    groups: set[str] | frozenset[str],
    period: str,
) -> FeatureMatrix:
    """One row per (dog, day) instance for the requested period.

    period N/M/A keeps one set of sensed columns; period ALL concatenates all
    three with ' (N)'/' (M)'/' (A)' suffixes. DEM and O-INFO columns repeat the
    per-dog attributes. Columns constant across all rows are dropped.
    """
    groups = set(groups)
    unknown = groups - set(FEATURE_GROUPS)
    if unknown:
        raise ValueError(f"unknown feature groups: {sorted(unknown)}")
    if period not in ("N", "M", "A", "ALL"):
        raise ValueError(f"unknown period {period!r}")
    if not groups:
        logger.warning("empty feature-group set: matrix will have zero feature columns")

    label_slugs = [s for s in TRAIT_SLUGS if s in bundle.labels]
    if not label_slugs:
        raise MissingLabels("cohort bundle has no trait labels")

    sensed_periods = list(PERIODS) if period == "ALL" else [period]
    columns: list[tuple[str, str, str]] = []
    for p in sensed_periods:
        for name, grp, pp in _sensed_columns(groups, p):
            display = f"{name} ({pp})" if period == "ALL" else name
            columns.append((display, grp, pp))
    if "DEM" in groups:
        columns += [(n, "DEM", "") for n in DEMOGRAPHIC_FEATURES]
    if "O-INFO" in groups:
        columns += [(n, "O-INFO", "") for n in OWNER_INFO_FEATURES]

    rows: list[tuple[str, str, str]] = []
    data: list[np.ndarray] = []
    labels: list[list[int]] = []
    for inst in bundle.instances:
        missing_traits = [s for s in label_slugs if inst.dog_id not in bundle.labels[s]]
        if missing_traits:
            raise MissingLabels(f"{inst.dog_id}: no labels for {missing_traits}")
        if not all(p in inst.act and p in inst.stat for p in sensed_periods):
            logger.warning(
                "%s %s: missing period data, instance skipped", inst.dog_id, inst.date
            )
            continue
        vec: list[float] = []
        for p in sensed_periods:
            if "ACT" in groups:
                vec.extend(inst.act[p].as_array())
            if "STAT" in groups:
                vec.extend(inst.stat[p])
        if "DEM" in groups:
            dem = bundle.demographics.get(inst.dog_id)
            if dem is None:
                raise MissingDemographics(f"{inst.dog_id}: no demographics")
            vec.extend(float(dem[n]) for n in DEMOGRAPHIC_FEATURES)
        if "O-INFO" in groups:
            oi = bundle.owner_info.get(inst.dog_id)
            if oi is None:
                raise MissingDemographics(f"{inst.dog_id}: no owner info")
            vec.extend(float(oi[n]) for n in OWNER_INFO_FEATURES)
        rows.append((inst.dog_id, inst.date, period))
        data.append(np.array(vec, dtype=np.float64))
        labels.append([bundle.labels[s][inst.dog_id] for s in label_slugs])

    X = np.vstack(data) if data else np.empty((0, len(columns)))
    Y = np.array(labels, dtype=np.int64).reshape(len(rows), len(label_slugs))

    keep = [i for i in range(X.shape[1]) if len(rows) == 0 or not np.all(X[:, i] == X[0, i])]
    if len(keep) < X.shape[1]:
        dropped = [columns[i][0] for i in range(X.shape[1]) if i not in set(keep)]
        logger.warning("dropping %d constant columns: %s", len(dropped), dropped[:8])
        X = X[:, keep]
        columns = [columns[i] for i in keep]

    return FeatureMatrix(
        rows=rows,
        feature_names=[c[0] for c in columns],
        feature_groups=[c[1] for c in columns],
        feature_periods=[c[2] for c in columns],
        X=X,
        label_names=label_slugs,
        Y=Y,
    )
