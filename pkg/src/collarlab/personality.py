"""Questionnaire scoring (DPQ, MCPQ-R, owner TIPI) and median binarization.

Item-to-factor maps ship as editable CSV files; the shipped DPQ/MCPQ-R maps
use placeholder item ids with the published factor structure, so real
instruments drop in without code changes.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import DegenerateTrait, MissingItem, OutOfRangeResponse

logger = logging.getLogger(__name__)

DPQ_FACTORS = (
    "Fearfulness",
    "Aggression towards People",
    "Excitability",
    "Responsiveness to Training",
    "Aggression towards Animals",
)
MCPQR_FACTORS = (
    "Extraversion",
    "Motivation",
    "Training Focus",
    "Amicability",
    "Neuroticism",
)
TIPI_FACTORS = (
    "Extraversion",
    "Agreeableness",
    "Conscientiousness",
    "Emotional Stability",
    "Openness",
)

# the ten modeling targets, in fixed order
TRAITS = tuple((q, f) for q, factors in (("DPQ", DPQ_FACTORS), ("MCPQR", MCPQR_FACTORS)) for f in factors)


def trait_slug(questionnaire: str, factor: str) -> str:
    return f"{questionnaire.lower()}_{factor.lower().replace(' ', '_')}"


TRAIT_SLUGS = tuple(trait_slug(q, f) for q, f in TRAITS)


@dataclass(frozen=True)
class QuestionnaireItem:
    item_id: str
    factor: str
    reverse: bool


@dataclass
class QuestionnaireSpec:
    id: str
    items: list[QuestionnaireItem]
    scale_min: int
    scale_max: int

    @property
    def factors(self) -> list[str]:
        seen: list[str] = []
        for it in self.items:
            if it.factor not in seen:
                seen.append(it.factor)
        return seen

    @classmethod
    def from_csv(cls, text: str, id: str, scale_min: int, scale_max: int) -> "QuestionnaireSpec":
        items = []
        for row in csv.DictReader(io.StringIO(text)):
            items.append(
                QuestionnaireItem(
                    item_id=row["item_id"],
                    factor=row["factor"],
                    reverse=row["reverse"].strip() in ("1", "true", "True"),
                )
            )
        return cls(id=id, items=items, scale_min=scale_min, scale_max=scale_max)


def _shipped(name: str) -> str:
    return resources.files("collarlab.data").joinpath(name).read_text()


def dpq_spec() -> QuestionnaireSpec:
    return QuestionnaireSpec.from_csv(_shipped("dpq_items.csv"), "DPQ", 1, 7)


def mcpqr_spec() -> QuestionnaireSpec:
    return QuestionnaireSpec.from_csv(_shipped("mcpqr_items.csv"), "MCPQR", 1, 6)


def tipi_spec() -> QuestionnaireSpec:
    return QuestionnaireSpec.from_csv(_shipped("tipi_items.csv"), "TIPI", 1, 7)


@dataclass
class TraitScore:
    dog_id: str
    questionnaire: str
    trait: str
    score: float

    @property
    def slug(self) -> str:
        return trait_slug(self.questionnaire, self.trait)


def score_questionnaire(spec: QuestionnaireSpec, responses: dict[str, int], dog_id: str = "") -> list[TraitScore]:
    """Factor scores as means of (reverse-coded where flagged) item responses."""
    missing = [it.item_id for it in spec.items if it.item_id not in responses]
    if missing:
        raise MissingItem(missing)
    by_factor: dict[str, list[float]] = {}
    for it in spec.items:
        r = responses[it.item_id]
        if not (spec.scale_min <= r <= spec.scale_max):
            raise OutOfRangeResponse(
                f"{it.item_id}: response {r} outside [{spec.scale_min}, {spec.scale_max}]"
            )
        coded = (spec.scale_min + spec.scale_max - r) if it.reverse else r
        by_factor.setdefault(it.factor, []).append(float(coded))
    return [
        TraitScore(dog_id=dog_id, questionnaire=spec.id, trait=factor, score=float(np.mean(vals)))
        for factor, vals in by_factor.items()
    ]


@dataclass
class TraitLabels:
    """Per-dog high/low labels plus the cohort medians they came from."""

    labels: dict[str, dict[str, int]]      # slug -> dog_id -> 1 (high) / 0 (low)
    medians: dict[str, float]              # slug -> cohort median
    excluded: list[str]                    # degenerate trait slugs

    def for_dog(self, dog_id: str) -> dict[str, int]:
        return {slug: dogs[dog_id] for slug, dogs in self.labels.items() if dog_id in dogs}


def binarize_traits(scores: list[TraitScore]) -> TraitLabels:
    """Label high iff score > cohort median (median ties go low).

    Traits with a single distinct score across the cohort are excluded and
    reported rather than raising, so one flat trait cannot block the rest.
    """
    by_trait: dict[str, list[TraitScore]] = {}
    for s in scores:
        by_trait.setdefault(s.slug, []).append(s)

    labels: dict[str, dict[str, int]] = {}
    medians: dict[str, float] = {}
    excluded: list[str] = []
    for slug, entries in by_trait.items():
        vals = np.array([e.score for e in entries])
        if len(vals) < 2:
            raise DegenerateTrait(f"{slug}: need >= 2 dogs, got {len(vals)}")
        med = float(np.median(vals))
        if np.all(vals == vals[0]):
            excluded.append(slug)
            continue
        medians[slug] = med
        labels[slug] = {e.dog_id: int(e.score > med) for e in entries}
    if not labels:
        raise DegenerateTrait(f"all traits degenerate: {excluded}")
    for slug in excluded:
        logger.warning("trait %s excluded: identical score across cohort", slug)
    return TraitLabels(labels=labels, medians=medians, excluded=excluded)
