"""Synthetic cohort generator: semi-Markov activity schedules, per-level IMU
textures, device calibration truth, demographics, and questionnaire responses
with configurable trait -> behavior couplings planted at the schedule level.

Sessions are regenerated on demand from (seed, dog, day) so a cohort object
stays small; identical seeds give byte-identical logs.
"""

from __future__ import annotations

import datetime
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import InvalidConfig, IoFailure
from .ingest import DEFAULT_ACCEL_SCALE, DEFAULT_GYRO_SCALE, SensorSession, serialize_binary
from .personality import (
    TRAIT_SLUGS,
    QuestionnaireSpec,
    dpq_spec,
    mcpqr_spec,
    tipi_spec,
    trait_slug,
)

DAY_MS = 24 * 3600 * 1000
CAPTURE_S = 18 * 3600
PERIOD_S = 6 * 3600
LEVELS = ("sleep", "sedentary", "light", "moderate_vigorous")
LEVEL_INDEX = {name: i for i, name in enumerate(LEVELS)}
PCT_FEATURES = ("pct_sleep", "pct_sedentary", "pct_light", "pct_modvig")

# sleep-heavy nights (~63% sleep) and active mornings; afternoon sits between
DEFAULT_OCCUPANCY = {
    "N": (0.633, 0.22, 0.10, 0.047),
    "M": (0.407, 0.365, 0.135, 0.093),
    "A": (0.48, 0.32, 0.12, 0.08),
}

DEFAULT_MEAN_DURATION_S = {
    "sleep": 1500.0,
    "sedentary": 420.0,
    "light": 200.0,
    "moderate_vigorous": 150.0,
}


@dataclass(frozen=True)
class Coupling:
    trait: str        # trait slug, e.g. dpq_excitability
    statistic: str    # one of PCT_FEATURES
    period: str       # N | M | A
    strength: float   # 0..1

    @property
    def feature_name(self) -> str:
        return f"{self.statistic} ({self.period})"


def default_couplings() -> list[Coupling]:
    return [
        Coupling(trait=trait_slug("DPQ", "Excitability"), statistic="pct_modvig",
                 period="M", strength=0.8),
        Coupling(trait=trait_slug("MCPQR", "Amicability"), statistic="pct_light",
                 period="A", strength=0.8),
    ]


@dataclass
class CohortConfig:
    n_dogs: int = 12
    n_days: int = 7
    seed: int = 0
    rate_hz: float = 4.0          # desk-scale default; 50.0 reproduces study-sized logs
    start_date: str = "2022-07-04"
    occupancy: dict = field(default_factory=lambda: {k: tuple(v) for k, v in DEFAULT_OCCUPANCY.items()})
    mean_duration_s: dict = field(default_factory=lambda: dict(DEFAULT_MEAN_DURATION_S))
    couplings: list[Coupling] = field(default_factory=default_couplings)
    coupling_gain: float = 1.5    # occupancy shift per unit strength*score
    texture_gain: float = 0.6     # movement-intensity shift per unit strength*score
    day_jitter: float = 0.12      # lognormal day-level occupancy jitter

    def validate(self) -> None:
        if self.n_dogs < 1 or self.n_days < 1:
            raise InvalidConfig("n_dogs and n_days must be positive")
        step = 1000.0 / self.rate_hz
        if abs(step - round(step)) > 1e-9:
            raise InvalidConfig(f"rate_hz {self.rate_hz} must divide 1000 ms evenly")
        for period, occ in self.occupancy.items():
            if len(occ) != 4 or any(v < 0 for v in occ) or abs(sum(occ) - 1.0) > 1e-9:
                raise InvalidConfig(f"occupancy for {period} is not a 4-simplex: {occ}")
        for c in self.couplings:
            if not 0.0 <= c.strength <= 1.0:
                raise InvalidConfig(f"coupling strength {c.strength} outside [0, 1]")
            if c.statistic not in PCT_FEATURES:
                raise InvalidConfig(f"unknown coupling statistic {c.statistic!r}")
            if c.period not in ("N", "M", "A"):
                raise InvalidConfig(f"unknown coupling period {c.period!r}")
            if c.trait not in TRAIT_SLUGS:
                raise InvalidConfig(f"unknown coupled trait {c.trait!r}")

    def with_strength(self, strength: float) -> "CohortConfig":
        cfg = CohortConfig(**{**asdict(self), "couplings": [
            Coupling(c.trait, c.statistic, c.period, strength) for c in self.couplings
        ]})
        return cfg


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


# stream ids for spawn keys (keep stable: changing them changes every cohort)
_K_DOG = 1
_K_SCHEDULE = 2
_K_TEXTURE = 3
_K_QUESTIONNAIRE = 4


def _scaled_rank_scores(values: np.ndarray) -> np.ndarray:
    """Map cohort values to [-1, 1] by rank (midranks for ties)."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    ranks[order] = np.arange(1, len(values) + 1)
    # average ranks over ties
    for v in np.unique(values):
        m = values == v
        ranks[m] = ranks[m].mean()
    return 2.0 * (ranks - 0.5) / len(values) - 1.0


def _responses_for_score(
    spec: QuestionnaireSpec, factor: str, target: float, rng: np.random.Generator
) -> tuple[dict[str, int], float]:
    """Integer item responses whose (reverse-coded) factor mean ~= target."""
    items = [it for it in spec.items if it.factor == factor]
    lo, hi = spec.scale_min, spec.scale_max
    n = len(items)
    total = int(np.clip(round(target * n), lo * n, hi * n))
    coded = np.clip(np.round(target + rng.normal(0, 0.6, size=n)), lo, hi).astype(int)
    # nudge to the exact total so the achieved mean is on the 1/n grid
    guard = 0
    while coded.sum() != total and guard < 10 * n * (hi - lo):
        guard += 1
        if coded.sum() > total:
            cand = np.flatnonzero(coded > lo)
            coded[rng.choice(cand)] -= 1
        else:
            cand = np.flatnonzero(coded < hi)
            coded[rng.choice(cand)] += 1
    achieved = float(coded.mean())
    responses = {}
    for it, c in zip(items, coded):
        responses[it.item_id] = int(lo + hi - c) if it.reverse else int(c)
    return responses, achieved


@dataclass
class DogProfile:
    dog_id: str
    demographics: dict[str, float]
    owner_info: dict[str, float]
    true_scores: dict[str, float]
    dpq_responses: dict[str, int]
    mcpqr_responses: dict[str, int]
    tipi_responses: dict[str, int]
    cal_gain: np.ndarray
    cal_offset: np.ndarray


class Cohort:
    """Deterministic synthetic cohort; sessions materialize on demand."""

    def __init__(self, cfg: CohortConfig):
        cfg.validate()
        self.cfg = cfg
        self.dog_ids = [f"dog_{i + 1:02d}" for i in range(cfg.n_dogs)]
        y, m, d = (int(v) for v in cfg.start_date.split("-"))
        self._day0 = (datetime.date(y, m, d) - datetime.date(1970, 1, 1)).days
        self._dpq = dpq_spec()
        self._mcpqr = mcpqr_spec()
        self._tipi = tipi_spec()
        self.dogs = self._build_dogs()
        self._occupancy = self._coupled_occupancies()

    # -- dog-level draws ----------------------------------------------------

    def _build_dogs(self) -> list[DogProfile]:
        cfg = self.cfg
        latents: dict[str, np.ndarray] = {}
        for q, spec in (("DPQ", self._dpq), ("MCPQR", self._mcpqr)):
            for factor in spec.factors:
                slug = trait_slug(q, factor)
                rng = _rng(cfg.seed, _K_QUESTIONNAIRE, hash_slug(slug))
                center = (spec.scale_min + spec.scale_max) / 2.0
                spread = (spec.scale_max - spec.scale_min) / 5.0
                latents[slug] = np.clip(
                    rng.normal(center, spread, size=cfg.n_dogs),
                    spec.scale_min, spec.scale_max,
                )

        dogs = []
        for i, dog_id in enumerate(self.dog_ids):
            rng = _rng(cfg.seed, _K_DOG, i)
            demographics = {
                "sex": float(rng.integers(0, 2)),
                "weight_kg": float(np.round(rng.uniform(7, 40), 1)),
                "age_years": float(np.round(rng.uniform(1, 11), 1)),
                "neutered": float(rng.integers(0, 2)),
                "training_rating": float(rng.integers(1, 8)),
            }
            tipi_latent = np.clip(rng.normal(4.5, 1.0, size=5), 1, 7)
            tipi_responses: dict[str, int] = {}
            owner_info = {"owner_sex": float(rng.integers(0, 2))}
            for f_i, factor in enumerate(self._tipi.factors):
                resp, achieved = _responses_for_score(self._tipi, factor, float(tipi_latent[f_i]), rng)
                tipi_responses.update(resp)
                owner_info[f"owner_tipi_{factor.lower().replace(' ', '_')}"] = achieved

            true_scores: dict[str, float] = {}
            dpq_responses: dict[str, int] = {}
            mcpqr_responses: dict[str, int] = {}
            for q, spec, sink in (
                ("DPQ", self._dpq, dpq_responses),
                ("MCPQR", self._mcpqr, mcpqr_responses),
            ):
                for factor in spec.factors:
                    slug = trait_slug(q, factor)
                    resp, achieved = _responses_for_score(spec, factor, float(latents[slug][i]), rng)
                    sink.update(resp)
                    true_scores[slug] = achieved

            dogs.append(
                DogProfile(
                    dog_id=dog_id,
                    demographics=demographics,
                    owner_info=owner_info,
                    true_scores=true_scores,
                    dpq_responses=dpq_responses,
                    mcpqr_responses=mcpqr_responses,
                    tipi_responses=tipi_responses,
                    cal_gain=rng.uniform(0.96, 1.04, size=3),
                    cal_offset=rng.uniform(-0.04, 0.04, size=3),
                )
            )
        return dogs

    def _coupled_occupancies(self) -> list[dict[str, np.ndarray]]:
        """Per-dog occupancy targets and movement-intensity factors after
        applying the planted couplings.

        A coupling shifts the occupancy of its target level and scales the
        movement textures of its period, so the trait imprints on the whole
        correlated feature block rather than a single column.
        """
        cfg = self.cfg
        per_dog = [
            {p: np.array(cfg.occupancy[p], dtype=np.float64) for p in ("N", "M", "A")}
            for _ in self.dog_ids
        ]
        self._intensity = [{p: 1.0 for p in ("N", "M", "A")} for _ in self.dog_ids]
        for coupling in cfg.couplings:
            scores = np.array([d.true_scores[coupling.trait] for d in self.dogs])
            scaled = _scaled_rank_scores(scores)
            # monotone transfer, steepened at the cohort median: questionnaire
            # means quantize to a coarse grid, and median ties would otherwise
            # leave label-low dogs behaving like label-high neighbours
            step = np.where(scores > np.median(scores), 1.0, -1.0)
            drive = np.clip(0.55 * scaled + 0.55 * step, -1.0, 1.0)
            lvl = PCT_FEATURES.index(coupling.statistic)
            for i in range(cfg.n_dogs):
                occ = per_dog[i][coupling.period]
                factor = 1.0 + cfg.coupling_gain * coupling.strength * drive[i]
                occ[lvl] = max(occ[lvl] * factor, 0.005)
                per_dog[i][coupling.period] = occ / occ.sum()
                self._intensity[i][coupling.period] *= max(
                    1.0 + cfg.texture_gain * coupling.strength * drive[i], 0.3
                )
        return per_dog

    # -- schedules ----------------------------------------------------------

    def day_date(self, day_idx: int) -> datetime.date:
        return datetime.date(1970, 1, 1) + datetime.timedelta(days=self._day0 + day_idx)

    def day_start_ms(self, day_idx: int) -> int:
        return (self._day0 + day_idx) * DAY_MS

    def schedule(self, dog_idx: int, day_idx: int) -> list[tuple[int, int, int]]:
        """Semi-Markov (start_ms, end_ms, level) spans over [00:00, 18:00)."""
        cfg = self.cfg
        rng = _rng(cfg.seed, _K_SCHEDULE, dog_idx, day_idx)
        day0 = self.day_start_ms(day_idx)
        durations = np.array([cfg.mean_duration_s[l] for l in LEVELS])
        spans: list[tuple[int, int, int]] = []
        for p_i, period in enumerate(("N", "M", "A")):
            occ = self._occupancy[dog_idx][period]
            occ = occ * np.exp(rng.normal(0.0, cfg.day_jitter, size=4))
            occ = occ / occ.sum()
            t = p_i * PERIOD_S
            end = (p_i + 1) * PERIOD_S
            realized = np.zeros(4)
            while t < end:
                # draw the next level by remaining need so that boundary
                # truncation cannot starve the long-duration states
                need = np.maximum(occ * PERIOD_S - realized, 0.0) + 0.02 * occ * PERIOD_S
                entry = need / durations
                entry = entry / entry.sum()
                lvl = int(rng.choice(4, p=entry))
                dur = max(30.0, rng.gamma(2.0, durations[lvl] / 2.0))
                stop = min(t + dur, end)
                realized[lvl] += stop - t
                spans.append((day0 + int(t * 1000), day0 + int(stop * 1000), lvl))
                t = stop
        return spans

    def window_truth(self, dog_idx: int, day_idx: int) -> tuple[np.ndarray, np.ndarray]:
        """Ground-truth 60 s window labels by majority overlap."""
        from .activity import labels_from_spans

        day0 = self.day_start_ms(day_idx)
        starts = day0 + np.arange(CAPTURE_S // 60, dtype=np.int64) * 60_000
        return starts, labels_from_spans(starts, self.schedule(dog_idx, day_idx))

    # -- IMU emission --------------------------------------------------------

    def session(self, dog_idx: int, day_idx: int) -> SensorSession:
        """Raw counts for one dog-day (inverse-calibrated, quantized)."""
        cfg = self.cfg
        dog = self.dogs[dog_idx]
        rng = _rng(cfg.seed, _K_TEXTURE, dog_idx, day_idx)
        rate = cfg.rate_hz
        step_ms = int(round(1000.0 / rate))
        n = int(CAPTURE_S * rate)
        day0 = self.day_start_ms(day_idx)
        ts = day0 + np.arange(n, dtype=np.int64) * step_ms

        accel = np.empty((n, 3))
        gyro = np.empty((n, 3))
        posture = _random_unit(rng)
        for start_ms, end_ms, lvl in self.schedule(dog_idx, day_idx):
            i0 = int((start_ms - day0) // step_ms)
            i1 = min(int(np.ceil((end_ms - day0) / step_ms)), n)
            if i1 <= i0:
                continue
            m = i1 - i0
            t = np.arange(m) / rate
            period = ("N", "M", "A")[min(int((start_ms - day0) // (PERIOD_S * 1000)), 2)]
            scale = self._intensity[dog_idx][period]
            if lvl == 0:  # sleep: gravity plus tiny noise; occasional posture shift
                if rng.random() < 0.45:
                    posture = _random_unit(rng)
                accel[i0:i1] = posture + rng.normal(0, 0.005, size=(m, 3))
                gyro[i0:i1] = rng.normal(0, 0.2, size=(m, 3))
            elif lvl == 1:  # sedentary: low-level jitter
                if rng.random() < 0.25:
                    posture = _random_unit(rng)
                accel[i0:i1] = posture + rng.normal(0, 0.03 * scale, size=(m, 3))
                gyro[i0:i1] = rng.normal(0, 3.0 * scale, size=(m, 3))
            else:
                axis = _random_unit(rng)
                phase = rng.uniform(0, 2 * np.pi)
                if lvl == 2:  # light: gait oscillation ~0.3 g
                    amp = max(0.15, rng.normal(0.30, 0.05)) * scale
                    freq = rng.uniform(1.0, min(2.0, 0.45 * rate))
                    noise, g_amp, g_noise = 0.05, 25.0 * scale, 2.0
                else:  # moderate-vigorous: ~1.2 g bursts with gyro co-activation
                    amp = max(0.8, rng.normal(1.2, 0.15)) * scale
                    freq = rng.uniform(min(2.0, 0.35 * rate), min(4.0, 0.45 * rate))
                    noise, g_amp, g_noise = 0.10, 80.0 * scale, 5.0
                osc = amp * np.sin(2 * np.pi * freq * t + phase)
                accel[i0:i1] = posture + axis * osc[:, None] + rng.normal(0, noise, size=(m, 3))
                gyro[i0:i1] = (
                    axis * (g_amp * np.sin(2 * np.pi * freq * t + phase + 0.7))[:, None]
                    + rng.normal(0, g_noise, size=(m, 3))
                )

        measured = (accel - dog.cal_offset) / dog.cal_gain
        acc_counts = np.clip(np.round(measured / DEFAULT_ACCEL_SCALE), -32768, 32767)
        gyr_counts = np.clip(np.round(gyro / DEFAULT_GYRO_SCALE), -32768, 32767)
        channels = np.hstack([acc_counts, gyr_counts]).astype(np.int16)
        return SensorSession(
            dog_id=dog.dog_id,
            timestamps_ms=ts,
            channels=channels,
            nominal_rate_hz=rate,
            accel_scale=DEFAULT_ACCEL_SCALE,
            gyro_scale=DEFAULT_GYRO_SCALE,
        )

    # -- ground truth --------------------------------------------------------

    def ground_truth_manifest(self) -> dict:
        return {
            "config": {
                "n_dogs": self.cfg.n_dogs,
                "n_days": self.cfg.n_days,
                "seed": self.cfg.seed,
                "rate_hz": self.cfg.rate_hz,
                "start_date": self.cfg.start_date,
                "occupancy": {k: list(v) for k, v in self.cfg.occupancy.items()},
                "coupling_gain": self.cfg.coupling_gain,
            },
            "couplings": [
                {
                    "trait": c.trait, "statistic": c.statistic,
                    "period": c.period, "strength": c.strength,
                    "feature_name": c.feature_name,
                }
                for c in self.cfg.couplings
            ],
            "dogs": {
                d.dog_id: {
                    "true_scores": d.true_scores,
                    "calibration_gain": d.cal_gain.tolist(),
                    "calibration_offset": d.cal_offset.tolist(),
                    "demographics": d.demographics,
                    "owner_info": d.owner_info,
                }
                for d in self.dogs
            },
        }


def hash_slug(slug: str) -> int:
    import zlib

    return zlib.crc32(slug.encode())


def _random_unit(rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def generate_cohort(cfg: CohortConfig) -> Cohort:
    return Cohort(cfg)


def emit_fixture(cohort: Cohort, out_dir) -> dict:
    """Write logs, questionnaire/demographic CSVs, truth labels, and the
    ground-truth manifest under out_dir. Returns a written-file summary."""
    from pathlib import Path

    out = Path(out_dir)
    try:
        (out / "logs").mkdir(parents=True, exist_ok=True)
        (out / "truth").mkdir(parents=True, exist_ok=True)

        n_records = 0
        for i, dog in enumerate(cohort.dogs):
            for day in range(cohort.cfg.n_days):
                session = cohort.session(i, day)
                date = cohort.day_date(day).isoformat()
                path = out / "logs" / f"{dog.dog_id}_{date}.pklg"
                path.write_bytes(serialize_binary(session))
                n_records += len(session)
                starts, labels = cohort.window_truth(i, day)
                lines = ["window_start_ms,level"]
                lines += [f"{int(s)},{LEVELS[l]}" for s, l in zip(starts, labels)]
                (out / "truth" / f"{dog.dog_id}_{date}.csv").write_text("\n".join(lines) + "\n")

        def write_responses(name: str, getter):
            lines = ["dog_id,item_id,response"]
            for dog in cohort.dogs:
                for item_id, resp in sorted(getter(dog).items()):
                    lines.append(f"{dog.dog_id},{item_id},{resp}")
            (out / name).write_text("\n".join(lines) + "\n")

        write_responses("responses_dpq.csv", lambda d: d.dpq_responses)
        write_responses("responses_mcpqr.csv", lambda d: d.mcpqr_responses)
        write_responses("owner_tipi.csv", lambda d: d.tipi_responses)

        demo_lines = ["dog_id,sex,weight_kg,age_years,neutered,training_rating,owner_sex"]
        for dog in cohort.dogs:
            d = dog.demographics
            demo_lines.append(
                f"{dog.dog_id},{int(d['sex'])},{d['weight_kg']},{d['age_years']},"
                f"{int(d['neutered'])},{int(d['training_rating'])},{int(dog.owner_info['owner_sex'])}"
            )
        (out / "demographics.csv").write_text("\n".join(demo_lines) + "\n")

        (out / "ground_truth.json").write_text(
            json.dumps(cohort.ground_truth_manifest(), indent=2, sort_keys=True)
        )
    except OSError as e:
        raise IoFailure(f"cannot write fixture to {out}: {e}") from e
    return {"n_dogs": cohort.cfg.n_dogs, "n_days": cohort.cfg.n_days, "n_records": n_records}
