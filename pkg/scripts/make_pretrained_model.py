"""Regenerate the shipped activity model from a dedicated synthetic cohort.

Run from the repo root:  python scripts/make_pretrained_model.py
"""

from pathlib import Path

from collarlab.activity import ForestConfig
from collarlab.pipeline import desk_profile, train_activity_model
from collarlab.synthgen import CohortConfig, generate_cohort

OUT = Path(__file__).resolve().parents[1] / "src" / "collarlab" / "data" / "pretrained_activity.json"

TRAINING_SEED = 90210  # cohort reserved for the shipped model; not reused in tests


def main() -> None:
    cfg = CohortConfig(n_dogs=6, n_days=2, seed=TRAINING_SEED)
    cohort = generate_cohort(cfg)
    model = train_activity_model(
        cohort,
        dog_indices=list(range(cfg.n_dogs)),
        cfg=desk_profile(),
        forest_cfg=ForestConfig(n_trees=100, seed=TRAINING_SEED),
        max_windows_per_class=1200,
    )
    OUT.write_text(model.to_json())
    print(f"wrote {OUT} ({OUT.stat().st_size / 1024:.0f} KiB, "
          f"oob accuracy {model.forest.oob_accuracy:.4f})")


if __name__ == "__main__":
    main()
