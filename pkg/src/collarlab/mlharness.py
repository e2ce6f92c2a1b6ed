"""Trait-inference experiments: PCA to 95% variance, RF/NB/majority models,
leave-k-dogs-out cross-validation, AUC scoring, and the grid reports.
"""

from __future__ import annotations

import logging
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .activity import ForestConfig, predict_posteriors, train_forest
from .errors import InfeasibleSplit, SingleClass, SingleClassTest
from .features.matrix import GROUP_PRESETS, FeatureMatrix

logger = logging.getLogger(__name__)

MODELS = ("baseline", "rf", "nb")
GRID_PERIODS = ("N", "M", "A", "ALL")
PCA_VARIANCE = 0.95


# --------------------------------------------------------------------------
# PCA


@dataclass
class PcaProjection:
    mean: np.ndarray
    std: np.ndarray
    components: np.ndarray               # (k, F)
    explained_variance_ratio: np.ndarray  # per retained component
    k: int

    def transform(self, X: np.ndarray) -> np.ndarray:
        z = (np.asarray(X, dtype=np.float64) - self.mean) / self.std
        return z @ self.components.T


def pca_fit(X_train: np.ndarray, variance: float = PCA_VARIANCE) -> PcaProjection:
    """Z-score with training statistics, then keep the smallest k components
    reaching the cumulative explained-variance target.

    Sign convention: the largest-|loading| entry of each component is
    positive, so projections are reproducible across eigensolvers.
    """
    X = np.asarray(X_train, dtype=np.float64)
    if X.ndim != 2 or len(X) < 2:
        raise ValueError("PCA needs a 2-D matrix with >= 2 rows")
    mean = X.mean(axis=0)
    std = np.maximum(X.std(axis=0), 1e-12)
    z = (X - mean) / std
    cov = np.cov(z, rowvar=False, ddof=1).reshape(X.shape[1], X.shape[1])
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.maximum(eigvals[order], 0.0)
    eigvecs = eigvecs[:, order]
    total = eigvals.sum()
    if total <= 0:
        raise ValueError("training matrix has no variance")
    ratios = eigvals / total
    cum = np.cumsum(ratios)
    k = int(np.searchsorted(cum, variance - 1e-12) + 1)
    n_pos = int((eigvals > 1e-12).sum())
    if k > n_pos:  # rank deficient: use every informative direction
        logger.warning("rank-deficient PCA: wanted %d components, keeping %d", k, n_pos)
        k = max(n_pos, 1)
    comps = eigvecs[:, :k].T.copy()
    for i in range(k):
        j = int(np.argmax(np.abs(comps[i])))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    return PcaProjection(
        mean=mean, std=std, components=comps,
        explained_variance_ratio=ratios[:k].copy(), k=k,
    )


# --------------------------------------------------------------------------
# Gaussian naive Bayes


@dataclass
class GaussianNb:
    classes: np.ndarray
    priors: np.ndarray
    means: np.ndarray   # (n_classes, F)
    vars: np.ndarray    # (n_classes, F)


def gaussian_nb_train(X: np.ndarray, y: np.ndarray, var_floor: float = 1e-9) -> GaussianNb:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    classes = np.unique(y)
    if len(classes) < 2:
        raise SingleClass("naive Bayes needs both classes in training data")
    means = np.vstack([X[y == c].mean(axis=0) for c in classes])
    vars_ = np.vstack([np.maximum(X[y == c].var(axis=0), var_floor) for c in classes])
    priors = np.array([(y == c).mean() for c in classes])
    return GaussianNb(classes=classes, priors=priors, means=means, vars=vars_)


def gaussian_nb_predict_proba(model: GaussianNb, X: np.ndarray) -> np.ndarray:
    """P(class == 1 | x) under class-conditional independent Gaussians."""
    X = np.asarray(X, dtype=np.float64)
    log_lik = np.empty((len(X), len(model.classes)))
    for i in range(len(model.classes)):
        d = X - model.means[i]
        log_lik[:, i] = (
            -0.5 * (d**2 / model.vars[i]).sum(axis=1)
            - 0.5 * np.log(2 * np.pi * model.vars[i]).sum()
            + np.log(model.priors[i])
        )
    log_lik -= log_lik.max(axis=1, keepdims=True)
    lik = np.exp(log_lik)
    proba = lik / lik.sum(axis=1, keepdims=True)
    col = int(np.flatnonzero(model.classes == 1)[0]) if 1 in model.classes else 1
    return proba[:, col]


# --------------------------------------------------------------------------
# AUC


def midranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    sx = x[order]
    i = 0
    while i < len(sx):
        j = i
        while j < len(sx) and sx[j] == sx[i]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + j - 1) + 1
        i = j
    return ranks


def auc(scores, labels) -> float:
    """Mann-Whitney AUC with midrank tie handling."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    nh = int((labels == 1).sum())
    nl = int((labels == 0).sum())
    if nh == 0 or nl == 0:
        raise SingleClassTest("AUC needs both classes in the test labels")
    ranks = midranks(scores)
    return float((ranks[labels == 1].sum() - nh * (nh + 1) / 2.0) / (nh * nl))


# --------------------------------------------------------------------------
# splits


@dataclass
class CvSplit:
    iteration: int
    test_dog_ids: tuple[str, ...]
    train_dog_ids: tuple[str, ...]
    seed: int


def make_cv_splits(
    dog_labels: dict[str, int],
    k: int = 4,
    iterations: int = 5,
    seed: int = 0,
    max_tries: int = 1000,
) -> list[CvSplit]:
    """Rejection-sampled leave-k-dogs-out splits with class-mixed test sets.

    Test sets differ across iterations unless combinatorially forced.
    """
    dogs = sorted(dog_labels)
    if len(dogs) <= k:
        raise InfeasibleSplit(f"{len(dogs)} dogs cannot leave {k} out")
    if len(set(dog_labels.values())) < 2:
        raise InfeasibleSplit("cohort labels contain a single class")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    splits: list[CvSplit] = []
    seen: set[frozenset] = set()
    for it in range(iterations):
        chosen = None
        fallback = None
        for _ in range(max_tries):
            test = frozenset(rng.choice(len(dogs), size=k, replace=False).tolist())
            test_dogs = frozenset(dogs[i] for i in test)
            if len({dog_labels[d] for d in test_dogs}) < 2:
                continue
            if test_dogs in seen:
                fallback = fallback or test_dogs
                continue
            chosen = test_dogs
            break
        if chosen is None:
            chosen = fallback
        if chosen is None:
            raise InfeasibleSplit(
                f"no class-mixed test set of size {k} found in {max_tries} tries"
            )
        seen.add(chosen)
        splits.append(
            CvSplit(
                iteration=it,
                test_dog_ids=tuple(sorted(chosen)),
                train_dog_ids=tuple(sorted(set(dogs) - chosen)),
                seed=seed,
            )
        )
    return splits


# --------------------------------------------------------------------------
# experiments


@dataclass
class ExperimentSpec:
    trait: str
    model: str                    # baseline | rf | nb
    preset: str                   # B1..B3, G1..G6
    period: str                   # N | M | A | ALL
    k: int = 4
    iterations: int = 5
    seed: int = 0
    pca_variance: float = PCA_VARIANCE

    def cell_id(self) -> str:
        return f"{self.trait}/{self.model}/{self.preset}/{self.period}"


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    auc_mean: float
    auc_std: float
    per_iteration: list[float]
    k_components: list[int]
    error: str | None = None


def _split_seed(seed: int, trait: str) -> int:
    # same folds for every model/preset of a trait, different across traits
    return (seed << 16) ^ zlib.crc32(trait.encode())


def _cell_seed(seed: int, spec: ExperimentSpec) -> int:
    return (seed << 1) ^ zlib.crc32(spec.cell_id().encode())


def run_experiment(spec: ExperimentSpec, matrix: FeatureMatrix) -> ExperimentResult:
    """Leave-k-dogs-out evaluation of one (trait, model, preset, period) cell.

    Scaling and PCA are fit on training rows only; test dogs never contribute
    to any fitted statistic.
    """
    if spec.model not in MODELS:
        raise ValueError(f"unknown model {spec.model!r}")
    groups = GROUP_PRESETS[spec.preset]
    cols = np.array(matrix.columns_for_groups(set(groups)), dtype=np.int64)
    y_all = matrix.label_column(spec.trait)
    dog_ids = np.array(matrix.dog_ids)
    dog_labels = {d: int(y_all[dog_ids == d][0]) for d in np.unique(dog_ids)}

    splits = make_cv_splits(
        dog_labels, k=spec.k, iterations=spec.iterations, seed=_split_seed(spec.seed, spec.trait)
    )
    aucs: list[float] = []
    ks: list[int] = []
    for split in splits:
        train_rows = np.flatnonzero(np.isin(dog_ids, split.train_dog_ids))
        test_rows = np.flatnonzero(np.isin(dog_ids, split.test_dog_ids))
        y_train = y_all[train_rows]
        y_test = y_all[test_rows]

        if spec.model == "baseline" or len(cols) == 0:
            scores = np.full(len(test_rows), 0.5)
            aucs.append(auc(scores, y_test))
            ks.append(0)
            continue

        X = matrix.X[:, cols]
        keep = np.flatnonzero(X[train_rows].std(axis=0) > 0)
        if len(keep) == 0 or len(set(y_train.tolist())) < 2:
            scores = np.full(len(test_rows), 0.5)
            aucs.append(auc(scores, y_test))
            ks.append(0)
            continue
        Xk = X[:, keep]
        pca = pca_fit(Xk[train_rows], variance=spec.pca_variance)
        Z_train = pca.transform(Xk[train_rows])
        Z_test = pca.transform(Xk[test_rows])
        ks.append(pca.k)

        if spec.model == "rf":
            cell_seed = _cell_seed(spec.seed, spec) + split.iteration
            forest = train_forest(
                Z_train,
                y_train,
                ForestConfig(n_trees=100, seed=cell_seed),
                manifest_id=f"pca{pca.k}",
            )
            post = predict_posteriors(forest, Z_test)
            denom = post[:, 0] + post[:, 1]
            scores = np.divide(post[:, 1], denom, out=np.full(len(post), 0.5), where=denom > 0)
        else:
            nb = gaussian_nb_train(Z_train, y_train)
            scores = gaussian_nb_predict_proba(nb, Z_test)
        aucs.append(auc(scores, y_test))

    arr = np.array(aucs)
    return ExperimentResult(
        spec=spec,
        auc_mean=float(arr.mean()),
        auc_std=float(arr.std()),
        per_iteration=[float(v) for v in arr],
        k_components=ks,
    )


# --------------------------------------------------------------------------
# the full grid


@dataclass
class GridResult:
    results: dict[str, ExperimentResult] = field(default_factory=dict)

    def get(self, trait: str, model: str, preset: str, period: str) -> ExperimentResult | None:
        return self.results.get(f"{trait}/{model}/{preset}/{period}")

    def best_for_trait(
        self, trait: str, model: str = "rf", periods=GRID_PERIODS, presets=None
    ) -> tuple[str, str, ExperimentResult] | None:
        """(period, preset, result) of the best available cell for a trait."""
        presets = presets or [p for p in GROUP_PRESETS if p.startswith("G")]
        best = None
        for period in periods:
            for preset in presets:
                r = self.get(trait, model, preset, period)
                if r is None or r.error:
                    continue
                if best is None or r.auc_mean > best[2].auc_mean:
                    best = (period, preset, r)
        return best


def run_grid(
    traits: list[str],
    models: list[str],
    presets: list[str],
    periods: list[str],
    matrices: dict[str, FeatureMatrix],
    seed: int = 0,
    workers: int = 1,
) -> GridResult:
    """Run every (trait, model, preset, period) cell; failed cells are marked
    unavailable and the grid continues."""
    cells = [
        ExperimentSpec(trait=t, model=m, preset=g, period=p, seed=seed)
        for t in traits for m in models for g in presets for p in periods
    ]

    def run_cell(spec: ExperimentSpec) -> ExperimentResult:
        try:
            return run_experiment(spec, matrices[spec.period])
        except Exception as e:  # noqa: BLE001 - cell isolation is intentional
            logger.warning("cell %s unavailable: %s", spec.cell_id(), e)
            return ExperimentResult(
                spec=spec, auc_mean=float("nan"), auc_std=float("nan"),
                per_iteration=[], k_components=[], error=str(e),
            )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_cell, cells))
    else:
        results = [run_cell(c) for c in cells]

    grid = GridResult()
    for r in results:
        grid.results[r.spec.cell_id()] = r
    return grid


def _fmt(r: ExperimentResult | None) -> str:
    if r is None or r.error:
        return "n/a"
    return f"{r.auc_mean:.2f} ({r.auc_std:.2f})"


def table2_csv(grid: GridResult, traits: list[str], models: list[str]) -> str:
    """Model x trait AUC table (sensed features, all periods)."""
    lines = ["model," + ",".join(traits)]
    for model in ["baseline"] + [m for m in models if m != "baseline"]:
        row = [_fmt(grid.get(t, model, "G5" if model != "baseline" else "B1", "ALL")) for t in traits]
        lines.append(model + "," + ",".join(row))
    return "\n".join(lines) + "\n"


def table3_csv(grid: GridResult, traits: list[str], model: str = "rf") -> str:
    """Feature-preset x trait AUC table for one model."""
    lines = ["preset," + ",".join(traits)]
    for preset in GROUP_PRESETS:
        use_model = "baseline" if preset == "B1" else model
        row = [_fmt(grid.get(t, use_model, preset, "ALL")) for t in traits]
        lines.append(preset + "," + ",".join(row))
    return "\n".join(lines) + "\n"


def fig6_7_csv(grid: GridResult, traits: list[str], model: str = "rf") -> str:
    """Per-period best preset and AUC per trait (plot-ready long format)."""
    lines = ["trait,period,best_preset,auc_mean,auc_std"]
    sensed_presets = [p for p in GROUP_PRESETS if p.startswith("G")]
    for trait in traits:
        for period in GRID_PERIODS:
            best = grid.best_for_trait(trait, model=model, periods=[period], presets=sensed_presets)
            if best is None:
                lines.append(f"{trait},{period},n/a,nan,nan")
            else:
                _, preset, r = best
                lines.append(f"{trait},{period},{preset},{r.auc_mean:.4f},{r.auc_std:.4f}")
    return "\n".join(lines) + "\n"
