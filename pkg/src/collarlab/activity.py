"""Activity-level classification: balanced random forest over 60 s window
features, HMM (Viterbi) smoothing, and evaluation against reference labels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyInput,
    ManifestMismatch,
    NoOverlap,
    ShapeMismatch,
    SingleClassTraining,
)
from .features.manifests import WINDOW_MANIFEST_ID

ACTIVITY_LEVELS = ("sleep", "sedentary", "light", "moderate_vigorous")
LEVEL_INDEX_BY_NAME = {name: i for i, name in enumerate(ACTIVITY_LEVELS)}
N_CLASSES = len(ACTIVITY_LEVELS)
HMM_EPS = 1e-6
EMISSION_FLOOR = 1e-12
WINDOW_MS = 60_000


@dataclass
class ForestConfig:
    n_trees: int = 100
    mtry: int | None = None          # default floor(sqrt(n_features))
    min_leaf: int = 1
    max_depth: int | None = None
    max_per_class: int | None = None  # cap on the balanced bootstrap size
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "n_trees": self.n_trees, "mtry": self.mtry, "min_leaf": self.min_leaf,
            "max_depth": self.max_depth, "max_per_class": self.max_per_class,
            "seed": self.seed,
        }


@dataclass
class Tree:
    feature: np.ndarray      # int32; -1 marks a leaf
    threshold: np.ndarray    # float64
    left: np.ndarray         # int32
    right: np.ndarray        # int32
    hist: np.ndarray         # (n_nodes, n_classes) leaf class counts

    def predict_hist(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int32)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            nd = node[idx]
            go_left = X[idx, self.feature[nd]] <= self.threshold[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return self.hist[node]


@dataclass
class ForestModel:
    trees: list[Tree]
    cfg: ForestConfig
    n_features: int
    manifest_id: str = WINDOW_MANIFEST_ID
    class_priors: np.ndarray = field(default_factory=lambda: np.full(N_CLASSES, 0.25))
    oob_accuracy: float | None = None

    def to_json(self) -> str:
        return json.dumps(
            {
                "format": "collarlab-forest-v1",
                "manifest_id": self.manifest_id,
                "n_features": self.n_features,
                "cfg": self.cfg.to_dict(),
                "class_priors": self.class_priors.tolist(),
                "oob_accuracy": self.oob_accuracy,
                "trees": [
                    {
                        "feature": t.feature.tolist(),
                        "threshold": t.threshold.tolist(),
                        "left": t.left.tolist(),
                        "right": t.right.tolist(),
                        "hist": t.hist.tolist(),
                    }
                    for t in self.trees
                ],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "ForestModel":
        d = json.loads(text)
        trees = [
            Tree(
                feature=np.asarray(t["feature"], dtype=np.int32),
                threshold=np.asarray(t["threshold"], dtype=np.float64),
                left=np.asarray(t["left"], dtype=np.int32),
                right=np.asarray(t["right"], dtype=np.int32),
                hist=np.asarray(t["hist"], dtype=np.float64),
            )
            for t in d["trees"]
        ]
        return cls(
            trees=trees,
            cfg=ForestConfig(**d["cfg"]),
            n_features=int(d["n_features"]),
            manifest_id=d["manifest_id"],
            class_priors=np.asarray(d["class_priors"], dtype=np.float64),
            oob_accuracy=d.get("oob_accuracy"),
        )


class _TreeBuilder:
    def __init__(self, X, y, mtry, min_leaf, max_depth, rng):
        self.X = X
        self.y = y
        self.mtry = mtry
        self.min_leaf = min_leaf
        self.max_depth = max_depth if max_depth is not None else np.inf
        self.rng = rng
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.hist: list[np.ndarray] = []

    def _new_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.hist.append(np.zeros(N_CLASSES))
        return len(self.feature) - 1

    def build(self, rows: np.ndarray) -> int:
        root = self._new_node()
        stack = [(root, rows, 0)]
        while stack:
            node, node_rows, depth = stack.pop()
            y = self.y[node_rows]
            counts = np.bincount(y, minlength=N_CLASSES).astype(float)
            if (
                len(node_rows) < 2 * self.min_leaf
                or depth >= self.max_depth
                or counts.max() == len(node_rows)
            ):
                self.hist[node] = counts
                continue
            split = self._best_split(node_rows)
            if split is None:
                self.hist[node] = counts
                continue
            feat, thr = split
            go_left = self.X[node_rows, feat] <= thr
            self.feature[node] = feat
            self.threshold[node] = thr
            left_node = self._new_node()
            right_node = self._new_node()
            self.left[node] = left_node
            self.right[node] = right_node
            stack.append((right_node, node_rows[~go_left], depth + 1))
            stack.append((left_node, node_rows[go_left], depth + 1))
        return root

    def _best_split(self, rows: np.ndarray):
        n_features = self.X.shape[1]
        candidates = self.rng.choice(n_features, size=min(self.mtry, n_features), replace=False)
        best = self._search(rows, candidates)
        if best is None:
            rest = np.setdiff1d(np.arange(n_features), candidates)
            best = self._search(rows, rest)
        return best

    def _search(self, rows: np.ndarray, feats: np.ndarray):
        y = self.y[rows]
        n = len(rows)
        best_score = -np.inf
        best = None
        onehot = np.zeros((n, N_CLASSES))
        onehot[np.arange(n), y] = 1.0
        for feat in feats:
            v = self.X[rows, feat]
            order = np.argsort(v, kind="stable")
            vs = v[order]
            valid = vs[:-1] < vs[1:]
            if not valid.any():
                continue
            cum = np.cumsum(onehot[order], axis=0)[:-1]
            nl = np.arange(1, n)
            nr = n - nl
            ssl = (cum**2).sum(axis=1)
            ssr = ((cum[-1] + onehot[order[-1]]) - cum) ** 2
            ssr = ssr.sum(axis=1)
            score = ssl / nl + ssr / nr
            if self.min_leaf > 1:
                valid = valid & (nl >= self.min_leaf) & (nr >= self.min_leaf)
                if not valid.any():
                    continue
            score = np.where(valid, score, -np.inf)
            i = int(np.argmax(score))
            if score[i] > best_score:
                best_score = score[i]
                best = (int(feat), float((vs[i] + vs[i + 1]) / 2.0))
        return best

    def finish(self) -> Tree:
        return Tree(
            feature=np.asarray(self.feature, dtype=np.int32),
            threshold=np.asarray(self.threshold, dtype=np.float64),
            left=np.asarray(self.left, dtype=np.int32),
            right=np.asarray(self.right, dtype=np.int32),
            hist=np.vstack(self.hist),
        )


def train_forest(
    X: np.ndarray,
    y: np.ndarray,
    cfg: ForestConfig | None = None,
    manifest_id: str = WINDOW_MANIFEST_ID,
) -> ForestModel:
    """Balanced random forest: each tree sees a class-balanced bootstrap.

    Deterministic for a given (data, cfg.seed); per-tree RNG streams are
    derived from (seed, tree_index) so parallel and serial training agree.
    """
    cfg = cfg or ForestConfig()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or len(X) != len(y):
        raise ShapeMismatch(f"X {X.shape} does not match y {y.shape}")
    counts = np.bincount(y, minlength=N_CLASSES)
    present = np.flatnonzero(counts)
    if len(present) < 2:
        raise SingleClassTraining("training data holds fewer than 2 classes")
    n_per_class = int(counts[present].min())
    if cfg.max_per_class is not None:
        n_per_class = min(n_per_class, cfg.max_per_class)
    mtry = cfg.mtry if cfg.mtry is not None else int(np.sqrt(X.shape[1]))
    class_rows = [np.flatnonzero(y == c) for c in range(N_CLASSES)]

    trees = []
    oob_hist = np.zeros((len(X), N_CLASSES))
    for t in range(cfg.n_trees):
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(t,)))
        boot = np.concatenate([
            rng.choice(class_rows[c], size=n_per_class, replace=True)
            for c in present
        ])
        builder = _TreeBuilder(X, y, mtry, cfg.min_leaf, cfg.max_depth, rng)
        builder.build(boot)
        tree = builder.finish()
        trees.append(tree)
        oob = np.ones(len(X), dtype=bool)
        oob[boot] = False
        if oob.any():
            h = tree.predict_hist(X[oob])
            s = h.sum(axis=1, keepdims=True)
            oob_hist[oob] += np.divide(h, s, out=np.zeros_like(h), where=s > 0)

    voted = oob_hist.sum(axis=1) > 0
    oob_acc = float((oob_hist[voted].argmax(axis=1) == y[voted]).mean()) if voted.any() else None
    priors = counts[present] / counts[present].sum()
    full_priors = np.zeros(N_CLASSES)
    full_priors[present] = priors
    return ForestModel(
        trees=trees,
        cfg=cfg,
        n_features=X.shape[1],
        manifest_id=manifest_id,
        class_priors=full_priors,
        oob_accuracy=oob_acc,
    )


def predict_posteriors(model: ForestModel, X: np.ndarray, manifest_id: str | None = None) -> np.ndarray:
    """Posterior per row = mean of per-tree leaf class frequencies."""
    if manifest_id is not None and manifest_id != model.manifest_id:
        raise ManifestMismatch(f"model expects {model.manifest_id}, got {manifest_id}")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ManifestMismatch(
            f"feature count {X.shape[1] if X.ndim == 2 else '?'} != model {model.n_features}"
        )
    post = np.zeros((len(X), N_CLASSES))
    for tree in model.trees:
        h = tree.predict_hist(X)
        s = h.sum(axis=1, keepdims=True)
        post += np.divide(h, s, out=np.zeros_like(h), where=s > 0)
    return post / len(model.trees)


# --------------------------------------------------------------------------
# HMM smoothing


@dataclass
class HmmParams:
    initial: np.ndarray
    transition: np.ndarray

    def to_dict(self) -> dict:
        return {"initial": self.initial.tolist(), "transition": self.transition.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "HmmParams":
        return cls(
            initial=np.asarray(d["initial"], dtype=np.float64),
            transition=np.asarray(d["transition"], dtype=np.float64),
        )

    @classmethod
    def uniform(cls) -> "HmmParams":
        return cls(initial=np.full(N_CLASSES, 0.25), transition=np.full((N_CLASSES, N_CLASSES), 0.25))


def fit_hmm_transitions(label_sequences: list[np.ndarray]) -> HmmParams:
    """Floor-smoothed transition counts pooled over sequences; no transition
    is counted across sequence boundaries."""
    seqs = [np.asarray(s, dtype=np.int64) for s in label_sequences if len(s) > 0]
    if not seqs or not any(len(s) >= 2 for s in seqs):
        raise EmptyInput("need at least one sequence of length >= 2")
    trans = np.zeros((N_CLASSES, N_CLASSES))
    init = np.zeros(N_CLASSES)
    for s in seqs:
        init[s[0]] += 1
        np.add.at(trans, (s[:-1], s[1:]), 1.0)
    return HmmParams(initial=_floored_simplex(init), transition=_floored_simplex(trans))


def _floored_simplex(counts: np.ndarray) -> np.ndarray:
    """Normalize counts row-wise with every probability kept >= HMM_EPS."""
    p = np.atleast_2d(counts).astype(np.float64)
    p = p / np.maximum(p.sum(axis=1, keepdims=True), 1e-300)
    # clamp slightly above the floor so renormalizing cannot dip below it
    p = np.maximum(p, HMM_EPS * (1.0 + 8.0 * HMM_EPS))
    p = p / p.sum(axis=1, keepdims=True)
    return p if counts.ndim == 2 else p[0]


def viterbi_smooth(posteriors: np.ndarray, hmm: HmmParams) -> np.ndarray:
    """Most probable label path with classifier posteriors as emissions.

    Log-space Viterbi; argmax ties resolve to the lower class index.
    """
    post = np.asarray(posteriors, dtype=np.float64)
    if post.ndim != 2 or len(post) == 0:
        raise EmptyInput("posterior sequence is empty")
    emis = np.log(np.maximum(post, EMISSION_FLOOR))
    log_trans = np.log(np.maximum(hmm.transition, EMISSION_FLOOR))
    n = len(post)
    delta = np.log(np.maximum(hmm.initial, EMISSION_FLOOR)) + emis[0]
    back = np.zeros((n, N_CLASSES), dtype=np.int64)
    for t in range(1, n):
        cand = delta[:, None] + log_trans
        back[t] = cand.argmax(axis=0)
        delta = cand.max(axis=0) + emis[t]
    path = np.empty(n, dtype=np.int64)
    path[-1] = int(delta.argmax())
    for t in range(n - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path


def count_segments(labels: np.ndarray) -> int:
    labels = np.asarray(labels)
    if len(labels) == 0:
        return 0
    return int(1 + np.sum(labels[1:] != labels[:-1]))


def path_log_prob(labels: np.ndarray, posteriors: np.ndarray, hmm: HmmParams) -> float:
    """Joint log probability of a label path under the smoothing model."""
    emis = np.log(np.maximum(posteriors, EMISSION_FLOOR))
    lp = float(np.log(max(hmm.initial[labels[0]], EMISSION_FLOOR)) + emis[0, labels[0]])
    for t in range(1, len(labels)):
        lp += float(np.log(max(hmm.transition[labels[t - 1], labels[t]], EMISSION_FLOOR)))
        lp += float(emis[t, labels[t]])
    return lp


# --------------------------------------------------------------------------
# timeline and evaluation


@dataclass
class ActivityTimeline:
    dog_id: str
    date: str
    window_starts_ms: np.ndarray
    raw_labels: np.ndarray
    smoothed_labels: np.ndarray
    posteriors: np.ndarray

    def to_csv(self) -> str:
        lines = ["window_start_ms,raw,smoothed,p_sleep,p_sedentary,p_light,p_modvig"]
        for i in range(len(self.window_starts_ms)):
            p = self.posteriors[i]
            lines.append(
                f"{int(self.window_starts_ms[i])},{ACTIVITY_LEVELS[self.raw_labels[i]]},"
                f"{ACTIVITY_LEVELS[self.smoothed_labels[i]]},"
                f"{p[0]:.6f},{p[1]:.6f},{p[2]:.6f},{p[3]:.6f}"
            )
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str, dog_id: str = "", date: str = "") -> "ActivityTimeline":
        lines = text.strip().split("\n")[1:]
        level_index = {name: i for i, name in enumerate(ACTIVITY_LEVELS)}
        starts, raw, smoothed, post = [], [], [], []
        for ln in lines:
            parts = ln.split(",")
            starts.append(int(parts[0]))
            raw.append(level_index[parts[1]])
            smoothed.append(level_index[parts[2]])
            post.append([float(v) for v in parts[3:7]])
        return cls(
            dog_id=dog_id,
            date=date,
            window_starts_ms=np.asarray(starts, dtype=np.int64),
            raw_labels=np.asarray(raw, dtype=np.int64),
            smoothed_labels=np.asarray(smoothed, dtype=np.int64),
            posteriors=np.asarray(post, dtype=np.float64),
        )


def labels_from_spans(window_starts_ms: np.ndarray, spans: list[tuple[int, int, int]]) -> np.ndarray:
    """Majority-overlap window labels from (start_ms, end_ms, level) spans.

    Windows with no overlap get -1.
    """
    out = np.full(len(window_starts_ms), -1, dtype=np.int64)
    for i, w in enumerate(np.asarray(window_starts_ms, dtype=np.int64)):
        w_end = w + WINDOW_MS
        overlap = np.zeros(N_CLASSES)
        for s, e, lvl in spans:
            o = min(e, w_end) - max(s, w)
            if o > 0:
                overlap[lvl] += o
        if overlap.sum() > 0:
            out[i] = int(overlap.argmax())
    return out


def evaluate_against_reference(
    pred: ActivityTimeline,
    ref_spans: list[tuple[int, int, int]],
    use_smoothed: bool = True,
) -> dict:
    """Per-class accuracy and confusion matrix against reference spans."""
    ref = labels_from_spans(pred.window_starts_ms, ref_spans)
    valid = ref >= 0
    if not valid.any():
        raise NoOverlap("reference spans do not overlap the prediction windows")
    y_pred = (pred.smoothed_labels if use_smoothed else pred.raw_labels)[valid]
    y_ref = ref[valid]
    confusion = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(confusion, (y_ref, y_pred), 1)
    per_class = {}
    for c, name in enumerate(ACTIVITY_LEVELS):
        n_c = int(confusion[c].sum())
        per_class[name] = float(confusion[c, c] / n_c) if n_c else float("nan")
    return {
        "per_class_accuracy": per_class,
        "overall_accuracy": float((y_pred == y_ref).mean()),
        "confusion": confusion,
        "n_windows": int(valid.sum()),
    }
