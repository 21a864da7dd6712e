"""Second-order gradient boosting with leaf-wise tree growth.

The objective is any callable ``objective(raw_scores, targets) -> (grad, hess)``
evaluated once per iteration over the full training vector; this is what lets
the hierarchical loss couple samples.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import _kernels as K
from .binning import BinnedDataset, apply_bins

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    n_estimators: int = 2000
    learning_rate: float = 0.05
    num_leaves: int = 31
    min_child_samples: int = 20
    lambda_l2: float = 0.0
    lambda_l1: float = 0.0
    feature_fraction: float = 1.0
    bagging_fraction: float = 1.0
    bagging_freq: int = 1
    early_stopping_rounds: int | None = 100
    rng_seed: int = 0
    min_child_weight: float = 1e-3
    min_split_gain: float = 0.0
    max_depth: int = -1

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.num_leaves < 2:
            raise ValueError("num_leaves must be at least 2")
        if not 0 < self.feature_fraction <= 1 or not 0 < self.bagging_fraction <= 1:
            raise ValueError("feature_fraction and bagging_fraction must lie in (0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)


@dataclass(eq=False)
class Tree:
    """Flat binary tree. Child values < 0 refer to leaf ``~child``."""

    feature: np.ndarray
    split_bin: np.ndarray
    missing_left: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_values: np.ndarray

    @property
    def n_leaves(self) -> int:
        return int(self.leaf_values.size)

    def leaves(self, bins: np.ndarray) -> np.ndarray:
        out = np.empty(bins.shape[1], dtype=np.int64)
        K.route(bins, self.feature, self.split_bin, self.missing_left, self.left, self.right, out)
        return out

    def predict_binned(self, bins: np.ndarray) -> np.ndarray:
        return self.leaf_values[self.leaves(bins)]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "split_bin": self.split_bin.tolist(),
            "missing_left": self.missing_left.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "leaf_values": self.leaf_values.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["split_bin"], dtype=np.int64),
            np.asarray(d["missing_left"], dtype=np.bool_),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["leaf_values"], dtype=np.float64),
        )


def _grow_tree(data: BinnedDataset, grad, hess, idx, features, cfg: TrainConfig) -> Tree:
    bins = data.bins
    n_bins = data.n_bins
    l1, l2 = cfg.lambda_l1, cfg.lambda_l2
    mcs, mcw = float(cfg.min_child_samples), cfg.min_child_weight

    def make_leaf(ix, hist, depth):
        # totals read off one feature's histogram (all bins of a feature sum to the node)
        f0 = features[0]
        G, H, N = (float(np.sum(hist[f0, :, j])) for j in range(3))
        leaf = {"idx": ix, "hist": hist, "G": G, "H": H, "N": N, "depth": depth, "split": None}
        if cfg.max_depth < 0 or depth < cfg.max_depth:
            gain, f, b, ml = K.best_split(hist, n_bins, features, G, H, N, l1, l2, mcs, mcw)
            if f >= 0 and gain > cfg.min_split_gain:
                leaf["split"] = (gain, f, b, ml)
        return leaf

    root_hist = K.build_histogram(bins, grad, hess, idx, features)
    leaves = [make_leaf(idx, root_hist, 0)]
    # node bookkeeping: parent node id and side for each open leaf
    where = [(-1, False)]
    feature, split_bin, missing_left, left, right = [], [], [], [], []

    while len(leaves) < cfg.num_leaves:
        cand = [(lf["split"][0], k) for k, lf in enumerate(leaves) if lf["split"] is not None]
        if not cand:
            break
        # first maximum wins, so ties resolve by leaf creation order
        k = max(cand, key=lambda t: (t[0], -t[1]))[1]
        lf = leaves[k]
        _, f, b, ml = lf["split"]
        node = len(feature)
        feature.append(f)
        split_bin.append(b)
        missing_left.append(ml)
        left.append(0)
        right.append(0)
        parent, is_left = where[k]
        if parent >= 0:
            (left if is_left else right)[parent] = node
        mask = K.go_left_mask(bins[f], lf["idx"], b, ml)
        li, ri = lf["idx"][mask], lf["idx"][~mask]
        small, large = (li, ri) if li.size <= ri.size else (ri, li)
        h_small = K.build_histogram(bins, grad, hess, small, features)
        h_large = lf["hist"] - h_small
        hl, hr = (h_small, h_large) if small is li else (h_large, h_small)
        d = lf["depth"] + 1
        leaves[k] = make_leaf(li, hl, d)
        where[k] = (node, True)
        leaves.append(make_leaf(ri, hr, d))
        where.append((node, False))

    values = np.array([K.leaf_value(lf["G"], lf["H"], l1, l2) for lf in leaves])
    for k, (parent, is_left) in enumerate(where):
        if parent >= 0:
            (left if is_left else right)[parent] = ~k
    return Tree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(split_bin, dtype=np.int64),
        np.asarray(missing_left, dtype=np.bool_),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        values,
    )


@dataclass(eq=False)
class Booster:
    trees: list
    base_score: float
    learning_rate: float
    link: str
    edges: list
    feature_names: list
    config: dict
    best_iteration: int
    objective: str = ""
    metric: str = ""
    history: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return len(self.edges)

    def _bins(self, data) -> np.ndarray:
        if isinstance(data, BinnedDataset):
            if data.n_features != self.n_features:
                raise ValueError(f"model has {self.n_features} features, data has {data.n_features}")
            return data.bins
        return apply_bins(data, self.edges)

    def predict_raw(self, data, num_iteration: int | None = None) -> np.ndarray:
        bins = self._bins(data)
        k = self.best_iteration if num_iteration is None else num_iteration
        out = np.zeros(bins.shape[1])
        for tree in self.trees[:k]:
            out += tree.predict_binned(bins)
        return self.base_score + self.learning_rate * out

    def predict(self, data, num_iteration: int | None = None) -> np.ndarray:
        raw = self.predict_raw(data, num_iteration)
        return np.exp(raw) if self.link == "log" else raw

    def to_dict(self) -> dict:
        return {
            "format": "sparsehl-booster/1",
            "base_score": self.base_score,
            "learning_rate": self.learning_rate,
            "link": self.link,
            "edges": [e.tolist() for e in self.edges],
            "feature_names": list(self.feature_names),
            "config": self.config,
            "best_iteration": self.best_iteration,
            "objective": self.objective,
            "metric": self.metric,
            "history": self.history,
            "trees": [t.to_dict() for t in self.trees],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def from_dict(cls, d: dict) -> "Booster":
        return cls(
            trees=[Tree.from_dict(t) for t in d["trees"]],
            base_score=d["base_score"],
            learning_rate=d["learning_rate"],
            link=d["link"],
            edges=[np.asarray(e, dtype=np.float64) for e in d["edges"]],
            feature_names=d["feature_names"],
            config=d["config"],
            best_iteration=d["best_iteration"],
            objective=d.get("objective", ""),
            metric=d.get("metric", ""),
            history=d.get("history", {}),
        )

    @classmethod
    def load(cls, path) -> "Booster":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _transform(raw, link):
    return np.exp(raw) if link == "log" else raw


def fit(train: BinnedDataset, objective, metric=None, config: TrainConfig | None = None,
        valid: BinnedDataset | None = None) -> Booster:
    """Train a booster.

    ``metric(predictions, targets)`` is evaluated on ``valid`` after every
    iteration (response scale, lower is better) and drives early stopping.
    """
    cfg = config or TrainConfig()
    if train.n_samples == 0:
        raise ValueError("empty training set")
    if train.targets is None:
        raise ValueError("training data has no targets")
    if valid is not None and valid.n_features != train.n_features:
        raise ValueError("validation data has a different feature count")
    y = train.targets
    w = train.weights
    link = getattr(objective, "link", "identity")
    base = float(objective.base_score(y))
    rng = np.random.default_rng(cfg.rng_seed)
    n, n_feat = train.n_samples, train.n_features
    all_idx = np.arange(n, dtype=np.int64)
    all_feat = np.arange(n_feat, dtype=np.int64)
    raw = np.full(n, base)
    raw_valid = None if valid is None else np.full(valid.n_samples, base)
    trees: list[Tree] = []
    history = {"valid": []}
    best_score, best_iter = np.inf, 0
    idx = all_idx

    for it in range(cfg.n_estimators):
        grad, hess = objective(raw, y)
        grad = np.asarray(grad, dtype=np.float64)
        hess = np.asarray(hess, dtype=np.float64)
        if grad.shape != (n,) or hess.shape != (n,):
            raise ValueError(f"objective returned {grad.shape}/{hess.shape} for {n} samples")
        grad = grad * w
        hess = hess * w
        if cfg.bagging_fraction < 1.0 and it % max(cfg.bagging_freq, 1) == 0:
            k = max(1, int(round(cfg.bagging_fraction * n)))
            idx = np.sort(rng.choice(n, size=k, replace=False)).astype(np.int64)
        if cfg.feature_fraction < 1.0:
            k = max(1, int(round(cfg.feature_fraction * n_feat)))
            feats = np.sort(rng.choice(n_feat, size=k, replace=False)).astype(np.int64)
        else:
            feats = all_feat
        tree = _grow_tree(train, grad, hess, idx, feats, cfg)
        trees.append(tree)
        raw += cfg.learning_rate * tree.predict_binned(train.bins)
        if valid is not None and metric is not None:
            raw_valid += cfg.learning_rate * tree.predict_binned(valid.bins)
            score = float(metric(_transform(raw_valid, link), valid.targets))
            history["valid"].append(score)
            if score < best_score:
                best_score, best_iter = score, it + 1
            elif cfg.early_stopping_rounds and it + 1 - best_iter >= cfg.early_stopping_rounds:
                log.debug("early stop at %d, best %d (%.6g)", it + 1, best_iter, best_score)
                break
    if valid is None or metric is None:
        best_iter = len(trees)
    return Booster(
        trees=trees,
        base_score=base,
        learning_rate=cfg.learning_rate,
        link=link,
        edges=[np.asarray(e) for e in train.edges],
        feature_names=list(train.feature_names),
        config=asdict(cfg),
        best_iteration=best_iter,
        objective=getattr(objective, "name", ""),
        metric=getattr(metric, "name", "") if metric is not None else "",
        history=history,
    )


def predict(b: Booster, data) -> np.ndarray:
    return b.predict(data)
