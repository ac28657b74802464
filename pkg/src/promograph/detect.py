"""Ad-promoted malware detection.

Each promotion edge becomes one instance whose feature vector concatenates
the advertiser's and the promoted app's attribute and graph embeddings; the
label is whether the promoted app is malware or PUA. A Random Forest
(bootstrap, Gini splits, sqrt(d) feature subsampling) is trained per fold of
a stratified, app-grouped 10-fold cross-validation, and a mutation harness
perturbs node attributes (Gaussian noise) or links (out-degree weighted
swaps) for robustness curves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import embed as embed_mod
from . import features as feat_mod
from .errors import (CvError, EmbeddingMissingError, MutationError,
                     TrainError)
from .graph import AppClass, PromotionEdge, PromotionGraph
from .records import AppRecordBundle

POSITIVE_CLASSES = (AppClass.MALWARE, AppClass.PUA)


@dataclass
class Instance:
    src: str
    dst: str
    x: np.ndarray
    y: int


def build_instances(graph: PromotionGraph, features: dict[str, np.ndarray],
                    embeddings: dict[str, np.ndarray]) -> list[Instance]:
    """One instance per unique (src, dst) pair; Unknown-destination edges are
    skipped. Order is deterministic by (src, dst)."""
    out: list[Instance] = []
    for src, dst in graph.unique_pairs():
        if graph.node_class(dst) is AppClass.UNKNOWN:
            continue
        for endpoint in (src, dst):
            if endpoint not in embeddings:
                raise EmbeddingMissingError(endpoint)
            if endpoint not in features:
                raise EmbeddingMissingError(f"features missing for {endpoint}")
        x = np.concatenate([features[src], embeddings[src],
                            features[dst], embeddings[dst]])
        y = int(graph.node_class(dst) in POSITIVE_CLASSES)
        out.append(Instance(src=src, dst=dst, x=x, y=y))
    return out


# ---------------------------------------------------------------------------
# Random Forest

@dataclass
class TreeNode:
    feature: int = -1
    threshold: float = 0.0
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None
    proba: float = 0.0  # leaf probability of the positive class

    @property
    def is_leaf(self) -> bool:
        return self.left is None


def best_gini_split(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Exhaustive best threshold for one feature; returns (impurity, threshold).

    Impurity is the weighted Gini of the two-way split; float('inf') when the
    feature is constant.
    """
    order = np.argsort(x, kind="mergesort")
    xs, ys = x[order], y[order]
    n = len(ys)
    distinct = np.nonzero(np.diff(xs))[0]  # split after position i
    if distinct.size == 0:
        return math.inf, 0.0
    pos_cum = np.cumsum(ys)
    total_pos = pos_cum[-1]
    n_left = distinct + 1
    n_right = n - n_left
    pos_left = pos_cum[distinct]
    pos_right = total_pos - pos_left
    p_l = pos_left / n_left
    p_r = pos_right / n_right
    gini = (n_left * 2 * p_l * (1 - p_l) + n_right * 2 * p_r * (1 - p_r)) / n
    best = int(np.argmin(gini))
    i = distinct[best]
    return float(gini[best]), float((xs[i] + xs[i + 1]) / 2.0)


def _grow(X: np.ndarray, y: np.ndarray, rng: np.random.Generator,
          n_sub: int, depth: int, max_depth: Optional[int],
          min_leaf: int) -> TreeNode:
    node = TreeNode(proba=float(y.mean()))
    if (y == y[0]).all() or len(y) < 2 * min_leaf \
            or (max_depth is not None and depth >= max_depth):
        return node
    cand = rng.choice(X.shape[1], size=min(n_sub, X.shape[1]), replace=False)
    best_imp, best_f, best_t = math.inf, -1, 0.0
    for f in sorted(cand):
        imp, thr = best_gini_split(X[:, f], y)
        if imp < best_imp:
            best_imp, best_f, best_t = imp, f, thr
    if best_f < 0:
        return node
    mask = X[:, best_f] <= best_t
    if mask.sum() < min_leaf or (~mask).sum() < min_leaf:
        return node
    node.feature, node.threshold = best_f, best_t
    node.left = _grow(X[mask], y[mask], rng, n_sub, depth + 1, max_depth, min_leaf)
    node.right = _grow(X[~mask], y[~mask], rng, n_sub, depth + 1, max_depth, min_leaf)
    return node


def _tree_proba(node: TreeNode, x: np.ndarray) -> float:
    while not node.is_leaf:
        node = node.left if x[node.feature] <= node.threshold else node.right
    return node.proba


@dataclass
class ForestConfig:
    tree_count: int = 100
    max_depth: Optional[int] = None
    min_leaf: int = 1


@dataclass
class ForestModel:
    trees: list[TreeNode]
    config: ForestConfig
    seed: int

    def predict_proba(self, x: np.ndarray) -> float:
        return float(np.mean([_tree_proba(t, x) for t in self.trees]))


def train_forest(instances: Sequence[Instance], config: ForestConfig = ForestConfig(),
                 seed: int = 0) -> ForestModel:
    y = np.array([i.y for i in instances])
    if len(set(y.tolist())) < 2:
        raise TrainError("training set has a single class")
    X = np.stack([i.x for i in instances])
    n, d = X.shape
    n_sub = max(1, int(math.sqrt(d)))
    trees: list[TreeNode] = []
    for t in range(config.tree_count):
        rng = np.random.default_rng((seed, t))
        idx = rng.integers(0, n, size=n)  # bootstrap sample
        trees.append(_grow(X[idx], y[idx], rng, n_sub, 0, config.max_depth,
                           config.min_leaf))
    return ForestModel(trees=trees, config=config, seed=seed)


def predict(model: ForestModel, instance: Instance) -> float:
    return model.predict_proba(instance.x)


def predict_app(model: ForestModel, instances: Sequence[Instance]) -> dict[str, float]:
    """Mean probability of the app's incoming-edge instances; verdict is a
    strict > 0.5 threshold applied by the caller."""
    sums: dict[str, list[float]] = {}
    for ins in instances:
        sums.setdefault(ins.dst, []).append(model.predict_proba(ins.x))
    return {app: float(np.mean(ps)) for app, ps in sums.items()}


# ---------------------------------------------------------------------------
# Metrics

@dataclass
class DetectionMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0


def compute_metrics(predictions: Sequence[int], labels: Sequence[int]) -> DetectionMetrics:
    if len(predictions) != len(labels):
        raise ValueError("length mismatch")
    tp = sum(1 for p, l in zip(predictions, labels) if p and l)
    fp = sum(1 for p, l in zip(predictions, labels) if p and not l)
    fn = sum(1 for p, l in zip(predictions, labels) if not p and l)
    tn = sum(1 for p, l in zip(predictions, labels) if not p and not l)
    total = tp + fp + fn + tn
    acc = 100.0 * (tp + tn) / total if total else 0.0
    prec = 100.0 * tp / (tp + fp) if tp + fp else 0.0
    rec = 100.0 * tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return DetectionMetrics(accuracy=acc, precision=prec, recall=rec, f1=f1,
                            tp=tp, fp=fp, fn=fn, tn=tn)


# ---------------------------------------------------------------------------
# Cross-validation

def stratified_app_folds(app_labels: dict[str, int], k: int,
                         seed: int) -> dict[str, int]:
    """Fold index per destination app, stratified on the binary label."""
    pos = sorted(a for a, y in app_labels.items() if y == 1)
    neg = sorted(a for a, y in app_labels.items() if y == 0)
    if len(pos) < k or len(neg) < k:
        raise CvError(f"need at least {k} apps of each class "
                      f"(got {len(pos)} positive, {len(neg)} negative)")
    rng = np.random.default_rng(seed)
    rng.shuffle(pos)
    rng.shuffle(neg)
    folds: dict[str, int] = {}
    for group in (pos, neg):
        for i, app in enumerate(group):
            folds[app] = i % k
    return folds


@dataclass
class DetectionTask:
    """Everything needed to rebuild features and embeddings per fold."""
    graph: PromotionGraph
    records: dict[str, AppRecordBundle]
    sage_config: embed_mod.SageConfig = field(default_factory=embed_mod.SageConfig)
    forest_config: ForestConfig = field(default_factory=ForestConfig)
    max_vocab: int = 2000


@dataclass
class CvResult:
    fold_metrics: list[DetectionMetrics]

    def mean_f1(self) -> float:
        return float(np.mean([m.f1 for m in self.fold_metrics]))

    def std_f1(self) -> float:
        return float(np.std([m.f1 for m in self.fold_metrics]))

    def summary(self) -> dict[str, float]:
        by = lambda name: [getattr(m, name) for m in self.fold_metrics]
        out: dict[str, float] = {}
        for name in ("accuracy", "precision", "recall", "f1"):
            out[f"{name}_mean"] = float(np.mean(by(name)))
            out[f"{name}_std"] = float(np.std(by(name)))
        return out


def _labeled_dst_apps(graph: PromotionGraph) -> dict[str, int]:
    labels: dict[str, int] = {}
    for src, dst in graph.unique_pairs():
        cls = graph.node_class(dst)
        if cls is not AppClass.UNKNOWN:
            labels[dst] = int(cls in POSITIVE_CLASSES)
    return labels


def cross_validate(task: DetectionTask, k: int = 10, seed: int = 0,
                   ablate_promotion: bool = False,
                   node_noise: Optional["MutationSpec"] = None,
                   folds: Optional[dict[str, int]] = None) -> CvResult:
    """Stratified app-grouped k-fold CV with per-fold encoder/embedding refit.

    All instances sharing a destination app land in the same fold. The
    ablation arm (`ablate_promotion`) zeroes the graph-embedding blocks and
    shares fold assignments and seeds with the full arm.
    """
    graph = task.graph
    app_labels = _labeled_dst_apps(graph)
    if folds is None:
        folds = stratified_app_folds(app_labels, k, seed)
    all_apps = sorted(graph.nodes)
    fold_metrics: list[DetectionMetrics] = []
    for fold in range(k):
        test_apps = {a for a, f in folds.items() if f == fold}
        train_bundles = [task.records[a] for a in all_apps
                         if a not in test_apps and a in task.records]
        encoder = feat_mod.fit_encoder(train_bundles, max_vocab=task.max_vocab)
        feats = feat_mod.encode_all(encoder, all_apps, task.records)
        if node_noise is not None:
            feats = mutate_nodes(feats, node_noise.rate, node_noise.sigma,
                                 node_noise.seed)
        if ablate_promotion:
            embeddings = {a: np.zeros(task.sage_config.out_dim) for a in all_apps}
        else:
            model, _ = embed_mod.pretrain(graph, feats, task.sage_config,
                                          seed=seed * 1000 + fold)
            embeddings = embed_mod.embed_all(model, graph, feats)
        instances = build_instances(graph, feats, embeddings)
        train = [i for i in instances if i.dst not in test_apps]
        test = [i for i in instances if i.dst in test_apps]
        forest = train_forest(train, task.forest_config, seed=seed * 1000 + fold)
        app_probs = predict_app(forest, test)
        apps = sorted(app_probs)
        preds = [int(app_probs[a] > 0.5) for a in apps]
        labels = [app_labels[a] for a in apps]
        fold_metrics.append(compute_metrics(preds, labels))
    return CvResult(fold_metrics=fold_metrics)


# ---------------------------------------------------------------------------
# Robustness mutations

@dataclass(frozen=True)
class MutationSpec:
    kind: str  # "node-noise" | "link-swap"
    rate: float
    sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.rate <= 1.0:
            raise ValueError("rate must be in (0, 1]")
        if self.kind not in ("node-noise", "link-swap"):
            raise ValueError(f"unknown mutation kind: {self.kind!r}")


def mutate_nodes(features: dict[str, np.ndarray], rate: float, sigma: float,
                 seed: int) -> dict[str, np.ndarray]:
    """Add i.i.d. Gaussian noise to ceil(rate*N) uniformly chosen nodes."""
    spec = MutationSpec("node-noise", rate, sigma, seed)
    offsets = _node_noise_offsets_from(sorted(features), spec,
                                       {a: len(v) for a, v in features.items()})
    return {a: (v + offsets[a] if a in offsets else v.copy())
            for a, v in features.items()}


def hash_stable(text: str) -> int:
    h = 2166136261
    for ch in text.encode():
        h = (h ^ ch) * 16777619 % (1 << 32)
    return h


def _node_noise_offsets_from(nodes: list[str], spec: MutationSpec,
                             dims: dict[str, int]) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(spec.seed)
    count = math.ceil(spec.rate * len(nodes))
    chosen = rng.choice(len(nodes), size=count, replace=False)
    out: dict[str, np.ndarray] = {}
    for i in sorted(int(c) for c in chosen):
        app = nodes[i]
        node_rng = np.random.default_rng((spec.seed, hash_stable(app)))
        out[app] = node_rng.normal(0.0, spec.sigma, size=dims[app])
    return out


def mutate_links(graph: PromotionGraph, rate: float, seed: int) -> PromotionGraph:
    """Swap destinations of ceil(rate*|E|/2) disjoint edge pairs, sampling
    edges with probability proportional to their source's out-degree. The
    out-degree multiset, node set, and |E| are preserved exactly."""
    edges = list(graph.edges)
    if len(edges) < 2:
        raise MutationError("need at least 2 edges")
    out_deg: dict[str, int] = {}
    for e in edges:
        out_deg[e.src] = out_deg.get(e.src, 0) + 1
    n_pairs = math.ceil(rate * len(edges) / 2)
    rng = np.random.default_rng(seed)
    weights = np.array([out_deg[e.src] for e in edges], dtype=float)
    weights /= weights.sum()
    if 2 * n_pairs > len(edges):
        n_pairs = len(edges) // 2
    chosen = rng.choice(len(edges), size=2 * n_pairs, replace=False, p=weights)
    chosen = [int(c) for c in chosen]
    new_edges = {i: e for i, e in enumerate(edges)}
    pool = list(chosen)
    pairs: list[tuple[int, int]] = []
    attempts = 0
    while len(pool) >= 2 and attempts < 100 * len(chosen):
        a, b = pool[0], pool[1]
        ea, eb = edges[a], edges[b]
        if ea.src != eb.dst and eb.src != ea.dst:
            pairs.append((a, b))
            pool = pool[2:]
        else:
            # rotate to avoid self-loops from the swap
            pool = pool[:1] + pool[2:] + [pool[1]]
            attempts += 1
    for a, b in pairs:
        ea, eb = edges[a], edges[b]
        new_edges[a] = PromotionEdge(ea.src, eb.dst, ea.ad_kind, ea.epoch, ())
        new_edges[b] = PromotionEdge(eb.src, ea.dst, eb.ad_kind, eb.epoch, ())
    mutated = PromotionGraph()
    for app_id, info in graph.nodes.items():
        mutated.add_node(app_id, info.app_class, info.record_ref)
    mutated.edges = [new_edges[i] for i in range(len(edges))]
    mutated._seen = {(e.src, e.dst, e.ad_kind, e.epoch) for e in mutated.edges}
    return mutated
