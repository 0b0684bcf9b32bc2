"""Bagged regression trees supplying a mean prediction and a spread score.

Two variants:

* ``"rf"``  random forest: bootstrap resampling, a random third of the
  features per split, best variance-reduction threshold.
* ``"ert"`` extremely randomized trees: no bootstrap, all features, one
  uniform random threshold per feature within the node's range.

Trees are multi-output: the split criterion sums squared error over
targets, and leaves store the per-target mean.

Randomness protocol (tree ``t`` of an ensemble seeded with ``seed``): its
generator is ``default_rng(SeedSequence(seed).spawn(n_trees)[t])``. It first
draws bootstrap indices ``rng.integers(0, n, n)`` if bootstrapping. Nodes are
then expanded breadth-first; at each node with ``k < d`` features it draws
``rng.choice(d, k, replace=False)`` (features in drawn order), and the random
splitter draws ``rng.uniform(lo, hi)`` per candidate feature with ``lo < hi``.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

FORMAT_TAG = "lcc-tree-ensemble"
FORMAT_VERSION = 1

_VARIANT_DEFAULTS = {
    "rf": {"bootstrap": True, "max_features": 1.0 / 3.0, "splitter": "best"},
    "ert": {"bootstrap": False, "max_features": 1.0, "splitter": "random"},
}


@dataclass(frozen=True)
class EnsembleConfig:
    n_trees: int = 100
    max_depth: int | None = None
    min_leaf: int = 1
    max_nodes: int = 1000
    variant: str = "rf"
    # None picks the variant default
    max_features: float | None = None
    bootstrap: bool | None = None
    splitter: str | None = None
    seed: int = 0

    def resolved(self) -> "EnsembleConfig":
        if self.variant not in _VARIANT_DEFAULTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected 'rf' or 'ert'")
        d = _VARIANT_DEFAULTS[self.variant]
        cfg = replace(
            self,
            max_features=d["max_features"] if self.max_features is None else self.max_features,
            bootstrap=d["bootstrap"] if self.bootstrap is None else self.bootstrap,
            splitter=d["splitter"] if self.splitter is None else self.splitter,
        )
        if cfg.splitter not in ("best", "random"):
            raise ValueError(f"unknown splitter {cfg.splitter!r}")
        if cfg.n_trees < 2:
            raise ValueError("an ensemble needs at least 2 trees for a spread score")
        if cfg.min_leaf < 1 or cfg.max_nodes < 1:
            raise ValueError("min_leaf and max_nodes must be positive")
        if not 0.0 < cfg.max_features <= 1.0:
            raise ValueError("max_features is a fraction in (0, 1]")
        return cfg


@dataclass
class Tree:
    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # (n_nodes, n_outputs)

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while rows.size:
            f = self.feature[node[rows]]
            internal = f >= 0
            rows, f = rows[internal], f[internal]
            if not rows.size:
                break
            cur = node[rows]
            go_left = X[rows, f] <= self.threshold[cur]
            node[rows] = np.where(go_left, self.left[cur], self.right[cur])
        return self.value[node]


def _sse(y: np.ndarray) -> float:
    return float(np.sum((y - y.mean(axis=0)) ** 2))


def _best_threshold(x: np.ndarray, y: np.ndarray, min_leaf: int):
    """Lowest-SSE split of one feature among midpoints of distinct values."""
    n = x.size
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    csum = np.cumsum(ys, axis=0)
    csq = np.cumsum(ys * ys, axis=0)
    tot, totsq = csum[-1], csq[-1]
    nl = np.arange(1, n)  # left sizes for a cut after position nl-1
    sl, sql = csum[:-1], csq[:-1]
    left = np.sum(sql - sl * sl / nl[:, None], axis=1)
    right = np.sum((totsq - sql) - (tot - sl) ** 2 / (n - nl)[:, None], axis=1)
    sse = left + right
    valid = (xs[:-1] < xs[1:]) & (nl >= min_leaf) & (n - nl >= min_leaf)
    if not valid.any():
        return None
    sse = np.where(valid, sse, np.inf)
    i = int(np.argmin(sse))
    thr = 0.5 * (xs[i] + xs[i + 1])
    if not xs[i] <= thr < xs[i + 1]:
        thr = xs[i]
    return float(sse[i]), thr


def _random_threshold(x: np.ndarray, y: np.ndarray, min_leaf: int, rng: np.random.Generator):
    lo, hi = float(x.min()), float(x.max())
    if not lo < hi:
        return None
    thr = float(rng.uniform(lo, hi))
    go = x <= thr
    nl = int(go.sum())
    if nl < min_leaf or x.size - nl < min_leaf:
        return None
    return _sse(y[go]) + _sse(y[~go]), thr


def build_tree(X: np.ndarray, Y: np.ndarray, cfg: EnsembleConfig, rng: np.random.Generator) -> Tree:
    """Grow one tree on the given rows; ``cfg`` must be resolved."""
    n, d = X.shape
    k = max(1, math.ceil(cfg.max_features * d - 1e-9))
    feature, threshold, left, right, value = [-1], [0.0], [-1], [-1], [Y.mean(axis=0)]
    queue = deque([(0, np.arange(n), 0)])
    while queue:
        node, idx, depth = queue.popleft()
        if cfg.max_depth is not None and depth >= cfg.max_depth:
            continue
        if idx.size < 2 * cfg.min_leaf or len(feature) + 2 > cfg.max_nodes:
            continue
        y = Y[idx]
        if np.all(y == y[0]):
            continue
        feats = np.arange(d) if k >= d else rng.choice(d, k, replace=False)
        best = None
        for f in feats:
            x = X[idx, f]
            if cfg.splitter == "best":
                cand = _best_threshold(x, y, cfg.min_leaf)
            else:
                cand = _random_threshold(x, y, cfg.min_leaf, rng)
            if cand is not None and (best is None or cand[0] < best[0]):
                best = (cand[0], int(f), cand[1])
        if best is None:
            continue
        _, f, thr = best
        go = X[idx, f] <= thr
        li, ri = idx[go], idx[~go]
        lid, rid = len(feature), len(feature) + 1
        feature[node], threshold[node], left[node], right[node] = f, thr, lid, rid
        for child in (li, ri):
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(Y[child].mean(axis=0))
        queue.append((lid, li, depth + 1))
        queue.append((rid, ri, depth + 1))
    return Tree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=float),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.vstack(value),
    )


@dataclass
class TreeEnsemble:
    trees: list
    config: EnsembleConfig
    n_features: int
    n_outputs: int

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        return X

    def predict_members(self, X) -> np.ndarray:
        """``(n_trees, N, n_outputs)`` member predictions."""
        X = self._check(X)
        return np.stack([t.predict(X) for t in self.trees])

    def predict_mean_std(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Mean and population std over trees, each ``(N, n_outputs)``."""
        members = self.predict_members(X)
        return members.mean(axis=0), members.std(axis=0)


def train(X, Y, config: EnsembleConfig | None = None) -> TreeEnsemble:
    """Fit an ensemble; ``Y`` may be 1-D (single target) or ``(n, m)``."""
    cfg = (config or EnsembleConfig()).resolved()
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("empty training data")
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[0] != X.shape[0]:
        raise ValueError(f"{X.shape[0]} feature rows but {Y.shape[0]} targets")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ValueError("training data must be finite")
    n = X.shape[0]
    trees = []
    for ss in np.random.SeedSequence(cfg.seed).spawn(cfg.n_trees):
        rng = np.random.default_rng(ss)
        rows = rng.integers(0, n, n) if cfg.bootstrap else np.arange(n)
        trees.append(build_tree(X[rows], Y[rows], cfg, rng))
    return TreeEnsemble(trees, cfg, X.shape[1], Y.shape[1])


def predict_mean_std(ens: TreeEnsemble, x) -> tuple:
    """Mean and std for one feature vector; scalars for single-target models."""
    mean, std = ens.predict_mean_std(np.asarray(x, dtype=float)[None, :] if np.ndim(x) == 1 else x)
    if mean.shape[0] == 1:
        mean, std = mean[0], std[0]
        if ens.n_outputs == 1:
            return float(mean[0]), float(std[0])
    return mean, std


# -- plain-text dump --------------------------------------------------------
#
#   lcc-tree-ensemble 1
#   config <key>=<value> ...
#   shape <n_features> <n_outputs> <n_trees>
#   tree <t> <n_nodes>
#   <node_id> split <feature> <threshold> <left> <right> <v_1> ... <v_m>
#   <node_id> leaf <v_1> ... <v_m>
#   end
#
# Floats are written with repr() so the round trip is exact.


def dumps(ens: TreeEnsemble) -> str:
    cfg = ens.config
    lines = [f"{FORMAT_TAG} {FORMAT_VERSION}"]
    fields = ("n_trees", "max_depth", "min_leaf", "max_nodes", "variant", "max_features", "bootstrap", "splitter", "seed")
    lines.append("config " + " ".join(f"{k}={getattr(cfg, k)!r}" for k in fields))
    lines.append(f"shape {ens.n_features} {ens.n_outputs} {len(ens.trees)}")
    for t, tree in enumerate(ens.trees):
        lines.append(f"tree {t} {tree.n_nodes}")
        for i in range(tree.n_nodes):
            vals = " ".join(repr(float(v)) for v in tree.value[i])
            if tree.feature[i] < 0:
                lines.append(f"{i} leaf {vals}")
            else:
                lines.append(
                    f"{i} split {tree.feature[i]} {float(tree.threshold[i])!r} {tree.left[i]} {tree.right[i]} {vals}"
                )
    lines.append("end")
    return "\n".join(lines) + "\n"


def _literal(text: str):
    if text == "None":
        return None
    if text in ("True", "False"):
        return text == "True"
    if text.startswith("'"):
        return text.strip("'")
    try:
        return int(text)
    except ValueError:
        return float(text)


def loads(text: str) -> TreeEnsemble:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    head = lines[0].split()
    if head[0] != FORMAT_TAG or int(head[1]) != FORMAT_VERSION:
        raise ValueError(f"not a {FORMAT_TAG} v{FORMAT_VERSION} dump")
    cfg = EnsembleConfig(**{k: _literal(v) for k, v in (kv.split("=", 1) for kv in lines[1].split()[1:])})
    _, nf, no, nt = lines[2].split()
    nf, no, nt = int(nf), int(no), int(nt)
    pos, trees = 3, []
    for _ in range(nt):
        _, _, nn = lines[pos].split()
        nn = int(nn)
        feature = np.full(nn, -1, dtype=np.int64)
        threshold = np.zeros(nn)
        left = np.full(nn, -1, dtype=np.int64)
        right = np.full(nn, -1, dtype=np.int64)
        value = np.zeros((nn, no))
        for ln in lines[pos + 1 : pos + 1 + nn]:
            parts = ln.split()
            i = int(parts[0])
            if parts[1] == "split":
                feature[i], threshold[i] = int(parts[2]), float(parts[3])
                left[i], right[i] = int(parts[4]), int(parts[5])
                value[i] = [float(v) for v in parts[6:]]
            else:
                value[i] = [float(v) for v in parts[2:]]
        trees.append(Tree(feature, threshold, left, right, value))
        pos += 1 + nn
    if lines[pos] != "end":
        raise ValueError("truncated ensemble dump")
    return TreeEnsemble(trees, cfg, nf, no)


def save(ens: TreeEnsemble, path: str | Path) -> None:
    Path(path).write_text(dumps(ens))


def load(path: str | Path) -> TreeEnsemble:
    return loads(Path(path).read_text())
