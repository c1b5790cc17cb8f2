"""
Model families fitted from scratch on numpy arrays.

Every ``fit_*`` takes the active feature matrix ``X`` (rows x active columns), the 0/1
label vector ``y`` (1 = Unsafe) and returns the params model stored in a Classifier.
``predict_proba`` maps params plus an active matrix to p(Unsafe); ``predict_unsafe`` gives the
label, which for a forest is the majority vote of its trees rather than p >= 0.5.
"""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit, logsumexp

from scissor.core.config import Hyperparameters
from scissor.core.seeding import derive_seed, stream
from scissor.schemas import (
    ClassifierParams,
    FeatureKind,
    ForestParams,
    LogisticParams,
    MajorityParams,
    NaiveBayesParams,
    TreeNode,
    TreeParams,
)

logger = logging.getLogger(__name__)


# --- Entropy and threshold search, shared by the tree and by feature ranking ---

def binary_entropy(unsafe, total):
    """Entropy in bits of a two-class node holding ``unsafe`` of ``total`` rows."""
    unsafe = np.asarray(unsafe, dtype=float)
    total = np.asarray(total, dtype=float)
    p = np.divide(unsafe, total, out=np.zeros_like(unsafe), where=total > 0)
    q = 1.0 - p
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(np.where(p > 0, p * np.log2(p), 0.0) + np.where(q > 0, q * np.log2(q), 0.0))
    return h


def candidate_thresholds(x: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Threshold candidates for ``x <= t`` splits.

    Candidates are midpoints between consecutive distinct values, kept only where the
    class content changes: two neighbouring value groups that are pure in the same class
    never produce a candidate.

    Returns:
        (thresholds, rows on the left, unsafe rows on the left)
    """
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    values, starts, counts = np.unique(xs, return_index=True, return_counts=True)
    if len(values) < 2:
        empty = np.zeros(0)
        return empty, empty.astype(np.int64), empty.astype(np.int64)
    unsafe = np.add.reduceat(ys, starts)
    purity = np.where(unsafe == 0, 0, np.where(unsafe == counts, 1, 2))
    keep = ~((purity[:-1] == purity[1:]) & (purity[:-1] != 2))
    lo, hi = values[:-1], values[1:]
    thresholds = (lo + hi) / 2.0
    # Adjacent floats can round the midpoint up onto the upper value.
    thresholds = np.where(thresholds >= hi, lo, thresholds)
    n_left = np.cumsum(counts)[:-1]
    u_left = np.cumsum(unsafe)[:-1]
    return thresholds[keep], n_left[keep], u_left[keep]


def split_scores(y: np.ndarray, n_left: np.ndarray, u_left: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Information gain and gain ratio of each candidate split."""
    n = len(y)
    u = int(y.sum())
    n_right = n - n_left
    u_right = u - u_left
    children = (n_left * binary_entropy(u_left, n_left)
                + n_right * binary_entropy(u_right, n_right)) / n
    gain = binary_entropy(u, n) - children
    split_info = binary_entropy(n_left, n)
    ratio = np.divide(gain, split_info, out=np.zeros_like(gain), where=split_info > 0)
    return gain, ratio


def best_information_gain(x: np.ndarray, y: np.ndarray) -> Tuple[float, Optional[float]]:
    thresholds, n_left, u_left = candidate_thresholds(x, y)
    if len(thresholds) == 0:
        return 0.0, None
    gain, _ = split_scores(y, n_left, u_left)
    best = int(np.argmax(gain))
    return max(0.0, float(gain[best])), float(thresholds[best])


# --- Logistic regression ---

def logistic_loss_grad(theta: np.ndarray, X: np.ndarray, y: np.ndarray, l2: float) -> Tuple[float, np.ndarray]:
    """
    Mean cross-entropy plus (l2 / 2) * ||w||^2 and its gradient.

    ``theta`` holds the weights followed by the bias; the bias is not penalized.
    """
    w, b = theta[:-1], theta[-1]
    z = X @ w + b
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * np.dot(w, w))
    residual = (expit(z) - y) / len(y)
    grad = np.empty_like(theta)
    grad[:-1] = X.T @ residual + l2 * w
    grad[-1] = residual.sum()
    return loss, grad


def standardize_stats(X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    return mean, np.where(scale > 0, scale, 1.0)


def fit_logistic(X: np.ndarray, y: np.ndarray, hyper: Hyperparameters,
                 warm_start: Optional[LogisticParams] = None,
                 trace: Optional[List[float]] = None) -> LogisticParams:
    """
    Full-batch gradient descent on standardized features.

    The step is 1/L with L = sigma_max([Z, 1])^2 / (4n) + l2, the smoothness constant of
    the objective, so the loss never increases between iterations.
    """
    mean, scale = standardize_stats(X)
    Z = (X - mean) / scale
    n, p = Z.shape
    augmented = np.hstack([Z, np.ones((n, 1))])
    lipschitz = np.linalg.norm(augmented, 2) ** 2 / (4.0 * n) + hyper.l2
    step = 1.0 / lipschitz

    theta = np.zeros(p + 1)
    if warm_start is not None and len(warm_start.weights) == p:
        theta[:-1] = warm_start.weights
        theta[-1] = warm_start.bias

    converged = False
    iterations = 0
    for iterations in range(1, hyper.max_iter + 1):
        loss, grad = logistic_loss_grad(theta, Z, y, hyper.l2)
        if trace is not None:
            trace.append(loss)
        if np.max(np.abs(grad)) < hyper.tol:
            converged = True
            break
        theta -= step * grad
    if not converged:
        logger.debug(f"Logistic regression stopped after {iterations} iterations without converging")
    return LogisticParams(weights=theta[:-1].tolist(), bias=float(theta[-1]), mean=mean.tolist(),
                          scale=scale.tolist(), iterations=iterations, converged=converged)


def _logistic_proba(params: LogisticParams, X: np.ndarray) -> np.ndarray:
    Z = (X - np.asarray(params.mean)) / np.asarray(params.scale)
    return expit(Z @ np.asarray(params.weights) + params.bias)


# --- Decision tree (C4.5 gain ratio on numeric thresholds) ---

class _TreeBuilder:

    def __init__(self, X: np.ndarray, y: np.ndarray, min_leaf: int, max_depth: Optional[int],
                 features_per_split: Optional[int] = None, rng: Optional[np.random.Generator] = None):
        self.X = X
        self.y = y
        self.min_leaf = min_leaf
        self.max_depth = max_depth
        self.features_per_split = features_per_split
        self.rng = rng
        self.nodes: List[TreeNode] = []

    def _features(self) -> Sequence[int]:
        p = self.X.shape[1]
        if self.features_per_split is None or self.features_per_split >= p:
            return range(p)
        return np.sort(self.rng.choice(p, size=self.features_per_split, replace=False))

    def best_split(self, rows: np.ndarray) -> Optional[Tuple[int, float]]:
        y = self.y[rows]
        best: Optional[Tuple[int, float]] = None
        best_ratio = 0.0
        for f in self._features():
            thresholds, n_left, u_left = candidate_thresholds(self.X[rows, f], y)
            if len(thresholds) == 0:
                continue
            gain, ratio = split_scores(y, n_left, u_left)
            ok = ((n_left >= self.min_leaf) & (len(rows) - n_left >= self.min_leaf) & (gain > 1e-12))
            if not ok.any():
                continue
            ratio = np.where(ok, ratio, -np.inf)
            i = int(np.argmax(ratio))
            if ratio[i] > best_ratio:
                best_ratio = float(ratio[i])
                best = (int(f), float(thresholds[i]))
        return best

    def grow(self, rows: np.ndarray, depth: int = 0) -> int:
        index = len(self.nodes)
        unsafe = int(self.y[rows].sum())
        self.nodes.append(TreeNode(p_unsafe=unsafe / len(rows), n=len(rows)))
        if unsafe in (0, len(rows)) or len(rows) < 2 * self.min_leaf:
            return index
        if self.max_depth is not None and depth >= self.max_depth:
            return index
        split = self.best_split(rows)
        if split is None:
            return index
        feature, threshold = split
        go_left = self.X[rows, feature] <= threshold
        left = self.grow(rows[go_left], depth + 1)
        right = self.grow(rows[~go_left], depth + 1)
        node = self.nodes[index]
        self.nodes[index] = node.model_copy(update={"feature": feature, "threshold": threshold,
                                                    "left": left, "right": right})
        return index


def fit_tree(X: np.ndarray, y: np.ndarray, hyper: Hyperparameters) -> TreeParams:
    builder = _TreeBuilder(X, y, hyper.min_leaf, hyper.max_depth)
    builder.grow(np.arange(len(y)))
    return TreeParams(nodes=builder.nodes)


def _tree_proba(params: TreeParams, X: np.ndarray) -> np.ndarray:
    feature = np.array([n.feature for n in params.nodes], dtype=np.int64)
    threshold = np.array([n.threshold for n in params.nodes])
    left = np.array([n.left for n in params.nodes], dtype=np.int64)
    right = np.array([n.right for n in params.nodes], dtype=np.int64)
    p = np.array([n.p_unsafe for n in params.nodes])

    at = np.zeros(len(X), dtype=np.int64)
    while True:
        rows = np.nonzero(feature[at] >= 0)[0]
        if len(rows) == 0:
            return p[at]
        node = at[rows]
        go_left = X[rows, feature[node]] <= threshold[node]
        at[rows] = np.where(go_left, left[node], right[node])


# --- Random forest ---

def fit_forest(X: np.ndarray, y: np.ndarray, hyper: Hyperparameters, seed: int) -> ForestParams:
    """Bootstrap-bagged trees with a random feature subset drawn at every split."""
    n, p = X.shape
    m = hyper.features_per_split(p)
    trees, seeds = [], []
    for b in range(hyper.n_trees):
        bag_seed = derive_seed(seed, "forest", b)
        rng = stream(bag_seed)
        rows = rng.integers(0, n, size=n)
        builder = _TreeBuilder(X[rows], y[rows], hyper.forest_min_leaf, hyper.max_depth, m, rng)
        builder.grow(np.arange(n))
        trees.append(TreeParams(nodes=builder.nodes))
        seeds.append(bag_seed)
    return ForestParams(trees=trees, bag_seeds=seeds)


def _forest_proba(params: ForestParams, X: np.ndarray) -> np.ndarray:
    return np.mean([_tree_proba(t, X) for t in params.trees], axis=0)


# --- Naive Bayes ---

def fit_naive_bayes(X: np.ndarray, y: np.ndarray, kinds: Sequence[FeatureKind],
                    hyper: Hyperparameters) -> NaiveBayesParams:
    """Gaussian likelihoods for numeric columns, Bernoulli for boolean ones."""
    alpha = hyper.laplace
    numeric = [i for i, k in enumerate(kinds) if k is FeatureKind.NUMERIC]
    boolean = [i for i, k in enumerate(kinds) if k is FeatureKind.BOOLEAN]
    log_prior, mean, var, p_true = [], [], [], []
    for c in (0, 1):
        part = X[y == c]
        log_prior.append(float(np.log((len(part) + alpha) / (len(y) + 2.0 * alpha))))
        mean.append(part[:, numeric].mean(axis=0).tolist())
        var.append(np.maximum(part[:, numeric].var(axis=0), hyper.var_floor).tolist())
        trues = (part[:, boolean] > 0.5).sum(axis=0)
        p_true.append(((trues + alpha) / (len(part) + 2.0 * alpha)).tolist())
    return NaiveBayesParams(log_prior=log_prior, numeric=numeric, boolean=boolean,
                            mean=mean, var=var, p_true=p_true)


def naive_bayes_log_joint(params: NaiveBayesParams, X: np.ndarray) -> np.ndarray:
    """log p(class) + sum of per-feature log likelihoods; shape (rows, 2)."""
    out = np.zeros((len(X), 2))
    num = X[:, params.numeric]
    flags = X[:, params.boolean] > 0.5
    for c in (0, 1):
        mu = np.asarray(params.mean[c])
        var = np.asarray(params.var[c])
        gauss = -0.5 * (np.log(2.0 * np.pi * var) + (num - mu) ** 2 / var)
        p = np.asarray(params.p_true[c])
        bern = np.where(flags, np.log(p), np.log1p(-p)) if len(params.boolean) else np.zeros((len(X), 0))
        out[:, c] = params.log_prior[c] + gauss.sum(axis=1) + bern.sum(axis=1)
    return out


def _naive_bayes_proba(params: NaiveBayesParams, X: np.ndarray) -> np.ndarray:
    joint = naive_bayes_log_joint(params, X)
    return np.exp(joint[:, 1] - logsumexp(joint, axis=1))


# --- Majority (ZeroR) ---

def fit_majority(y: np.ndarray) -> MajorityParams:
    """Observed Unsafe prior; a single-class training set is fine."""
    return MajorityParams(p_unsafe=float(np.mean(y)) if len(y) else 0.0)


def predict_proba(params: ClassifierParams, X: np.ndarray) -> np.ndarray:
    """p(Unsafe) for every row of the active feature matrix."""
    if isinstance(params, LogisticParams):
        return _logistic_proba(params, X)
    if isinstance(params, TreeParams):
        return _tree_proba(params, X)
    if isinstance(params, ForestParams):
        return _forest_proba(params, X)
    if isinstance(params, NaiveBayesParams):
        return _naive_bayes_proba(params, X)
    return np.full(len(X), params.p_unsafe)


def forest_votes(params: ForestParams, X: np.ndarray) -> np.ndarray:
    """Share of trees whose own p(Unsafe) is at least 0.5."""
    return np.mean([_tree_proba(t, X) >= 0.5 for t in params.trees], axis=0)


def predict_unsafe(params: ClassifierParams, X: np.ndarray) -> np.ndarray:
    """Predicted label per row, True = Unsafe; ties classify Unsafe."""
    if isinstance(params, ForestParams):
        return forest_votes(params, X) >= 0.5
    return predict_proba(params, X) >= 0.5
