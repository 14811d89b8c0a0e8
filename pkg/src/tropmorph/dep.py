"""Dilation-Erosion Perceptron: DC training, greedy training, reduced
orderings via kernel feature maps, and multiclass reductions.

The binary DEP scores a pattern as

    score(x) = lam * delta_w(x) + (1 - lam) * eps_m(x),   class = sign(score)

with delta/eps the morphological scalar operators.  Training minimises a
weighted hinge loss; the dilation term is convex and the erosion term
concave, so each convex-concave iteration linearises the concave pieces at
their active competitor and solves the resulting epigraph linear program.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .data import Dataset, bootstrap_sample, subset_by_classes
from .lp import lp_solve
from .tropical import dilation, erosion

CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------
@dataclass
class DEPModel:
    w: np.ndarray  # dilation weights, length n+1 (bias first)
    m: np.ndarray  # erosion weights, length n+1
    lam: float = 0.5

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        self.m = np.asarray(self.m, dtype=np.float64)
        if self.w.shape != self.m.shape or self.w.ndim != 1:
            raise ValueError("w and m must be 1-D vectors of equal length")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")

    def dilation_scores(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return np.maximum(self.w[0], (X + self.w[1:][None, :]).max(axis=1))

    def erosion_scores(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return np.minimum(self.m[0], (X + self.m[1:][None, :]).min(axis=1))

    def score(self, X: np.ndarray) -> np.ndarray:
        return self.lam * self.dilation_scores(X) + (1.0 - self.lam) * self.erosion_scores(X)

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Labels in {-1, +1}; a zero score resolves to the smaller class (-1)."""
        return np.where(self.score(X) > 0, 1, -1)


def weighted_hinge(scores: np.ndarray, labels: np.ndarray, v: np.ndarray) -> float:
    return float(np.sum(v * np.maximum(0.0, -labels * scores)))


# ---------------------------------------------------------------------------
# outlier weighting
# ---------------------------------------------------------------------------
def outlier_weights(features: np.ndarray, labels: np.ndarray, p: float = 2.0) -> np.ndarray:
    """Per-pattern weights v_i = lam_i / max_j lam_j with lam_j = 1/||x_j - mu_k||_p,
    computed within each pattern's own class (mu_k its class mean).

    A pattern coinciding with its centroid is maximally central and gets
    weight 1; the remaining weights are normalised by the largest finite lam.
    """
    if p < 1:
        raise ValueError(f"norm order must satisfy p >= 1, got {p}")
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    v = np.empty(len(X))
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        mu = X[idx].mean(axis=0)
        dist = np.linalg.norm(X[idx] - mu[None, :], ord=p, axis=1)
        at_centroid = dist == 0.0
        lam = np.zeros(len(idx))
        lam[~at_centroid] = 1.0 / dist[~at_centroid]
        if (~at_centroid).any():
            v[idx] = lam / lam.max()
        v[idx[at_centroid]] = 1.0
    return v


# ---------------------------------------------------------------------------
# CCP training of the joint DEP
# ---------------------------------------------------------------------------
@dataclass
class CCPConfig:
    lam: float = 0.5
    max_iter: int = 50
    tol: float = 1e-6
    lp_tol: float | None = None
    seed: int = 0  # reserved for randomised initialisation; the default start is deterministic

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("objective tolerance must be positive")
        if self.max_iter < 1:
            raise ValueError("max iterations must be >= 1")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")


def _check_binary(labels: np.ndarray) -> np.ndarray:
    y = np.asarray(labels)
    if not np.isin(y, (-1, 1)).all():
        raise ValueError("labels must be in {-1, +1}")
    return y.astype(np.int64)


def _competitors(weights: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.concatenate([[weights[0]], weights[1:] + x])


def ccp_train(features, labels, v=None, config: CCPConfig | None = None) -> tuple[DEPModel, list[float]]:
    """Convex-concave procedure for the joint DEP hinge program.

    Each iteration linearises the concave constraint parts at their active
    competitor (positive patterns: the dilation argmax; negative patterns:
    the erosion argmin) and solves the epigraph LP

        min sum_i v_i t_i   s.t.  t_i >= xi_i, t_i >= 0, pieces <= xi_i.

    Returns the model and the per-iteration trace of the true weighted
    hinge objective, which is nonincreasing.
    """
    config = config or CCPConfig()
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = _check_binary(labels)
    N, n = X.shape
    v = np.ones(N) if v is None else np.asarray(v, dtype=np.float64)
    lam = config.lam

    # neutral start: zero weights, biases at the midpoint of the zero-weight scores
    w = np.zeros(n + 1)
    m = np.zeros(n + 1)
    row_max = X.max(axis=1)
    row_min = X.min(axis=1)
    w[0] = 0.5 * (row_max.min() + row_max.max())
    m[0] = 0.5 * (row_min.min() + row_min.max())

    def objective(w_, m_):
        model = DEPModel(w_, m_, lam)
        return weighted_hinge(model.score(X), y, v)

    nv = 2 * (n + 1) + 2 * N
    off_w, off_m, off_xi, off_t = 0, n + 1, 2 * (n + 1), 2 * (n + 1) + N
    cost = np.zeros(nv)
    cost[off_t:] = v
    bounds = [(None, None)] * (2 * (n + 1) + N) + [(0.0, None)] * N

    trace = [objective(w, m)]
    for _ in range(config.max_iter):
        data, ri, ci, rhs = [], [], [], []
        row = 0
        for i in range(N):
            x = X[i]
            xt = np.concatenate([[0.0], x])  # competitor offsets (bias has none)
            if y[i] > 0:
                # -lam*(w_q + xt_q) - (1-lam)*(m_j + xt_j) <= xi_i   for all j
                q = int(np.argmax(_competitors(w, x)))
                for j in range(n + 1):
                    ri += [row, row, row]
                    ci += [off_w + q, off_m + j, off_xi + i]
                    data += [-lam, -(1 - lam), -1.0]
                    rhs.append(lam * xt[q] + (1 - lam) * xt[j])
                    row += 1
            else:
                # lam*(w_j + xt_j) + (1-lam)*(m_q + xt_q) <= xi_i   for all j
                q = int(np.argmin(_competitors(m, x)))
                for j in range(n + 1):
                    ri += [row, row, row]
                    ci += [off_w + j, off_m + q, off_xi + i]
                    data += [lam, (1 - lam), -1.0]
                    rhs.append(-lam * xt[j] - (1 - lam) * xt[q])
                    row += 1
        for i in range(N):  # xi_i - t_i <= 0
            ri += [row, row]
            ci += [off_xi + i, off_t + i]
            data += [1.0, -1.0]
            rhs.append(0.0)
            row += 1
        a_ub = sparse.csr_matrix((data, (ri, ci)), shape=(row, nv))
        res = lp_solve(cost, a_ub, np.asarray(rhs), bounds)
        w = res.x[off_w : off_w + n + 1].copy()
        m = res.x[off_m : off_m + n + 1].copy()
        trace.append(objective(w, m))
        if trace[-2] - trace[-1] < config.tol:
            break
    return DEPModel(w, m, lam), trace


# ---------------------------------------------------------------------------
# greedy training: perceptrons separately, then the mixing coefficient
# ---------------------------------------------------------------------------
def _train_dilation_perceptron(X, y, v, C, r, max_iter=25, tol=1e-6):
    """Minimise sum_i v_i max(0, -y_i delta_w(x_i)) + C ||w - r||_1.

    The negative-class hinge pieces and the l1 term are linear; the
    positive-class hinge rides on the concave -delta_w, so its active
    competitor is re-linearised and the LP re-solved until the true
    objective stops improving.
    """
    N, n = X.shape
    nv = 2 * (n + 1) + N
    off_w, off_s, off_t = 0, n + 1, 2 * (n + 1)
    cost = np.zeros(nv)
    cost[off_s:off_t] = C
    cost[off_t:] = v
    bounds = [(None, None)] * (n + 1) + [(0.0, None)] * (n + 1) + [(0.0, None)] * N

    pos = np.flatnonzero(y > 0)
    neg = np.flatnonzero(y < 0)

    # static rows: negative hinge pieces and the l1 epigraph
    data, ri, ci, rhs = [], [], [], []
    row = 0
    for i in neg:
        xt = np.concatenate([[0.0], X[i]])
        for j in range(n + 1):  # w_j + xt_j <= t_i
            ri += [row, row]
            ci += [off_w + j, off_t + i]
            data += [1.0, -1.0]
            rhs.append(-xt[j])
            row += 1
    for j in range(n + 1):  # |w_j - r_j| <= s_j
        ri += [row, row]
        ci += [off_w + j, off_s + j]
        data += [1.0, -1.0]
        rhs.append(r[j])
        row += 1
        ri += [row, row]
        ci += [off_w + j, off_s + j]
        data += [-1.0, -1.0]
        rhs.append(-r[j])
        row += 1
    static = (list(data), list(ri), list(ci), list(rhs), row)

    w = np.zeros(n + 1)
    row_max = X.max(axis=1)
    w[0] = 0.5 * (row_max.min() + row_max.max())

    def objective(w_):
        scores = np.maximum(w_[0], (X + w_[1:][None, :]).max(axis=1))
        return weighted_hinge(scores, y, v) + C * np.abs(w_ - r).sum()

    best = objective(w)
    for _ in range(max_iter):
        data, ri, ci, rhs, row = (list(static[0]), list(static[1]), list(static[2]), list(static[3]), static[4])
        for i in pos:
            x = X[i]
            q = int(np.argmax(_competitors(w, x)))
            xt_q = 0.0 if q == 0 else x[q - 1]
            # -(w_q + xt_q) <= t_i
            ri += [row, row]
            ci += [off_w + q, off_t + i]
            data += [-1.0, -1.0]
            rhs.append(xt_q)
            row += 1
        a_ub = sparse.csr_matrix((data, (ri, ci)), shape=(row, nv))
        res = lp_solve(cost, a_ub, np.asarray(rhs), bounds)
        w_new = res.x[off_w : off_w + n + 1].copy()
        obj = objective(w_new)
        if obj < best - tol:
            w, best = w_new, obj
        else:
            if obj <= best:
                w, best = w_new, obj
            break
    return w


def greedy_train(features, labels, C: float = 0.0, r: np.ndarray | None = None, v=None) -> DEPModel:
    """Train the dilation and erosion perceptrons separately, then pick the
    mixing coefficient by exact hinge minimisation (`optimal_lambda`).

    The erosion perceptron is trained through the negation isomorphism:
    eps_m(x) = -delta_{-m}(-x), so its hinge program is the dilation one on
    (-X, -y) with reference -r.
    """
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = _check_binary(labels)
    if r is None:
        r = np.zeros(X.shape[1] + 1)
    r = np.asarray(r, dtype=np.float64)
    v = outlier_weights(X, y) if v is None else np.asarray(v, dtype=np.float64)

    w = _train_dilation_perceptron(X, y, v, C, r)
    m = -_train_dilation_perceptron(-X, -y, v, C, -r)
    model = DEPModel(w, m, 0.5)
    lam = optimal_lambda(model.dilation_scores(X), model.erosion_scores(X), y)
    return DEPModel(w, m, lam)


def optimal_lambda(dilation_scores, erosion_scores, labels) -> float:
    """Exact minimiser over [0, 1] of the average hinge of the mixed score.

    The objective sum_i max(0, a_i*lam + b_i) is convex piecewise linear in
    lam, so the minimum is attained at an endpoint or a breakpoint
    -b_i/a_i; all candidates are evaluated and the lowest minimiser wins.
    """
    d = np.asarray(dilation_scores, dtype=np.float64)
    e = np.asarray(erosion_scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if d.shape != e.shape:
        raise ValueError("score vectors must have equal length")
    a = -y * (d - e)
    b = -y * e
    with np.errstate(divide="ignore", invalid="ignore"):
        bp = -b / a
    cands = np.concatenate([[0.0, 1.0], bp[np.isfinite(bp) & (bp > 0) & (bp < 1)]])
    cands = np.unique(cands)  # sorted ascending, so ties keep the lowest lam
    objs = np.maximum(0.0, a[None, :] * cands[:, None] + b[None, :]).sum(axis=1)
    return float(cands[int(np.argmin(objs))])


# ---------------------------------------------------------------------------
# kernels and reduced orderings
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class KernelSpec:
    """A kernel plus the reference point it is evaluated against in a map."""

    kind: str  # linear | polynomial | gaussian | sigmoid
    center: np.ndarray | None = None
    degree: int = 2
    sigma: float = 1.0
    gamma: float = 1.0
    shift: float = 0.0

    def __post_init__(self):
        if self.kind not in ("linear", "polynomial", "gaussian", "sigmoid"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "gaussian" and self.sigma <= 0:
            raise ValueError("gaussian kernel needs sigma > 0")
        if self.center is not None:
            object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))


def kernel_eval(spec: KernelSpec, x, y) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError("kernel arguments must share a dimension")
    if spec.kind == "linear":
        return float(x @ y)
    if spec.kind == "polynomial":
        return float((1.0 + x @ y) ** spec.degree)
    if spec.kind == "gaussian":
        d2 = float(((x - y) ** 2).sum())
        return float(np.exp(-d2 / (2.0 * spec.sigma**2)))
    return float(np.tanh(spec.gamma * (x @ y) + spec.shift))


@dataclass(frozen=True)
class ReducedMap:
    """rho(x) = [k_1(x, c_1), ..., k_m(x, c_m)]: the feature map inducing a
    reduced ordering on the inputs."""

    kernels: tuple[KernelSpec, ...]

    def __post_init__(self):
        if len(self.kernels) < 1:
            raise ValueError("a reduced map needs at least one kernel")
        if any(k.center is None for k in self.kernels):
            raise ValueError("every kernel in a reduced map needs a center")
        object.__setattr__(self, "kernels", tuple(self.kernels))

    @property
    def output_dim(self) -> int:
        return len(self.kernels)

    def apply(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        dim = self.kernels[0].center.size
        if X.shape[1] != dim:
            raise ValueError(f"input dim {X.shape[1]} != kernel dim {dim}")
        cols = []
        for k in self.kernels:
            if k.kind == "gaussian":
                d2 = ((X - k.center[None, :]) ** 2).sum(axis=1)
                cols.append(np.exp(-d2 / (2.0 * k.sigma**2)))
            elif k.kind == "linear":
                cols.append(X @ k.center)
            elif k.kind == "polynomial":
                cols.append((1.0 + X @ k.center) ** k.degree)
            else:
                cols.append(np.tanh(k.gamma * (X @ k.center) + k.shift))
        return np.stack(cols, axis=1)


def median_pairwise_distance(X: np.ndarray) -> float:
    """Median Euclidean distance over distinct unordered sample pairs."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    sq = (X * X).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    iu = np.triu_indices(len(X), k=1)
    return float(np.median(np.sqrt(np.maximum(d2[iu], 0.0))))


# ---------------------------------------------------------------------------
# bagging of reduced DEPs (binary level)
# ---------------------------------------------------------------------------
@dataclass
class ReducedDEP:
    mapping: ReducedMap
    model: DEPModel

    def score(self, X) -> np.ndarray:
        return self.model.score(self.mapping.apply(X))


@dataclass
class BaggedDEP:
    members: list[ReducedDEP]

    def score(self, X) -> np.ndarray:
        """Ensemble score: average of member scores."""
        return np.mean([m.score(X) for m in self.members], axis=0)

    def predict(self, X) -> np.ndarray:
        return np.where(self.score(X) > 0, 1, -1)


def bagging_fit(features, labels, n: int, fraction: float = 1.0, C: float = 0.0, seed: int = 0) -> BaggedDEP:
    """n bootstrap bags; per bag a Gaussian reduced map (centers = class
    centroids of the bag, sigma = median pairwise distance of the bag) and a
    greedy reduced DEP trained on the mapped data."""
    if n < 1:
        raise ValueError("bag count must be >= 1")
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = _check_binary(labels)
    ds = Dataset(X, np.where(y > 0, 1, 0), name="pair")  # bootstrap works on class ids
    members = []
    for bag in range(n):
        sample = bootstrap_sample(ds, fraction, seed=seed * 10007 + bag)
        Xb = sample.features
        yb = np.where(sample.labels > 0, 1, -1)
        sigma = median_pairwise_distance(Xb)
        if sigma == 0.0:
            sigma = 1.0  # degenerate bag of identical points
        centers = [Xb[yb == -1].mean(axis=0), Xb[yb == 1].mean(axis=0)]
        mapping = ReducedMap(tuple(KernelSpec("gaussian", center=c, sigma=sigma) for c in centers))
        model = greedy_train(mapping.apply(Xb), yb, C=C)
        members.append(ReducedDEP(mapping, model))
    return BaggedDEP(members)


# ---------------------------------------------------------------------------
# multiclass reductions
# ---------------------------------------------------------------------------
@dataclass
class OvOEnsemble:
    class_count: int
    models: dict[tuple[int, int], object]  # (a, b) -> binary model with .predict -> {-1,+1}

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        votes = np.zeros((len(X), self.class_count), dtype=np.int64)
        for (a, b), model in sorted(self.models.items()):
            pred = model.predict(X)
            votes[pred < 0, a] += 1
            votes[pred > 0, b] += 1
        return votes.argmax(axis=1)  # argmax takes the smallest index on ties


def ovo_fit(dataset: Dataset, class_count: int, trainer) -> OvOEnsemble:
    """One binary model per class pair; `trainer(features, pm1_labels, pair)`
    returns a model with a {-1,+1} `predict`.  Pair (a, b) maps a -> -1."""
    if class_count < 2:
        raise ValueError("one-vs-one needs at least two classes")
    models = {}
    for a in range(class_count):
        for b in range(a + 1, class_count):
            pair_ds = subset_by_classes(dataset, (a, b))
            models[(a, b)] = trainer(pair_ds.features, pair_ds.labels, (a, b))
    return OvOEnsemble(class_count, models)


@dataclass
class OvREnsemble:
    class_count: int
    models: list[object]  # per class, scoring models

    def predict(self, X) -> np.ndarray:
        scores = np.stack([m.score(X) for m in self.models], axis=1)
        return scores.argmax(axis=1)


def ovr_weights(labels: np.ndarray, positive_class: int, class_count: int) -> np.ndarray:
    """One-vs-rest sample weights: 1 for the positive class, 1/K for the rest."""
    y = np.asarray(labels)
    return np.where(y == positive_class, 1.0, 1.0 / class_count)


def ovr_fit(dataset: Dataset, class_count: int, trainer) -> OvREnsemble:
    """One binary model per class on the full data with the 1 vs 1/K
    weighting; `trainer(features, pm1_labels, v, cls)` returns a scorer."""
    if class_count < 2:
        raise ValueError("one-vs-rest needs at least two classes")
    models = []
    for cls in range(class_count):
        if not (dataset.labels == cls).any():
            raise ValueError(f"class {cls} absent from the dataset")
        y = np.where(dataset.labels == cls, 1, -1)
        v = ovr_weights(dataset.labels, cls, class_count)
        models.append(trainer(dataset.features, y, v, cls))
    return OvREnsemble(class_count, models)


# ---------------------------------------------------------------------------
# ensemble serialization (same container family as morphonet checkpoints)
# ---------------------------------------------------------------------------
def save_dep_ensemble(ensemble: OvOEnsemble, path: str, extra: dict | None = None) -> None:
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "kind": "dep-ovo",
        "class_count": ensemble.class_count,
        "pairs": sorted(ensemble.models.keys()),
        "extra": extra or {},
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)}
    for (a, b), model in ensemble.models.items():
        tag = f"{a}_{b}"
        if not isinstance(model, BaggedDEP):
            raise ValueError("only bagged reduced DEP ensembles are serialisable")
        for k, member in enumerate(model.members):
            arrays[f"p{tag}_m{k}_w"] = member.model.w
            arrays[f"p{tag}_m{k}_m"] = member.model.m
            arrays[f"p{tag}_m{k}_lam"] = np.asarray(member.model.lam)
            arrays[f"p{tag}_m{k}_centers"] = np.stack([kk.center for kk in member.mapping.kernels])
            arrays[f"p{tag}_m{k}_sigma"] = np.asarray(member.mapping.kernels[0].sigma)
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_dep_ensemble(path: str) -> OvOEnsemble:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("format_version") != CHECKPOINT_VERSION or meta.get("kind") != "dep-ovo":
            raise ValueError("not a dep-ovo checkpoint")
        models = {}
        for a, b in meta["pairs"]:
            tag = f"{a}_{b}"
            members = []
            k = 0
            while f"p{tag}_m{k}_w" in data:
                centers = data[f"p{tag}_m{k}_centers"]
                sigma = float(data[f"p{tag}_m{k}_sigma"])
                mapping = ReducedMap(tuple(KernelSpec("gaussian", center=c, sigma=sigma) for c in centers))
                model = DEPModel(
                    data[f"p{tag}_m{k}_w"].copy(),
                    data[f"p{tag}_m{k}_m"].copy(),
                    float(data[f"p{tag}_m{k}_lam"]),
                )
                members.append(ReducedDEP(mapping, model))
                k += 1
            models[(a, b)] = BaggedDEP(members)
    return OvOEnsemble(meta["class_count"], models)
