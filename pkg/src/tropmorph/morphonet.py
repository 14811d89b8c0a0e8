"""Dense morphological networks and the FF-ReLU baseline.

Hidden layers are stacks of dilation / erosion units (bias competing inside
the max/min, so a unit over n inputs owns n+1 weights), their log-sum-exp
softened variants, or Linear+ReLU pairs.  The output layer is always fully
connected.  Each unit-bearing hidden layer carries a boolean retention mask
(all True until pruned); masked-out units are removed from the forward pass
and from the next layer's fan-in, while the underlying parameters are kept
intact.
"""

from __future__ import annotations

import enum
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Graph
from .optim import make_optimizer

CHECKPOINT_VERSION = 1


class LayerKind(enum.Enum):
    DILATION = "dilation"
    EROSION = "erosion"
    MIXED = "mixed"
    SOFT_DILATION = "softdilation"
    SOFT_EROSION = "softerosion"
    SOFT_MIXED = "softmixed"
    LINEAR = "linear"
    RELU = "relu"


MORPH_KINDS = {LayerKind.DILATION, LayerKind.EROSION, LayerKind.MIXED}
SOFT_KINDS = {LayerKind.SOFT_DILATION, LayerKind.SOFT_EROSION, LayerKind.SOFT_MIXED}
MIXED_KINDS = {LayerKind.MIXED, LayerKind.SOFT_MIXED}

DEFAULT_BETA = 5.0  # hardness for soft hidden layers unless configured


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    width: int
    beta: float = DEFAULT_BETA

    def __post_init__(self):
        if self.width < 1:
            raise ValueError(f"layer width must be >= 1, got {self.width}")
        if self.kind in MIXED_KINDS and self.width % 2 != 0:
            raise ValueError(f"mixed layer width must be even, got {self.width}")
        if self.kind in SOFT_KINDS and self.beta <= 0:
            raise ValueError("soft layer beta must be positive")


def parse_arch(text: str) -> list[LayerSpec]:
    """Parse 'mixed:128,linear:10' style architecture strings.

    'relu:W' expands to a Linear(W) + ReLU pair; soft kinds accept an
    optional '@beta' suffix, e.g. 'softmixed:128@5'.
    """
    specs: list[LayerSpec] = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        name, _, rest = token.partition(":")
        if not rest:
            raise ValueError(f"layer token {token!r} needs a width, e.g. 'mixed:128'")
        width_s, _, beta_s = rest.partition("@")
        width = int(width_s)
        beta = float(beta_s) if beta_s else DEFAULT_BETA
        kind = LayerKind(name.lower()) if name.lower() != "relu" else LayerKind.RELU
        if kind is LayerKind.RELU:
            specs.append(LayerSpec(LayerKind.LINEAR, width))
            specs.append(LayerSpec(LayerKind.RELU, width))
        else:
            specs.append(LayerSpec(kind, width, beta))
    return specs


@dataclass
class OptimizerConfig:
    kind: str = "adam"
    lr: float = 0.001
    batch_size: int = 128
    epochs: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")


@dataclass
class TrainHistory:
    losses: list[float] = field(default_factory=list)
    accuracies: list[float] = field(default_factory=list)


class TrainingDiverged(RuntimeError):
    pass


class MorphNetwork:
    def __init__(self, input_dim: int, specs: list[LayerSpec], params: list[dict], masks: dict[int, np.ndarray]):
        self.input_dim = input_dim
        self.specs = specs
        self.params = params  # per layer: {"W": ...} or {"W": ..., "b": ...} or {}
        self.masks = masks  # layer index -> bool retention mask over units

    @property
    def class_count(self) -> int:
        return self.specs[-1].width

    def hidden_unit_layers(self) -> list[int]:
        """Indices of unit-bearing hidden layers (prunable)."""
        out = []
        for i, spec in enumerate(self.specs[:-1]):
            if spec.kind in MORPH_KINDS | SOFT_KINDS | {LayerKind.LINEAR}:
                out.append(i)
        return out

    def copy(self) -> "MorphNetwork":
        params = [{k: v.copy() for k, v in p.items()} for p in self.params]
        masks = {i: m.copy() for i, m in self.masks.items()}
        return MorphNetwork(self.input_dim, list(self.specs), params, masks)

    # ---- forward ------------------------------------------------------
    def _is_min_vector(self, spec: LayerSpec, width: int) -> np.ndarray:
        if spec.kind in (LayerKind.DILATION, LayerKind.SOFT_DILATION):
            return np.zeros(width, dtype=bool)
        if spec.kind in (LayerKind.EROSION, LayerKind.SOFT_EROSION):
            return np.ones(width, dtype=bool)
        # mixed: first half dilation, second half erosion
        v = np.zeros(width, dtype=bool)
        v[width // 2 :] = True
        return v

    def forward(self, x: np.ndarray, respect_masks: bool = True) -> np.ndarray:
        """Logits for a batch; masked units are excluded from the computation."""
        from . import _kernels

        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        prev_keep: np.ndarray | None = None  # mask of the previous layer's units
        h = x
        for i, spec in enumerate(self.specs):
            p = self.params[i]
            keep = None
            if respect_masks and i in self.masks and not self.masks[i].all():
                keep = self.masks[i]
            if spec.kind in MORPH_KINDS | SOFT_KINDS:
                W = p["W"]
                if prev_keep is not None:
                    cols = np.concatenate([[0], 1 + np.flatnonzero(prev_keep)])
                    W = W[:, cols]
                is_min = self._is_min_vector(spec, spec.width)
                if keep is not None:
                    W = W[keep]
                    is_min = is_min[keep]
                if spec.kind in MORPH_KINDS:
                    h, _ = _kernels.morph_forward(h, W, is_min)
                else:
                    h = _kernels.soft_morph_forward(h, W, is_min, spec.beta)
                prev_keep = keep if keep is not None else None
            elif spec.kind is LayerKind.LINEAR:
                W, b = p["W"], p["b"]
                if prev_keep is not None:
                    W = W[:, prev_keep]
                if keep is not None:
                    W, b = W[keep], b[keep]
                h = h @ W.T + b[None, :]
                prev_keep = keep if keep is not None else None
            elif spec.kind is LayerKind.RELU:
                h = np.maximum(h, 0.0)
                # relu has no units of its own; previous mask stays in effect
            else:  # pragma: no cover
                raise ValueError(f"unhandled layer kind {spec.kind}")
        return h

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x).argmax(axis=1)


def build_network(input_dim: int, specs: list[LayerSpec], class_count: int, seed: int = 0) -> MorphNetwork:
    """Initialise a network: morphological weights uniform in 0.01*[-1, 1],
    linear layers Glorot uniform with zero bias.  Deterministic under seed."""
    if not specs:
        raise ValueError("layer specs must be non-empty")
    if specs[-1].kind is not LayerKind.LINEAR:
        raise ValueError("the output layer must be a linear layer")
    if specs[-1].width != class_count:
        raise ValueError(f"output width {specs[-1].width} != class count {class_count}")
    rng = np.random.default_rng(seed)
    params: list[dict] = []
    masks: dict[int, np.ndarray] = {}
    fan_in = input_dim
    for i, spec in enumerate(specs):
        if spec.kind in MORPH_KINDS | SOFT_KINDS:
            W = rng.uniform(-1.0, 1.0, size=(spec.width, fan_in + 1)) * 0.01
            params.append({"W": W})
            fan_in = spec.width
        elif spec.kind is LayerKind.LINEAR:
            limit = np.sqrt(6.0 / (fan_in + spec.width))
            W = rng.uniform(-limit, limit, size=(spec.width, fan_in))
            params.append({"W": W, "b": np.zeros(spec.width)})
            fan_in = spec.width
        elif spec.kind is LayerKind.RELU:
            if spec.width != fan_in:
                raise ValueError(f"relu width {spec.width} breaks the dimension chain ({fan_in})")
            params.append({})
        else:  # pragma: no cover
            raise ValueError(f"unhandled layer kind {spec.kind}")
    net = MorphNetwork(input_dim, list(specs), params, masks)
    for i in net.hidden_unit_layers():
        net.masks[i] = np.ones(specs[i].width, dtype=bool)
    return net


def _build_graph(net: MorphNetwork):
    g = Graph()
    x = g.input("x")
    labels = g.input("labels")
    h = x
    param_nodes = []
    for i, spec in enumerate(net.specs):
        p = net.params[i]
        if spec.kind in MORPH_KINDS | SOFT_KINDS:
            W = g.parameter(p["W"], name=f"W{i}")
            param_nodes.append((i, "W", W))
            is_min = net._is_min_vector(spec, spec.width)
            if spec.kind in MORPH_KINDS:
                h = g.morph(h, W, is_min, name=f"morph{i}")
            else:
                h = g.soft_morph(h, W, is_min, spec.beta, name=f"softmorph{i}")
        elif spec.kind is LayerKind.LINEAR:
            W = g.parameter(p["W"], name=f"W{i}")
            b = g.parameter(p["b"], name=f"b{i}")
            param_nodes.append((i, "W", W))
            param_nodes.append((i, "b", b))
            h = g.linear(h, W, b, name=f"linear{i}")
        elif spec.kind is LayerKind.RELU:
            h = g.relu(h, name=f"relu{i}")
    loss = g.softmax_cross_entropy(h, labels)
    return g, x, labels, h, loss, param_nodes


def train(net: MorphNetwork, features: np.ndarray, labels: np.ndarray, config: OptimizerConfig) -> TrainHistory:
    """Mini-batch softmax cross-entropy training; mutates `net` in place.

    If any prune mask is active, the retained sub-network is trained and the
    results scattered back, leaving masked-out parameters untouched.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(features) == 0:
        raise ValueError("empty training set")
    if labels.min() < 0 or labels.max() >= net.class_count:
        raise ValueError("labels out of range for the network's class count")

    masked = any(not m.all() for m in net.masks.values())
    work = _slice_to_masks(net) if masked else net

    g, x_node, y_node, logits, loss, param_nodes = _build_graph(work)
    opt = make_optimizer(config.kind, config.lr)
    rng = np.random.default_rng(config.seed)
    n = len(features)
    history = TrainHistory()
    params = [node for (_, _, node) in param_nodes]
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        total_loss = 0.0
        correct = 0
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            g.forward({x_node: features[idx], y_node: labels[idx]})
            batch_loss = float(loss.value)
            if not np.isfinite(batch_loss):
                raise TrainingDiverged(
                    f"non-finite loss {batch_loss} at epoch {epoch}, batch {start // config.batch_size}"
                )
            grads = g.backward(loss)
            opt.step([p.value for p in params], [grads[p] for p in params])
            total_loss += batch_loss * len(idx)
            correct += int((logits.value.argmax(axis=1) == labels[idx]).sum())
        history.losses.append(total_loss / n)
        history.accuracies.append(correct / n)
    # write trained values back into the network
    for i, key, node in param_nodes:
        work.params[i][key] = node.value
    if masked:
        _scatter_from_masks(net, work)
    return history


def _slice_to_masks(net: MorphNetwork) -> MorphNetwork:
    """Materialise the retained sub-network implied by the masks."""
    params: list[dict] = []
    specs: list[LayerSpec] = []
    prev_keep: np.ndarray | None = None
    cur_width = net.input_dim
    for i, spec in enumerate(net.specs):
        p = net.params[i]
        keep = net.masks.get(i)
        if spec.kind in MORPH_KINDS | SOFT_KINDS:
            W = p["W"]
            if prev_keep is not None:
                cols = np.concatenate([[0], 1 + np.flatnonzero(prev_keep)])
                W = W[:, cols]
            if keep is not None:
                W = W[keep]
            params.append({"W": W.copy()})
            cur_width = W.shape[0]
            specs.append(LayerSpec(spec.kind, cur_width, spec.beta))
            prev_keep = keep
        elif spec.kind is LayerKind.LINEAR:
            W, b = p["W"], p["b"]
            if prev_keep is not None:
                W = W[:, prev_keep]
            if keep is not None:
                W, b = W[keep], b[keep]
            params.append({"W": W.copy(), "b": b.copy()})
            cur_width = W.shape[0]
            specs.append(LayerSpec(spec.kind, cur_width, spec.beta))
            prev_keep = keep
        else:  # relu: no units of its own, width follows the layer before it
            params.append({})
            specs.append(LayerSpec(spec.kind, cur_width, spec.beta))
    return MorphNetwork(net.input_dim, specs, params, {})


def _scatter_from_masks(net: MorphNetwork, work: MorphNetwork) -> None:
    prev_keep: np.ndarray | None = None
    for i, spec in enumerate(net.specs):
        keep = net.masks.get(i)
        if spec.kind in MORPH_KINDS | SOFT_KINDS:
            rows = np.flatnonzero(keep) if keep is not None else np.arange(net.specs[i].width)
            if prev_keep is not None:
                cols = np.concatenate([[0], 1 + np.flatnonzero(prev_keep)])
            else:
                cols = np.arange(net.params[i]["W"].shape[1])
            net.params[i]["W"][np.ix_(rows, cols)] = work.params[i]["W"]
            prev_keep = keep
        elif spec.kind is LayerKind.LINEAR:
            rows = np.flatnonzero(keep) if keep is not None else np.arange(net.specs[i].width)
            cols = np.flatnonzero(prev_keep) if prev_keep is not None else np.arange(net.params[i]["W"].shape[1])
            net.params[i]["W"][np.ix_(rows, cols)] = work.params[i]["W"]
            net.params[i]["b"][rows] = work.params[i]["b"]
            prev_keep = keep


def evaluate(net: MorphNetwork, features: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of argmax-correct predictions (masked units excluded)."""
    if len(features) == 0:
        raise ValueError("empty evaluation set")
    preds = net.predict(np.asarray(features, dtype=np.float64))
    return float((preds == np.asarray(labels, dtype=np.int64)).mean())


# ---- checkpoint container ---------------------------------------------
def save_checkpoint(net: MorphNetwork, path: str, extra: dict | None = None) -> None:
    """Single-file npz container: versioned meta JSON + masks + parameters."""
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "kind": "morphnet",
        "input_dim": net.input_dim,
        "specs": [{"kind": s.kind.value, "width": s.width, "beta": s.beta} for s in net.specs],
        "extra": extra or {},
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)}
    for i, p in enumerate(net.params):
        for key, arr in p.items():
            arrays[f"param_{i}_{key}"] = arr
    for i, m in net.masks.items():
        arrays[f"mask_{i}"] = m
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_checkpoint(path: str) -> MorphNetwork:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('format_version')}")
        if meta.get("kind") != "morphnet":
            raise ValueError(f"not a morphnet checkpoint: {meta.get('kind')}")
        specs = [LayerSpec(LayerKind(s["kind"]), s["width"], s["beta"]) for s in meta["specs"]]
        params: list[dict] = []
        for i in range(len(specs)):
            p = {}
            for key in ("W", "b"):
                name = f"param_{i}_{key}"
                if name in data:
                    p[key] = data[name].copy()
            params.append(p)
        masks = {}
        for name in data.files:
            if name.startswith("mask_"):
                masks[int(name.split("_")[1])] = data[name].astype(bool).copy()
    return MorphNetwork(meta["input_dim"], specs, params, masks)
