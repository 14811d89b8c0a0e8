"""Minimal reverse-mode differentiation over a static computation graph.

Node values are per-sample batches of shape (B, d); parameters carry their
own shapes and broadcast across the batch.  Loss nodes reduce to a scalar
mean over the batch, so a backward pass from a loss yields batch-averaged
parameter gradients directly.

Hard morphological nodes (morph, maxpool, minpool) cache the winning
competitor index per sample during forward and route the whole incoming
gradient through that single coordinate; ties select the lowest index.
Soft nodes propagate the exact softmax-weighted gradient.  Everything is
float64.
"""

from __future__ import annotations

import numpy as np

from . import _kernels


class GraphError(Exception):
    pass


class Node:
    __slots__ = ("kind", "preds", "value", "grad", "cache", "opts", "name")

    def __init__(self, kind: str, preds=(), name: str = "", **opts):
        self.kind = kind
        self.preds = list(preds)
        self.value = None
        self.grad = None
        self.cache = {}
        self.opts = opts
        self.name = name or kind

    def __repr__(self):
        shape = None if self.value is None else self.value.shape
        return f"<Node {self.name} kind={self.kind} shape={shape}>"


class Graph:
    """Computation graph; nodes are appended in topological order."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._ran_forward = False

    def _add(self, node: Node) -> Node:
        self.nodes.append(node)
        return node

    # ---- leaves -------------------------------------------------------
    def input(self, name: str = "input") -> Node:
        return self._add(Node("input", name=name))

    def parameter(self, array, name: str = "parameter") -> Node:
        node = self._add(Node("parameter", name=name))
        node.value = np.asarray(array, dtype=np.float64).copy()
        return node

    # ---- layer ops ----------------------------------------------------
    def linear(self, x: Node, w: Node, b: Node | None = None, name: str = "linear") -> Node:
        preds = [x, w] if b is None else [x, w, b]
        return self._add(Node("linear", preds, name=name))

    def morph(self, x: Node, w: Node, is_min, name: str = "morph") -> Node:
        node = self._add(Node("morph", [x, w], name=name))
        node.opts["is_min"] = np.asarray(is_min, dtype=bool)
        return node

    def soft_morph(self, x: Node, w: Node, is_min, beta: float, name: str = "soft_morph") -> Node:
        if beta <= 0:
            raise ValueError("beta must be positive")
        node = self._add(Node("soft_morph", [x, w], name=name))
        node.opts["is_min"] = np.asarray(is_min, dtype=bool)
        node.opts["beta"] = float(beta)
        return node

    def relu(self, x: Node, name: str = "relu") -> Node:
        return self._add(Node("relu", [x], name=name))

    def pool(self, x: Node, group: int, mode: str, beta: float | None = None, name: str = "") -> Node:
        """Reduce consecutive groups of `group` columns by max or min.

        (B, K*group) -> (B, K).  With beta set the reduction is the soft
        log-sum-exp version; otherwise hard with cached argmax/argmin.
        """
        if mode not in ("max", "min"):
            raise ValueError(f"pool mode must be 'max' or 'min', got {mode!r}")
        kind = "pool" if beta is None else "soft_pool"
        node = self._add(Node(kind, [x], name=name or f"{mode}{kind}"))
        node.opts["group"] = int(group)
        node.opts["is_min"] = mode == "min"
        if beta is not None:
            if beta <= 0:
                raise ValueError("beta must be positive")
            node.opts["beta"] = float(beta)
        return node

    def add(self, a: Node, b: Node, name: str = "add") -> Node:
        return self._add(Node("add", [a, b], name=name))

    def scale(self, x: Node, c: float, name: str = "scale") -> Node:
        node = self._add(Node("scale", [x], name=name))
        node.opts["c"] = float(c)
        return node

    # ---- losses -------------------------------------------------------
    def softmax_cross_entropy(self, logits: Node, labels: Node, name: str = "xent") -> Node:
        return self._add(Node("softmax_xent", [logits, labels], name=name))

    def mse(self, pred: Node, target: Node, name: str = "mse") -> Node:
        return self._add(Node("mse", [pred, target], name=name))

    # ---- execution ----------------------------------------------------
    def forward(self, feeds: dict) -> None:
        """Run the graph; `feeds` binds every input node to an array."""
        for node in self.nodes:
            if node.kind == "input":
                if node not in feeds:
                    raise GraphError(f"unbound input node {node.name!r}")
                arr = np.asarray(feeds[node])
                if arr.dtype.kind == "f":
                    arr = arr.astype(np.float64, copy=False)
                if arr.ndim == 0 or (arr.ndim >= 1 and arr.shape[0] == 0):
                    raise GraphError(f"empty batch bound to input {node.name!r}")
                node.value = arr
                continue
            if node.kind == "parameter":
                continue
            node.value = self._compute(node)
        self._ran_forward = True

    def _compute(self, node: Node):
        kind = node.kind
        vals = [p.value for p in node.preds]
        if kind == "linear":
            x, w = vals[0], vals[1]
            if x.shape[1] != w.shape[1]:
                raise GraphError(f"linear shape mismatch: x {x.shape} vs W {w.shape}")
            out = x @ w.T
            if len(vals) == 3:
                out = out + vals[2][None, :]
            return out
        if kind == "morph":
            x, w = vals
            if w.shape[1] != x.shape[1] + 1:
                raise GraphError(f"morph shape mismatch: x {x.shape} vs W {w.shape}")
            out, win = _kernels.morph_forward(x, w, node.opts["is_min"])
            node.cache["win"] = win
            return out
        if kind == "soft_morph":
            x, w = vals
            if w.shape[1] != x.shape[1] + 1:
                raise GraphError(f"soft_morph shape mismatch: x {x.shape} vs W {w.shape}")
            return _kernels.soft_morph_forward(x, w, node.opts["is_min"], node.opts["beta"])
        if kind == "relu":
            return np.maximum(vals[0], 0.0)
        if kind == "pool":
            (x,) = vals
            B = x.shape[0]
            group = node.opts["group"]
            xg = x.reshape(B, -1, group)
            idx = xg.argmin(axis=2) if node.opts["is_min"] else xg.argmax(axis=2)
            node.cache["win"] = idx
            return np.take_along_axis(xg, idx[:, :, None], 2)[:, :, 0]
        if kind == "soft_pool":
            (x,) = vals
            B = x.shape[0]
            group = node.opts["group"]
            beta = node.opts["beta"]
            sign = -1.0 if node.opts["is_min"] else 1.0
            z = sign * beta * x.reshape(B, -1, group)
            m = z.max(axis=2)
            return sign * (m + np.log(np.exp(z - m[:, :, None]).sum(axis=2))) / beta
        if kind == "add":
            return vals[0] + vals[1]
        if kind == "scale":
            return node.opts["c"] * vals[0]
        if kind == "softmax_xent":
            logits, labels = vals
            labels = labels.astype(np.int64).ravel()
            shifted = logits - logits.max(axis=1, keepdims=True)
            logz = np.log(np.exp(shifted).sum(axis=1))
            node.cache["softmax"] = np.exp(shifted - logz[:, None])
            node.cache["labels"] = labels
            picked = shifted[np.arange(len(labels)), labels]
            return np.asarray(np.mean(logz - picked))
        if kind == "mse":
            pred, target = vals
            return np.asarray(np.mean((pred - target) ** 2))
        raise GraphError(f"unknown node kind {kind!r}")

    def backward(self, loss: Node) -> dict[Node, np.ndarray]:
        """Backpropagate from a scalar loss; returns parameter gradients."""
        if not self._ran_forward or loss.value is None:
            raise GraphError("backward called before forward")
        if loss.value.shape != ():
            raise GraphError("backward must start from a scalar loss node")
        for node in self.nodes:
            node.grad = np.zeros_like(node.value) if node.value is not None else None
        loss.grad = np.asarray(1.0)
        order = self.nodes[: self.nodes.index(loss) + 1]
        for node in reversed(order):
            if node.grad is None or node.kind in ("input", "parameter"):
                continue
            self._accumulate(node)
        return {n: n.grad for n in self.nodes if n.kind == "parameter"}

    def _accumulate(self, node: Node):
        kind = node.kind
        g = node.grad
        preds = node.preds
        if kind == "linear":
            x, w = preds[0], preds[1]
            x.grad += g @ w.value
            w.grad += g.T @ x.value
            if len(preds) == 3:
                preds[2].grad += g.sum(axis=0)
            return
        if kind == "morph":
            x, w = preds
            if "win" not in node.cache:
                raise GraphError("morph backward before forward")
            dw, dx = _kernels.morph_backward(g, x.value, w.value, node.cache["win"])
            w.grad += dw
            x.grad += dx
            return
        if kind == "soft_morph":
            x, w = preds
            dw, dx = _kernels.soft_morph_backward(
                g, x.value, w.value, node.opts["is_min"], node.opts["beta"], node.value
            )
            w.grad += dw
            x.grad += dx
            return
        if kind == "relu":
            preds[0].grad += g * (node.value > 0)
            return
        if kind == "pool":
            (x,) = preds
            B = g.shape[0]
            group = node.opts["group"]
            dx = np.zeros((B, g.shape[1], group))
            np.put_along_axis(dx, node.cache["win"][:, :, None], g[:, :, None], axis=2)
            x.grad += dx.reshape(x.value.shape)
            return
        if kind == "soft_pool":
            (x,) = preds
            B = g.shape[0]
            group = node.opts["group"]
            beta = node.opts["beta"]
            sign = -1.0 if node.opts["is_min"] else 1.0
            xg = x.value.reshape(B, -1, group)
            p = np.exp(beta * sign * (xg - node.value[:, :, None]))
            x.grad += (g[:, :, None] * p).reshape(x.value.shape)
            return
        if kind == "add":
            preds[0].grad += g
            preds[1].grad += g
            return
        if kind == "scale":
            preds[0].grad += node.opts["c"] * g
            return
        if kind == "softmax_xent":
            logits = preds[0]
            softmax = node.cache["softmax"]
            labels = node.cache["labels"]
            d = softmax.copy()
            d[np.arange(len(labels)), labels] -= 1.0
            logits.grad += g * d / len(labels)
            return
        if kind == "mse":
            pred, target = preds
            d = 2.0 * (pred.value - target.value) / pred.value.size
            pred.grad += g * d
            if target.kind not in ("input",):
                target.grad += -g * d
            return
        raise GraphError(f"unknown node kind {kind!r}")

    def parameters(self) -> list[Node]:
        return [n for n in self.nodes if n.kind == "parameter"]


def grad_check(graph: Graph, loss: Node, feeds: dict, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error is |analytic - numeric| / max(1, |numeric|), maximised
    over every entry of every parameter.  Intended for smooth graphs (soft
    ops, linear, losses) or points away from hard-op kinks.
    """
    graph.forward(feeds)
    grads = graph.backward(loss)
    worst = 0.0
    for p in graph.parameters():
        analytic = grads[p]
        flat = p.value.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            graph.forward(feeds)
            up = float(loss.value)
            flat[i] = orig - eps
            graph.forward(feeds)
            down = float(loss.value)
            flat[i] = orig
            numeric = (up - down) / (2 * eps)
            err = abs(analytic.ravel()[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    graph.forward(feeds)  # restore values
    return worst
