"""l1-norm structured unit pruning and the accuracy-vs-retention sweep.

A hidden unit's score is the l1 norm of its incoming weight vector with the
bias included.  Pruning at retention p keeps the ceil(p% * width) highest
scoring units of each hidden layer (ties keep the lower index) by setting
the layer's boolean mask; parameters are never modified, so masks at
different p can be recomputed from the same trained network.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .morphonet import MIXED_KINDS, MORPH_KINDS, SOFT_KINDS, LayerKind, MorphNetwork, evaluate


@dataclass
class PruneReport:
    model: str
    optimizer: str
    dataset: str
    rows: list[tuple[float, float]] = field(default_factory=list)  # (p, accuracy)

    def __post_init__(self):
        self._validate()

    def _validate(self):
        ps = [p for p, _ in self.rows]
        if any(b >= a for a, b in zip(ps, ps[1:])):
            raise ValueError("retention percentages must be strictly decreasing")
        if any(not (0.0 <= acc <= 1.0) for _, acc in self.rows):
            raise ValueError("accuracies must lie in [0, 1]")

    def to_csv(self, manifest: str = "") -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["model", "optimizer", "dataset", "p", "accuracy", "manifest"])
        for p, acc in self.rows:
            writer.writerow([self.model, self.optimizer, self.dataset, f"{p:g}", f"{acc:.6f}", manifest])
        return buf.getvalue()


def _score_layer_index(net: MorphNetwork, layer_index: int) -> int:
    """Resolve a layer index to the unit-bearing layer it scores.

    A ReLU layer has no weights of its own; its units are the rows of the
    preceding linear layer.
    """
    if not 0 <= layer_index < len(net.specs):
        raise IndexError(f"layer index {layer_index} out of range")
    if layer_index == len(net.specs) - 1:
        raise ValueError("the output layer cannot be pruned")
    spec = net.specs[layer_index]
    if spec.kind is LayerKind.RELU:
        layer_index -= 1
        spec = net.specs[layer_index]
    if spec.kind not in MORPH_KINDS | SOFT_KINDS | {LayerKind.LINEAR}:
        raise ValueError(f"layer {layer_index} ({spec.kind.value}) has no prunable units")
    return layer_index


def unit_scores(net: MorphNetwork, layer_index: int) -> np.ndarray:
    """Per-unit l1 norms of incoming weights, bias included."""
    idx = _score_layer_index(net, layer_index)
    p = net.params[idx]
    if net.specs[idx].kind is LayerKind.LINEAR:
        return np.abs(p["W"]).sum(axis=1) + np.abs(p["b"])
    return np.abs(p["W"]).sum(axis=1)


def _top_units(scores: np.ndarray, count: int) -> np.ndarray:
    """Boolean mask of the `count` highest scores; ties keep lower indices."""
    order = np.argsort(-scores, kind="stable")
    keep = np.zeros(scores.size, dtype=bool)
    keep[order[:count]] = True
    return keep


def prune(net: MorphNetwork, p: float) -> MorphNetwork:
    """Return a copy of `net` with masks retaining the top p% of units.

    Mixed layers are pruned within each operator half separately so heavy
    pruning preserves the dilation/erosion split.
    """
    if not 0 < p <= 100:
        raise ValueError(f"retention percentage must be in (0, 100], got {p}")
    out = net.copy()
    for i in out.hidden_unit_layers():
        scores = unit_scores(out, i)
        width = scores.size
        if out.specs[i].kind in MIXED_KINDS:
            half = width // 2
            count = int(np.ceil(p / 100.0 * half))
            keep = np.concatenate([_top_units(scores[:half], count), _top_units(scores[half:], count)])
        else:
            count = int(np.ceil(p / 100.0 * width))
            keep = _top_units(scores, count)
        out.masks[i] = keep
    return out


def prune_sweep(
    net: MorphNetwork,
    features: np.ndarray,
    labels: np.ndarray,
    p_list: list[float],
    model: str = "",
    optimizer: str = "",
    dataset: str = "",
) -> PruneReport:
    """Evaluate a fresh mask per retention level, rows in the given order."""
    if not p_list:
        raise ValueError("p list must be non-empty")
    if len(features) == 0:
        raise ValueError("empty evaluation set")
    rows = []
    for p in p_list:
        pruned = prune(net, p)
        rows.append((float(p), evaluate(pruned, features, labels)))
    return PruneReport(model=model, optimizer=optimizer, dataset=dataset, rows=rows)
