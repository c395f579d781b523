"""Classification metrics and cost accounting (parameters, MACs)."""

from __future__ import annotations

import numpy as np

from .nn import Backbone, Conv1d, HeadEnsemble, HopfieldHead, LinearHead, Network, param_count


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    """Rows are the true class, columns the predicted class."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def accuracy(cm: np.ndarray) -> float:
    total = cm.sum()
    if total == 0:
        raise ValueError("accuracy of an empty confusion matrix")
    return float(np.trace(cm) / total)


def per_class_scores(cm: np.ndarray) -> dict[str, np.ndarray]:
    """Per-class precision, recall and F1; zero denominators give 0."""
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    pred = cm.sum(axis=0)
    true = cm.sum(axis=1)
    precision = np.divide(tp, pred, out=np.zeros_like(tp), where=pred > 0)
    recall = np.divide(tp, true, out=np.zeros_like(tp), where=true > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return {"precision": precision, "recall": recall, "f1": f1}


def f1_macro(cm: np.ndarray) -> float:
    return float(per_class_scores(cm)["f1"].mean())


def evaluate_logits(logits: np.ndarray, labels, n_classes: int) -> dict:
    cm = confusion_matrix(labels, np.argmax(logits, axis=1), n_classes)
    return {"accuracy": accuracy(cm), "f1_macro": f1_macro(cm), "confusion_matrix": cm}


# ---------------------------------------------------------------------------
# MACs


def _conv_macs(conv: Conv1d, length: int) -> tuple[int, int]:
    cout, cin, k = conv.weight.shape
    lout = conv.out_length(length)
    return lout * cout * k * cin, lout


def head_macs(head) -> int:
    if isinstance(head, LinearHead):
        return head.dim * head.n_classes
    if isinstance(head, HopfieldHead):
        m, d = head.n_patterns, head.dim
        return m * d + m * d + d * head.n_classes
    if isinstance(head, HeadEnsemble):
        return sum(head_macs(h) for h in head.heads)
    raise TypeError(f"no MAC rule for {type(head).__name__}")


def backbone_macs(backbone: Backbone, length: int | None = None) -> int:
    length = backbone.input_length if length is None else length
    total = 0
    for stage in backbone.stages:
        for conv in stage.blocks:
            macs, length = _conv_macs(conv, length)
            if length < 1:
                raise ValueError("input too short for this backbone")
            total += macs
    return total


def macs_estimate(net: Network, input_shape: tuple[int, int] | None = None) -> int:
    """Multiply-accumulates for one window of shape (C, L)."""
    if input_shape is not None:
        c, length = input_shape
        if c != net.in_channels:
            raise ValueError(f"network takes {net.in_channels} channels, got {c}")
    else:
        length = net.input_length
    return backbone_macs(net.backbone, length) + head_macs(net.head)


def cost_summary(net: Network) -> dict[str, int]:
    return {"params": param_count(net), "macs": macs_estimate(net)}
