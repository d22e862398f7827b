"""Loss, optimiser and evaluation metrics.

The loss is categorical cross entropy fused with softmax so the gradient
with respect to the logits is the cheap, numerically safe (p - onehot)/N
form. Adam follows the standard bias-corrected update; its state covers
exactly the trainable parameter set, so frozen tensors can never drift.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers, tensor
from .errors import ShapeError, ValidationError

PROB_FLOOR = 1e-12  # clamp for log() so an exact zero probability cannot blow up


def _validate_labels(labels, batch, num_classes):
    labels = np.asarray(labels)
    if labels.shape != (batch,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {batch}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValidationError(f"labels must be integers, got dtype {labels.dtype}")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValidationError(
            f"labels must lie in [0, {num_classes}), got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    return labels


def cross_entropy_with_softmax(logits, labels):
    """Mean cross entropy of softmax(logits) against integer labels.

    Returns ``(loss, logit_grad)`` where the gradient is with respect to the
    raw logits, averaged over the batch.
    """
    logits = np.asarray(logits)
    if logits.ndim != 2:
        raise ShapeError(f"logits must be N x K, got {logits.shape}")
    n, k = logits.shape
    if n == 0:
        raise ShapeError("cannot compute a loss over an empty batch")
    labels = _validate_labels(labels, n, k)
    probs = layers.softmax(logits)
    picked = probs[np.arange(n), labels]
    loss = float(-np.log(np.maximum(picked, PROB_FLOOR)).mean())
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    tensor.ensure_finite(grad, "cross entropy gradient")
    if not np.isfinite(loss):
        raise ValidationError("cross entropy loss is not finite")
    return loss, grad


@dataclass
class AdamState:
    """First/second moment accumulators for one trainable parameter set."""

    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def init_adam(params, trainable_names, learning_rate,
              beta1=0.9, beta2=0.999, epsilon=1e-8):
    """Fresh Adam state covering exactly ``trainable_names``."""
    if learning_rate <= 0:
        raise ValidationError(f"learning rate must be positive, got {learning_rate}")
    if not trainable_names:
        raise ValidationError("Adam needs at least one trainable parameter")
    state = AdamState(learning_rate, beta1, beta2, epsilon)
    for name in trainable_names:
        if name not in params:
            raise ValidationError(f"trainable parameter {name!r} missing from params")
        state.m[name] = np.zeros_like(params[name])
        state.v[name] = np.zeros_like(params[name])
    return state


def adam_step(params, grads, state):
    """One in-place Adam update over the state's parameter set.

    ``grads`` must cover exactly the names the state was initialised with;
    anything extra or missing indicates a bookkeeping bug upstream and is an
    error, not something to skip over.
    """
    if set(grads) != set(state.m):
        missing = sorted(set(state.m) - set(grads))
        extra = sorted(set(grads) - set(state.m))
        raise ValidationError(
            f"gradient set does not match optimiser state: missing={missing} extra={extra}"
        )
    state.step += 1
    bias1 = 1.0 - state.beta1 ** state.step
    bias2 = 1.0 - state.beta2 ** state.step
    for name, grad in grads.items():
        grad = np.asarray(grad)
        param = params[name]
        if grad.shape != param.shape:
            raise ShapeError(
                f"gradient for {name!r} has shape {grad.shape}, parameter is {param.shape}"
            )
        tensor.ensure_finite(grad, f"gradient for {name!r}")
        m = state.m[name]
        v = state.v[name]
        m += (1.0 - state.beta1) * (grad - m)
        v += (1.0 - state.beta2) * (grad * grad - v)
        m_hat = m / bias1
        v_hat = v / bias2
        param -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
        tensor.ensure_finite(param, f"parameter {name!r} after Adam step")


@dataclass
class MetricsReport:
    accuracy: float
    loss: float
    confusion: np.ndarray           # K x K, rows true class, columns predicted
    per_class_precision: np.ndarray
    per_class_recall: np.ndarray

    def as_dict(self):
        return {
            "accuracy": self.accuracy,
            "loss": self.loss,
            "confusion": self.confusion.tolist(),
            "per_class_precision": self.per_class_precision.tolist(),
            "per_class_recall": self.per_class_recall.tolist(),
        }


def evaluate_metrics(probabilities, labels):
    """Accuracy, mean cross entropy, confusion matrix and per-class rates.

    Confusion rows are the true class, columns the predicted class. A class
    absent from both predictions and labels gets precision/recall 0 rather
    than a division error.
    """
    probs = np.asarray(probabilities)
    if probs.ndim != 2:
        raise ShapeError(f"probabilities must be N x K, got {probs.shape}")
    n, k = probs.shape
    if n == 0:
        raise ShapeError("cannot evaluate metrics over an empty batch")
    labels = _validate_labels(labels, n, k)
    predicted = tensor.argmax_axis(probs, 1)
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (labels, predicted), 1)
    correct = np.trace(confusion)
    picked = probs[np.arange(n), labels]
    loss = float(-np.log(np.maximum(picked, PROB_FLOOR)).mean())
    col_totals = confusion.sum(axis=0)
    row_totals = confusion.sum(axis=1)
    diag = np.diag(confusion)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(col_totals > 0, diag / col_totals, 0.0)
        recall = np.where(row_totals > 0, diag / row_totals, 0.0)
    return MetricsReport(
        accuracy=float(correct / n),
        loss=loss,
        confusion=confusion,
        per_class_precision=precision.astype(np.float64),
        per_class_recall=recall.astype(np.float64),
    )
