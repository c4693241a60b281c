"""Logistic match/no-match classifier over retrieval pair features.

A retrieved result is summarized by two numbers: the perceptual-hash
Hamming distance between query and result, and the retrieval score the
index assigned (votes or squared distance, never mixed). Training
standardizes both features, then minimizes mean binary cross-entropy
plus an (l2/2)*||w||^2 penalty on the weights (bias unpenalized) by
full-batch gradient descent with Armijo backtracking. Everything is
deterministic: zero initialization, fixed step policy, fixed stopping
rule (gradient infinity-norm < 1e-8 or 10,000 iterations).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import CorruptModel, DegenerateLabels, ModeMismatch
from .feature_io import MODES

MAX_ITERS = 10_000
GRAD_TOL = 1e-8
ARMIJO_C = 1e-4
DEFAULT_L2 = 1e-6


@dataclass(frozen=True)
class PairFeatures:
    phash_dist: float  # Hamming distance in [0, 64]
    retrieval_score: float
    mode: str  # "votes" | "distance"

    def __post_init__(self) -> None:
        if not (math.isfinite(self.phash_dist) and 0 <= self.phash_dist <= 64):
            raise ValueError(f"phash_dist out of range: {self.phash_dist}")
        if not math.isfinite(self.retrieval_score) or self.retrieval_score < 0:
            raise ValueError(f"retrieval_score invalid: {self.retrieval_score}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass(frozen=True)
class LabeledPair:
    features: PairFeatures
    label: bool  # True = match


@dataclass(frozen=True)
class Prediction:
    probability: float
    label: bool


@dataclass(frozen=True)
class MatchModel:
    weights: tuple[float, float]
    bias: float
    means: tuple[float, float]
    sds: tuple[float, float]
    mode: str
    threshold: float = 0.5
    l2: float = DEFAULT_L2
    trained_on: int = 0


def _design(data: list[LabeledPair]) -> tuple[np.ndarray, np.ndarray, str]:
    if not data:
        raise DegenerateLabels("no training data")
    mode = data[0].features.mode
    for pair in data:
        if pair.features.mode != mode:
            raise ModeMismatch(
                f"mixed modes in training data: {mode!r} and {pair.features.mode!r}"
            )
    x = np.array(
        [[p.features.phash_dist, p.features.retrieval_score] for p in data],
        dtype=np.float64,
    )
    t = np.array([1.0 if p.label else 0.0 for p in data])
    return x, t, mode


def loss_and_gradient(
    params: np.ndarray, z: np.ndarray, targets: np.ndarray, l2: float
) -> tuple[float, np.ndarray]:
    """Mean BCE + (l2/2)||w||^2 and its gradient at params = [w1, w2, b].

    ``z`` is the standardized design matrix. Exposed so the analytic
    gradient can be checked against finite differences.
    """
    w, b = params[:2], params[2]
    logits = z @ w + b
    # log(1 + e^s) - t*s, stable for both signs of s
    loss = float(np.mean(np.logaddexp(0.0, logits) - targets * logits))
    loss += 0.5 * l2 * float(w @ w)
    p = _sigmoid_vec(logits)
    resid = (p - targets) / len(targets)
    grad = np.empty(3)
    grad[:2] = z.T @ resid + l2 * w
    grad[2] = resid.sum()
    return loss, grad


def _sigmoid_vec(s: np.ndarray) -> np.ndarray:
    out = np.empty_like(s)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    e = np.exp(s[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def train(data: list[LabeledPair], l2: float = DEFAULT_L2, seed: int = 0) -> MatchModel:
    """Fit the logistic model; deterministic for a given data order.

    ``seed`` is accepted for interface stability but unused: weights
    start at zero and the optimizer is deterministic.
    """
    if l2 < 0:
        raise ValueError(f"l2 must be >= 0, got {l2}")
    x, t, mode = _design(data)
    if len(data) < 2 or t.min() == t.max():
        raise DegenerateLabels("training data must contain both classes")
    means = x.mean(axis=0)
    sds = x.std(axis=0)
    sds[sds == 0.0] = 1.0  # constant feature: leave it centered, unscaled
    z = (x - means) / sds
    params = np.zeros(3)
    loss, grad = loss_and_gradient(params, z, t, l2)
    for _ in range(MAX_ITERS):
        if np.abs(grad).max() < GRAD_TOL:
            break
        step = 1.0
        g2 = float(grad @ grad)
        while True:
            trial = params - step * grad
            trial_loss, trial_grad = loss_and_gradient(trial, z, t, l2)
            if trial_loss <= loss - ARMIJO_C * step * g2:
                break
            step *= 0.5
            if step < 1e-20:
                trial, trial_loss, trial_grad = params, loss, grad
                break
        if trial is params:
            break  # no descent step exists at float resolution
        params, loss, grad = trial, trial_loss, trial_grad
    return MatchModel(
        weights=(float(params[0]), float(params[1])),
        bias=float(params[2]),
        means=(float(means[0]), float(means[1])),
        sds=(float(sds[0]), float(sds[1])),
        mode=mode,
        l2=l2,
        trained_on=len(data),
    )


def _sigmoid(s: float) -> float:
    if s >= 0:
        return 1.0 / (1.0 + math.exp(-s))
    e = math.exp(s)
    return e / (1.0 + e)


def predict(m: MatchModel, f: PairFeatures) -> Prediction:
    """Probability of match and the thresholded label."""
    if f.mode != m.mode:
        raise ModeMismatch(f"model is for mode {m.mode!r}, features are {f.mode!r}")
    z1 = (f.phash_dist - m.means[0]) / m.sds[0]
    z2 = (f.retrieval_score - m.means[1]) / m.sds[1]
    prob = _sigmoid(m.weights[0] * z1 + m.weights[1] * z2 + m.bias)
    return Prediction(probability=prob, label=prob >= m.threshold)


def auc_of_scores(scores: list[float], labels: list[bool]) -> float:
    """Mann-Whitney AUC of scores against labels; ties count one half."""
    pos = np.array([s for s, l in zip(scores, labels) if l])
    neg = np.array([s for s, l in zip(scores, labels) if not l])
    if len(pos) == 0 or len(neg) == 0:
        raise DegenerateLabels("AUC needs both classes")
    greater = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return float((greater + 0.5 * ties) / (len(pos) * len(neg)))


def auc(m: MatchModel, data: list[LabeledPair]) -> float:
    """AUC of the model's predicted probabilities over labeled pairs."""
    scores = [predict(m, p.features).probability for p in data]
    return auc_of_scores(scores, [p.label for p in data])


def loocv(data: list[LabeledPair], l2: float = DEFAULT_L2) -> float:
    """Leave-one-out accuracy; the standardizer is refit in every fold.

    A fold whose training split collapses to a single class predicts that
    fold's majority class instead of training.
    """
    if len(data) < 3:
        raise DegenerateLabels("leave-one-out needs at least 3 examples")
    if len({p.label for p in data}) < 2:
        raise DegenerateLabels("leave-one-out needs both classes")
    correct = 0
    for i, held_out in enumerate(data):
        fold = data[:i] + data[i + 1 :]
        fold_labels = [p.label for p in fold]
        if len(set(fold_labels)) < 2:
            predicted = max(set(fold_labels), key=fold_labels.count)
        else:
            predicted = predict(train(fold, l2=l2), held_out.features).label
        correct += int(predicted == held_out.label)
    return correct / len(data)


def model_to_json(m: MatchModel) -> str:
    return json.dumps(
        {
            "mode": m.mode,
            "weights": list(m.weights),
            "bias": m.bias,
            "means": list(m.means),
            "sds": list(m.sds),
            "threshold": m.threshold,
            "l2": m.l2,
            "trained_on": m.trained_on,
        },
        sort_keys=True,
    )


def model_from_json(text: str) -> MatchModel:
    try:
        obj = json.loads(text)
        weights = obj["weights"]
        means = obj["means"]
        sds = obj["sds"]
        if len(weights) != 2 or len(means) != 2 or len(sds) != 2:
            raise ValueError("weights/means/sds must each hold 2 values")
        if obj["mode"] not in MODES:
            raise ValueError(f"unknown mode {obj['mode']!r}")
        if not all(s > 0 for s in sds):
            raise ValueError("standardizer SDs must be positive")
        return MatchModel(
            weights=(float(weights[0]), float(weights[1])),
            bias=float(obj["bias"]),
            means=(float(means[0]), float(means[1])),
            sds=(float(sds[0]), float(sds[1])),
            mode=obj["mode"],
            threshold=float(obj.get("threshold", 0.5)),
            l2=float(obj.get("l2", DEFAULT_L2)),
            trained_on=int(obj.get("trained_on", 0)),
        )
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise CorruptModel(f"bad match model: {exc}") from exc
