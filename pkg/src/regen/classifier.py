"""Softmax text classifier trained with label smoothing.

The default model is a linear head over encoder embeddings; a one-hidden-
layer tanh variant is available behind a flag. Labels are 1-based and
argmax ties resolve to the smallest label.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .encoder import TrainConfig

logger = logging.getLogger(__name__)

_CLS_MAGIC = b"RCLS"
_CLS_VERSION = 1


@dataclass(frozen=True)
class LabeledExample:
    text: str
    label: int


def smoothed_target(y: int, c: int, alpha: float) -> np.ndarray:
    """Smoothed one-hot target: alpha/c everywhere plus 1-alpha at the label."""
    if c < 2:
        raise ValueError("need at least two classes")
    if not 1 <= y <= c:
        raise ValueError(f"label {y} outside 1..{c}")
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must be in [0, 1)")
    target = np.full(c, alpha / c)
    target[y - 1] += 1.0 - alpha
    return target


def label_smoothed_loss(logits: np.ndarray, target: np.ndarray):
    """Cross-entropy against a smoothed target, with its gradient.

    Accepts a single (c,) instance or an (n, c) batch; the batch form
    returns the mean loss and the gradient of that mean. Log-softmax is
    computed with a max shift so large logits stay finite.
    """
    logits = np.asarray(logits, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if logits.shape != target.shape:
        raise ValueError(f"shape mismatch: {logits.shape} vs {target.shape}")
    if not np.all(np.isfinite(logits)):
        raise ValueError("non-finite logits")

    single = logits.ndim == 1
    if single:
        logits = logits[None, :]
        target = target[None, :]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_softmax = shifted - log_z
    per_example = -(target * log_softmax).sum(axis=1)
    softmax = np.exp(log_softmax)
    n = logits.shape[0]
    grad = (softmax - target) / n
    loss = float(per_example.mean())
    if single:
        return loss, grad[0] * n
    return loss, grad


class SoftmaxClassifier(BaseEstimator, ClassifierMixin):
    """Minibatch-SGD softmax classifier over dense feature vectors.

    Parameters are float32 once fitted, so saving and reloading reproduces
    predictions bit for bit. ``fit`` reinitializes; ``partial_fit``
    continues from the current parameters.
    """

    def __init__(
        self,
        n_classes: int,
        alpha: float = 0.1,
        hidden: bool = False,
        hidden_width: int = 256,
        seed: int = 0,
    ):
        self.n_classes = n_classes
        self.alpha = alpha
        self.hidden = hidden
        self.hidden_width = hidden_width
        self.seed = seed

    @classmethod
    def from_parameters(
        cls, weights: np.ndarray, bias: np.ndarray, alpha: float = 0.1
    ) -> "SoftmaxClassifier":
        """Linear model with explicit parameters, no training."""
        weights = np.asarray(weights, dtype=np.float32)
        bias = np.asarray(bias, dtype=np.float32)
        if weights.ndim != 2 or bias.shape != (weights.shape[0],):
            raise ValueError("weights must be (c, dim) with a matching bias")
        model = cls(n_classes=weights.shape[0], alpha=alpha)
        model.weights_ = weights
        model.bias_ = bias
        model.loss_history_ = []
        return model

    # -- parameter handling ---------------------------------------------------

    def _init_params(self, dim: int) -> dict[str, np.ndarray]:
        if not self.hidden:
            return {
                "weights": np.zeros((self.n_classes, dim)),
                "bias": np.zeros(self.n_classes),
            }
        rng = np.random.default_rng(self.seed)
        return {
            "w1": rng.normal(0.0, dim**-0.5, size=(self.hidden_width, dim)),
            "b1": np.zeros(self.hidden_width),
            "weights": np.zeros((self.n_classes, self.hidden_width)),
            "bias": np.zeros(self.n_classes),
        }

    def _store(self, params: dict[str, np.ndarray]):
        if self.hidden:
            self.w1_ = params["w1"].astype(np.float32)
            self.b1_ = params["b1"].astype(np.float32)
        self.weights_ = params["weights"].astype(np.float32)
        self.bias_ = params["bias"].astype(np.float32)

    def _params64(self) -> dict[str, np.ndarray]:
        params = {
            "weights": self.weights_.astype(np.float64),
            "bias": self.bias_.astype(np.float64),
        }
        if self.hidden:
            params["w1"] = self.w1_.astype(np.float64)
            params["b1"] = self.b1_.astype(np.float64)
        return params

    # -- training ---------------------------------------------------------------

    def _check_inputs(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        if X.ndim != 2:
            raise ValueError(f"X must be 2-D, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise ValueError("y must be one label per row of X")
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if not np.issubdtype(y.dtype, np.integer):
            raise ValueError("labels must be integers")
        if y.min() < 1 or y.max() > self.n_classes:
            raise ValueError(
                f"labels must lie in 1..{self.n_classes}, got "
                f"[{y.min()}, {y.max()}]"
            )
        return X, y

    def _run_sgd(self, params, X, y, cfg: TrainConfig) -> list[float]:
        n = X.shape[0]
        batch = min(cfg.batch_size or 32, n)
        targets = np.stack([smoothed_target(int(lbl), self.n_classes, self.alpha) for lbl in y])
        rng = np.random.default_rng(cfg.seed)
        history = []
        for epoch in range(cfg.epochs):
            order = rng.permutation(n)
            losses = []
            for start in range(0, n, batch):
                rows = order[start : start + batch]
                loss = self._sgd_step(params, X[rows], targets[rows], cfg.learning_rate)
                if not np.isfinite(loss):
                    raise RuntimeError(
                        f"classifier training diverged at epoch {epoch}: loss={loss}"
                    )
                losses.append(loss)
            history.append(float(np.mean(losses)))
            logger.debug("classifier epoch %d loss %.4f", epoch, history[-1])
        if len(history) >= 2 and history[-1] > history[0] + 1e-12:
            raise RuntimeError(
                "classifier training diverged: epoch loss rose from "
                f"{history[0]:.6f} to {history[-1]:.6f}; lower the learning rate"
            )
        return history

    def _sgd_step(self, params, Xb, Tb, lr: float) -> float:
        if self.hidden:
            pre = Xb @ params["w1"].T + params["b1"]
            hidden_act = np.tanh(pre)
        else:
            hidden_act = Xb
        logits = hidden_act @ params["weights"].T + params["bias"]
        loss, grad = label_smoothed_loss(logits, Tb)
        params["weights"] -= lr * (grad.T @ hidden_act)
        params["bias"] -= lr * grad.sum(axis=0)
        if self.hidden:
            d_hidden = (grad @ params["weights"]) * (1.0 - hidden_act**2)
            params["w1"] -= lr * (d_hidden.T @ Xb)
            params["b1"] -= lr * d_hidden.sum(axis=0)
        return loss

    def fit(self, X, y, config: TrainConfig | None = None) -> "SoftmaxClassifier":
        X, y = self._check_inputs(X, y)
        cfg = config or TrainConfig(learning_rate=1e-2, batch_size=32, epochs=5)
        params = self._init_params(X.shape[1])
        self.loss_history_ = self._run_sgd(params, X, y, cfg)
        self._store(params)
        return self

    def partial_fit(self, X, y, config: TrainConfig | None = None) -> "SoftmaxClassifier":
        """More SGD epochs starting from the current parameters."""
        self._check_fitted()
        X, y = self._check_inputs(X, y)
        cfg = config or TrainConfig(learning_rate=1e-2, batch_size=32, epochs=5)
        params = self._params64()
        self.loss_history_ = self.loss_history_ + self._run_sgd(params, X, y, cfg)
        self._store(params)
        return self

    # -- inference ---------------------------------------------------------------

    def _check_fitted(self):
        if not hasattr(self, "weights_"):
            raise NotFittedError("classifier has not been fitted or loaded")

    def decision_function(self, X) -> np.ndarray:
        self._check_fitted()
        X = np.asarray(X, dtype=np.float64)
        params = self._params64()
        if self.hidden:
            X = np.tanh(X @ params["w1"].T + params["b1"])
        return X @ params["weights"].T + params["bias"]

    def predict_proba(self, X) -> np.ndarray:
        logits = self.decision_function(X)
        shifted = logits - logits.max(axis=1, keepdims=True)
        exp = np.exp(shifted)
        return exp / exp.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        # argmax returns the first maximum, which is the smallest label.
        return np.argmax(self.decision_function(X), axis=1) + 1

    # -- persistence ---------------------------------------------------------------

    def save(self, path: str | Path) -> None:
        self._check_fitted()
        dim = self.w1_.shape[1] if self.hidden else self.weights_.shape[1]
        with open(path, "wb") as f:
            f.write(_CLS_MAGIC)
            f.write(
                struct.pack(
                    "<IBIIId",
                    _CLS_VERSION,
                    int(self.hidden),
                    self.n_classes,
                    dim,
                    self.hidden_width if self.hidden else 0,
                    self.alpha,
                )
            )
            if self.hidden:
                f.write(self.w1_.astype("<f4").tobytes())
                f.write(self.b1_.astype("<f4").tobytes())
            f.write(self.weights_.astype("<f4").tobytes())
            f.write(self.bias_.astype("<f4").tobytes())


def load_model(path: str | Path) -> SoftmaxClassifier:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _CLS_MAGIC:
            raise ValueError(f"not a classifier file: bad magic {magic!r}")
        head = struct.Struct("<IBIIId")
        version, hidden, c, dim, width, alpha = head.unpack(f.read(head.size))
        if version != _CLS_VERSION:
            raise ValueError(f"unsupported classifier file version {version}")

        def matrix(rows, cols):
            raw = f.read(4 * rows * cols)
            if len(raw) != 4 * rows * cols:
                raise ValueError("truncated classifier file")
            arr = np.frombuffer(raw, dtype="<f4")
            return arr.reshape(rows, cols) if cols > 1 or rows > 1 else arr

        clf = SoftmaxClassifier(
            n_classes=c, alpha=alpha, hidden=bool(hidden), hidden_width=width or 256
        )
        if hidden:
            clf.w1_ = np.frombuffer(f.read(4 * width * dim), dtype="<f4").reshape(width, dim).copy()
            clf.b1_ = np.frombuffer(f.read(4 * width), dtype="<f4").copy()
            clf.weights_ = np.frombuffer(f.read(4 * c * width), dtype="<f4").reshape(c, width).copy()
        else:
            clf.weights_ = np.frombuffer(f.read(4 * c * dim), dtype="<f4").reshape(c, dim).copy()
        clf.bias_ = np.frombuffer(f.read(4 * c), dtype="<f4").copy()
        if clf.bias_.shape != (c,):
            raise ValueError("truncated classifier file")
        clf.loss_history_ = []
    return clf


def train_classifier(
    examples: Sequence[LabeledExample],
    encoder,
    config: TrainConfig | None = None,
    alpha: float = 0.1,
    n_classes: int | None = None,
    hidden: bool = False,
    seed: int = 0,
) -> SoftmaxClassifier:
    """Embed labeled texts and fit a fresh classifier on them."""
    examples = list(examples)
    if not examples:
        raise ValueError("no training examples")
    labels = np.asarray([ex.label for ex in examples])
    c = n_classes or int(labels.max())
    X = encoder.transform([ex.text for ex in examples])
    clf = SoftmaxClassifier(n_classes=c, alpha=alpha, hidden=hidden, seed=seed)
    return clf.fit(X, labels, config=config)


def predict(model: SoftmaxClassifier, encoder, text: str):
    """Classify one text; returns (label, class probabilities)."""
    probs = model.predict_proba(encoder.embed(text)[None, :])[0]
    return int(np.argmax(probs)) + 1, probs


def few_shot_fuse(
    few_shot: Sequence[LabeledExample],
    synthetic: Sequence[LabeledExample],
    encoder,
    config: TrainConfig | None = None,
    alpha: float = 0.1,
    n_classes: int | None = None,
) -> SoftmaxClassifier:
    """Train on few-shot data, then on synthetic examples it agrees with.

    The few-shot model screens the synthetic set: an example survives only
    if the model's prediction matches its label. Training then continues
    from the few-shot parameters on the survivors.
    """
    few_shot = list(few_shot)
    synthetic = list(synthetic)
    if not few_shot:
        raise ValueError("no few-shot examples")
    labels = {ex.label for ex in few_shot}
    c = n_classes or max(
        max(labels), max((ex.label for ex in synthetic), default=0)
    )
    missing = set(range(1, c + 1)) - labels
    if missing:
        raise ValueError(f"few-shot set missing class(es) {sorted(missing)}")

    model = train_classifier(
        few_shot, encoder, config=config, alpha=alpha, n_classes=c
    )
    if not synthetic:
        logger.warning("no synthetic examples supplied, returning few-shot model")
        return model
    X = encoder.transform([ex.text for ex in synthetic])
    y = np.asarray([ex.label for ex in synthetic])
    keep = model.predict(X) == y
    if not keep.any():
        logger.warning(
            "all %d synthetic examples were filtered out, returning few-shot model",
            len(synthetic),
        )
        return model
    logger.info("fusing %d of %d synthetic examples", int(keep.sum()), len(synthetic))
    return model.partial_fit(X[keep], y[keep], config=config)
