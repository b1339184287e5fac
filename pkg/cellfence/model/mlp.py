"""
Per-message classifier: a small feed-forward network in numpy.

    x --BatchNorm--> y * mask ++ mask --Dropout--> Dense(h1) -> ReLU
      --> Dense(h2) -> ReLU --> Dense(1) --> sigmoid

Masked inputs are zeroed after normalization and the mask itself is fed
as extra inputs, so the network sees which ports were missing.
"""

import copy
import itertools
import logging
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy.special import expit

from cellfence.errors import InvalidParameterError, ModelDimensionError, TrainingError

logger = logging.getLogger("MLP")

PARAM_ORDER = ("gamma", "beta", "W1", "b1", "W2", "b2", "W3", "b3")
BUFFER_ORDER = ("running_mean", "running_var")


@dataclass(frozen=True)
class MlpConfig:
    h1: int = 64
    h2: int = 32
    dropout: float = 0.2
    learning_rate: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 200
    patience: int = 10
    validation_fraction: float = 0.1
    receiver_dropout: float = 0.15
    momentum: float = 0.1
    eps: float = 1e-5


def bce_with_logits(logits, labels):
    """Mean binary cross-entropy computed from logits without overflow."""
    return float(np.mean(np.maximum(logits, 0.0) - logits * labels + np.log1p(np.exp(-np.abs(logits)))))


class MlpModel:
    """
    Args:
        n_features (int): Length of the feature vector (and of its mask).
        h1, h2 (int): Hidden layer widths.
        dropout (float): Drop probability of the input dropout layer during training.
        rng (np.random.Generator): Initialization source.
    """

    def __init__(self, n_features, h1=64, h2=32, dropout=0.2, momentum=0.1, eps=1e-5, rng=None):
        if n_features <= 0 or h1 <= 0 or h2 <= 0:
            raise InvalidParameterError("Layer sizes must be positive")
        if not 0.0 <= dropout < 1.0:
            raise InvalidParameterError(f"dropout must be in [0, 1), got {dropout}")
        rng = np.random.default_rng(0) if rng is None else rng
        self.n_features = int(n_features)
        self.h1 = int(h1)
        self.h2 = int(h2)
        self.dropout = float(dropout)
        self.momentum = float(momentum)
        self.eps = float(eps)
        n_in = 2 * self.n_features
        self.params = {
            "gamma": np.ones(self.n_features),
            "beta": np.zeros(self.n_features),
            "W1": rng.standard_normal((n_in, self.h1)) * np.sqrt(2.0 / n_in),
            "b1": np.zeros(self.h1),
            "W2": rng.standard_normal((self.h1, self.h2)) * np.sqrt(2.0 / self.h1),
            "b2": np.zeros(self.h2),
            "W3": rng.standard_normal((self.h2, 1)) * np.sqrt(1.0 / self.h2),
            "b3": np.zeros(1),
        }
        self.buffers = {
            "running_mean": np.zeros(self.n_features),
            "running_var": np.ones(self.n_features),
        }

    @property
    def dims(self):
        return self.n_features, self.h1, self.h2, 1

    def copy(self):
        return copy.deepcopy(self)

    def state(self):
        return {k: v.copy() for k, v in itertools.chain(self.params.items(), self.buffers.items())}

    def load_state(self, state):
        for k in PARAM_ORDER:
            self.params[k] = np.array(state[k], dtype=float)
        for k in BUFFER_ORDER:
            self.buffers[k] = np.array(state[k], dtype=float)

    def all_finite(self):
        return all(np.all(np.isfinite(v)) for v in itertools.chain(self.params.values(), self.buffers.values()))

    def _check_inputs(self, values, masks):
        values = np.atleast_2d(np.asarray(values, dtype=float))
        masks = np.atleast_2d(np.asarray(masks, dtype=float))
        if values.shape[1] != self.n_features or masks.shape != values.shape:
            raise ModelDimensionError(f"Model expects {self.n_features} features, got {values.shape[1]}")
        return values, masks

    def forward(self, values, masks, training=False, rng=None, update_stats=True):
        """
        Returns:
            tuple: (logits of shape (B,), cache for backward)
        """
        x, m = self._check_inputs(values, masks)
        p = self.params
        if training:
            mu = x.mean(axis=0)
            var = x.var(axis=0)
            if update_stats:
                n = x.shape[0]
                unbiased = var * n / (n - 1) if n > 1 else var
                self.buffers["running_mean"] = (1 - self.momentum) * self.buffers["running_mean"] + self.momentum * mu
                self.buffers["running_var"] = (1 - self.momentum) * self.buffers["running_var"] + self.momentum * unbiased
        else:
            mu = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        x_hat = (x - mu) * inv_std
        z0 = np.concatenate([(p["gamma"] * x_hat + p["beta"]) * m, m], axis=1)

        keep = None
        if training and self.dropout > 0:
            rng = np.random.default_rng() if rng is None else rng
            keep = (rng.random(z0.shape) >= self.dropout) / (1.0 - self.dropout)
            z0 = z0 * keep

        a1 = z0 @ p["W1"] + p["b1"]
        r1 = np.maximum(a1, 0.0)
        a2 = r1 @ p["W2"] + p["b2"]
        r2 = np.maximum(a2, 0.0)
        logits = (r2 @ p["W3"] + p["b3"])[:, 0]
        cache = {"x_hat": x_hat, "m": m, "z0": z0, "keep": keep, "a1": a1, "r1": r1, "a2": a2, "r2": r2}
        return logits, cache

    def backward(self, cache, dlogits):
        """Gradients of every parameter given dLoss/dlogits."""
        p = self.params
        d = dlogits[:, None]
        grads = {"W3": cache["r2"].T @ d, "b3": d.sum(axis=0)}
        da2 = (d @ p["W3"].T) * (cache["a2"] > 0)
        grads["W2"] = cache["r1"].T @ da2
        grads["b2"] = da2.sum(axis=0)
        da1 = (da2 @ p["W2"].T) * (cache["a1"] > 0)
        grads["W1"] = cache["z0"].T @ da1
        grads["b1"] = da1.sum(axis=0)
        dz0 = da1 @ p["W1"].T
        if cache["keep"] is not None:
            dz0 = dz0 * cache["keep"]
        dy = dz0[:, :self.n_features] * cache["m"]
        grads["gamma"] = (dy * cache["x_hat"]).sum(axis=0)
        grads["beta"] = dy.sum(axis=0)
        return grads

    def loss_and_grads(self, values, masks, labels, rng=None, update_stats=True):
        logits, cache = self.forward(values, masks, training=True, rng=rng, update_stats=update_stats)
        labels = np.asarray(labels, dtype=float)
        dlogits = (expit(logits) - labels) / len(labels)
        return bce_with_logits(logits, labels), self.backward(cache, dlogits)

    def predict_logits(self, values, masks):
        return self.forward(values, masks, training=False)[0]

    def predict(self, values, masks):
        """Inside-probabilities in inference mode; deterministic and side-effect free."""
        return expit(self.predict_logits(values, masks))

    def predict_one(self, values, mask):
        return float(self.predict(values[None, :], mask[None, :])[0])

    def loss(self, values, masks, labels):
        return bce_with_logits(self.predict_logits(values, masks), np.asarray(labels, dtype=float))


class AdamOptimizer:
    def __init__(self, params, learning_rate=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            params[k] -= self.learning_rate * (self.m[k] / correction1) / (np.sqrt(self.v[k] / correction2) + self.eps)


def gradient_check(model, values, masks, labels, eps=1e-5):
    """
    Compare backprop gradients with central finite differences.

    Runs in training mode (batch statistics) with dropout disabled and
    leaves the model unchanged.

    Returns:
        dict: Relative error ||analytic - numeric|| / max(||analytic||, ||numeric||) per parameter.
    """
    frozen = model.copy()
    frozen.dropout = 0.0
    _, analytic = frozen.loss_and_grads(values, masks, labels, update_stats=False)
    errors = {}
    for name in PARAM_ORDER:
        param = frozen.params[name]
        numeric = np.zeros_like(param)
        for idx in np.ndindex(param.shape):
            original = param[idx]
            param[idx] = original + eps
            plus, _ = frozen.loss_and_grads(values, masks, labels, update_stats=False)
            param[idx] = original - eps
            minus, _ = frozen.loss_and_grads(values, masks, labels, update_stats=False)
            param[idx] = original
            numeric[idx] = (plus - minus) / (2 * eps)
        scale = max(np.linalg.norm(analytic[name]), np.linalg.norm(numeric), 1e-12)
        errors[name] = float(np.linalg.norm(analytic[name] - numeric) / scale)
    return errors


def split_by_group(groups, fraction, rng):
    """Indices of (train, validation) rows; no group is split across the two."""
    groups = np.asarray(groups)
    unique = np.unique(groups)
    if len(unique) < 2 or fraction <= 0:
        return np.arange(len(groups)), np.array([], dtype=np.int64)
    shuffled = rng.permutation(unique)
    n_val = max(1, int(round(len(unique) * fraction)))
    val_groups = set(shuffled[:n_val].tolist())
    in_val = np.array([g in val_groups for g in groups.tolist()])
    return np.flatnonzero(~in_val), np.flatnonzero(in_val)


def _augment(values, masks, rng, probability, feature_groups):
    """Mask all features of one random receiver on a fraction of rows."""
    if not feature_groups or probability <= 0:
        return values, masks
    values = values.copy()
    masks = masks.copy()
    hit = np.flatnonzero(rng.random(len(values)) < probability)
    choice = rng.integers(0, len(feature_groups), size=len(hit))
    for row, receiver in zip(hit, choice):
        values[row, feature_groups[receiver]] = 0.0
        masks[row, feature_groups[receiver]] = 0.0
    return values, masks


def train_mlp(values, masks, labels, groups, config=MlpConfig(), seed=0, feature_groups=None):
    """
    Train a per-message classifier with Adam on binary cross-entropy.

    Args:
        values, masks (np.ndarray): (N, F) feature values and validity masks.
        labels (np.ndarray): 1 for inside, 0 for outside.
        groups (np.ndarray): Connection id per row; the validation split never splits a connection.
        config (MlpConfig): Hyperparameters.
        seed (int): Seed for initialization, shuffling, dropout and augmentation.
        feature_groups (list, optional): Feature indices per receiver for receiver-dropout augmentation.

    Returns:
        tuple: (MlpModel with the best validation weights, list of per-epoch dicts)
    """
    values = np.asarray(values, dtype=float)
    masks = np.asarray(masks, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if values.ndim != 2 or len(values) == 0:
        raise TrainingError("Training set is empty")
    if len(np.unique(labels)) < 2:
        raise TrainingError("Training set holds a single class")

    rng = np.random.default_rng(seed)
    train_idx, val_idx = split_by_group(groups, config.validation_fraction, rng)
    if len(val_idx) == 0:
        logger.warning("No validation split possible; early stopping on training loss")

    model = MlpModel(values.shape[1], config.h1, config.h2, config.dropout, config.momentum, config.eps, rng)
    optimizer = AdamOptimizer(model.params, config.learning_rate)
    best_loss = np.inf
    best_state = model.state()
    stale_epochs = 0
    history = []

    for epoch in range(config.max_epochs):
        order = rng.permutation(train_idx)
        batch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            if len(batch) < 2:
                continue
            xb, mb = _augment(values[batch], masks[batch], rng, config.receiver_dropout, feature_groups)
            loss, grads = model.loss_and_grads(xb, mb, labels[batch], rng=rng)
            optimizer.step(model.params, grads)
            if not model.all_finite():
                raise TrainingError(f"Non-finite parameters at epoch {epoch}")
            batch_losses.append(loss)

        train_loss = float(np.mean(batch_losses)) if batch_losses else float("nan")
        monitored = val_idx if len(val_idx) else train_idx
        val_loss = model.loss(values[monitored], masks[monitored], labels[monitored])
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})

        if val_loss < best_loss - 1e-6:
            best_loss = val_loss
            best_state = model.state()
            stale_epochs = 0
        else:
            stale_epochs += 1
            if stale_epochs >= config.patience:
                logger.info(f"Early stop at epoch {epoch}, best validation loss {best_loss:.4f}")
                break

    model.load_state(best_state)
    logger.info(f"Trained MLP {model.dims} on {len(train_idx)} rows, validation loss {best_loss:.4f}")
    return model, history


def grid_search(values, masks, labels, groups, grid, base=MlpConfig(), seed=0, feature_groups=None):
    """
    Train one model per combination of the grid and keep the lowest validation loss.

    Args:
        grid (dict): MlpConfig field name -> list of candidate values.

    Returns:
        tuple: (best MlpConfig, best MlpModel, list of result dicts)
    """
    unknown = set(grid) - set(asdict(base))
    if unknown:
        raise InvalidParameterError(f"Unknown hyperparameters: {sorted(unknown)}")
    names = sorted(grid)
    results = []
    best = (np.inf, None, None)
    for combo in itertools.product(*(grid[n] for n in names)):
        config = replace(base, **dict(zip(names, combo)))
        model, history = train_mlp(values, masks, labels, groups, config, seed, feature_groups)
        loss = min(h["val_loss"] for h in history)
        results.append({**dict(zip(names, combo)), "val_loss": loss, "epochs": len(history)})
        logger.info(f"Grid point {dict(zip(names, combo))}: validation loss {loss:.4f}")
        if loss < best[0]:
            best = (loss, config, model)
    return best[1], best[2], results
