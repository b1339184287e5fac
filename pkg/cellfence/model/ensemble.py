"""
Per-connection fusion: logistic regression over the mean score of each
message type, with 0.5 filled in for types that were not observed.

Inputs are centered on 0.5 so a connection with no information at all
fuses to sigmoid(intercept); weights are kept non-negative so a higher
message score can never lower the fused probability.
"""

import logging
from dataclasses import dataclass

import numpy as np
import ujson
from scipy.special import expit

from cellfence.errors import ConfigurationError, ModelFitError
from cellfence.phy.resource_grid import MsgType

logger = logging.getLogger("Ensemble")

MSG_ORDER = (MsgType.PRACH, MsgType.PUSCH, MsgType.PUCCH)
NEUTRAL = 0.5


@dataclass
class EnsembleModel:
    weights: np.ndarray
    intercept: float = 0.0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (len(MSG_ORDER),):
            raise ConfigurationError(f"Ensemble needs {len(MSG_ORDER)} weights, got {self.weights.shape}")
        if not np.all(np.isfinite(self.weights)) or not np.isfinite(self.intercept):
            raise ConfigurationError("Ensemble coefficients must be finite")

    @classmethod
    def uniform(cls, weight=4.0):
        return cls(np.full(len(MSG_ORDER), weight), 0.0)

    def fuse_batch(self, type_means):
        x = np.atleast_2d(np.asarray(type_means, dtype=float)) - NEUTRAL
        return expit(x @ self.weights + self.intercept)

    def fuse(self, type_means):
        """Inside-probability of one connection from its (PRACH, PUSCH, PUCCH) mean scores."""
        return float(self.fuse_batch(type_means)[0])

    def to_dict(self):
        return {"weights": {t.name: float(w) for t, w in zip(MSG_ORDER, self.weights)},
                "intercept": float(self.intercept)}

    @classmethod
    def from_dict(cls, doc):
        try:
            weights = [float(doc["weights"][t.name]) for t in MSG_ORDER]
            return cls(np.array(weights), float(doc.get("intercept", 0.0)))
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigurationError(f"Invalid ensemble weights document: {e}")

    def save_weights(self, path):
        with open(path, "w") as f:
            f.write(ujson.dumps(self.to_dict(), indent=2))

    @classmethod
    def load_weights(cls, path):
        try:
            with open(path, "r") as f:
                doc = ujson.loads(f.read())
        except (OSError, ValueError) as e:
            raise ConfigurationError(f"Cannot read ensemble weights {path}: {e}")
        return cls.from_dict(doc)


def train_ensemble(type_means, labels, l2=1e-3, learning_rate=1.0, iterations=3000):
    """
    Fit the fusion weights by projected gradient descent on the logistic loss.

    Args:
        type_means (np.ndarray): (N, 3) mean scores per connection, 0.5 where missing.
        labels (np.ndarray): 1 for inside, 0 for outside.
        l2 (float): Ridge penalty on the weights (not the intercept).

    Returns:
        EnsembleModel
    """
    x = np.asarray(type_means, dtype=float)
    y = np.asarray(labels, dtype=float)
    if x.ndim != 2 or x.shape[1] != len(MSG_ORDER) or len(x) == 0:
        raise ModelFitError(f"Expected an (N, {len(MSG_ORDER)}) score matrix, got {x.shape}")
    if len(np.unique(y)) < 2:
        raise ModelFitError("Ensemble fit needs both classes")
    if np.all(np.ptp(x, axis=0) == 0):
        raise ModelFitError("All connections have identical scores")

    xc = x - NEUTRAL
    w = np.zeros(len(MSG_ORDER))
    b = 0.0
    n = len(y)
    for _ in range(iterations):
        p = expit(xc @ w + b)
        err = p - y
        w -= learning_rate * (xc.T @ err / n + l2 * w)
        b -= learning_rate * float(err.mean())
        np.maximum(w, 0.0, out=w)
    if not np.all(np.isfinite(w)) or not np.isfinite(b):
        raise ModelFitError("Ensemble fit diverged")
    model = EnsembleModel(w, b)
    logger.info(f"Ensemble weights {model.to_dict()['weights']}, intercept {b:.3f}")
    return model
