"""
Binary model file: the per-message network and the fusion weights.

Layout, little-endian:
    magic b"LTGF" | u16 version | u32 n_features | u32 h1 | u32 h2
    | f64 dropout | f64 momentum | f64 eps
    | f64 parameters in PARAM_ORDER, then running mean and variance
    | u16 n_weights | f64 weights | f64 intercept
"""

import logging
import struct

import numpy as np

from cellfence.errors import ModelDimensionError, ModelFormatError, ModelVersionError
from cellfence.model.ensemble import EnsembleModel
from cellfence.model.mlp import BUFFER_ORDER, PARAM_ORDER, MlpModel

logger = logging.getLogger("ModelFile")

MAGIC = b"LTGF"
FORMAT_VERSION = 1

_HEAD = struct.Struct("<4sHIIIddd")
_COUNT = struct.Struct("<H")
_F64 = np.dtype("<f8")


def _shapes(n_features, h1, h2):
    return {
        "gamma": (n_features,), "beta": (n_features,),
        "W1": (2 * n_features, h1), "b1": (h1,),
        "W2": (h1, h2), "b2": (h2,),
        "W3": (h2, 1), "b3": (1,),
        "running_mean": (n_features,), "running_var": (n_features,),
    }


def model_to_bytes(model, ensemble):
    parts = [_HEAD.pack(MAGIC, FORMAT_VERSION, model.n_features, model.h1, model.h2,
                        model.dropout, model.momentum, model.eps)]
    state = model.state()
    for name in PARAM_ORDER + BUFFER_ORDER:
        parts.append(np.ascontiguousarray(state[name], dtype=_F64).tobytes())
    parts.append(_COUNT.pack(len(ensemble.weights)))
    parts.append(np.ascontiguousarray(ensemble.weights, dtype=_F64).tobytes())
    parts.append(np.array([ensemble.intercept], dtype=_F64).tobytes())
    return b"".join(parts)


def model_from_bytes(data, expected_features=None):
    """
    Returns:
        tuple: (MlpModel, EnsembleModel)
    """
    if len(data) < _HEAD.size:
        raise ModelFormatError(f"Model file truncated: {len(data)} bytes")
    magic, version, n_features, h1, h2, dropout, momentum, eps = _HEAD.unpack_from(data, 0)
    if magic != MAGIC:
        raise ModelFormatError(f"Not a model file (magic {magic!r})")
    if version != FORMAT_VERSION:
        raise ModelVersionError(f"Model file version {version}, expected {FORMAT_VERSION}")
    if expected_features is not None and n_features != expected_features:
        raise ModelDimensionError(f"Model expects {n_features} features, scenario produces {expected_features}")

    model = MlpModel(n_features, h1, h2, dropout, momentum, eps)
    offset = _HEAD.size
    state = {}
    for name, shape in _shapes(n_features, h1, h2).items():
        count = int(np.prod(shape))
        end = offset + count * _F64.itemsize
        if end > len(data):
            raise ModelFormatError(f"Model file truncated in {name}")
        state[name] = np.frombuffer(data, dtype=_F64, count=count, offset=offset).reshape(shape).astype(float)
        offset = end
    model.load_state(state)

    if offset + _COUNT.size > len(data):
        raise ModelFormatError("Model file truncated before ensemble block")
    (n_weights,) = _COUNT.unpack_from(data, offset)
    offset += _COUNT.size
    end = offset + (n_weights + 1) * _F64.itemsize
    if end > len(data):
        raise ModelFormatError("Model file truncated in ensemble block")
    coefficients = np.frombuffer(data, dtype=_F64, count=n_weights + 1, offset=offset).astype(float)
    if end != len(data):
        raise ModelFormatError(f"{len(data) - end} unexpected trailing bytes in model file")
    ensemble = EnsembleModel(coefficients[:-1], float(coefficients[-1]))
    return model, ensemble


def save_model(path, model, ensemble):
    with open(path, "wb") as f:
        f.write(model_to_bytes(model, ensemble))
    logger.info(f"Saved model {model.dims} to {path}")


def load_model(path, expected_features=None):
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise ModelFormatError(f"Cannot read model file {path}: {e}")
    model, ensemble = model_from_bytes(data, expected_features)
    logger.info(f"Loaded model {model.dims} from {path}")
    return model, ensemble
