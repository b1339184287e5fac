"""
Relative features: differences between antenna ports of all receivers.

Ports are numbered 2 * i + k for the i-th receiver in the configured
receiver order and its port k. For corr_peak_power_db and
peak_to_avg_snr_db the vector holds x[p] - x[q] for every unordered pair
p < q, followed by the port 0 / port 1 power ratio (in dB) of every
receiver and a one-hot message type. Absolute levels never enter, so
adding the same dB offset to every port leaves the vector unchanged.
"""

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from cellfence.phy.resource_grid import MsgType

PAIR_FEATURES = ("corr_peak_power_db", "peak_to_avg_snr_db")
N_MSG_TYPES = len(MsgType)
MIN_VALID_PORTS = 2


def port_pairs(n_receivers):
    return list(combinations(range(2 * n_receivers), 2))


def n_features(n_receivers):
    return len(PAIR_FEATURES) * len(port_pairs(n_receivers)) + n_receivers + N_MSG_TYPES


def feature_names(receiver_ids):
    ports = [f"r{rid}p{k}" for rid in receiver_ids for k in range(2)]
    names = []
    for feature in PAIR_FEATURES:
        short = feature.replace("_db", "")
        names += [f"{short}:{ports[p]}-{ports[q]}" for p, q in port_pairs(len(receiver_ids))]
    names += [f"port_ratio:r{rid}" for rid in receiver_ids]
    names += [f"is_{t.name.lower()}" for t in MsgType]
    return names


def feature_groups(n_receivers):
    """Indices of the features that involve each receiver; masking a group removes that receiver."""
    pairs = port_pairs(n_receivers)
    groups = [[] for _ in range(n_receivers)]
    for f in range(len(PAIR_FEATURES)):
        base = f * len(pairs)
        for j, (p, q) in enumerate(pairs):
            groups[p // 2].append(base + j)
            if q // 2 != p // 2:
                groups[q // 2].append(base + j)
    ratio_base = len(PAIR_FEATURES) * len(pairs)
    for i in range(n_receivers):
        groups[i].append(ratio_base + i)
    return [np.array(g, dtype=np.int64) for g in groups]


@dataclass(frozen=True)
class RelativeFeatureVector:
    values: np.ndarray
    mask: np.ndarray
    msg_type: int
    n_receivers: int
    n_valid_ports: int

    @property
    def usable(self):
        return self.n_valid_ports >= MIN_VALID_PORTS

    def pair(self, feature, p, q):
        """Difference x[p] - x[q]; antisymmetric in (p, q), None where a port is missing."""
        if p == q:
            return 0.0
        pairs = port_pairs(self.n_receivers)
        sign = 1.0
        if p > q:
            p, q, sign = q, p, -1.0
        index = PAIR_FEATURES.index(feature) * len(pairs) + pairs.index((p, q))
        if not self.mask[index]:
            return None
        return sign * float(self.values[index])


def port_matrix(reports, receiver_ids):
    """
    Per-port feature values and validity.

    Returns:
        tuple: (values array of shape (2R, len(PAIR_FEATURES)), valid bool array of shape (2R,))
    """
    n_ports = 2 * len(receiver_ids)
    values = np.zeros((n_ports, len(PAIR_FEATURES)))
    valid = np.zeros(n_ports, dtype=bool)
    for i, rid in enumerate(receiver_ids):
        report = reports.get(rid)
        if report is None:
            continue
        for k, port in enumerate(report.ports):
            if port.valid:
                valid[2 * i + k] = True
                values[2 * i + k] = [getattr(port, name) for name in PAIR_FEATURES]
    return values, valid


def build_features(reports, receiver_ids, msg_type):
    """
    Build the relative feature vector of one message.

    Args:
        reports (dict): receiver_id -> MeasurementReport (missing receivers allowed).
        receiver_ids (list): Configured receiver order.
        msg_type (int): Message type of the slot.

    Returns:
        RelativeFeatureVector
    """
    n = len(receiver_ids)
    pairs = port_pairs(n)
    values, valid = port_matrix(reports, receiver_ids)
    p_idx = np.array([p for p, _ in pairs], dtype=np.int64)
    q_idx = np.array([q for _, q in pairs], dtype=np.int64)
    pair_valid = valid[p_idx] & valid[q_idx]

    out_values, out_mask = [], []
    for f in range(len(PAIR_FEATURES)):
        out_values.append(np.where(pair_valid, values[p_idx, f] - values[q_idx, f], 0.0))
        out_mask.append(pair_valid)
    ratio_valid = valid[0::2] & valid[1::2]
    out_values.append(np.where(ratio_valid, values[0::2, 0] - values[1::2, 0], 0.0))
    out_mask.append(ratio_valid)
    one_hot = np.zeros(N_MSG_TYPES)
    one_hot[int(msg_type)] = 1.0
    out_values.append(one_hot)
    out_mask.append(np.ones(N_MSG_TYPES, dtype=bool))

    return RelativeFeatureVector(
        values=np.concatenate(out_values),
        mask=np.concatenate(out_mask),
        msg_type=int(msg_type),
        n_receivers=n,
        n_valid_ports=int(valid.sum()),
    )


def mask_receivers(values, masks, receiver_indices, n_receivers):
    """Copy of a feature batch with every feature touching the given receivers masked."""
    values = np.array(values, dtype=float, copy=True)
    masks = np.array(masks, dtype=bool, copy=True)
    groups = feature_groups(n_receivers)
    for i in receiver_indices:
        values[..., groups[i]] = 0.0
        masks[..., groups[i]] = False
    return values, masks
