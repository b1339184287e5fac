"""
Labeled message dataset: one row per aggregated uplink message.

CSV columns: the message and connection metadata in META_COLUMNS, then
one `v:<feature>` value column and one `m:<feature>` validity column per
relative feature, in the fixed order of feature_names().
"""

import logging
import re

import numpy as np
import pandas as pd

from cellfence.central.relative_features import PAIR_FEATURES, feature_names, mask_receivers, port_pairs
from cellfence.errors import DatasetError

logger = logging.getLogger("Dataset")

META_COLUMNS = ["connection", "earfcn", "pci", "rnti", "msg_type", "subframe",
                "route", "day", "n_reports", "n_valid_ports", "label"]
FLOAT_FORMAT = "%.6f"
_RATIO_COLUMN = re.compile(r"^v:port_ratio:r(\d+)$")


class Dataset:
    def __init__(self, frame, receiver_ids):
        self.frame = frame.reset_index(drop=True)
        self.receiver_ids = list(receiver_ids)
        names = feature_names(self.receiver_ids)
        self.value_columns = [f"v:{n}" for n in names]
        self.mask_columns = [f"m:{n}" for n in names]

    @classmethod
    def from_records(cls, records, receiver_ids):
        """
        Args:
            records (list): (meta dict with META_COLUMNS keys, RelativeFeatureVector) pairs.
            receiver_ids (list): Receiver order used to build the vectors.
        """
        names = feature_names(receiver_ids)
        columns = META_COLUMNS + [f"v:{n}" for n in names] + [f"m:{n}" for n in names]
        rows = []
        for meta, vector in records:
            rows.append([meta[c] for c in META_COLUMNS] + list(vector.values) + list(vector.mask.astype(int)))
        return cls(pd.DataFrame(rows, columns=columns), receiver_ids)

    def __len__(self):
        return len(self.frame)

    @property
    def n_features(self):
        return len(self.value_columns)

    def values(self):
        return self.frame[self.value_columns].to_numpy(dtype=float)

    def masks(self):
        return self.frame[self.mask_columns].to_numpy(dtype=float)

    def labels(self):
        return self.frame["label"].to_numpy(dtype=int)

    def groups(self):
        return self.frame["connection"].to_numpy()

    def msg_types(self):
        return self.frame["msg_type"].to_numpy(dtype=int)

    def usable(self):
        return self.frame["n_valid_ports"].to_numpy() >= 2

    def subset(self, rows):
        return Dataset(self.frame.loc[rows], self.receiver_ids)

    def masked(self, receiver_indices):
        """Copy with every feature of the given receivers (positions in receiver_ids) switched off."""
        values, masks = mask_receivers(self.values(), self.masks(), receiver_indices, len(self.receiver_ids))
        frame = self.frame.copy()
        frame[self.value_columns] = values
        frame[self.mask_columns] = masks.astype(int)
        n_pairs = len(PAIR_FEATURES) * len(port_pairs(len(self.receiver_ids)))
        # Rows left without a single port pair can no longer be scored
        frame.loc[~masks[:, :n_pairs].any(axis=1), "n_valid_ports"] = 0
        return Dataset(frame, self.receiver_ids)

    def class_balance(self):
        """Fraction of inside and outside connections."""
        per_connection = self.frame.groupby("connection")["label"].first()
        if per_connection.empty:
            return {"inside": 0.0, "outside": 0.0}
        inside = float(per_connection.mean())
        return {"inside": inside, "outside": 1.0 - inside}

    def save(self, path):
        self.frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
        logger.info(f"Wrote {len(self)} rows to {path}")

    @classmethod
    def load(cls, path):
        try:
            frame = pd.read_csv(path)
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise DatasetError(f"Cannot read dataset {path}: {e}")
        missing = [c for c in META_COLUMNS if c not in frame.columns]
        if missing:
            raise DatasetError(f"Dataset {path} lacks columns {missing}")
        receiver_ids = [int(m.group(1)) for m in map(_RATIO_COLUMN.match, frame.columns) if m]
        if not receiver_ids:
            raise DatasetError(f"Dataset {path} has no feature columns")
        dataset = cls(frame, receiver_ids)
        absent = [c for c in dataset.value_columns + dataset.mask_columns if c not in frame.columns]
        if absent:
            raise DatasetError(f"Dataset {path} lacks {len(absent)} feature columns, e.g. {absent[0]}")
        if len(dataset) == 0:
            raise DatasetError(f"Dataset {path} is empty")
        if not np.all(np.isfinite(dataset.values())):
            raise DatasetError(f"Dataset {path} holds non-finite feature values")
        logger.info(f"Loaded {len(dataset)} rows with {dataset.n_features} features from {path}")
        return dataset
