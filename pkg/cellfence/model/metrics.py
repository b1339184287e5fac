"""
Evaluation of the per-message classifier and the per-connection fusion.

Inside is the positive class: a false positive is an outside UE classified
inside, a false negative an inside UE classified outside.
"""

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from cellfence.config import DECISION_THRESHOLD
from cellfence.model.ensemble import MSG_ORDER, NEUTRAL

logger = logging.getLogger("Metrics")

MESSAGE_SUBSETS = {
    "prach": (0,),
    "prach_pusch": (0, 1),
    "all": (0, 1, 2),
}


@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def count(self):
        return self.tp + self.fp + self.fn + self.tn

    @property
    def accuracy(self):
        return (self.tp + self.tn) / self.count if self.count else 0.0

    @property
    def fpr(self):
        negatives = self.fp + self.tn
        return self.fp / negatives if negatives else 0.0

    @property
    def fnr(self):
        positives = self.fn + self.tp
        return self.fn / positives if positives else 0.0

    def as_dict(self, prefix=""):
        return {f"{prefix}accuracy": self.accuracy, f"{prefix}fpr": self.fpr, f"{prefix}fnr": self.fnr,
                f"{prefix}tp": self.tp, f"{prefix}fp": self.fp, f"{prefix}fn": self.fn, f"{prefix}tn": self.tn,
                f"{prefix}count": self.count}

    def confusion_table(self):
        return pd.DataFrame([[self.tp, self.fn], [self.fp, self.tn]],
                            index=["true inside", "true outside"],
                            columns=["classified inside", "classified outside"])


def metrics_from_counts(tp, fp, fn, tn):
    return Metrics(int(tp), int(fp), int(fn), int(tn))


def confusion(labels, predicted):
    labels = np.asarray(labels).astype(bool)
    predicted = np.asarray(predicted).astype(bool)
    return Metrics(int(np.sum(labels & predicted)), int(np.sum(~labels & predicted)),
                   int(np.sum(labels & ~predicted)), int(np.sum(~labels & ~predicted)))


def score_dataset(model, dataset):
    """Per-row inside-probability; rows with fewer than two valid ports get 0.5."""
    scores = np.full(len(dataset), NEUTRAL)
    usable = dataset.usable()
    if usable.any():
        scores[usable] = model.predict(dataset.values()[usable], dataset.masks()[usable])
    return scores


def connection_table(dataset, scores, msg_types=(0, 1, 2)):
    """
    One row per connection with the mean score of each message type.

    Message types outside msg_types are treated as not observed (0.5).
    """
    frame = dataset.frame[["connection", "msg_type", "route", "label"]].copy()
    frame["score"] = scores
    frame = frame[frame["msg_type"].isin(msg_types)]
    means = frame.pivot_table(index="connection", columns="msg_type", values="score", aggfunc="mean")
    means = means.reindex(columns=[int(t) for t in MSG_ORDER]).fillna(NEUTRAL)
    means.columns = [t.name.lower() for t in MSG_ORDER]
    info = dataset.frame.groupby("connection")[["route", "label"]].first()
    return info.join(means, how="left").fillna({t.name.lower(): NEUTRAL for t in MSG_ORDER})


def roc_curve(labels, scores, n_points=101):
    """True and false positive rates over a threshold sweep."""
    labels = np.asarray(labels).astype(bool)
    scores = np.asarray(scores, dtype=float)
    rows = []
    for threshold in np.linspace(0.0, 1.0, n_points):
        m = confusion(labels, scores >= threshold)
        rows.append({"threshold": threshold, "tpr": 1.0 - m.fnr, "fpr": m.fpr})
    return pd.DataFrame(rows)


@dataclass
class EvaluationResult:
    message: Metrics
    connection: Metrics
    per_type_accuracy: dict
    per_route: pd.DataFrame
    decisions: pd.DataFrame
    class_balance: dict

    def summary_frame(self):
        row = {**self.message.as_dict("message_"), **self.connection.as_dict("connection_")}
        row.update({f"{name}_accuracy": acc for name, acc in self.per_type_accuracy.items()})
        row.update({f"{name}_fraction": frac for name, frac in self.class_balance.items()})
        return pd.DataFrame([row])


def evaluate(model, ensemble, dataset, threshold=DECISION_THRESHOLD, msg_types=(0, 1, 2)):
    """
    Score every message, fuse per connection and compute the metrics.

    Returns:
        EvaluationResult
    """
    scores = score_dataset(model, dataset)
    labels = dataset.labels()
    types = dataset.msg_types()
    selected = np.isin(types, msg_types)
    message = confusion(labels[selected], scores[selected] >= threshold)

    per_type = {}
    for t in MSG_ORDER:
        rows = types == int(t)
        if rows.any():
            per_type[t.name.lower()] = confusion(labels[rows], scores[rows] >= threshold).accuracy

    table = connection_table(dataset, scores, msg_types)
    means = table[[t.name.lower() for t in MSG_ORDER]].to_numpy()
    table["probability"] = ensemble.fuse_batch(means) if len(table) else []
    table["inside"] = (table["probability"] >= threshold).astype(int)
    connection = confusion(table["label"].to_numpy(), table["inside"].to_numpy())

    table["correct"] = (table["inside"] == table["label"]).astype(int)
    per_route = table.groupby("route").agg(connections=("correct", "size"), accuracy=("correct", "mean"),
                                           label=("label", "first")).reset_index()

    logger.info(f"Message accuracy {message.accuracy:.4f}, connection accuracy {connection.accuracy:.4f} "
                f"(FPR {connection.fpr:.4f}, FNR {connection.fnr:.4f})")
    return EvaluationResult(message, connection, per_type, per_route, table.reset_index(),
                            dataset.class_balance())


def subset_robustness(model, ensemble, dataset, threshold=DECISION_THRESHOLD):
    """Connection accuracy when only some message types are used for the decision."""
    scores = score_dataset(model, dataset)
    rows = []
    for name, types in MESSAGE_SUBSETS.items():
        table = connection_table(dataset, scores, types)
        means = table[[t.name.lower() for t in MSG_ORDER]].to_numpy()
        inside = ensemble.fuse_batch(means) >= threshold
        m = confusion(table["label"].to_numpy(), inside)
        rows.append({"messages": name, "connections": m.count, "accuracy": m.accuracy, "fpr": m.fpr, "fnr": m.fnr})
    return pd.DataFrame(rows)
