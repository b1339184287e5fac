import pandas as pd
import pytest

from cellfence.sim.supervisor import BusLayout, connection_accuracy


def test_bus_layout_ports():
    layout = BusLayout("127.0.0.1", 9000, 6)
    assert layout.downlink_port == 9000
    assert [layout.report_port(i) for i in range(6)] == list(range(9001, 9007))
    assert layout.decision_port == 9007


def _truth():
    return pd.DataFrame([
        {"connection": 0, "earfcn": 19575, "pci": 101, "rnti": 61, "start_subframe": 10, "route": "in", "label": 1},
        {"connection": 1, "earfcn": 19575, "pci": 101, "rnti": 62, "start_subframe": 40, "route": "out", "label": 0},
        # rnti 61 reused by a later connection
        {"connection": 2, "earfcn": 19575, "pci": 101, "rnti": 61, "start_subframe": 500, "route": "out", "label": 0},
    ])


def _decision(rnti, subframe, inside, final=True):
    return {"earfcn": 19575, "pci": 101, "rnti": rnti, "msg_type": "pucch", "subframe": subframe,
            "final": int(final), "score": 0.5, "probability": 0.5, "inside": inside, "n_reports": 6,
            "decided_ns": 0, "latency_ns": 0}


def test_connection_accuracy_matches_latest_connection():
    decisions = pd.DataFrame([
        _decision(61, 30, 1),
        _decision(62, 60, 1),
        _decision(61, 520, 0),
        _decision(61, 515, 1, final=False),
    ])
    assert connection_accuracy(decisions, _truth()) == pytest.approx(2 / 3)


def test_connection_accuracy_ignores_decisions_without_connection():
    decisions = pd.DataFrame([_decision(61, 5, 1), _decision(62, 60, 0)])
    assert connection_accuracy(decisions, _truth()) == pytest.approx(1.0)


def test_connection_accuracy_none_without_final_decisions():
    decisions = pd.DataFrame([_decision(61, 30, 1, final=False)])
    assert connection_accuracy(decisions, _truth()) is None
    assert connection_accuracy(pd.DataFrame([_decision(61, 30, 1)]), _truth().iloc[0:0]) is None
