"""
Simulated world: UEs appearing along the scenario routes and connecting to
the monitored cells, with the ground truth every other component is blind to.

The world is fully determined by (scenario, seed). Live runs build one
replica per process and step each to the shared clock, so a receiver
process can look up what was on the air without any ground truth on the bus.
"""

import logging
import math
import threading
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from cellfence.channel.geometry import distance, point_along_polyline
from cellfence.channel.propagation import MIN_DISTANCE_M, path_loss_db, wall_loss_db
from cellfence.channel.radio import Transmission
from cellfence.config import MEAN_ARRIVAL_GAP_MS, UE_ALPHA, UE_MAX_POWER_DBM, UE_P0_DBM
from cellfence.errors import ConfigurationError
from cellfence.phy.resource_grid import MsgType

logger = logging.getLogger("World")

UE_MIN_POWER_DBM = -40.0
ROUTE_STREAM = 4
PAYLOAD_STREAM = 5
RETENTION_SUBFRAMES = 512


@dataclass(frozen=True)
class ConnectionTruth:
    index: int
    connection_id: Tuple[int, int, int]
    route: str
    label: bool
    ue: object
    start_subframe: int


def ue_tx_power(scenario, point, cell, p0_dbm=UE_P0_DBM, alpha=UE_ALPHA, max_dbm=UE_MAX_POWER_DBM):
    """Open-loop power control toward the serving eNodeB."""
    carrier = cell.band_id.uplink_hz + cell.center_offset_hz
    d = max(distance(point, cell.enb_position), MIN_DISTANCE_M)
    loss = path_loss_db(d, carrier, scenario.channel.path_loss_exponent)
    loss += wall_loss_db(point, cell.enb_position, scenario.walls)
    return float(np.clip(p0_dbm + alpha * loss, UE_MIN_POWER_DBM, max_dbm))


def sample_route_point(route, rng):
    """Uniform position along a route, pushed sideways by Gaussian jitter."""
    (x, y), heading = point_along_polyline(route.points, rng.random())
    offset = rng.normal(0.0, route.jitter_m) if route.jitter_m > 0 else 0.0
    return x - offset * math.sin(heading), y + offset * math.cos(heading)


def payload_seed(seed, message_id):
    return int(np.random.default_rng([seed, PAYLOAD_STREAM, *message_id]).integers(2 ** 31))


class World:
    """
    Args:
        scenario (DeploymentScenario): Geometry, cells and routes.
        controller (DownlinkController): Scheduler front end; its bus decides who hears the downlink.
        seed (int): Run seed; the same seed replays the same UEs.
        n_connections (int, optional): Stop starting connections after this many.
        mean_gap_ms (float): Mean time between connection attempts.
        routes (list, optional): Route names to draw from; all routes by default.
    """

    def __init__(self, scenario, controller, seed=0, n_connections=None, mean_gap_ms=MEAN_ARRIVAL_GAP_MS,
                 routes=None, start_subframe=0):
        if not scenario.routes:
            raise ConfigurationError("Scenario has no routes to place UEs on")
        if not scenario.cells:
            raise ConfigurationError("Scenario has no cells")
        self.scenario = scenario
        self.controller = controller
        self.seed = seed
        self.n_connections = n_connections
        self.mean_gap = mean_gap_ms
        self.routes = [r for r in scenario.routes if routes is None or r.name in routes]
        if not self.routes:
            raise ConfigurationError(f"None of the routes {routes} exist in the scenario")
        weights = np.array([r.weight for r in self.routes], dtype=float)
        if np.any(weights < 0) or weights.sum() <= 0:
            raise ConfigurationError("Route weights must be non-negative with a positive sum")
        self._route_p = weights / weights.sum()
        self._rng = np.random.default_rng([seed, ROUTE_STREAM])

        self.connections = {}
        self.started = 0
        self.subframe = start_subframe - 1
        self._next_arrival = float(start_subframe)
        self._transmissions = {}
        self._lock = threading.Lock()

    @property
    def done(self):
        """Every planned connection has started and the scheduler has nothing left to release."""
        return self.n_connections is not None and self.started >= self.n_connections and self.controller.pending == 0

    def _new_connection(self, subframe):
        route = self.routes[int(self._rng.choice(len(self.routes), p=self._route_p))]
        point = sample_route_point(route, self._rng)
        cell = self.scenario.cells[int(self._rng.integers(len(self.scenario.cells)))]
        ue = self.scenario.ue_at(point, ue_tx_power(self.scenario, point, cell))
        sm = self.controller.connect(ue, cell.cell_id, subframe)
        truth = ConnectionTruth(self.started, (*cell.cell_id, sm.rnti), route.name, ue.inside_label, ue, subframe)
        self.connections[truth.connection_id] = truth
        self.started += 1
        return truth

    def step(self, subframe):
        """
        Start the connections due at subframe and release its scheduler events.

        Returns:
            list: Transmission of every uplink message sent in this subframe.
        """
        with self._lock:
            return self._step(subframe)

    def _step(self, subframe):
        while self._next_arrival <= subframe and (self.n_connections is None or self.started < self.n_connections):
            self._new_connection(subframe)
            self._next_arrival += self._rng.exponential(self.mean_gap)

        sent = []
        for event in self.controller.step(subframe):
            cell = self.scenario.cell(*event.cell_id)
            message_id = (cell.earfcn, cell.pci, event.rnti, int(event.spec.msg_type), event.subframe)
            tx = Transmission(message_id, event.spec, cell, event.ue, payload_seed(self.seed, message_id),
                              event.subframe)
            self._transmissions[message_id] = tx
            sent.append(tx)
        self.subframe = subframe
        if subframe % 100 == 0:
            horizon = subframe - RETENTION_SUBFRAMES
            for key in [k for k in self._transmissions if k[4] < horizon]:
                del self._transmissions[key]
        return sent

    def advance_to(self, subframe):
        """Step every subframe up to and including subframe."""
        with self._lock:
            sent = []
            for sf in range(self.subframe + 1, subframe + 1):
                sent.extend(self._step(sf))
            return sent

    def lookup(self, message_id):
        """What was sent under message_id, or None; replicas catch up to the message's subframe first."""
        if message_id[4] > self.subframe:
            self.advance_to(message_id[4])
        return self._transmissions.get(tuple(message_id))

    def truth(self, connection_id):
        return self.connections.get(tuple(connection_id))

    def message_meta(self, message_id, day=0):
        """Dataset metadata of one message; None for messages of unknown connections."""
        truth = self.truth(message_id[:3])
        if truth is None:
            return None
        return {
            "connection": truth.index,
            "earfcn": message_id[0],
            "pci": message_id[1],
            "rnti": message_id[2],
            "msg_type": int(MsgType(message_id[3])),
            "subframe": message_id[4],
            "route": truth.route,
            "day": day,
            "label": int(truth.label),
        }

    def class_balance(self):
        if not self.connections:
            return {"inside": 0.0, "outside": 0.0}
        inside = sum(t.label for t in self.connections.values()) / len(self.connections)
        return {"inside": inside, "outside": 1.0 - inside}
