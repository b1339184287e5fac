"""
Deployment scenario: area boundary, walls, receivers, cells and UE routes.

Scenario files are JSON documents with the sections `area`, `walls`,
`receivers`, `cells`, `routes` and optional `channel` and `rng_seed`.
"""

import json
import logging
from dataclasses import dataclass, field
from typing import List, Tuple

import ujson

from cellfence.config import (
    FRONT_TO_BACK_DB,
    NOISE_FLOOR_DBM_PER_RE,
    PATH_LOSS_EXPONENT,
    SHADOWING_SIGMA_DB,
)
from cellfence.channel.geometry import is_simple_polygon, normalize_angle_deg, point_in_polygon
from cellfence.errors import CellfenceError, ScenarioError
from cellfence.phy.resource_grid import BandId, CellConfig

logger = logging.getLogger("Scenario")


@dataclass(frozen=True)
class Wall:
    start: Tuple[float, float]
    end: Tuple[float, float]
    attenuation_db: float


@dataclass(frozen=True)
class ReceiverSite:
    receiver_id: int
    position: Tuple[float, float]
    port_azimuths: Tuple[float, float]
    clock_offset_s: float = 0.0
    front_to_back_db: float = FRONT_TO_BACK_DB
    max_gain_db: float = 0.0

    def __post_init__(self):
        if len(self.port_azimuths) != 2:
            raise ScenarioError("receiver needs exactly 2 antenna ports", field=f"receivers[{self.receiver_id}].port_azimuths")
        gap = abs(normalize_angle_deg(self.port_azimuths[0] - self.port_azimuths[1]))
        if abs(gap - 180.0) > 1e-9:
            raise ScenarioError("port azimuths must be 180 degrees apart", field=f"receivers[{self.receiver_id}].port_azimuths")


@dataclass(frozen=True)
class Route:
    name: str
    points: Tuple[Tuple[float, float], ...]
    jitter_m: float = 2.0
    weight: float = 1.0


@dataclass(frozen=True)
class ChannelParams:
    path_loss_exponent: float = PATH_LOSS_EXPONENT
    shadowing_sigma_db: float = SHADOWING_SIGMA_DB
    shadowing_cell_m: float = 5.0
    noise_floor_dbm_per_re: float = NOISE_FLOOR_DBM_PER_RE


@dataclass(frozen=True)
class UePosition:
    position: Tuple[float, float]
    inside_label: bool
    tx_power_dbm: float = 23.0


@dataclass
class DeploymentScenario:
    boundary: List[Tuple[float, float]]
    walls: List[Wall]
    receivers: List[ReceiverSite]
    cells: List[CellConfig]
    routes: List[Route] = field(default_factory=list)
    rng_seed: int = 0
    channel: ChannelParams = field(default_factory=ChannelParams)
    name: str = "scenario"

    def __post_init__(self):
        if not is_simple_polygon(self.boundary):
            raise ScenarioError("boundary polygon must be simple", field="area.boundary")
        seen = set()
        for i, cell in enumerate(self.cells):
            if cell.cell_id in seen:
                raise ScenarioError(f"duplicate cell (earfcn, pci) {cell.cell_id}", field=f"cells[{i}]")
            seen.add(cell.cell_id)
        ids = [r.receiver_id for r in self.receivers]
        if len(set(ids)) != len(ids):
            raise ScenarioError("receiver ids must be unique", field="receivers")

    @property
    def receiver_ids(self):
        return [r.receiver_id for r in self.receivers]

    @property
    def n_ports(self):
        return 2 * len(self.receivers)

    def receiver(self, receiver_id):
        for site in self.receivers:
            if site.receiver_id == receiver_id:
                return site
        raise KeyError(receiver_id)

    def cell(self, earfcn, pci):
        for cell in self.cells:
            if cell.earfcn == earfcn and cell.pci == pci:
                return cell
        raise KeyError((earfcn, pci))

    def bands(self):
        """Cells grouped by band, in band order."""
        grouped = {}
        for cell in self.cells:
            grouped.setdefault(cell.band_id, []).append(cell)
        return dict(sorted(grouped.items()))

    def is_inside(self, point):
        return point_in_polygon(point, self.boundary)

    def ue_at(self, point, tx_power_dbm=23.0):
        return UePosition((float(point[0]), float(point[1])), self.is_inside(point), tx_power_dbm)

    def extent(self, margin=0.0):
        xs = [p[0] for p in self.boundary] + [p[0] for r in self.routes for p in r.points]
        ys = [p[1] for p in self.boundary] + [p[1] for r in self.routes for p in r.points]
        return min(xs) - margin, min(ys) - margin, max(xs) + margin, max(ys) + margin

    def with_receivers(self, receiver_ids):
        keep = [r for r in self.receivers if r.receiver_id in set(receiver_ids)]
        return DeploymentScenario(self.boundary, self.walls, keep, self.cells, self.routes,
                                  self.rng_seed, self.channel, self.name)


def _point(value, path):
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ScenarioError("expected [x, y]", field=path)
    try:
        return float(value[0]), float(value[1])
    except (TypeError, ValueError):
        raise ScenarioError("coordinates must be numbers", field=path)


def _require(section, key, path):
    if not isinstance(section, dict) or key not in section:
        raise ScenarioError("missing required field", field=f"{path}.{key}" if path else key)
    return section[key]


def scenario_from_dict(doc):
    """Build a DeploymentScenario from a parsed document, naming the offending field on error."""
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be an object")

    area = _require(doc, "area", "")
    boundary = [_point(p, f"area.boundary[{i}]") for i, p in enumerate(_require(area, "boundary", "area"))]

    walls = []
    for i, w in enumerate(doc.get("walls", [])):
        path = f"walls[{i}]"
        walls.append(Wall(_point(_require(w, "start", path), f"{path}.start"),
                          _point(_require(w, "end", path), f"{path}.end"),
                          float(_require(w, "attenuation_db", path))))

    receivers = []
    for i, r in enumerate(_require(doc, "receivers", "")):
        path = f"receivers[{i}]"
        azimuths = _require(r, "port_azimuths", path)
        if not isinstance(azimuths, list) or len(azimuths) != 2:
            raise ScenarioError("receiver needs exactly 2 antenna ports", field=f"{path}.port_azimuths")
        receivers.append(ReceiverSite(
            receiver_id=int(r.get("id", i)),
            position=_point(_require(r, "position", path), f"{path}.position"),
            port_azimuths=(float(azimuths[0]), float(azimuths[1])),
            clock_offset_s=float(r.get("clock_offset_s", 0.0)),
            front_to_back_db=float(r.get("front_to_back_db", FRONT_TO_BACK_DB)),
            max_gain_db=float(r.get("max_gain_db", 0.0)),
        ))

    cells = []
    for i, c in enumerate(_require(doc, "cells", "")):
        path = f"cells[{i}]"
        band = c.get("band", "B3")
        try:
            band_id = BandId[band] if isinstance(band, str) else BandId(int(band))
        except (KeyError, ValueError):
            raise ScenarioError(f"unknown band {band!r}", field=f"{path}.band")
        try:
            cells.append(CellConfig(
                earfcn=int(_require(c, "earfcn", path)),
                pci=int(_require(c, "pci", path)),
                n_prb_ul=int(c.get("n_prb_ul", 50)),
                prach_subframes=tuple(int(s) for s in c.get("prach_subframes", [1, 6])),
                prach_root=int(c.get("prach_root", 129)),
                band_id=band_id,
                prach_prb_offset=int(c.get("prach_prb_offset", 4)),
                pucch_hopping=bool(c.get("pucch_hopping", True)),
                center_offset_hz=float(c.get("center_offset_hz", 0.0)),
                enb_position=_point(c.get("enb_position", [0.0, 0.0]), f"{path}.enb_position"),
            ))
        except CellfenceError as e:
            raise ScenarioError(str(e), field=path)

    routes = []
    for i, r in enumerate(doc.get("routes", [])):
        path = f"routes[{i}]"
        points = tuple(_point(p, f"{path}.points[{j}]") for j, p in enumerate(_require(r, "points", path)))
        if len(points) < 2:
            raise ScenarioError("route needs at least two points", field=f"{path}.points")
        routes.append(Route(str(r.get("name", f"route{i}")), points,
                            float(r.get("jitter_m", 2.0)), float(r.get("weight", 1.0))))

    ch = doc.get("channel", {})
    channel = ChannelParams(
        path_loss_exponent=float(ch.get("path_loss_exponent", PATH_LOSS_EXPONENT)),
        shadowing_sigma_db=float(ch.get("shadowing_sigma_db", SHADOWING_SIGMA_DB)),
        shadowing_cell_m=float(ch.get("shadowing_cell_m", 5.0)),
        noise_floor_dbm_per_re=float(ch.get("noise_floor_dbm_per_re", NOISE_FLOOR_DBM_PER_RE)),
    )
    return DeploymentScenario(boundary, walls, receivers, cells, routes,
                              int(doc.get("rng_seed", 0)), channel, str(area.get("name", "scenario")))


def scenario_to_dict(scenario):
    return {
        "area": {"name": scenario.name, "boundary": [list(p) for p in scenario.boundary]},
        "walls": [{"start": list(w.start), "end": list(w.end), "attenuation_db": w.attenuation_db}
                  for w in scenario.walls],
        "receivers": [{"id": r.receiver_id, "position": list(r.position), "port_azimuths": list(r.port_azimuths),
                       "clock_offset_s": r.clock_offset_s, "front_to_back_db": r.front_to_back_db,
                       "max_gain_db": r.max_gain_db} for r in scenario.receivers],
        "cells": [{"earfcn": c.earfcn, "pci": c.pci, "n_prb_ul": c.n_prb_ul,
                   "prach_subframes": list(c.prach_subframes), "prach_root": c.prach_root,
                   "band": c.band_id.name, "prach_prb_offset": c.prach_prb_offset,
                   "pucch_hopping": c.pucch_hopping, "center_offset_hz": c.center_offset_hz,
                   "enb_position": list(c.enb_position)} for c in scenario.cells],
        "routes": [{"name": r.name, "points": [list(p) for p in r.points], "jitter_m": r.jitter_m,
                    "weight": r.weight} for r in scenario.routes],
        "channel": {"path_loss_exponent": scenario.channel.path_loss_exponent,
                    "shadowing_sigma_db": scenario.channel.shadowing_sigma_db,
                    "shadowing_cell_m": scenario.channel.shadowing_cell_m,
                    "noise_floor_dbm_per_re": scenario.channel.noise_floor_dbm_per_re},
        "rng_seed": scenario.rng_seed,
    }


def load_scenario(path):
    """
    Load a scenario file.

    Args:
        path (str): Path to the JSON scenario.

    Returns:
        DeploymentScenario: Validated scenario.
    """
    try:
        with open(path, "r") as f:
            text = f.read()
    except OSError as e:
        raise ScenarioError(f"cannot read scenario file {path}: {e}")

    try:
        doc = ujson.loads(text)
    except ValueError:
        # ujson does not report positions; the stdlib parser does
        try:
            json.loads(text)
        except json.JSONDecodeError as e:
            raise ScenarioError(f"invalid JSON: {e.msg}", line=e.lineno, column=e.colno)
        raise ScenarioError("invalid JSON")

    scenario = scenario_from_dict(doc)
    logger.info(f"Loaded scenario '{scenario.name}' with {len(scenario.receivers)} receivers, "
                f"{len(scenario.cells)} cells, {len(scenario.routes)} routes")
    return scenario


def save_scenario(scenario, path):
    with open(path, "w") as f:
        f.write(ujson.dumps(scenario_to_dict(scenario), indent=2))
    logger.info(f"Wrote scenario to {path}")


def default_scenario():
    """200 m x 200 m area, 10 dB walls on the west and south sides, 6 receivers, 8 cells in 3 bands."""
    boundary = [(0.0, 0.0), (200.0, 0.0), (200.0, 200.0), (0.0, 200.0)]
    walls = [Wall((0.0, 0.0), (200.0, 0.0), 10.0), Wall((0.0, 0.0), (0.0, 200.0), 10.0)]

    # Port 0 faces out of the area, port 1 faces in
    placements = [
        ((2.0, 60.0), 180.0), ((2.0, 140.0), 180.0),
        ((198.0, 100.0), 0.0), ((100.0, 2.0), 270.0),
        ((60.0, 198.0), 90.0), ((140.0, 198.0), 90.0),
    ]
    receivers = [
        ReceiverSite(i, pos, (out, normalize_angle_deg(out + 180.0)))
        for i, (pos, out) in enumerate(placements)
    ]

    cells = [
        CellConfig(19575, 101, 50, (1, 6), 129, BandId.B3, 4, True, 0.0, (-600.0, 350.0)),
        CellConfig(19575, 102, 50, (2, 7), 211, BandId.B3, 4, True, 0.0, (800.0, -300.0)),
        CellConfig(19464, 33, 50, (3, 8), 37, BandId.B3, 10, True, -11.1e6, (150.0, 900.0)),
        CellConfig(21100, 7, 50, (1, 6), 22, BandId.B7, 4, True, 0.0, (-400.0, -500.0)),
        CellConfig(21100, 8, 50, (4, 9), 401, BandId.B7, 4, True, 0.0, (700.0, 650.0)),
        CellConfig(21220, 301, 50, (0, 5), 90, BandId.B7, 20, True, 12.0e6, (-900.0, 100.0)),
        CellConfig(24300, 55, 50, (2, 7), 313, BandId.B20, 4, True, 0.0, (1200.0, 200.0)),
        CellConfig(24201, 56, 25, (3, 8), 17, BandId.B20, 2, True, -9.9e6, (100.0, -1100.0)),
    ]

    routes = [
        Route("inside_ring", ((25.0, 25.0), (175.0, 25.0), (175.0, 175.0), (25.0, 175.0), (25.0, 25.0)), 3.0),
        Route("inside_cross_ew", ((25.0, 100.0), (175.0, 100.0)), 3.0),
        Route("inside_cross_ns", ((100.0, 25.0), (100.0, 175.0)), 3.0),
        Route("outside_ring", ((-25.0, -25.0), (225.0, -25.0), (225.0, 225.0), (-25.0, 225.0), (-25.0, -25.0)), 3.0),
        Route("outside_street_west", ((-60.0, -80.0), (-60.0, 280.0)), 3.0),
        Route("outside_street_north", ((-80.0, 260.0), (280.0, 260.0)), 3.0),
    ]
    return DeploymentScenario(boundary, walls, receivers, cells, routes, rng_seed=11, name="benchmark")
