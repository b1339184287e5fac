import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from cellfence.channel.geometry import (
    bearing_deg, is_simple_polygon, point_along_polyline, point_in_polygon, polyline_length, segments_intersect,
)
from cellfence.channel.propagation import (
    add_awgn, antenna_gain_db, fractional_delay, link_gain_db, mix_band, path_loss_db, propagate, shadowing_db,
    wall_loss_db,
)
from cellfence.channel.radio import SyntheticRadio, Transmission, WidebandRadio, allocation_mask, grid_values
from cellfence.channel.scenario import (
    ReceiverSite, load_scenario, save_scenario, scenario_from_dict, scenario_to_dict,
)
from cellfence.config import FULL_SCALE_DBM_PER_RE
from cellfence.errors import DegenerateGeometryError, InvalidParameterError, ScenarioError
from cellfence.phy.ofdm import IqStream
from cellfence.phy.resource_grid import UplinkMessageSpec

SQUARE = [(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0)]


def test_point_in_polygon():
    assert point_in_polygon((5.0, 5.0), SQUARE)
    assert not point_in_polygon((15.0, 5.0), SQUARE)
    assert point_in_polygon((10.0, 5.0), SQUARE)


def test_simple_polygon_detection():
    assert is_simple_polygon(SQUARE)
    bowtie = [(0.0, 0.0), (10.0, 10.0), (10.0, 0.0), (0.0, 10.0)]
    assert not is_simple_polygon(bowtie)


def test_segment_intersection():
    assert segments_intersect((0, 0), (10, 10), (0, 10), (10, 0))
    assert not segments_intersect((0, 0), (1, 1), (2, 2), (3, 5))


def test_polyline_walk():
    points = [(0.0, 0.0), (10.0, 0.0), (10.0, 10.0)]
    assert polyline_length(points) == pytest.approx(20.0)
    (x, y), heading = point_along_polyline(points, 0.75)
    assert (x, y) == pytest.approx((10.0, 5.0))
    assert heading == pytest.approx(math.pi / 2)


def test_bearing():
    assert bearing_deg((0, 0), (0, 5)) == pytest.approx(90.0)


def test_antenna_pattern():
    assert antenna_gain_db(0.0) == pytest.approx(0.0)
    assert antenna_gain_db(90.0) == pytest.approx(20 * math.log10(0.5))
    assert antenna_gain_db(180.0) == pytest.approx(-25.0)
    assert antenna_gain_db(45.0) == pytest.approx(antenna_gain_db(-45.0))


def test_path_loss_grows_with_distance():
    near = path_loss_db(10.0, 1.8e9)
    far = path_loss_db(100.0, 1.8e9)
    assert far - near == pytest.approx(30.0)
    # free space at 1 m and 1.8 GHz
    assert path_loss_db(1.0, 1.8e9) == pytest.approx(37.5, abs=0.1)


def test_walls_attenuate_crossing_paths(scenario):
    assert wall_loss_db((50.0, 50.0), (50.0, -50.0), scenario.walls) == pytest.approx(10.0)
    assert wall_loss_db((50.0, 50.0), (150.0, 150.0), scenario.walls) == 0.0


def test_shadowing_is_a_fixed_property(scenario):
    a = shadowing_db(scenario, (10.2, 20.1), 0, 1)
    b = shadowing_db(scenario, (11.9, 21.3), 0, 1)
    c = shadowing_db(scenario, (10.2, 20.1), 0, 0)
    assert a == b
    assert a != c


def test_link_gain_rejects_colocated_ue(scenario):
    site = scenario.receivers[0]
    with pytest.raises(DegenerateGeometryError):
        link_gain_db(site.position, site, 0, scenario, 1.8e9)


def test_port_facing_the_ue_hears_more(scenario):
    site = scenario.receivers[0]
    inside = (60.0, 60.0)
    port_out = link_gain_db(inside, site, 0, scenario, 1.8e9, shadowing=False)
    port_in = link_gain_db(inside, site, 1, scenario, 1.8e9, shadowing=False)
    assert port_in > port_out + 10.0


def test_fractional_delay_of_integer_samples():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(256) + 1j * rng.standard_normal(256)
    delayed = fractional_delay(x, 3 / 1e6, 1e6)
    assert_allclose(delayed[3:], x[:-3], atol=1e-9)


def _site_facing(point, offset_deg):
    azimuth = bearing_deg((0.0, 0.0), point) + offset_deg
    return ReceiverSite(9, (0.0, 0.0), (azimuth, azimuth + 180.0))


def _power_db(samples):
    return 10 * np.log10(np.mean(np.abs(samples) ** 2))


def _noise_stream(n, sample_rate, start_time=0.0, seed=2):
    rng = np.random.default_rng(seed)
    return IqStream(rng.standard_normal(n) + 1j * rng.standard_normal(n), sample_rate, start_time)


@pytest.mark.parametrize("offset, expected", [(0.0, 25.0), (90.0, 0.0)])
def test_propagate_applies_the_port_pattern(scenario, offset, expected):
    waveform = _noise_stream(4096, 30.72e6)
    ue = scenario.ue_at((40.0, 30.0), 10.0)
    site = _site_facing(ue.position, offset)
    front = propagate(waveform, ue, site, 0, scenario, shadowing=False)
    back = propagate(waveform, ue, site, 1, scenario, shadowing=False)
    assert _power_db(front.samples) - _power_db(back.samples) == pytest.approx(expected, abs=1e-6)


def test_propagate_applies_the_link_budget(scenario):
    waveform = _noise_stream(4096, 30.72e6)
    ue = scenario.ue_at((40.0, 30.0), 10.0)
    site = _site_facing(ue.position, 0.0)
    received = propagate(waveform, ue, site, 0, scenario, shadowing=False)
    expected = (_power_db(waveform.samples) + ue.tx_power_dbm - FULL_SCALE_DBM_PER_RE
                + link_gain_db(ue.position, site, 0, scenario, 1.8e9, shadowing=False))
    assert _power_db(received.samples) == pytest.approx(expected, abs=0.05)
    assert len(received.samples) == len(waveform.samples)


def test_propagate_rejects_an_empty_waveform(scenario):
    ue = scenario.ue_at((40.0, 30.0))
    with pytest.raises(InvalidParameterError):
        propagate(IqStream(np.zeros(0, dtype=complex), 30.72e6), ue, _site_facing(ue.position, 0.0), 0, scenario)


def test_mix_band_of_one_stream_is_the_identity():
    stream = _noise_stream(512, 1e6, start_time=0.002)
    mixed = mix_band([(stream, 0.0, 0.0)])
    assert_allclose(mixed.samples, stream.samples)
    assert mixed.start_time == pytest.approx(0.002)


def test_mix_band_places_and_shifts_streams():
    base = IqStream(np.zeros(20, dtype=complex), 1e6)
    late = IqStream(np.ones(5, dtype=complex), 1e6)
    mixed = mix_band([(base, 0.0, 0.0), (late, 10e-6, 0.25e6)])
    assert len(mixed.samples) == 20
    assert_allclose(mixed.samples[:10], 0.0)
    # a quarter of the sample rate turns by 90 degrees per sample, counted from the first sample
    assert_allclose(mixed.samples[10:15], 1j ** np.arange(10, 15), atol=1e-9)


def test_mix_band_rejects_mismatched_rates():
    with pytest.raises(InvalidParameterError):
        mix_band([(_noise_stream(16, 1e6), 0.0, 0.0), (_noise_stream(16, 2e6), 0.0, 0.0)])
    with pytest.raises(InvalidParameterError):
        mix_band([(_noise_stream(16, 1e6), 0.0, 0.0)], sample_rate=2e6)
    with pytest.raises(InvalidParameterError):
        mix_band([])


def test_wideband_radio_renders_the_propagated_waveform(scenario, cell):
    site = scenario.receivers[0]
    spec = UplinkMessageSpec.pusch(6, 20, 0x3D)
    tx = Transmission((cell.earfcn, cell.pci, 0x3D, 1, 10), spec, cell, scenario.ue_at((50.0, 60.0), 10.0), 77, 10)
    radio = WidebandRadio(scenario, site, 1, fft_size=2048, noise=False)
    n = radio.samples_per_subframe
    received = radio.received(tx).samples
    assert_allclose(radio.render_subframe(10, [tx]), received[:n], atol=1e-12)
    # the delayed tail lands at the start of the next subframe
    following = radio.render_subframe(11, [])
    assert_allclose(following[:len(received) - n], received[n:], atol=1e-12)
    assert_allclose(following[len(received) - n:], 0.0)


def test_awgn_hits_the_target_snr():
    rng = np.random.default_rng(3)
    clean = IqStream(np.ones(200000, dtype=complex), 1e6)
    noisy = add_awgn(clean, 10.0, rng)
    noise_power = np.mean(np.abs(noisy.samples - clean.samples) ** 2)
    assert 10 * np.log10(1.0 / noise_power) == pytest.approx(10.0, abs=0.1)


def test_scenario_round_trip(tmp_path, scenario):
    path = tmp_path / "scenario.json"
    save_scenario(scenario, str(path))
    loaded = load_scenario(str(path))
    assert scenario_to_dict(loaded) == scenario_to_dict(scenario)
    assert loaded.receiver_ids == list(range(6))
    assert len(loaded.cells) == 8
    assert {c.band_id.name for c in loaded.cells} == {"B3", "B7", "B20"}


def test_shipped_scenario_matches_the_builtin(scenario):
    from cellfence.config import DEFAULT_SCENARIO

    shipped = load_scenario(DEFAULT_SCENARIO)
    assert scenario_to_dict(shipped) == scenario_to_dict(scenario)


def test_scenario_syntax_error_reports_the_line(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "area": {\n    "boundary": [[0, 0],,]\n  }\n}\n')
    with pytest.raises(ScenarioError) as info:
        load_scenario(str(path))
    assert info.value.line == 3


def test_scenario_schema_error_names_the_field(scenario):
    doc = scenario_to_dict(scenario)
    doc["receivers"][2]["position"] = [1.0]
    with pytest.raises(ScenarioError) as info:
        scenario_from_dict(doc)
    assert info.value.field == "receivers[2].position"


def test_scenario_rejects_bad_ports(scenario):
    doc = scenario_to_dict(scenario)
    doc["receivers"][0]["port_azimuths"] = [0.0, 90.0]
    with pytest.raises(ScenarioError):
        scenario_from_dict(doc)
    with pytest.raises(ScenarioError):
        ReceiverSite(9, (0.0, 0.0), (0.0, 180.0, 90.0))


def test_scenario_rejects_duplicate_cells(scenario):
    doc = scenario_to_dict(scenario)
    doc["cells"].append(dict(doc["cells"][0]))
    with pytest.raises(ScenarioError):
        scenario_from_dict(doc)


def test_route_labels_come_from_the_boundary(scenario):
    assert scenario.ue_at((100.0, 100.0)).inside_label
    assert not scenario.ue_at((-25.0, 100.0)).inside_label


def test_synthetic_radio_is_deterministic(scenario, cell):
    site = scenario.receivers[0]
    spec = UplinkMessageSpec.pusch(6, 20, 0x3D)
    tx = Transmission((cell.earfcn, cell.pci, 0x3D, 1, 10), spec, cell, scenario.ue_at((50.0, 60.0), 10.0), 77, 10)
    radio = SyntheticRadio(scenario, site, 5, interference_probability=0.0)
    a = radio.observe(spec, cell, 10, tx.message_key, tx, 0)
    b = radio.observe(spec, cell, 10, tx.message_key, tx, 0)
    assert_allclose(grid_values(a), grid_values(b))
    mask = allocation_mask(spec, cell)
    assert np.all(grid_values(a)[~mask] == 0)


def test_synthetic_radio_without_transmission_is_noise(scenario, cell):
    site = scenario.receivers[0]
    spec = UplinkMessageSpec.pusch(6, 20, 0x3D)
    radio = SyntheticRadio(scenario, site, 5, interference_probability=0.0)
    quiet = grid_values(radio.observe(spec, cell, 10, (1, 2, 3, 1, 10), None, 0))
    mask = allocation_mask(spec, cell)
    power = np.mean(np.abs(quiet[mask]) ** 2)
    assert power < 1e-5
