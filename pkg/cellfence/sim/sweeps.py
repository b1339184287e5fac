"""
Curve data for the estimator, direction-finding and robustness studies.

Every sweep returns a pandas DataFrame whose columns are documented in the
README; the CLI writes it as CSV. Estimator sweeps work on a single message
at unit per-element power (0 dB) with white noise on the allocated
elements, 100 trials per point by default.
"""

import logging
import math
from itertools import combinations

import numpy as np
import pandas as pd
from scipy.stats import spearmanr

from cellfence.channel.geometry import bearing_deg, normalize_angle_deg, point_in_polygon
from cellfence.channel.propagation import (
    fractional_delay, link_gain_db, path_loss_db, port_gain_db, propagate, wall_loss_db,
)
from cellfence.channel.radio import allocation_mask, grid_frequencies, grid_values, with_values
from cellfence.channel.scenario import ChannelParams, DeploymentScenario, ReceiverSite
from cellfence.config import FULL_SCALE_DBM_PER_RE
from cellfence.errors import InvalidParameterError
from cellfence.model.metrics import evaluate, subset_robustness
from cellfence.phy.ofdm import IqStream, ofdm_demodulate, ofdm_modulate, prach_demodulate
from cellfence.phy.resource_grid import BandId, CellConfig, MsgType, UplinkMessageSpec, build_uplink_message
from cellfence.uplink.features import estimate_features

logger = logging.getLogger("Sweeps")

DEFAULT_TRIALS = 100
SWEEP_CELL = CellConfig(19575, 101, 50, (1, 6), 129, BandId.B3, 4, True, 0.0, (0.0, 0.0))
SWEEP_RNTI = 0x1234

MESSAGES = {
    "prach": UplinkMessageSpec.prach(0, 4, SWEEP_RNTI),
    "pusch6": UplinkMessageSpec.pusch(6, 20, SWEEP_RNTI),
    "pucch": UplinkMessageSpec.pucch(SWEEP_RNTI, True, 0),
    "pusch1": UplinkMessageSpec.pusch(1, 20, SWEEP_RNTI),
}


def _message(name):
    if name not in MESSAGES:
        raise InvalidParameterError(f"Unknown message {name!r}; choose from {sorted(MESSAGES)}")
    return MESSAGES[name]


def observed_grid(spec, cell, rng, snr_db, delay_s=0.0, interference_db=None, payload_seed=0):
    """
    One reception of a 0 dB message in the resource-element domain.

    Args:
        snr_db (float): Per-element signal-to-noise ratio; inf disables noise.
        delay_s (float): Delay applied as a phase ramp over frequency.
        interference_db (float, optional): Power of a co-channel QPSK interferer on the same elements.
    """
    grid = build_uplink_message(spec, payload_seed, cell)
    mask = allocation_mask(spec, cell)
    ramp = np.exp(-2j * np.pi * grid_frequencies(grid) * delay_s)
    values = grid_values(grid) * ramp * np.exp(2j * np.pi * rng.random())
    if interference_db is not None:
        symbols = np.exp(1j * (np.pi / 4 + np.pi / 2 * rng.integers(0, 4, size=mask.shape)))
        values = values + symbols * mask * 10.0 ** (interference_db / 20.0)
    if not math.isinf(snr_db):
        sigma = math.sqrt(10.0 ** (-snr_db / 10.0) / 2.0)
        noise = (rng.standard_normal(mask.shape) + 1j * rng.standard_normal(mask.shape)) * sigma
        values = values + noise * mask
    return with_values(grid, values)


def _errors(spec, cell, rng, snr_db, trials, **kwargs):
    peak, rms2 = [], []
    for trial in range(trials):
        est = estimate_features(observed_grid(spec, cell, rng, snr_db, payload_seed=trial, **kwargs), spec, cell)
        peak.append(est.corr_peak_power_db)
        rms2.append(est.rms2_power_db)
    return np.array(peak), np.array(rms2)


def power_sweep(snrs=range(-20, 12, 2), trials=DEFAULT_TRIALS, seed=0, message="pusch6", interference_db=None):
    """Power estimation error of the correlation peak and of RMS² against SNR."""
    spec = _message(message)
    rng = np.random.default_rng(seed)
    rows = []
    for snr in snrs:
        peak, rms2 = _errors(spec, SWEEP_CELL, rng, snr, trials, interference_db=interference_db)
        rows.append({
            "snr_db": snr,
            "message": message,
            "interference_db": np.nan if interference_db is None else interference_db,
            "corr_peak_mean_error_db": peak.mean(),
            "corr_peak_std_db": peak.std(),
            "corr_peak_mean_abs_error_db": np.abs(peak).mean(),
            "rms2_mean_error_db": rms2.mean(),
            "rms2_std_db": rms2.std(),
            "rms2_mean_abs_error_db": np.abs(rms2).mean(),
            "trials": trials,
        })
    return pd.DataFrame(rows)


def message_type_sweep(snrs=(-10, -5, 0, 5, 10), trials=DEFAULT_TRIALS, seed=0, messages=tuple(MESSAGES)):
    """Correlation-peak power error of each message layout at equal per-element power."""
    rng = np.random.default_rng(seed)
    rows = []
    for name in messages:
        spec = _message(name)
        for snr in snrs:
            peak, _ = _errors(spec, SWEEP_CELL, rng, snr, trials)
            rows.append({"message": name, "snr_db": snr, "mean_error_db": peak.mean(),
                         "std_error_db": peak.std(), "mean_abs_error_db": np.abs(peak).mean(), "trials": trials})
    return pd.DataFrame(rows)


def snr_sweep(snrs=range(-10, 22, 2), trials=DEFAULT_TRIALS, seed=0, message="pusch6"):
    """SNR estimation error of the peak-to-average and smoothed-correlation estimators."""
    spec = _message(message)
    rng = np.random.default_rng(seed)
    rows = []
    for snr in snrs:
        par, smooth = [], []
        for trial in range(trials):
            est = estimate_features(observed_grid(spec, SWEEP_CELL, rng, snr, payload_seed=trial), spec, SWEEP_CELL)
            par.append(est.peak_to_avg_snr_db - snr)
            smooth.append(est.smoothed_snr_db - snr)
        par, smooth = np.array(par), np.array(smooth)
        rows.append({
            "snr_db": snr,
            "message": message,
            "par_mean_estimate_db": snr + par.mean(),
            "par_mean_error_db": par.mean(),
            "par_mean_abs_error_db": np.abs(par).mean(),
            "smoothed_mean_estimate_db": snr + smooth.mean(),
            "smoothed_mean_error_db": smooth.mean(),
            "smoothed_mean_abs_error_db": np.abs(smooth).mean(),
            "trials": trials,
        })
    frame = pd.DataFrame(rows)
    frame["par_spearman"] = spearmanr(frame["snr_db"], frame["par_mean_estimate_db"])[0]
    frame["smoothed_spearman"] = spearmanr(frame["snr_db"], frame["smoothed_mean_estimate_db"])[0]
    return frame


def _demodulate(stream, spec, cell):
    if spec.msg_type == MsgType.PRACH:
        return prach_demodulate(stream, spec.prb_offset, cell.n_prb_ul)
    return ofdm_demodulate(stream, cell.n_subcarriers)


def _waveform_reception(spec, cell, rng, snr_db, delay_s, payload_seed):
    """Reception through the OFDM waveform path, so delays beyond the cyclic prefix cause ISI."""
    grid = build_uplink_message(spec, payload_seed, cell)
    stream = ofdm_modulate(grid)
    delayed = IqStream(fractional_delay(stream.samples, delay_s, stream.sample_rate), stream.sample_rate)
    received = _demodulate(delayed, spec, cell)
    mask = allocation_mask(spec, cell)
    values = grid_values(received) * mask * np.exp(2j * np.pi * rng.random())
    if not math.isinf(snr_db):
        sigma = math.sqrt(10.0 ** (-snr_db / 10.0) / 2.0)
        values = values + (rng.standard_normal(mask.shape) + 1j * rng.standard_normal(mask.shape)) * sigma * mask
    return with_values(received, values)


def delay_sweep(delays_us=(0, 1, 2, 3, 4, 5, 6, 8, 10), trials=DEFAULT_TRIALS, seed=0, message="pusch6",
                snr_db=10.0):
    """Power estimates against the arrival delay, up to and past the cyclic prefix."""
    spec = _message(message)
    rng = np.random.default_rng(seed)
    rows = []
    reference = None
    for delay in delays_us:
        peak, rms2 = [], []
        for trial in range(trials):
            grid = _waveform_reception(spec, SWEEP_CELL, rng, snr_db, delay * 1e-6, trial)
            est = estimate_features(grid, spec, SWEEP_CELL)
            peak.append(est.corr_peak_power_db)
            rms2.append(est.rms2_power_db)
        peak, rms2 = np.mean(peak), np.mean(rms2)
        if reference is None:
            reference = peak
        rows.append({"delay_us": delay, "message": message, "snr_db": snr_db,
                     "corr_peak_mean_db": peak, "corr_peak_change_db": peak - reference,
                     "rms2_mean_db": rms2, "trials": trials})
    return pd.DataFrame(rows)


def _open_field(site, shadowing_sigma_db=0.0):
    half = 1000.0
    boundary = [(-half, -half), (half, -half), (half, half), (-half, half)]
    return DeploymentScenario(boundary, [], [site], [SWEEP_CELL],
                              channel=ChannelParams(shadowing_sigma_db=shadowing_sigma_db), name="open_field")


def aoa_sweep(angles=range(0, 360, 15), distance_m=50.0, trials=DEFAULT_TRIALS, seed=0, snr_db=20.0,
              message="prach"):
    """
    Port 0 minus port 1 power for a UE circling a lone receiver in line of sight.

    Angles are measured from the port 0 boresight. Each trial renders the
    message waveform, propagates it to both ports and demodulates it; the
    stronger port sees snr_db per element. The model column is the
    noise-free link budget difference.
    """
    spec = _message(message)
    site = ReceiverSite(0, (0.0, 0.0), (0.0, 180.0))
    scenario = _open_field(site)
    rng = np.random.default_rng(seed)
    carrier = SWEEP_CELL.band_id.uplink_hz
    mask = allocation_mask(spec, SWEEP_CELL)
    waveforms = {}
    rows = []
    for angle in angles:
        theta = math.radians(angle)
        point = (distance_m * math.cos(theta), distance_m * math.sin(theta))
        # Transmitting at full scale leaves only the link gain on each element
        ue = scenario.ue_at(point, FULL_SCALE_DBM_PER_RE)
        gains = [link_gain_db(point, site, port, scenario, carrier, shadowing=False) for port in (0, 1)]
        sigma = math.sqrt(10.0 ** ((max(gains) - snr_db) / 10.0) / 2.0)
        diffs = []
        for trial in range(trials):
            if trial not in waveforms:
                waveforms[trial] = ofdm_modulate(build_uplink_message(spec, trial, SWEEP_CELL))
            measured = []
            for port in (0, 1):
                received = _demodulate(propagate(waveforms[trial], ue, site, port, scenario, carrier, shadowing=False),
                                       spec, SWEEP_CELL)
                noise = (rng.standard_normal(mask.shape) + 1j * rng.standard_normal(mask.shape)) * sigma
                grid = with_values(received, (grid_values(received) + noise) * mask)
                measured.append(estimate_features(grid, spec, SWEEP_CELL).corr_peak_power_db)
            diffs.append(measured[0] - measured[1])
        rows.append({"angle_deg": angle, "distance_m": distance_m, "model_difference_db": gains[0] - gains[1],
                     "path_loss_db": path_loss_db(distance_m, carrier, scenario.channel.path_loss_exponent),
                     "mean_difference_db": float(np.mean(diffs)),
                     "std_difference_db": float(np.std(diffs)), "trials": trials})
    return pd.DataFrame(rows)


def _port_positions(site, mount_offset_m):
    """Each antenna sits mount_offset_m from the site along its own boresight."""
    out = []
    for azimuth in site.port_azimuths:
        a = math.radians(azimuth)
        out.append((site.position[0] + mount_offset_m * math.cos(a), site.position[1] + mount_offset_m * math.sin(a)))
    return out


def _sample_points(scenario, rng, n, inside, margin):
    x0, y0, x1, y1 = scenario.extent(margin)
    points = []
    while len(points) < n:
        p = (float(rng.uniform(x0, x1)), float(rng.uniform(y0, y1)))
        if point_in_polygon(p, scenario.boundary) == inside:
            points.append(p)
    return points


def overlap_at_best_threshold(inside, outside):
    """Smallest misclassification rate of a single threshold separating two samples."""
    inside, outside = np.sort(inside), np.sort(outside)
    candidates = np.concatenate([inside, outside, [np.inf]])
    best_error, best_threshold = 1.0, 0.0
    for t in candidates:
        # Classified outside when value >= t
        wrong = (len(inside) - np.searchsorted(inside, t, side="left")) + np.searchsorted(outside, t, side="left")
        error = wrong / (len(inside) + len(outside))
        if error < best_error:
            best_error, best_threshold = error, t
    return float(best_error), float(best_threshold)


def aoa_separation_sweep(scenario, n_points=2000, seed=0, wall_index=0, mount_offset_m=0.5, margin=60.0):
    """
    Inside and outside port difference distributions of one receiver straddling a wall.

    The receiver sits at the middle of the chosen wall with port 0 facing
    out of the area; the antennas are on opposite sides of the wall.

    Returns:
        tuple: (summary DataFrame, samples DataFrame)
    """
    if not scenario.walls:
        raise InvalidParameterError("Separation study needs a scenario with walls")
    wall = scenario.walls[wall_index]
    mid = ((wall.start[0] + wall.end[0]) / 2.0, (wall.start[1] + wall.end[1]) / 2.0)
    normal = normalize_angle_deg(bearing_deg(wall.start, wall.end) + 90.0)
    nudged = (mid[0] + math.cos(math.radians(normal)), mid[1] + math.sin(math.radians(normal)))
    outward = normal if not point_in_polygon(nudged, scenario.boundary) else normalize_angle_deg(normal + 180.0)
    site = ReceiverSite(0, mid, (outward, normalize_angle_deg(outward + 180.0)))
    positions = _port_positions(site, mount_offset_m)
    carrier = SWEEP_CELL.band_id.uplink_hz
    rng = np.random.default_rng(seed)

    def difference(point):
        gains = []
        for port, position in enumerate(positions):
            d = max(math.hypot(point[0] - position[0], point[1] - position[1]), 1.0)
            gain = port_gain_db(site, port, point) - path_loss_db(d, carrier, scenario.channel.path_loss_exponent)
            gain -= wall_loss_db(point, position, scenario.walls)
            gain += rng.normal(0.0, scenario.channel.shadowing_sigma_db) if scenario.channel.shadowing_sigma_db else 0.0
            gains.append(gain)
        return gains[0] - gains[1]

    samples = []
    for inside in (True, False):
        for point in _sample_points(scenario, rng, n_points, inside, margin):
            samples.append({"x_m": point[0], "y_m": point[1], "inside": int(inside),
                            "port_difference_db": difference(point)})
    frame = pd.DataFrame(samples)
    ins = frame.loc[frame["inside"] == 1, "port_difference_db"].to_numpy()
    outs = frame.loc[frame["inside"] == 0, "port_difference_db"].to_numpy()
    overlap, threshold = overlap_at_best_threshold(ins, outs)
    summary = pd.DataFrame([{
        "wall": wall_index, "attenuation_db": wall.attenuation_db,
        "inside_mean_db": ins.mean(), "inside_std_db": ins.std(),
        "outside_mean_db": outs.mean(), "outside_std_db": outs.std(),
        "threshold_db": threshold, "overlap": overlap, "points": len(frame),
    }])
    logger.info(f"Port difference overlap {overlap:.4f} at threshold {threshold:.2f} dB")
    return summary, frame


def _subsets(n_receivers, k, max_subsets, rng):
    everything = list(combinations(range(n_receivers), k))
    if len(everything) <= max_subsets:
        return everything
    picks = rng.choice(len(everything), size=max_subsets, replace=False)
    return [everything[i] for i in sorted(picks)]


def receiver_dropout_sweep(model, ensemble, dataset, max_subsets=20, seed=0):
    """Accuracy with 0..R-1 receivers switched off, averaged over receiver subsets."""
    rng = np.random.default_rng(seed)
    n = len(dataset.receiver_ids)
    rows = []
    for k in range(n):
        message_acc, connection_acc = [], []
        for subset in _subsets(n, k, max_subsets, rng):
            result = evaluate(model, ensemble, dataset.masked(subset) if subset else dataset)
            message_acc.append(result.message.accuracy)
            connection_acc.append(result.connection.accuracy)
        rows.append({"receivers_off": k, "subsets": len(message_acc),
                     "message_accuracy": float(np.mean(message_acc)),
                     "connection_accuracy": float(np.mean(connection_acc)),
                     "connection_accuracy_min": float(np.min(connection_acc))})
    return pd.DataFrame(rows)


def message_count_sweep(model, ensemble, dataset):
    """Connection accuracy deciding on PRACH only, PRACH and Msg3, or every message."""
    return subset_robustness(model, ensemble, dataset)

