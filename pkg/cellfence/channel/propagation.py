"""
Geometric uplink channel: path loss, antenna pattern, walls, delay, noise.

Amplitude convention: a waveform sample of magnitude 1 carries 0 dBm per
resource element at the UE; received levels are expressed in dB relative
to the per-port digital full scale (FULL_SCALE_DBM_PER_RE).
"""

import math

import numpy as np
import scipy.constants

from cellfence.config import FULL_SCALE_DBM_PER_RE
from cellfence.channel.geometry import bearing_deg, distance, normalize_angle_deg, segments_intersect
from cellfence.errors import DegenerateGeometryError, InvalidParameterError
from cellfence.phy.ofdm import IqStream

SPEED_OF_LIGHT = scipy.constants.c
MIN_DISTANCE_M = 1e-3
REFERENCE_DISTANCE_M = 1.0
SHADOWING_ORIGIN = 1 << 20


def antenna_gain_db(off_axis_deg, front_to_back_db=25.0, max_gain_db=0.0):
    """Cardioid pattern 20*log10((1 + cos(theta)) / 2), floored at -front_to_back_db."""
    theta = math.radians(normalize_angle_deg(off_axis_deg))
    lobe = (1.0 + math.cos(theta)) / 2.0
    relative = 20.0 * math.log10(lobe) if lobe > 0 else -math.inf
    return max_gain_db + max(relative, -front_to_back_db)


def port_gain_db(site, port, point):
    off_axis = bearing_deg(site.position, point) - site.port_azimuths[port]
    return antenna_gain_db(off_axis, site.front_to_back_db, site.max_gain_db)


def path_loss_db(distance_m, carrier_hz, exponent=3.0):
    """Log-distance path loss with a free-space 1 m reference at the carrier."""
    d = max(distance_m, REFERENCE_DISTANCE_M)
    reference = 20.0 * math.log10(4.0 * math.pi * REFERENCE_DISTANCE_M * carrier_hz / SPEED_OF_LIGHT)
    return reference + 10.0 * exponent * math.log10(d / REFERENCE_DISTANCE_M)


def wall_loss_db(a, b, walls):
    return sum(w.attenuation_db for w in walls if segments_intersect(a, b, w.start, w.end))


def shadowing_db(scenario, point, receiver_id, port):
    """Log-normal shadowing fixed per environment, port and 5 m position cell."""
    sigma = scenario.channel.shadowing_sigma_db
    if sigma <= 0:
        return 0.0
    cell = scenario.channel.shadowing_cell_m
    qx = int(math.floor(point[0] / cell)) + SHADOWING_ORIGIN
    qy = int(math.floor(point[1] / cell)) + SHADOWING_ORIGIN
    rng = np.random.default_rng([scenario.rng_seed, receiver_id, port, qx, qy])
    return float(rng.normal(0.0, sigma))


def link_gain_db(point, site, port, scenario, carrier_hz, shadowing=True):
    """
    Total gain from a UE position to one receiver port, in dB.

    Args:
        point (tuple): UE position in meters.
        site (ReceiverSite): Receiving site.
        port (int): 0 or 1.
        scenario (DeploymentScenario): Walls and channel parameters.
        carrier_hz (float): Carrier for the path-loss reference.
        shadowing (bool): Include the environment shadowing term.

    Returns:
        float: Antenna gain minus path loss, wall loss and shadowing.
    """
    d = distance(point, site.position)
    if d < MIN_DISTANCE_M:
        raise DegenerateGeometryError(f"UE at {point} coincides with receiver {site.receiver_id}")
    gain = port_gain_db(site, port, point)
    gain -= path_loss_db(d, carrier_hz, scenario.channel.path_loss_exponent)
    gain -= wall_loss_db(point, site.position, scenario.walls)
    if shadowing:
        gain += shadowing_db(scenario, point, site.receiver_id, port)
    return gain


def propagation_delay_s(point, site):
    return distance(point, site.position) / SPEED_OF_LIGHT + site.clock_offset_s


def fractional_delay(samples, delay_s, sample_rate):
    """Delay by any (fractional) number of samples with a frequency-domain phase ramp.
    Zero padding keeps the delayed tail from wrapping; output length equals input length."""
    samples = np.asarray(samples, dtype=np.complex128)
    n = len(samples)
    pad = int(math.ceil(abs(delay_s) * sample_rate)) + 16
    spectrum = np.fft.fft(samples, n + pad)
    freqs = np.fft.fftfreq(n + pad, d=1.0 / sample_rate)
    delayed = np.fft.ifft(spectrum * np.exp(-2j * np.pi * freqs * delay_s))
    return delayed[:n]


def frequency_shift(samples, freq_hz, sample_rate, first_index=0):
    """Multiply by exp(j*2*pi*f*n/fs) using absolute sample indices for phase continuity."""
    if freq_hz == 0:
        return np.asarray(samples, dtype=np.complex128)
    n = first_index + np.arange(len(samples), dtype=np.int64)
    cycles = np.mod(n * (freq_hz / sample_rate), 1.0)
    return samples * np.exp(2j * np.pi * cycles)


def propagate(waveform, ue, site, port, scenario, carrier_hz=1.8e9, shadowing=True):
    """Received copy of a UE waveform at one port: scaled by the link budget and delayed by distance/c."""
    if len(waveform) == 0:
        raise InvalidParameterError("Cannot propagate an empty waveform")
    gain_db = ue.tx_power_dbm - FULL_SCALE_DBM_PER_RE + link_gain_db(ue.position, site, port, scenario, carrier_hz, shadowing)
    delay = propagation_delay_s(ue.position, site)
    carrier_phase = np.exp(-2j * np.pi * ((carrier_hz * delay) % 1.0))
    samples = fractional_delay(waveform.samples, delay, waveform.sample_rate)
    return IqStream(samples * (10.0 ** (gain_db / 20.0)) * carrier_phase, waveform.sample_rate, waveform.start_time)


def add_noise(waveform, noise_var, rng):
    n = len(waveform.samples)
    noise = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * math.sqrt(noise_var / 2.0)
    return IqStream(waveform.samples + noise, waveform.sample_rate, waveform.start_time)


def add_awgn(waveform, snr_db, rng, in_band_fraction=1.0):
    """
    Add complex white Gaussian noise at a target SNR.

    Signal power is measured over the occupied (nonzero) samples. With
    in_band_fraction = occupied bandwidth / sample rate the SNR applies
    inside the signal band instead of over the full sample rate.
    """
    if math.isinf(snr_db) and snr_db > 0:
        return IqStream(waveform.samples.copy(), waveform.sample_rate, waveform.start_time)
    occupied = waveform.samples[np.abs(waveform.samples) > 0]
    if occupied.size == 0:
        raise InvalidParameterError("Cannot set an SNR on a waveform with no energy")
    signal_power = float(np.mean(np.abs(occupied) ** 2))
    noise_var = signal_power / (10.0 ** (snr_db / 10.0)) / in_band_fraction
    return add_noise(waveform, noise_var, rng)


def mix_band(transmissions, sample_rate=None):
    """
    Sum transmissions after applying each one's time and frequency offset.

    Args:
        transmissions (list): (IqStream, time_offset_s, freq_offset_hz) tuples.

    Returns:
        IqStream: Sample-wise sum starting at the earliest transmission.
    """
    if not transmissions:
        raise InvalidParameterError("Nothing to mix")
    rates = {stream.sample_rate for stream, _, _ in transmissions}
    if len(rates) != 1 or (sample_rate is not None and sample_rate not in rates):
        raise InvalidParameterError(f"Mismatched sample rates: {sorted(rates)}")
    fs = rates.pop()

    starts = [stream.start_time + offset for stream, offset, _ in transmissions]
    t0 = min(starts)
    first_index = int(round(t0 * fs))
    placed = []
    total = 0
    for (stream, offset, freq), start in zip(transmissions, starts):
        exact = (start - t0) * fs
        whole = int(math.floor(exact + 1e-9))
        samples = stream.samples
        if exact - whole > 1e-9:
            samples = fractional_delay(samples, (exact - whole) / fs, fs)
        samples = frequency_shift(samples, freq, fs, first_index + whole)
        placed.append((whole, samples))
        total = max(total, whole + len(samples))

    out = np.zeros(total, dtype=np.complex128)
    for whole, samples in placed:
        out[whole:whole + len(samples)] += samples
    return IqStream(out, fs, t0)
