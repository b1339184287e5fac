"""
What a receiver port sees of the simulated world.

SyntheticRadio computes the received resource elements of one allocation
directly (gain, carrier phase, delay phase ramp, noise, co-channel
interferer). It matches the waveform path whenever the delay stays inside
the cyclic prefix. WidebandRadio renders full-band IQ per subframe.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from cellfence.config import FULL_SCALE_DBM_PER_RE, INTERFERENCE_PROBABILITY
from cellfence.channel.propagation import link_gain_db, mix_band, propagate, propagation_delay_s
from cellfence.phy.ofdm import BASE_FFT_SIZE, IqStream, ofdm_modulate, sample_rate_for
from cellfence.phy.resource_grid import (
    N_SC_PER_PRB,
    PRACH_SPACING_HZ,
    PRACH_ZC_LENGTH,
    SUBCARRIER_SPACING_HZ,
    MsgType,
    PrachGrid,
    SubframeGrid,
    build_uplink_message,
)

logger = logging.getLogger("Radio")

NOISE_STREAM = 2
INTERFERER_STREAM = 1


@dataclass(frozen=True)
class Transmission:
    """Ground truth of one uplink message on the air."""
    message_key: tuple
    spec: object
    cell: object
    ue: object
    payload_seed: int
    subframe_index: int


def occupied_bandwidth_hz(spec):
    if spec.msg_type == MsgType.PRACH:
        return PRACH_ZC_LENGTH * PRACH_SPACING_HZ
    return spec.n_prb * N_SC_PER_PRB * SUBCARRIER_SPACING_HZ


def per_re_power_dbm(spec, tx_power_dbm):
    """Transmit power per 15 kHz-equivalent resource element."""
    return tx_power_dbm - 10.0 * math.log10(occupied_bandwidth_hz(spec) / SUBCARRIER_SPACING_HZ)


def noise_variance(scenario):
    """Per resource element noise variance in full-scale units."""
    return 10.0 ** ((scenario.channel.noise_floor_dbm_per_re - FULL_SCALE_DBM_PER_RE) / 10.0)


def grid_frequencies(grid):
    if isinstance(grid, PrachGrid):
        return grid.bin_frequencies()
    return (np.arange(grid.n_subcarriers) - grid.n_subcarriers // 2) * SUBCARRIER_SPACING_HZ


def allocation_mask(spec, cell):
    if spec.msg_type == MsgType.PRACH:
        return np.ones(PRACH_ZC_LENGTH, dtype=bool)
    mask = np.zeros((14, cell.n_subcarriers), dtype=bool)
    for symbol in range(14):
        lo, hi = spec.subcarrier_span(symbol, cell.n_prb_ul)
        mask[symbol, lo:hi] = True
    return mask


def grid_values(grid):
    return grid.bins if isinstance(grid, PrachGrid) else grid.cells


def with_values(grid, values):
    if isinstance(grid, PrachGrid):
        return PrachGrid(values, grid.prb_offset, grid.n_prb_ul, grid.subframe_index, grid.sample_rate)
    return SubframeGrid(values, grid.subframe_index, grid.sample_rate)


class SyntheticRadio:
    """
    Resource-element domain front end for one receiver site.

    Noise is seeded by (run seed, message key, receiver, port) and the
    interferer by (run seed, message key) so every receiver sees the same
    interfering UE and results do not depend on processing order.
    """

    def __init__(self, scenario, site, run_seed, interference_probability=INTERFERENCE_PROBABILITY,
                 shadowing=True, noise=True):
        self.scenario = scenario
        self.site = site
        self.run_seed = run_seed
        self.interference_probability = interference_probability
        self.shadowing = shadowing
        self.noise = noise
        self._grid_cache = {}

    def _tx_grid(self, tx):
        key = tx.message_key
        grid = self._grid_cache.get(key)
        if grid is None:
            grid = build_uplink_message(tx.spec, tx.payload_seed, tx.cell, tx.subframe_index)
            if len(self._grid_cache) > 4096:
                self._grid_cache.clear()
            self._grid_cache[key] = grid
        return grid

    def received_component(self, tx, port):
        """Noise-free received grid of one transmission at one port."""
        grid = self._tx_grid(tx)
        carrier = tx.cell.band_id.uplink_hz + tx.cell.center_offset_hz
        level_db = (per_re_power_dbm(tx.spec, tx.ue.tx_power_dbm) - FULL_SCALE_DBM_PER_RE
                    + link_gain_db(tx.ue.position, self.site, port, self.scenario, carrier, self.shadowing))
        delay = propagation_delay_s(tx.ue.position, self.site)
        ramp = np.exp(-2j * np.pi * grid_frequencies(grid) * delay)
        gain = 10.0 ** (level_db / 20.0) * np.exp(-2j * np.pi * ((carrier * delay) % 1.0))
        return with_values(grid, grid_values(grid) * ramp * gain)

    def _interference(self, spec, cell, message_key, port, shape, mask):
        rng = np.random.default_rng([self.run_seed, INTERFERER_STREAM, *message_key])
        if rng.random() >= self.interference_probability:
            return None
        x0, y0, x1, y1 = self.scenario.extent(30.0)
        point = (rng.uniform(x0, x1), rng.uniform(y0, y1))
        tx_power = rng.uniform(0.0, 23.0)
        data = np.exp(1j * (np.pi / 4 + np.pi / 2 * rng.integers(0, 4, size=shape)))
        carrier = cell.band_id.uplink_hz + cell.center_offset_hz
        try:
            level_db = (per_re_power_dbm(spec, tx_power) - FULL_SCALE_DBM_PER_RE
                        + link_gain_db(point, self.site, port, self.scenario, carrier, self.shadowing))
        except ValueError:
            return None
        return data * mask * 10.0 ** (level_db / 20.0)

    def observe(self, spec, cell, subframe_index, message_key, transmission, port):
        """
        Received allocated resource elements of one port.

        Args:
            spec (UplinkMessageSpec): Allocation layout.
            cell (CellConfig): Cell of the allocation.
            subframe_index (int): Subframe of the allocation.
            message_key (tuple): Global message identifier fields.
            transmission (Transmission | None): What was really sent there, if anything.
            port (int): 0 or 1.

        Returns:
            SubframeGrid | PrachGrid: Grid with only the allocated elements filled.
        """
        mask = allocation_mask(spec, cell)
        if transmission is not None:
            received = self.received_component(transmission, port)
            values = grid_values(received) * mask
        else:
            values = np.zeros(mask.shape, dtype=np.complex128)
            if spec.msg_type == MsgType.PRACH:
                received = PrachGrid(values, spec.prb_offset, cell.n_prb_ul, subframe_index)
            else:
                received = SubframeGrid(values, subframe_index)

        interference = self._interference(spec, cell, message_key, port, mask.shape, mask)
        if interference is not None:
            values = values + interference

        if self.noise:
            rng = np.random.default_rng([self.run_seed, NOISE_STREAM, *message_key, self.site.receiver_id, port])
            sigma = math.sqrt(noise_variance(self.scenario) / 2.0)
            noise = (rng.standard_normal(mask.shape) + 1j * rng.standard_normal(mask.shape)) * sigma
            values = values + noise * mask
        return with_values(received, values)


class WidebandRadio:
    """
    Renders one band's IQ at one receiver port, subframe by subframe.

    Each transmission goes through propagate() and the band is summed by
    mix_band(). Samples delayed past the end of a subframe are carried into
    the next one, so subframes must be rendered in order to keep them.
    """

    def __init__(self, scenario, site, port, fft_size=8192, run_seed=0, noise=True, shadowing=True):
        self.scenario = scenario
        self.site = site
        self.port = port
        self.fft_size = fft_size
        self.sample_rate = sample_rate_for(fft_size)
        self.samples_per_subframe = int(round(self.sample_rate * 1e-3))
        self.run_seed = run_seed
        self.noise = noise
        self.shadowing = shadowing
        self._carry = None
        self._last_subframe = None

    def received(self, tx):
        """Received waveform of one transmission, padded to keep its delayed tail."""
        grid = build_uplink_message(tx.spec, tx.payload_seed, tx.cell, tx.subframe_index)
        waveform = ofdm_modulate(grid, self.fft_size, tx.subframe_index * 1e-3)
        # Unit-magnitude samples carry 0 dBm per element; scale to the UE's per-element power
        scale = 10.0 ** ((per_re_power_dbm(tx.spec, tx.ue.tx_power_dbm) - tx.ue.tx_power_dbm) / 20.0)
        pad = int(math.ceil(max(propagation_delay_s(tx.ue.position, self.site), 0.0) * self.sample_rate)) + 1
        padded = IqStream(np.concatenate([waveform.samples * scale, np.zeros(pad)]), waveform.sample_rate,
                          waveform.start_time)
        carrier = tx.cell.band_id.uplink_hz + tx.cell.center_offset_hz
        return propagate(padded, tx.ue, self.site, self.port, self.scenario, carrier, self.shadowing)

    def render_subframe(self, subframe_index, transmissions):
        """IQ of one subframe containing every given transmission of this band."""
        n = self.samples_per_subframe
        anchor = IqStream(np.zeros(n), self.sample_rate, subframe_index * 1e-3)
        streams = [(anchor, 0.0, 0.0)]
        streams += [(self.received(tx), 0.0, tx.cell.center_offset_hz)
                    for tx in transmissions if tx.subframe_index == subframe_index]
        mixed = mix_band(streams, self.sample_rate).samples

        out = mixed[:n].copy()
        if self._carry is not None and self._last_subframe == subframe_index - 1:
            out[:len(self._carry)] += self._carry[:n]
        self._carry = mixed[n:]
        self._last_subframe = subframe_index

        if self.noise:
            rng = np.random.default_rng([self.run_seed, NOISE_STREAM, subframe_index, self.site.receiver_id, self.port])
            sigma = math.sqrt(noise_variance(self.scenario) * self.fft_size / BASE_FFT_SIZE / 2.0)
            out += (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * sigma
        return out
