"""OFDM modulation with normal cyclic prefix, plus the PRACH preamble path."""

from dataclasses import dataclass

import numpy as np

from cellfence.errors import InvalidParameterError
from cellfence.phy.resource_grid import (
    N_SC_PER_PRB,
    N_SYMBOLS,
    PRACH_BIN_OFFSET,
    PRACH_SPACING_HZ,
    PRACH_ZC_LENGTH,
    SUBCARRIER_SPACING_HZ,
    SYMBOLS_PER_SLOT,
    PrachGrid,
    SubframeGrid,
)

BASE_FFT_SIZE = 2048
ALLOWED_FFT_SIZES = (2048, 8192)

# Format 0 preamble at 30.72 Msps: CP, 24576-sample sequence, guard fills the subframe
PRACH_CP_BASE = 3168
PRACH_SEQ_BASE = 24576


@dataclass
class IqStream:
    """Complex baseband samples; start_time is the time of samples[0] in seconds."""
    samples: np.ndarray
    sample_rate: float
    start_time: float = 0.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.complex128)

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate

    def power(self):
        return float(np.mean(np.abs(self.samples) ** 2)) if len(self.samples) else 0.0


def sample_rate_for(fft_size):
    return fft_size * SUBCARRIER_SPACING_HZ


def cp_lengths(fft_size):
    scale = fft_size // BASE_FFT_SIZE
    slot = [160 * scale] + [144 * scale] * (SYMBOLS_PER_SLOT - 1)
    return slot + slot


def symbol_starts(fft_size):
    """Sample index where the FFT window of each symbol starts (after its CP)."""
    starts = []
    position = 0
    for cp in cp_lengths(fft_size):
        position += cp
        starts.append(position)
        position += fft_size
    return starts


def subcarrier_bins(n_subcarriers, fft_size):
    """FFT bin of each grid subcarrier; subcarrier n_subcarriers//2 sits on DC."""
    return (np.arange(n_subcarriers) - n_subcarriers // 2) % fft_size


def _check_fft_size(fft_size, occupied):
    if fft_size not in ALLOWED_FFT_SIZES:
        raise InvalidParameterError(f"fft_size must be one of {ALLOWED_FFT_SIZES}, got {fft_size}")
    if fft_size < occupied:
        raise InvalidParameterError(f"fft_size {fft_size} smaller than occupied bandwidth {occupied}")


def ofdm_modulate(grid, fft_size=BASE_FFT_SIZE, start_time=0.0):
    """
    Render a grid as one subframe of time-domain samples.

    Samples are scaled so the same grid gives the same continuous-time
    waveform at every fft_size: sample 4m at 8192 equals sample m at 2048.

    Args:
        grid (SubframeGrid | PrachGrid): Grid to render.
        fft_size (int): 2048 for 30.72 Msps, 8192 for 122.88 Msps.

    Returns:
        IqStream: Exactly one subframe of samples.
    """
    if isinstance(grid, PrachGrid):
        return prach_modulate(grid, fft_size, start_time)

    _check_fft_size(fft_size, grid.n_subcarriers)
    bins = np.zeros((N_SYMBOLS, fft_size), dtype=np.complex128)
    bins[:, subcarrier_bins(grid.n_subcarriers, fft_size)] = grid.cells
    symbols = np.fft.ifft(bins, axis=1) * (fft_size / np.sqrt(BASE_FFT_SIZE))

    pieces = []
    for symbol, cp in enumerate(cp_lengths(fft_size)):
        pieces.append(symbols[symbol, -cp:])
        pieces.append(symbols[symbol])
    return IqStream(np.concatenate(pieces), sample_rate_for(fft_size), start_time)


def ofdm_demodulate(stream, n_subcarriers, fft_size=BASE_FFT_SIZE, subframe_index=0, offset=0):
    """Inverse of ofdm_modulate for the subframe starting at sample `offset` of stream."""
    _check_fft_size(fft_size, n_subcarriers)
    samples = stream.samples if isinstance(stream, IqStream) else np.asarray(stream)
    windows = np.stack([samples[offset + start:offset + start + fft_size] for start in symbol_starts(fft_size)])
    spectra = np.fft.fft(windows, axis=1) * (np.sqrt(BASE_FFT_SIZE) / fft_size)
    cells = spectra[:, subcarrier_bins(n_subcarriers, fft_size)]
    return SubframeGrid(cells, subframe_index, sample_rate_for(fft_size))


def _prach_layout(fft_size):
    scale = fft_size // BASE_FFT_SIZE
    return PRACH_CP_BASE * scale, PRACH_SEQ_BASE * scale


def prach_bin_indices(grid_or_offset, n_prb_ul, seq_len):
    prb_offset = grid_or_offset.prb_offset if isinstance(grid_or_offset, PrachGrid) else grid_or_offset
    start = (prb_offset * N_SC_PER_PRB - n_prb_ul * N_SC_PER_PRB // 2) * int(SUBCARRIER_SPACING_HZ // PRACH_SPACING_HZ)
    return (start + PRACH_BIN_OFFSET + np.arange(PRACH_ZC_LENGTH)) % seq_len


def prach_modulate(grid, fft_size=BASE_FFT_SIZE, start_time=0.0):
    _check_fft_size(fft_size, grid.n_prb_ul * N_SC_PER_PRB)
    cp, seq_len = _prach_layout(fft_size)
    spectrum = np.zeros(seq_len, dtype=np.complex128)
    spectrum[prach_bin_indices(grid, grid.n_prb_ul, seq_len)] = grid.bins
    sequence = np.fft.ifft(spectrum) * (seq_len / np.sqrt(PRACH_SEQ_BASE))

    total = int(round(sample_rate_for(fft_size) * 1e-3))
    samples = np.zeros(total, dtype=np.complex128)
    samples[:cp] = sequence[-cp:]
    samples[cp:cp + seq_len] = sequence
    return IqStream(samples, sample_rate_for(fft_size), start_time)


def prach_demodulate(stream, prb_offset, n_prb_ul, fft_size=BASE_FFT_SIZE, subframe_index=0, offset=0):
    cp, seq_len = _prach_layout(fft_size)
    samples = stream.samples if isinstance(stream, IqStream) else np.asarray(stream)
    window = samples[offset + cp:offset + cp + seq_len]
    spectrum = np.fft.fft(window) * (np.sqrt(PRACH_SEQ_BASE) / seq_len)
    bins = spectrum[prach_bin_indices(prb_offset, n_prb_ul, seq_len)]
    return PrachGrid(bins, prb_offset, n_prb_ul, subframe_index, sample_rate_for(fft_size))
