"""
Overlap-save channelizer: one wideband stream in, one decimated stream per cell out.

Each block of the input is transformed once; every channel multiplies the
shared spectrum with its band-pass response (the low-pass prototype moved
to the channel center), transforms back, keeps the valid tail, mixes down
with absolute sample indices and decimates. Block partitioning depends only
on the total number of samples seen, so streaming in arbitrary chunks is
bit-identical to one-shot processing.
"""

import logging
import math
import time

import numpy as np
from scipy import signal

from cellfence.errors import InvalidParameterError
from cellfence.phy.ofdm import IqStream

logger = logging.getLogger("Channelizer")

DEFAULT_BLOCK_SIZE = 8192
DEFAULT_OVERLAP = 0.25
DEFAULT_STOPBAND_DB = 60.0
DEFAULT_TRANSITION = 0.10


def design_prototype(sample_rate, bandwidth_hz, stopband_db=DEFAULT_STOPBAND_DB, transition=DEFAULT_TRANSITION):
    """Kaiser windowed-sinc low-pass: passband edge bandwidth/2, stopband edge bandwidth/2 + transition*bandwidth."""
    nyquist = sample_rate / 2.0
    width_hz = transition * bandwidth_hz
    stop_edge = bandwidth_hz / 2.0 + width_hz
    if stop_edge >= nyquist:
        # Channel spans the whole Nyquist zone: nothing to reject
        return np.array([1.0])
    numtaps, beta = signal.kaiserord(stopband_db, width_hz / nyquist)
    numtaps |= 1  # odd length, integer group delay
    cutoff = bandwidth_hz / 2.0 + width_hz / 2.0
    return signal.firwin(numtaps, cutoff, window=("kaiser", beta), fs=sample_rate)


class OverlapSaveChannelizer:
    """
    Streaming multi-channel overlap-save filter.

    Args:
        sample_rate (float): Wideband sample rate in Hz.
        channels (list): (center_offset_hz, bandwidth_hz) per output channel.
        block_size (int): FFT size, a power of two. Grown automatically if the
            prototype does not fit into the overlap.
        overlap (float): Fraction of each block carried over from the previous one.
    """

    def __init__(self, sample_rate, channels, block_size=DEFAULT_BLOCK_SIZE, overlap=DEFAULT_OVERLAP,
                 stopband_db=DEFAULT_STOPBAND_DB, transition=DEFAULT_TRANSITION, decimations=None):
        if block_size <= 0 or block_size & (block_size - 1):
            raise InvalidParameterError(f"block_size must be a power of two, got {block_size}")
        if not channels:
            raise InvalidParameterError("At least one channel is required")

        self.sample_rate = float(sample_rate)
        self.channels = [(float(f), float(bw)) for f, bw in channels]
        nyquist = self.sample_rate / 2.0
        for center, bandwidth in self.channels:
            if bandwidth <= 0 or abs(center) + bandwidth / 2.0 > nyquist + 1e-6:
                raise InvalidParameterError(
                    f"Channel at {center / 1e6:.3f} MHz with {bandwidth / 1e6:.3f} MHz exceeds the Nyquist zone"
                )

        self.prototypes = [design_prototype(self.sample_rate, bw, stopband_db, transition) for _, bw in self.channels]
        longest = max(len(p) for p in self.prototypes)
        while int(block_size * overlap) < longest - 1:
            block_size *= 2
            logger.info(f"Prototype has {longest} taps, growing block size to {block_size}")
        self.block_size = block_size
        self.overlap = int(block_size * overlap)
        self.step = block_size - self.overlap

        if decimations is None:
            decimations = [max(1, int(self.sample_rate // (bw * (1.0 + 2.0 * transition)))) for _, bw in self.channels]
        self.decimations = list(decimations)

        m = np.arange(longest)
        self._responses = []
        for (center, _), taps in zip(self.channels, self.prototypes):
            bandpass = taps * np.exp(2j * np.pi * center * m[:len(taps)] / self.sample_rate)
            self._responses.append(np.fft.fft(bandpass, self.block_size))

        self._history = np.zeros(self.overlap, dtype=np.complex128)
        self._pending = np.zeros(0, dtype=np.complex128)
        self._out_index = 0
        self._total_in = 0
        logger.info(f"Channelizer with {len(self.channels)} channels, block {self.block_size}, "
                    f"overlap {self.overlap}, decimations {self.decimations}")

    @property
    def group_delays(self):
        return [(len(p) - 1) // 2 for p in self.prototypes]

    @property
    def output_rates(self):
        return [self.sample_rate / d for d in self.decimations]

    def _run_block(self, new_samples):
        block = np.concatenate([self._history, new_samples])
        spectrum = np.fft.fft(block)
        indices = self._out_index + np.arange(self.step, dtype=np.int64)
        outputs = []
        for (center, _), response, decimation in zip(self.channels, self._responses, self.decimations):
            filtered = np.fft.ifft(spectrum * response)[self.overlap:]
            keep = (indices % decimation) == 0
            kept_idx = indices[keep]
            cycles = np.mod(kept_idx * (center / self.sample_rate), 1.0)
            outputs.append(filtered[keep] * np.exp(-2j * np.pi * cycles))
        self._history = block[-self.overlap:]
        self._out_index += self.step
        return outputs

    def process(self, samples):
        """Feed samples; returns per-channel arrays of every output that is now complete."""
        samples = np.asarray(samples, dtype=np.complex128)
        self._total_in += len(samples)
        self._pending = np.concatenate([self._pending, samples])
        collected = [[] for _ in self.channels]
        while len(self._pending) >= self.step:
            outputs = self._run_block(self._pending[:self.step])
            self._pending = self._pending[self.step:]
            for i, out in enumerate(outputs):
                collected[i].append(out)
        return [np.concatenate(parts) if parts else np.zeros(0, dtype=np.complex128) for parts in collected]

    def flush(self):
        """Zero-pad the last partial block; returns outputs up to the last real input sample."""
        if len(self._pending) == 0:
            return [np.zeros(0, dtype=np.complex128) for _ in self.channels]
        end = self._total_in
        padded = np.concatenate([self._pending, np.zeros(self.step - len(self._pending), dtype=np.complex128)])
        start = self._out_index
        outputs = self._run_block(padded)
        self._pending = np.zeros(0, dtype=np.complex128)
        trimmed = []
        for out, decimation in zip(outputs, self.decimations):
            first = -(-start // decimation) * decimation
            n_valid = len(range(first, end, decimation))
            trimmed.append(out[:n_valid])
        return trimmed


def channelize(wideband, channels, block_size=DEFAULT_BLOCK_SIZE, **kwargs):
    """
    Split one wideband stream into per-channel streams.

    Args:
        wideband (IqStream): Input stream.
        channels (list): (center_offset_hz, bandwidth_hz) tuples.
        block_size (int): FFT block size (power of two).

    Returns:
        list[IqStream]: One stream per channel at its decimated rate.
    """
    channelizer = OverlapSaveChannelizer(wideband.sample_rate, channels, block_size, **kwargs)
    heads = channelizer.process(wideband.samples)
    tails = channelizer.flush()
    return [
        IqStream(np.concatenate([h, t]), rate, wideband.start_time)
        for h, t, rate in zip(heads, tails, channelizer.output_rates)
    ]


def channelizer_crossover(allocations_per_subframe=(0.1, 0.2, 0.5, 1, 2, 4, 8), n_subframes=20,
                          sample_rate=122.88e6, fft_size=8192, cell_bandwidth_hz=10e6, seed=0):
    """
    Compare per-allocation wideband FFT extraction with channelize-then-extract.

    Returns:
        list[dict]: Per density: seconds per subframe for both strategies.
    """
    rng = np.random.default_rng(seed)
    samples_per_subframe = int(sample_rate * 1e-3)
    data = (rng.standard_normal(samples_per_subframe * n_subframes)
            + 1j * rng.standard_normal(samples_per_subframe * n_subframes))

    channelizer = OverlapSaveChannelizer(sample_rate, [(0.0, cell_bandwidth_hz)], block_size=fft_size)
    t0 = time.perf_counter()
    narrow = channelizer.process(data)[0]
    channelize_cost = (time.perf_counter() - t0) / n_subframes
    narrow_fft = max(16, 1 << int(math.ceil(math.log2(fft_size / channelizer.decimations[0]))))

    results = []
    for density in allocations_per_subframe:
        n_alloc = max(1, int(round(density * n_subframes)))
        t0 = time.perf_counter()
        for i in range(n_alloc):
            start = (i % n_subframes) * samples_per_subframe
            np.fft.fft(data[start:start + 14 * fft_size].reshape(14, fft_size), axis=1)
        wideband_cost = (time.perf_counter() - t0) / n_subframes

        t0 = time.perf_counter()
        for i in range(n_alloc):
            start = (i % n_subframes) * (len(narrow) // n_subframes)
            chunk = narrow[start:start + 14 * narrow_fft]
            if len(chunk) == 14 * narrow_fft:
                np.fft.fft(chunk.reshape(14, narrow_fft), axis=1)
        narrow_cost = (time.perf_counter() - t0) / n_subframes + channelize_cost

        results.append({
            "allocations_per_subframe": density,
            "per_allocation_fft_s": wideband_cost,
            "channelizer_s": narrow_cost,
            "channelizer_faster": narrow_cost < wideband_cost,
        })
    return results
