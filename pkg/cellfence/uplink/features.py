"""
Signal features of one received allocation at one antenna port.

The received reference elements are multiplied by the conjugate of the
known reference, so the product H holds the channel frequency response
plus noise. Its inverse FFT, zero padded to upsample * L points, is the
interpolated circular cross-correlation with the reference. Segments that
share a frequency position (both PUSCH reference symbols, the three PUCCH
reference symbols of one slot) are averaged coherently; segments at
different positions (the two PUCCH slots after hopping) are combined on
the power profile.

Scaling is chosen so that a noise-free reference with per-element power P
gives a correlation peak of exactly P.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter1d

from cellfence.config import DETECTION_THRESHOLD_DB, UPSAMPLE_FACTOR
from cellfence.errors import InvalidParameterError
from cellfence.phy.resource_grid import (
    PRACH_SPACING_HZ,
    SUBCARRIER_SPACING_HZ,
    MsgType,
    allocated_elements,
    expected_reference_segments,
    reference_segments,
)
from cellfence.uplink.report import PortFeatures

logger = logging.getLogger("Features")

EULER_GAMMA = 0.5772156649015329
MIN_LINEAR = 1e-30
SNR_CLAMP = (1e-6, 1e6)


@dataclass(frozen=True)
class FeatureEstimate:
    """Raw estimator outputs; detected tells whether the correlation peak cleared the noise floor."""
    detected: bool
    corr_peak_power_db: float
    rms2_power_db: float
    peak_to_avg_snr_db: float
    smoothed_snr_db: float
    toa_offset_s: float
    peak_to_avg_db: float

    def to_port_features(self):
        if not self.detected:
            return PortFeatures.absent()
        return PortFeatures(True, self.corr_peak_power_db, self.rms2_power_db,
                            self.peak_to_avg_snr_db, self.smoothed_snr_db, self.toa_offset_s)


def _db(value):
    return 10.0 * math.log10(max(float(value), MIN_LINEAR))


def correlation_spacing_hz(spec):
    return PRACH_SPACING_HZ if spec.msg_type == MsgType.PRACH else SUBCARRIER_SPACING_HZ


def channel_products(grid, spec, cell):
    """
    Received reference times conj(expected reference), grouped by frequency position.

    Returns:
        tuple: (list of coherently averaged H arrays, segments averaged per group)
    """
    received = reference_segments(grid, spec)
    expected = expected_reference_segments(spec, cell)
    if len(received) != len(expected) or not received:
        raise InvalidParameterError(f"No reference elements for {spec.msg_type.name}")
    groups = {}
    for (_, lo, y), (_, _, r) in zip(received, expected):
        groups.setdefault(lo, []).append(np.asarray(y) * np.conj(r))
    n_coherent = min(len(v) for v in groups.values())
    return [np.mean(v, axis=0) for v in groups.values()], n_coherent


def upsampled_correlation(h, upsample=UPSAMPLE_FACTOR):
    """Circular correlation interpolated by zero padding in the frequency domain."""
    if upsample < 1:
        raise InvalidParameterError(f"upsample must be >= 1, got {upsample}")
    return np.fft.ifft(h, n=upsample * len(h)) * upsample


def correlation_profile(products, upsample=UPSAMPLE_FACTOR):
    """Power of the interpolated correlation, averaged over frequency groups."""
    return np.mean([np.abs(upsampled_correlation(h, upsample)) ** 2 for h in products], axis=0)


def detection_floor_db(length, threshold_db=DETECTION_THRESHOLD_DB):
    """Peak-to-average ratio below which the peak is taken for a noise maximum.

    The expected largest of `length` independent noise lags sits
    ln(length) + gamma above their mean; threshold_db is added on top.
    """
    return _db(math.log(max(length, 2)) + EULER_GAMMA) + threshold_db


def is_detected(par, length, threshold_db=DETECTION_THRESHOLD_DB):
    """True when a linear peak-to-average ratio over `length` lags clears the floor."""
    return _db(par) >= detection_floor_db(length, threshold_db)


def peak_to_average_snr(par, length, n_coherent=1):
    """Per-element SNR from the correlation peak-to-average ratio.

    With per-lag mean E = (S + N) / L and peak S + N / L, solving for S / N
    gives (par - 1) / (L - par).
    """
    lo, hi = SNR_CLAMP
    denominator = length - par
    snr = hi if denominator <= 0 else (par - 1.0) / denominator
    return float(np.clip(snr, lo, hi)) / n_coherent


def smoothed_snr(products, n_coherent=1):
    """Baseline estimator: moving average over frequency as signal, the residual as noise."""
    signal = noise = 0.0
    for h in products:
        width = max(3, len(h) // 16)
        width += 1 - width % 2
        smooth = (uniform_filter1d(h.real, width, mode="nearest")
                  + 1j * uniform_filter1d(h.imag, width, mode="nearest"))
        signal += float(np.mean(np.abs(smooth) ** 2))
        noise += float(np.mean(np.abs(h - smooth) ** 2))
    lo, hi = SNR_CLAMP
    if noise <= 0:
        return hi
    return float(np.clip(signal / noise / n_coherent, lo, hi))


def estimate_features(grid, spec, cell, upsample=UPSAMPLE_FACTOR, threshold_db=DETECTION_THRESHOLD_DB):
    """
    Compute every feature of one port, detected or not.

    Args:
        grid (SubframeGrid | PrachGrid): Received allocation.
        spec (UplinkMessageSpec): Layout of the allocation.
        cell (CellConfig): Cell, for the reference sequences.
        upsample (int): Correlation interpolation factor.
        threshold_db (float): Margin over the expected noise-only peak.

    Returns:
        FeatureEstimate
    """
    products, n_coherent = channel_products(grid, spec, cell)
    length = len(products[0])
    profile = correlation_profile(products, upsample)
    peak_index = int(np.argmax(profile))
    peak = float(profile[peak_index])
    mean = float(np.mean(profile))
    par = peak / mean if mean > 0 else 1.0

    n_lags = len(profile)
    lag = peak_index - n_lags if peak_index > n_lags // 2 else peak_index
    toa = lag / n_lags / correlation_spacing_hz(spec)

    rms2 = float(np.mean(np.abs(allocated_elements(grid, spec)) ** 2))
    return FeatureEstimate(
        detected=is_detected(par, length, threshold_db),
        corr_peak_power_db=_db(peak),
        rms2_power_db=_db(rms2),
        peak_to_avg_snr_db=_db(peak_to_average_snr(par, length, n_coherent)),
        smoothed_snr_db=_db(smoothed_snr(products, n_coherent)),
        toa_offset_s=float(toa),
        peak_to_avg_db=_db(par),
    )


def measure_features(grid, spec, cell, upsample=UPSAMPLE_FACTOR, threshold_db=DETECTION_THRESHOLD_DB):
    """Features of one port; absent when the reference was not detected."""
    return estimate_features(grid, spec, cell, upsample, threshold_db).to_port_features()


def measure_ports(grids, spec, cell, upsample=UPSAMPLE_FACTOR, threshold_db=DETECTION_THRESHOLD_DB):
    """Features of both ports of a receiver."""
    if len(grids) != 2:
        raise InvalidParameterError(f"Expected 2 port grids, got {len(grids)}")
    return tuple(measure_features(g, spec, cell, upsample, threshold_db) for g in grids)
