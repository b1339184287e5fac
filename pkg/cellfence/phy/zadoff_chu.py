import math
from dataclasses import dataclass

import numpy as np

from cellfence.errors import InvalidParameterError


@dataclass(frozen=True)
class ZadoffChuSeq:
    length: int
    root: int
    cyclic_shift: int
    samples: np.ndarray


def gen_zadoff_chu(length, root, cyclic_shift=0):
    """
    Generate a cyclically shifted Zadoff-Chu sequence.

    x[n] = exp(-i*pi*root*n*(n+1)/length), then rotated left by cyclic_shift.

    Args:
        length (int): Odd positive sequence length (usually prime).
        root (int): Root index, coprime with length.
        cyclic_shift (int): Shift in [0, length).

    Returns:
        ZadoffChuSeq: Sequence with unit-magnitude samples.
    """
    if length <= 0 or length % 2 == 0:
        raise InvalidParameterError(f"Zadoff-Chu length must be odd and positive, got {length}")
    if math.gcd(root, length) != 1:
        raise InvalidParameterError(f"Root {root} is not coprime with length {length}")
    if not 0 <= cyclic_shift < length:
        raise InvalidParameterError(f"Cyclic shift {cyclic_shift} outside [0, {length})")

    # n*(n+1) is always even, keep it integer before the modulo to stay exact for long sequences
    n = np.arange(length, dtype=np.int64)
    phase_index = (root * n * (n + 1) // 2) % length
    samples = np.exp(-2j * np.pi * phase_index / length)
    return ZadoffChuSeq(length, root, cyclic_shift, np.roll(samples, -cyclic_shift))


def largest_prime_not_above(n):
    for candidate in range(n, 1, -1):
        if candidate in (2, 3):
            return candidate
        if candidate % 2 and all(candidate % d for d in range(3, math.isqrt(candidate) + 1, 2)):
            return candidate
    raise InvalidParameterError(f"No prime at or below {n}")


def rs_root_for(pci, length):
    """Cell-seeded root: (pci mod (length-1)) + 1, bumped to the next coprime value."""
    root = (pci % (length - 1)) + 1
    while math.gcd(root, length) != 1:
        root = root % (length - 1) + 1
    return root


def reference_sequence(n_subcarriers, pci, cyclic_shift=0):
    """Reference signal for an allocation of n_subcarriers: the longest prime-length
    ZC sequence that fits, cyclically extended to the allocation width."""
    n_zc = largest_prime_not_above(n_subcarriers)
    zc = gen_zadoff_chu(n_zc, rs_root_for(pci, n_zc), cyclic_shift % n_zc)
    return zc.samples[np.arange(n_subcarriers) % n_zc]


def circular_correlation(x, y):
    """Circular cross-correlation r[k] = sum_n x[n] * conj(y[n-k]) via FFT."""
    return np.fft.ifft(np.fft.fft(x) * np.conj(np.fft.fft(y)))
