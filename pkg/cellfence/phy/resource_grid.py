"""
Uplink resource grid types and message construction.

A subframe is 14 OFDM symbols (two slots of 7, normal cyclic prefix) over
12 * n_prb_ul subcarriers at 15 kHz. PRACH uses its own 1.25 kHz grid of
839 bins inside 6 PRBs and is represented by PrachGrid.
"""

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional, Tuple, Union

import numpy as np

from cellfence.errors import InvalidAllocationError, InvalidParameterError
from cellfence.phy.zadoff_chu import gen_zadoff_chu, reference_sequence

N_SYMBOLS = 14
SYMBOLS_PER_SLOT = 7
N_SC_PER_PRB = 12
SUBCARRIER_SPACING_HZ = 15e3
SUBFRAME_S = 1e-3

PRACH_ZC_LENGTH = 839
PRACH_N_PRB = 6
PRACH_SPACING_HZ = 1250.0
PRACH_BIN_OFFSET = 7  # unused guard bins below the sequence, out of 864
N_PREAMBLES = 64
PRACH_SHIFT_SPACING = PRACH_ZC_LENGTH // N_PREAMBLES

PUSCH_RS_SYMBOLS = frozenset({4, 11})
PUCCH_RS_SYMBOLS = frozenset({3, 4, 5, 10, 11, 12})

STANDARD_SAMPLE_RATE = 30.72e6
WIDEBAND_SAMPLE_RATE = 122.88e6


class MsgType(IntEnum):
    PRACH = 0
    PUSCH = 1
    PUCCH = 2


class BandId(IntEnum):
    """FDD bands with their nominal uplink center frequency in MHz as value."""
    B1 = 1
    B3 = 3
    B7 = 7
    B8 = 8
    B20 = 20

    @property
    def uplink_hz(self):
        return {
            BandId.B1: 1950.0e6,
            BandId.B3: 1747.5e6,
            BandId.B7: 2535.0e6,
            BandId.B8: 897.5e6,
            BandId.B20: 847.0e6,
        }[self]


@dataclass(frozen=True)
class CellConfig:
    earfcn: int
    pci: int
    n_prb_ul: int
    prach_subframes: Tuple[int, ...] = (1, 6)
    prach_root: int = 129
    band_id: BandId = BandId.B3
    prach_prb_offset: int = 4
    pucch_hopping: bool = True
    center_offset_hz: float = 0.0
    enb_position: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not 6 <= self.n_prb_ul <= 110:
            raise InvalidParameterError(f"n_prb_ul must be in [6, 110], got {self.n_prb_ul}")
        if not 0 <= self.pci < 504:
            raise InvalidParameterError(f"pci must be in [0, 504), got {self.pci}")
        if self.prach_prb_offset + PRACH_N_PRB > self.n_prb_ul:
            raise InvalidParameterError("PRACH region exceeds the uplink bandwidth")

    @property
    def cell_id(self):
        return (self.earfcn, self.pci)

    @property
    def n_subcarriers(self):
        return self.n_prb_ul * N_SC_PER_PRB


@dataclass
class SubframeGrid:
    cells: np.ndarray
    subframe_index: int = 0
    sample_rate: float = STANDARD_SAMPLE_RATE

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=np.complex128)
        if self.cells.ndim != 2 or self.cells.shape[0] != N_SYMBOLS:
            raise InvalidParameterError(f"Subframe grid needs {N_SYMBOLS} symbols, got shape {self.cells.shape}")
        if self.cells.shape[1] % N_SC_PER_PRB:
            raise InvalidParameterError("Subcarrier count must be a multiple of 12")
        if self.subframe_index < 0:
            raise InvalidParameterError("subframe_index must be >= 0")
        if not np.all(np.isfinite(self.cells)):
            raise InvalidParameterError("Grid contains non-finite amplitudes")

    @property
    def n_symbols(self):
        return self.cells.shape[0]

    @property
    def n_subcarriers(self):
        return self.cells.shape[1]

    @property
    def n_prb(self):
        return self.n_subcarriers // N_SC_PER_PRB

    @property
    def render_length(self):
        return int(round(self.sample_rate * SUBFRAME_S))

    @classmethod
    def empty(cls, n_prb, subframe_index=0, sample_rate=STANDARD_SAMPLE_RATE):
        return cls(np.zeros((N_SYMBOLS, n_prb * N_SC_PER_PRB), dtype=np.complex128), subframe_index, sample_rate)


@dataclass
class PrachGrid:
    """839 preamble bins at 1.25 kHz spacing, positioned at prb_offset of an n_prb_ul cell."""
    bins: np.ndarray
    prb_offset: int
    n_prb_ul: int
    subframe_index: int = 0
    sample_rate: float = STANDARD_SAMPLE_RATE

    def __post_init__(self):
        self.bins = np.asarray(self.bins, dtype=np.complex128)
        if self.bins.shape != (PRACH_ZC_LENGTH,):
            raise InvalidParameterError(f"PRACH grid needs {PRACH_ZC_LENGTH} bins")
        if not np.all(np.isfinite(self.bins)):
            raise InvalidParameterError("Grid contains non-finite amplitudes")

    @property
    def n_symbols(self):
        return 1

    @property
    def render_length(self):
        return int(round(self.sample_rate * SUBFRAME_S))

    def bin_frequencies(self):
        """Baseband frequency of every preamble bin relative to the cell center."""
        start = (self.prb_offset * N_SC_PER_PRB - self.n_prb_ul * N_SC_PER_PRB // 2) * SUBCARRIER_SPACING_HZ
        return start + (PRACH_BIN_OFFSET + np.arange(PRACH_ZC_LENGTH)) * PRACH_SPACING_HZ


ResourceGrid = Union[SubframeGrid, PrachGrid]


@dataclass(frozen=True)
class UplinkMessageSpec:
    msg_type: MsgType
    n_prb: int
    prb_offset: int
    rs_symbol_indices: frozenset = field(default_factory=frozenset)
    preamble_index: Optional[int] = None
    hopping: bool = False
    rnti: int = 0
    duration_subframes: int = 1

    def __post_init__(self):
        if self.duration_subframes not in (1, 2, 3):
            raise InvalidParameterError(f"duration_subframes must be 1, 2 or 3, got {self.duration_subframes}")
        if not 0 <= self.rnti <= 0xFFFF:
            raise InvalidParameterError(f"rnti must fit 16 bits, got {self.rnti}")
        if self.msg_type == MsgType.PRACH:
            if self.n_prb != PRACH_N_PRB:
                raise InvalidParameterError("PRACH occupies exactly 6 PRBs")
            if self.preamble_index is None or not 0 <= self.preamble_index < N_PREAMBLES:
                raise InvalidParameterError(f"PRACH preamble index must be in [0, {N_PREAMBLES})")
        elif self.msg_type == MsgType.PUSCH:
            if self.rs_symbol_indices != PUSCH_RS_SYMBOLS:
                raise InvalidParameterError("PUSCH reference symbols are 4 and 11")
            if self.n_prb < 1:
                raise InvalidParameterError("PUSCH needs at least one PRB")
        elif self.msg_type == MsgType.PUCCH:
            if self.n_prb != 1:
                raise InvalidParameterError("PUCCH occupies exactly 1 PRB")
            if self.rs_symbol_indices != PUCCH_RS_SYMBOLS:
                raise InvalidParameterError("PUCCH reference symbols are 3, 4, 5, 10, 11 and 12")

    @classmethod
    def prach(cls, preamble_index, prb_offset, rnti=0):
        return cls(MsgType.PRACH, PRACH_N_PRB, prb_offset, frozenset(), preamble_index, False, rnti)

    @classmethod
    def pusch(cls, n_prb, prb_offset, rnti):
        return cls(MsgType.PUSCH, n_prb, prb_offset, PUSCH_RS_SYMBOLS, None, False, rnti)

    @classmethod
    def pucch(cls, rnti, hopping=True, prb_offset=0):
        return cls(MsgType.PUCCH, 1, prb_offset, PUCCH_RS_SYMBOLS, None, hopping, rnti)

    def prb_for_symbol(self, symbol, n_prb_ul):
        """First PRB of the allocation in a given symbol; PUCCH hops to the mirrored edge in slot 1."""
        if self.msg_type == MsgType.PUCCH and self.hopping and symbol >= SYMBOLS_PER_SLOT:
            return n_prb_ul - 1 - self.prb_offset
        return self.prb_offset

    def subcarrier_span(self, symbol, n_prb_ul):
        start = self.prb_for_symbol(symbol, n_prb_ul) * N_SC_PER_PRB
        return start, start + self.n_prb * N_SC_PER_PRB


def _check_fits(spec, cell):
    if spec.duration_subframes != 1:
        raise InvalidParameterError("Only single-subframe messages are supported")
    if spec.prb_offset < 0 or spec.prb_offset + spec.n_prb > cell.n_prb_ul:
        raise InvalidAllocationError(
            f"{spec.msg_type.name} PRBs [{spec.prb_offset}, {spec.prb_offset + spec.n_prb}) exceed {cell.n_prb_ul} PRBs"
        )
    if spec.msg_type == MsgType.PUCCH and spec.prb_offset not in (0, cell.n_prb_ul - 1):
        raise InvalidAllocationError("PUCCH must sit on a band edge PRB")


def prach_reference(spec, cell):
    shift = spec.preamble_index * PRACH_SHIFT_SPACING
    return gen_zadoff_chu(PRACH_ZC_LENGTH, cell.prach_root, shift).samples


def rs_for_symbol(spec, cell, symbol):
    # Symbol-dependent cyclic shift keeps the two slots distinguishable
    return reference_sequence(spec.n_prb * N_SC_PER_PRB, cell.pci, cyclic_shift=symbol // SYMBOLS_PER_SLOT)


def build_uplink_message(spec, payload_seed, cell, subframe_index=0, sample_rate=STANDARD_SAMPLE_RATE):
    """
    Build the resource grid of one uplink message.

    Args:
        spec (UplinkMessageSpec): Message layout.
        payload_seed (int): Seed for the QPSK filler on data symbols.
        cell (CellConfig): Cell the message is sent on.

    Returns:
        SubframeGrid for PUSCH/PUCCH, PrachGrid for PRACH.
    """
    _check_fits(spec, cell)

    if spec.msg_type == MsgType.PRACH:
        return PrachGrid(prach_reference(spec, cell), spec.prb_offset, cell.n_prb_ul, subframe_index, sample_rate)

    grid = SubframeGrid.empty(cell.n_prb_ul, subframe_index, sample_rate)
    rng = np.random.default_rng(payload_seed)
    width = spec.n_prb * N_SC_PER_PRB
    for symbol in range(N_SYMBOLS):
        lo, hi = spec.subcarrier_span(symbol, cell.n_prb_ul)
        if symbol in spec.rs_symbol_indices:
            grid.cells[symbol, lo:hi] = rs_for_symbol(spec, cell, symbol)
        else:
            bits = rng.integers(0, 2, size=(2, width))
            grid.cells[symbol, lo:hi] = ((1 - 2 * bits[0]) + 1j * (1 - 2 * bits[1])) / np.sqrt(2)
    return grid


def reference_segments(grid, spec):
    """Received RS resource elements as a list of (symbol, first_subcarrier, values)."""
    if spec.msg_type == MsgType.PRACH:
        return [(0, spec.prb_offset * N_SC_PER_PRB, np.asarray(grid.bins))]
    segments = []
    for symbol in sorted(spec.rs_symbol_indices):
        lo, hi = spec.subcarrier_span(symbol, grid.n_prb)
        segments.append((symbol, lo, grid.cells[symbol, lo:hi]))
    return segments


def expected_reference_segments(spec, cell):
    if spec.msg_type == MsgType.PRACH:
        return [(0, spec.prb_offset * N_SC_PER_PRB, prach_reference(spec, cell))]
    segments = []
    for symbol in sorted(spec.rs_symbol_indices):
        lo, _ = spec.subcarrier_span(symbol, cell.n_prb_ul)
        segments.append((symbol, lo, rs_for_symbol(spec, cell, symbol)))
    return segments


def extract_reference(received, spec):
    """Concatenated RS resource elements in symbol order; data symbols are ignored."""
    return np.concatenate([values for _, _, values in reference_segments(received, spec)])


def allocated_elements(grid, spec):
    """Every allocated resource element (RS and data) of a message."""
    if spec.msg_type == MsgType.PRACH:
        return np.asarray(grid.bins)
    rows = []
    for symbol in range(N_SYMBOLS):
        lo, hi = spec.subcarrier_span(symbol, grid.n_prb)
        rows.append(grid.cells[symbol, lo:hi])
    return np.concatenate(rows)
