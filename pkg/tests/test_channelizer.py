import numpy as np
import pytest
from numpy.testing import assert_allclose

from cellfence.dsp.channelizer import OverlapSaveChannelizer, channelize, channelizer_crossover, design_prototype
from cellfence.errors import InvalidParameterError
from cellfence.phy.ofdm import IqStream

FS = 30.72e6
CHANNELS = [(5e6, 2e6), (-8e6, 4e6)]


def _tone(freq, n, fs=FS):
    return np.exp(2j * np.pi * freq * np.arange(n) / fs)


def _steady_level_db(channelizer, output):
    skip = len(channelizer.prototypes[0]) // channelizer.decimations[0] + 8
    return 10 * np.log10(np.mean(np.abs(output[skip:-skip]) ** 2))


def test_streaming_matches_one_shot():
    rng = np.random.default_rng(5)
    x = rng.standard_normal(50000) + 1j * rng.standard_normal(50000)

    one_shot = OverlapSaveChannelizer(FS, CHANNELS, block_size=1024)
    expected = [np.concatenate([h, t]) for h, t in zip(one_shot.process(x), one_shot.flush())]

    streaming = OverlapSaveChannelizer(FS, CHANNELS, block_size=1024)
    parts = [[] for _ in CHANNELS]
    for chunk in np.array_split(x, [1, 700, 701, 9000, 23456, 40000]):
        for i, out in enumerate(streaming.process(chunk)):
            parts[i].append(out)
    for i, out in enumerate(streaming.flush()):
        parts[i].append(out)

    for got, want in zip(parts, expected):
        got = np.concatenate(got)
        assert got.shape == want.shape
        assert np.max(np.abs(got - want)) < 1e-9


def test_output_length_follows_decimation():
    x = np.zeros(10000, dtype=complex)
    streams = channelize(IqStream(x, FS), CHANNELS, block_size=1024)
    for stream, (center, bw) in zip(streams, CHANNELS):
        decimation = int(FS // (bw * 1.2))
        assert len(stream) == len(range(0, 10000, decimation))
        assert stream.sample_rate == pytest.approx(FS / decimation)


def test_tone_at_channel_center_passes():
    channelizer = OverlapSaveChannelizer(FS, [CHANNELS[0]], block_size=2048)
    out = channelizer.process(_tone(5e6, 60000))[0]
    assert _steady_level_db(channelizer, out) == pytest.approx(0.0, abs=0.1)


@pytest.mark.parametrize("offset_hz", [1.3e6, 2.5e6, 6e6, -1.3e6, -4e6])
def test_tones_in_the_stopband_are_rejected(offset_hz):
    channelizer = OverlapSaveChannelizer(FS, [CHANNELS[0]], block_size=2048)
    out = channelizer.process(_tone(5e6 + offset_hz, 60000))[0]
    assert _steady_level_db(channelizer, out) < -58.0


def test_block_size_grows_to_fit_the_prototype():
    channelizer = OverlapSaveChannelizer(FS, [(0.0, 0.2e6)], block_size=256)
    assert channelizer.overlap >= len(channelizer.prototypes[0]) - 1


def test_invalid_channels_are_rejected():
    with pytest.raises(InvalidParameterError):
        OverlapSaveChannelizer(FS, [(15e6, 4e6)])
    with pytest.raises(InvalidParameterError):
        OverlapSaveChannelizer(FS, [(0.0, 1e6)], block_size=1000)
    with pytest.raises(InvalidParameterError):
        OverlapSaveChannelizer(FS, [])


def test_full_band_channel_needs_no_filter():
    assert_allclose(design_prototype(FS, FS), [1.0])


def test_crossover_reports_every_density():
    rows = channelizer_crossover(allocations_per_subframe=(0.5, 4), n_subframes=2, sample_rate=30.72e6,
                                 fft_size=2048, cell_bandwidth_hz=5e6)
    assert [r["allocations_per_subframe"] for r in rows] == [0.5, 4]
    assert all(r["per_allocation_fft_s"] >= 0 and r["channelizer_s"] >= 0 for r in rows)
