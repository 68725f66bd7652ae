import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from biphoton_lab.errors import ConfigError, FormatError, OrderingError
from biphoton_lab.tags import (TagStream, check_stream, delay_stream, merge_streams, read_ttag,
                               write_ttag)


def S(ticks, ch=0, duration=1e-6, res=1e-12):
    return TagStream(np.asarray(ticks, np.int64), duration, ch, res)


def test_stream_validation():
    with pytest.raises(OrderingError):
        S([3, 1])
    with pytest.raises(ConfigError):
        S([-1, 2])
    with pytest.raises(ConfigError):
        S([10**7], duration=1e-6)
    s = S([1, 1, 2])
    with pytest.raises(ValueError):
        s.ticks[0] = 5
    assert s.times.tolist() == pytest.approx([1e-12, 1e-12, 2e-12])


def test_check_stream():
    s = check_stream([0, 4, 9])
    assert s.duration == pytest.approx(9e-12)
    with pytest.raises(ConfigError):
        check_stream([0.5, 1.0])
    with pytest.raises(OrderingError):
        check_stream([5, 2])


def test_merge_examples():
    assert merge_streams([S([1, 3]), S([2, 4])]).ticks.tolist() == [1, 2, 3, 4]
    x = S([5, 6, 9])
    assert merge_streams([x, S([])]).ticks.tolist() == [5, 6, 9]
    with pytest.raises(ConfigError):
        merge_streams([S([1]), S([2], res=1e-9, duration=1e-3)])
    with pytest.raises(ConfigError):
        merge_streams([])


def test_merge_tie_order():
    m = merge_streams([S([7], ch=3), S([7], ch=1), S([2, 7], ch=1)])
    assert m.ticks.tolist() == [2, 7, 7, 7]
    assert m.channels.tolist() == [1, 1, 1, 3]
    assert m.select(3).ticks.tolist() == [7]


def test_merge_million_sort_oracle():
    rng = np.random.default_rng(11)
    parts = [np.sort(rng.integers(0, 10**9, size=n)) for n in (400_000, 350_000, 250_000)]
    m = merge_streams([S(p, ch=i, duration=1e-3) for i, p in enumerate(parts)])
    assert np.array_equal(m.ticks, np.sort(np.concatenate(parts)))


@given(st.lists(st.lists(st.integers(0, 50), max_size=20), min_size=1, max_size=5))
def test_merge_is_sort(lists):
    streams = [S(sorted(x), ch=i, duration=1e-9) for i, x in enumerate(lists)]
    m = merge_streams(streams)
    assert m.ticks.tolist() == sorted(sum(lists, []))


def test_delay_examples():
    s = S([0, 5, 100], duration=1e-6)
    assert delay_stream(s, 100e-9).ticks.tolist() == [100_000, 100_005, 100_100]
    assert delay_stream(s, 0.0).ticks.tolist() == [0, 5, 100]
    out, dropped = delay_stream(s, -6e-12, return_dropped=True)
    assert out.ticks.tolist() == [94]
    assert dropped == 2
    out, dropped = delay_stream(S([1, 999_990]), 20e-12, return_dropped=True)
    assert out.ticks.tolist() == [21]
    assert dropped == 1


def test_ttag_round_trip(tmp_path):
    a = S([0, 5, 5, 1000], ch=0)
    b = S([5, 7], ch=2)
    p = tmp_path / "x.ttag"
    n = write_ttag(p, [a, b])
    raw = p.read_bytes()
    assert n == len(raw) == 15 + 6 * 9
    magic, ver, res_fs, nch = struct.unpack_from("<4sHQB", raw)
    assert (magic, ver, res_fs, nch) == (b"TTAG", 1, 1000, 2)
    # first record: channel 0 at tick 0
    assert raw[15:24] == bytes([0]) + (0).to_bytes(8, "little")
    back = read_ttag(p, duration=1e-6)
    assert back[0].ticks.tolist() == [0, 5, 5, 1000]
    assert back[2].ticks.tolist() == [5, 7]
    assert back[0].resolution == 1e-12


def test_ttag_errors(tmp_path):
    p = tmp_path / "x.ttag"
    write_ttag(p, S([1, 2]))
    raw = p.read_bytes()
    cases = {
        "magic": b"TTAX" + raw[4:],
        "version": raw[:4] + (2).to_bytes(2, "little") + raw[6:],
        "short": raw[:10],
        "record": raw[:-3],
        "channels": raw[:14] + bytes([0]) + raw[15:],
    }
    for name, data in cases.items():
        q = tmp_path / f"{name}.ttag"
        q.write_bytes(data)
        with pytest.raises(FormatError):
            read_ttag(q)
    unsorted = tmp_path / "unsorted.ttag"
    rec = np.array([(0, 9), (0, 3)], dtype=[("channel", "u1"), ("ticks", "<u8")])
    unsorted.write_bytes(struct.pack("<4sHQB", b"TTAG", 1, 1000, 1) + rec.tobytes())
    with pytest.raises(FormatError):
        read_ttag(unsorted)
    with pytest.raises(ConfigError):
        write_ttag(tmp_path / "big.ttag", S([1], ch=300))


def test_ttag_empty(tmp_path):
    p = tmp_path / "e.ttag"
    write_ttag(p, S([], ch=1))
    assert read_ttag(p) == {}
