import struct

import numpy as np
import pytest

from conftest import bm_path
from roughgibbs.io import fmt, read_block, read_path_csv, write_block, write_path_csv


def test_path_csv_roundtrip(tmp_path):
    p = bm_path(1, level=5, dim=3)
    write_path_csv(p, tmp_path / "p.csv")
    q = read_path_csv(tmp_path / "p.csv")
    np.testing.assert_array_equal(p.values, q.values)
    assert q.interval == p.interval and q.level == p.level
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == "t,x1,x2,x3"


def test_path_csv_is_byte_stable(tmp_path):
    p = bm_path(2, level=4, dim=1)
    write_path_csv(p, tmp_path / "a.csv")
    write_path_csv(p, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_csv_rejects_non_dyadic_grid(tmp_path):
    (tmp_path / "bad.csv").write_text("t,x1\n0,0\n0.5,1\n0.75,2\n1,3\n")
    with pytest.raises(ValueError):
        read_path_csv(tmp_path / "bad.csv")


def test_block_roundtrip(tmp_path):
    vals = np.random.default_rng(0).normal(size=(4, 9, 2))
    write_block(vals, (0.0, 2.0), 3, tmp_path / "b.bin")
    back, header = read_block(tmp_path / "b.bin")
    np.testing.assert_array_equal(back, vals)
    assert header == {"count": 4, "dim": 2, "interval": [0.0, 2.0], "level": 3}


def test_block_layout(tmp_path):
    vals = np.arange(6.0).reshape(1, 3, 2)
    with pytest.raises(ValueError):
        write_block(vals, (0.0, 1.0), 2, tmp_path / "x.bin")
    write_block(vals, (0.0, 1.0), 1, tmp_path / "x.bin")
    raw = (tmp_path / "x.bin").read_bytes()
    (h,) = struct.unpack("<Q", raw[:8])
    data = np.frombuffer(raw[8 + h:], dtype="<f8")
    np.testing.assert_array_equal(data, np.arange(6.0))
    (tmp_path / "t.bin").write_bytes(raw[:-8])
    with pytest.raises(ValueError):
        read_block(tmp_path / "t.bin")


def test_fmt_roundtrips_floats():
    for x in (0.1, 1 / 3, -2.5e-300, 1e300):
        assert float(fmt(x)) == x
