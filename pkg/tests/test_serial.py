import json

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from deepforget.serial import csv_text, dumps, fmt, sha256_file, write_dat


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_seventeen_digits_round_trip(x):
    assert float(fmt(x)) == x
    assert json.loads(dumps({"x": x}))["x"] == x


def test_fmt_uses_seventeen_significant_digits():
    assert fmt(0.1) == "0.10000000000000001"
    assert fmt(float("nan")) == ""


def test_dumps_handles_numpy_and_nonfinite():
    out = json.loads(dumps({"a": np.float64(1.5), "b": np.int64(3), "c": np.array([1.0, 2.0]), "d": float("nan"), "e": [], "f": True}))
    assert out == {"a": 1.5, "b": 3, "c": [1.0, 2.0], "d": None, "e": [], "f": True}


def test_csv_and_dat(tmp_path):
    assert csv_text(["a", "b"], [["x y", 0.5]]) == "a,b\nx y,0.5\n"
    p = write_dat(["a", "b"], [["x y", float("nan")]], tmp_path / "t.dat")
    assert p.read_text() == "# a b\nx_y NaN\n"
    assert len(sha256_file(p)) == 64
