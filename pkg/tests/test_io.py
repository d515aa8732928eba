import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hypoflow import io


@given(x=st.floats(allow_nan=False, allow_infinity=False))
def test_float_roundtrip(x):
    assert float(io.fmt(x)) == x


def test_special_values():
    assert io.fmt(math.nan) == "NaN"
    assert io.fmt(-math.inf) == "-Infinity"
    assert io.fmt(True) == "true" and io.fmt(np.int64(3)) == "3"


def test_json_is_parseable_and_ordered():
    doc = {"b": 1, "a": [0.1, {"c": np.float64(2.5)}], "d": np.arange(3), "e": None, "f": []}
    text = io.to_json(doc)
    back = json.loads(text)
    assert list(back) == ["b", "a", "d", "e", "f"]
    assert back["a"][0] == 0.1 and back["a"][1]["c"] == 2.5 and back["d"] == [0, 1, 2]


def test_json_rejects_unknown_types():
    with pytest.raises(TypeError):
        io.to_json({"x": object()})


def test_csv_roundtrip(tmp_path):
    rows = [[0.1, 2, 1 / 3], [1e-300, -4, math.pi]]
    p = io.write_csv(tmp_path / "sub" / "a.csv", ["x", "y", "z"], rows)
    header, data = io.read_csv(p)
    assert header == ["x", "y", "z"]
    assert np.array_equal(data, np.array(rows, dtype=float))


def test_csv_row_length_checked(tmp_path):
    with pytest.raises(ValueError):
        io.write_csv(tmp_path / "a.csv", ["x"], [[1, 2]])


def test_summary_header(tmp_path):
    p = io.write_summary(tmp_path / "summary.json", "flow", {"k": 1}, {"value": 2.0})
    doc = json.loads(p.read_text())
    assert doc["schema_version"] == io.SCHEMA_VERSION and doc["tool"] == "hypoflow"
    assert doc["experiment"] == "flow" and doc["value"] == 2.0
    assert "wall_time_s" not in doc
