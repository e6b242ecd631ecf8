import json
import math

import numpy as np
import pytest

from gpt_tomo import io
from gpt_tomo.core import ValidationError


def test_counts_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    n0 = rng.integers(1, 50, (4, 5))
    n1 = rng.integers(1, 50, (4, 5))
    mask = np.ones((4, 5), bool)
    mask[1, 3] = False
    p = tmp_path / "c.csv"
    io.write_counts(p, n0, n1, mask)
    text = p.read_text()
    assert text.splitlines()[0] == "4,5"
    assert all(ln.split(",")[1] != "0" for ln in text.splitlines()[1:])
    r0, r1, rm = io.read_counts(p)
    np.testing.assert_array_equal(rm, mask)
    np.testing.assert_array_equal(r0[mask & (np.arange(5) > 0)], n0[mask & (np.arange(5) > 0)])
    np.testing.assert_array_equal(r1[:, 1:][mask[:, 1:]], n1[:, 1:][mask[:, 1:]])
    assert rm[:, 0].all()


@pytest.mark.parametrize("text, msg", [
    ("", "empty"),
    ("3\n", "m,n"),
    ("2,3\n0,0,5,5\n", "unit column"),
    ("2,3\n0,3,5,5\n", "outside"),
    ("2,3\n0,1,5\n", "expected"),
    ("2,3\n0,1,-1,5\n", "non-negative"),
    ("2,3\n0,1,0,0\n", "positive total"),
    ("2,3\n0,1,1,1\n0,1,2,2\n", "duplicate"),
    ("2,1\n", "dimensions"),
])
def test_counts_errors(text, msg):
    with pytest.raises(ValidationError, match=msg):
        io.parse_counts(text)


def test_dumps_17_significant_digits():
    x = 0.1 + 0.2
    s = io.dumps({"x": x, "v": np.array([1 / 3]), "k": np.int64(4), "ok": True,
                  "bad": math.nan, "none": None})
    assert '"x": 0.30000000000000004' in s
    assert "0.33333333333333331" in s
    d = json.loads(s)
    assert d["x"] == x and d["k"] == 4 and d["ok"] is True
    assert d["bad"] is None and d["none"] is None
    with pytest.raises(TypeError):
        io.dumps({"f": object()})


def test_write_atomic_leaves_no_temp(tmp_path):
    p = tmp_path / "sub" / "a.json"
    io.write_json(p, {"a": 1.5})
    io.write_json(p, {"a": 2.5})
    assert io.read_json(p) == {"a": 2.5}
    assert sorted(x.name for x in p.parent.iterdir()) == ["a.json"]


def test_table_format():
    t = io.format_table(["a", "b"], [[1, 0.1], [2, math.nan]])
    assert t == "a,b\n1,0.10000000000000001\n2,\n"
