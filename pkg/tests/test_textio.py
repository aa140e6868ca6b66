import numpy as np
import pytest

from sevot import textio


def test_jsonl_round_trip(tmp_path):
    rows = [{"step": 0, "loss": 1.25}, {"step": 1, "loss": 0.5, "note": "x"}]
    path = tmp_path / "log.jsonl"
    textio.write_jsonl(path, rows)
    assert textio.read_jsonl(path) == rows
    # deterministic bytes: keys are sorted
    textio.write_jsonl(tmp_path / "b.jsonl", rows)
    assert (tmp_path / "log.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_kv_round_trip_and_errors(tmp_path):
    path = tmp_path / "config.txt"
    textio.write_kv(path, {"b": 2, "a": "hello"})
    assert textio.read_kv(path) == {"a": "hello", "b": "2"}
    bad = tmp_path / "bad.txt"
    bad.write_text("# comment\nok=1\nbroken-line\n")
    with pytest.raises(ValueError, match="bad.txt:3"):
        textio.read_kv(bad)


def test_pgm_round_trip(tmp_path):
    grid = np.array([[0, 1, 7], [3, 2, 0]])
    path = tmp_path / "labels.pgm"
    textio.write_pgm(path, grid, maxval=7)
    np.testing.assert_array_equal(textio.read_pgm(path), grid)
    assert path.read_text().startswith("P2\n3 2\n7\n")
    with pytest.raises(ValueError):
        textio.write_pgm(tmp_path / "x.pgm", np.zeros(3))
    bad = tmp_path / "bad.pgm"
    bad.write_text("P5\n1 1\n255\n0\n")
    with pytest.raises(ValueError):
        textio.read_pgm(bad)


def test_param_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {
        "w1": rng.standard_normal((3, 4)),
        "b1": rng.standard_normal(4),
        "scalarish": rng.standard_normal((1,)),
        "absent": None,
    }
    path = tmp_path / "params.csv"
    textio.write_param_csv(path, arrays)
    loaded = textio.read_param_csv(path)
    assert set(loaded) == {"w1", "b1", "scalarish"}
    for name in loaded:
        np.testing.assert_array_equal(loaded[name], arrays[name])
