import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hoi_pretrain.plotting import (
    LogFormatError,
    overlay_tables,
    plot_convergence,
    read_loss_log,
    smooth,
    smoothed_table,
    table_to_csv,
)


def write_log(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return str(path)


def test_constant_log_gives_flat_curves(tmp_path):
    path = write_log(tmp_path / "log.jsonl", [{"step": s, "total": 2.5, "L_b": 1.0} for s in range(10)])
    table = smoothed_table(read_loss_log(path), 4)
    np.testing.assert_array_equal(table["total"], np.full(10, 2.5))
    np.testing.assert_array_equal(table["step"], np.arange(10))
    assert set(table) == {"step", "total", "L_b"}


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), max_size=40))
def test_window_one_is_the_identity(values):
    np.testing.assert_array_equal(smooth(np.asarray(values), 1), np.asarray(values, dtype=float))


def test_trailing_average_example():
    np.testing.assert_allclose(smooth(np.array([1.0, 3.0, 5.0, 7.0]), 2), [1.0, 2.0, 4.0, 6.0])
    with pytest.raises(ValueError):
        smooth(np.ones(3), 0)


def test_two_run_overlay_aligns_steps(tmp_path):
    a = read_loss_log(write_log(tmp_path / "a.jsonl", [{"step": s, "total": float(s)} for s in (0, 1, 2)]))
    b = read_loss_log(write_log(tmp_path / "b.jsonl", [{"step": s, "total": 10.0 + s} for s in (1, 3)]))
    table = overlay_tables({"a": a, "b": b})
    np.testing.assert_array_equal(table["step"], [0, 1, 2, 3])
    np.testing.assert_array_equal(table["a"], [0.0, 1.0, 2.0, np.nan])
    np.testing.assert_array_equal(table["b"], [np.nan, 11.0, np.nan, 13.0])
    png = tmp_path / "c.png"
    plot_convergence({"a": a, "b": b}, str(png), ["total"])
    assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_malformed_lines_are_reported_with_numbers(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"step": 0, "total": 1}\nnot json\n{"total": 2}\n{"step": 3, "error": "nan"}\n')
    with pytest.raises(LogFormatError) as err:
        read_loss_log(str(path))
    assert [ln for ln, _ in err.value.problems] == [2, 3]
    path.write_text('{"step": 0, "error": "nan"}\n')
    with pytest.raises(LogFormatError, match="no step records"):
        read_loss_log(str(path))


def test_csv_has_header_and_one_row_per_step(tmp_path):
    table = read_loss_log(write_log(tmp_path / "l.jsonl", [{"step": s, "total": 0.5 * s} for s in range(3)]))
    assert table_to_csv(table) == "step,total\n0,0.0\n1,0.5\n2,1.0\n"
