import io
import json

import pandas as pd
import pytest

from run import main, parse_p_grid
from extrema import variance_argmax


def run_csv(capsys, *args):
    code = main(list(args))
    out = capsys.readouterr().out
    return code, (pd.read_csv(io.StringIO(out)) if code == 0 else None)


def test_dist_first_iteration(capsys):
    code, frame = run_csv(capsys, "dist", "--k", "2", "--i", "1", "--p", "0.5")
    assert code == 0
    assert list(frame.columns) == ["iteration", "k", "p", "x", "prob"]
    assert list(frame["x"]) == [0, 1, 2]
    assert list(frame["prob"]) == pytest.approx([0.25, 0.5, 0.25])


def test_dist_is_normalized(capsys):
    code, frame = run_csv(capsys, "dist", "--k", "2", "--i", "7", "--p", "0.9")
    assert code == 0
    assert len(frame) == 129
    assert frame["prob"].sum() == pytest.approx(1.0, abs=1e-12)


def test_dist_support_cap_exit_code(capsys):
    assert main(["dist", "--k", "2", "--i", "30", "--p", "0.9"]) == 3
    assert main(["dist", "--k", "2", "--i", "5", "--p", "0.9", "--support-cap", "10"]) == 3


def test_moments_table(capsys):
    code, frame = run_csv(capsys, "moments", "--k", "2", "--i", "10", "--p-grid", "0.97:1:0.01")
    assert code == 0
    assert list(frame.columns) == ["i", "k", "p", "mean", "var", "sigma", "dispersion",
                                   "zeros_mean", "ratio"]
    rows = frame.set_index("p")
    assert rows.loc[1.0, "var"] == 0.0
    assert rows.loc[0.99, "var"] == pytest.approx(8741, abs=1)


def test_json_writes_non_finite_as_null(capsys):
    assert main(["moments", "--k", "2", "--i", "2", "--p", "1", "--format", "json"]) == 0
    records = json.loads(capsys.readouterr().out)
    assert records[0]["ratio"] is None
    assert records[0]["var"] == 0.0


def test_entropy_table(capsys):
    code, frame = run_csv(capsys, "entropy", "--k", "2", "--i-range", "1:3", "--p-grid", "0:1:0.25")
    assert code == 0
    assert list(frame.columns) == ["i", "p", "H_i", "h_i", "H_per_digit"]
    assert len(frame) == 15
    edges = frame[frame["p"].isin([0.0, 1.0])]
    assert (edges["H_i"] == 0.0).all()
    first = frame[frame["i"] == 1]
    assert list(first["H_i"]) == pytest.approx([2 * p * (1 - p) for p in first["p"]], abs=1e-12)
    assert list(frame["H_per_digit"]) == pytest.approx(list(frame["H_i"] / 2 ** frame["i"]), abs=1e-15)


def test_hvar_marks_farthest_point(capsys):
    code, frame = run_csv(capsys, "hvar", "--k", "2", "--i-range", "1:2", "--p-grid", "0:1:0.1")
    assert code == 0
    assert list(frame.columns) == ["i", "p", "VAR", "H", "is_p_r"]
    marked = frame[frame["is_p_r"]]
    assert list(marked["i"]) == [1, 2]
    first = frame[frame["i"] == 1]
    assert list(first["H"]) == pytest.approx(list(first["VAR"]), abs=1e-12)
    assert marked.iloc[0]["p"] == pytest.approx(0.5, abs=1e-6)


@pytest.mark.slow
def test_hvar_locus_follows_variance_maximum(capsys):
    code, frame = run_csv(capsys, "hvar", "--k", "2", "--i", "10", "--p-grid", "0:1:0.01")
    assert code == 0
    p_r = frame[frame["is_p_r"]]["p"].iloc[0]
    assert p_r == pytest.approx(variance_argmax(10, 2), abs=0.01)


def test_extrema_report(capsys):
    code = main(["extrema", "--k-list", "2,3", "--i-range", "2:12", "--format", "json"])
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    fits = payload["summary"]["fits"]
    assert [f["k"] for f in fits] == [2, 3]
    assert all(f["alpha"] > 0 and f["beta"] > 0 for f in fits)
    assert len(payload["rows"]) == 2 * 11


def test_extrema_empty_range_is_usage_error(capsys):
    assert main(["extrema", "--k-list", "2", "--i-range", "5:3"]) == 2


def test_simulate_histogram(capsys, tmp_path):
    out = tmp_path / "hist.csv"
    args = ["simulate", "--k", "2", "--i", "7", "--p", "0.9", "--runs", "1000", "--seed", "7",
            "--output", str(out)]
    assert main(args) == 0
    frame = pd.read_csv(out)
    assert list(frame.columns) == ["x", "count", "empirical_prob", "exact_prob"]
    assert frame["count"].sum() == 1000
    summary = json.loads(out.with_suffix(".summary.json").read_text(encoding="utf-8"))
    assert summary["runs"] == 1000
    assert summary["tv_distance"] < 0.3
    first = out.read_bytes()
    assert main(args) == 0
    assert out.read_bytes() == first


def test_simulate_certain_fill_is_single_bin(capsys):
    code, frame = run_csv(capsys, "simulate", "--k", "2", "--i", "5", "--p", "1", "--runs", "50")
    assert code == 0
    assert list(frame["x"]) == [32]
    assert list(frame["count"]) == [50]


def test_simulate_fibonacci_preset(capsys):
    code, frame = run_csv(capsys, "simulate", "--preset", "fibonacci", "--i", "6")
    assert code == 0
    assert frame.iloc[0]["sequence"] == "(1,0,1,1,0,1,0,1)"
    assert frame.iloc[0]["length"] == 8


def test_simulate_random_preset(capsys):
    code = main(["simulate", "--preset", "bernoulli", "--k", "2", "--i", "3", "--p", "0.5",
                 "--runs", "200", "--format", "json"])
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    assert sum(row["count"] for row in payload["rows"]) == 200
    assert payload["summary"]["exact_mean"] == pytest.approx(4.0)


def test_usage_errors(capsys):
    assert main(["simulate", "--preset", "koch", "--i", "3"]) == 2
    assert main(["dist", "--k", "2", "--i", "3", "--p", "1.5"]) == 2
    assert main(["dist", "--k", "1", "--i", "3", "--p", "0.5"]) == 2
    assert main(["dist", "--i", "3", "--p-grid", "0:1"]) == 2
    assert main(["dist", "--p", "0.5"]) == 2
    assert main(["moments", "--i", "3", "--format", "xml"]) == 2
    assert main(["nonsense"]) == 2


def test_parse_p_grid():
    assert parse_p_grid("0:1:0.25") == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert len(parse_p_grid("0:1:0.001")) == 1001


def test_simulate_preset_honours_mode_and_workers(capsys):
    args = ["simulate", "--preset", "mandelbrot", "--k", "2", "--i", "4", "--p", "0.7",
            "--runs", "300", "--seed", "3", "--mode", "sequence", "--format", "json"]
    assert main(args) == 0
    serial = json.loads(capsys.readouterr().out)
    assert main(args + ["--workers", "3"]) == 0
    threaded = json.loads(capsys.readouterr().out)
    assert serial["summary"]["mode"] == "sequence"
    assert serial["rows"] == threaded["rows"]


def test_simulate_degenerate_random_preset_prints_sequence(capsys):
    code, frame = run_csv(capsys, "simulate", "--preset", "mandelbrot", "--k", "2", "--i", "3",
                          "--p", "1")
    assert code == 0
    assert frame.iloc[0]["sequence"] == "(1,1,1,1,1,1,1,1)"
