import hashlib
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from plotview import (  # noqa: E402
    FigureSpec,
    PlotError,
    best_per_visibility,
    main,
    parse_marker,
    read_sweep_csv,
    render,
    threshold_bracket,
)

SWEEP_CSV = """\
# lhs-forge sweep config_hash=deadbeef
v,train_loss,test_loss,steps,seed,verdict,wall_time_s
0.400000,1.0e-06,2.0e-06,30000,11,LhsFound,40.0
0.550000,3.0e-06,4.0e-06,30000,12,LhsFound,41.0
0.577000,8.0e-05,9.0e-05,30000,13,LhsFound,39.0
0.650000,3.1e-02,3.2e-02,30000,14,NotConverged,38.0
0.800000,1.2e-01,1.2e-01,30000,15,NotConverged,37.0
"""


@pytest.fixture
def sweep_csv(tmp_path):
    path = tmp_path / "sweep.csv"
    path.write_text(SWEEP_CSV)
    return path


class TestCsvParsing:
    def test_reads_records(self, sweep_csv):
        points = read_sweep_csv(sweep_csv)
        assert len(points) == 5
        assert points[0].v == 0.4

    def test_missing_file(self, tmp_path):
        with pytest.raises(PlotError, match="no such file"):
            read_sweep_csv(tmp_path / "absent.csv")

    def test_empty_records(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("v,train_loss,test_loss,steps,seed,verdict,wall_time_s\n")
        with pytest.raises(PlotError, match="no sweep records"):
            read_sweep_csv(path)

    def test_malformed_line_named(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text(
            "v,train_loss,test_loss,steps,seed,verdict,wall_time_s\n"
            "0.4,oops,1e-06,100,1,LhsFound,0.1\n"
        )
        with pytest.raises(PlotError, match="bad.csv:2"):
            read_sweep_csv(path)

    def test_wrong_field_count_named(self, tmp_path):
        path = tmp_path / "short.csv"
        path.write_text("0.4,1e-6\n")
        with pytest.raises(PlotError, match="short.csv:1"):
            read_sweep_csv(path)

    def test_best_per_visibility_takes_minimum(self, tmp_path):
        path = tmp_path / "rep.csv"
        path.write_text(
            "0.4,1e-6,5e-02,100,1,NotConverged,0.1\n"
            "0.4,1e-6,1e-06,100,2,LhsFound,0.1\n"
        )
        best = best_per_visibility(read_sweep_csv(path))
        assert len(best) == 1
        assert best[0].test_loss == 1e-6


class TestBracket:
    def test_bracket_found(self, sweep_csv):
        points = best_per_visibility(read_sweep_csv(sweep_csv))
        assert threshold_bracket(points, 1e-3) == (0.577, 0.65)

    def test_single_sided(self, tmp_path):
        path = tmp_path / "one.csv"
        path.write_text("0.1,1e-6,1e-6,100,1,LhsFound,0.1\n")
        points = read_sweep_csv(path)
        assert threshold_bracket(points, 1e-3) is None


class TestRender:
    def test_renders_with_threshold_marker(self, sweep_csv, tmp_path):
        out = tmp_path / "fig.png"
        spec = FigureSpec(csv_path=str(sweep_csv), out_path=str(out),
                          markers=((0.5774, "1/sqrt3"),))
        render(spec)
        assert out.exists() and out.stat().st_size > 5000

    def test_byte_identical_reruns(self, sweep_csv, tmp_path):
        hashes = []
        for name in ("a.png", "b.png"):
            out = tmp_path / name
            spec = FigureSpec(csv_path=str(sweep_csv), out_path=str(out),
                              markers=((0.5774, "1/sqrt3"),), log_scale=True)
            render(spec)
            hashes.append(hashlib.sha256(out.read_bytes()).hexdigest())
        assert hashes[0] == hashes[1]

    def test_marker_outside_range_rejected(self, sweep_csv, tmp_path):
        with pytest.raises(PlotError, match="outside"):
            FigureSpec(csv_path=str(sweep_csv), out_path=str(tmp_path / "x.png"),
                       markers=((1.4, "bad"),))

    def test_input_csv_not_mutated(self, sweep_csv, tmp_path):
        before = sweep_csv.read_bytes()
        render(FigureSpec(csv_path=str(sweep_csv), out_path=str(tmp_path / "f.png")))
        assert sweep_csv.read_bytes() == before

    def test_no_file_written_on_empty_input(self, tmp_path):
        src = tmp_path / "empty.csv"
        src.write_text("v,train_loss,test_loss,steps,seed,verdict,wall_time_s\n")
        out = tmp_path / "should_not_exist.png"
        with pytest.raises(PlotError):
            render(FigureSpec(csv_path=str(src), out_path=str(out)))
        assert not out.exists()


class TestCli:
    def test_success(self, sweep_csv, tmp_path, capsys):
        out = tmp_path / "cli.png"
        code = main(["--in", str(sweep_csv), "--out", str(out),
                     "--marker", "0.5774:1/sqrt3"])
        assert code == 0
        assert out.exists()
        assert str(out) in capsys.readouterr().out

    def test_malformed_csv_fails_cleanly(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("0.4,x,y,z\n")
        out = tmp_path / "nope.png"
        assert main(["--in", str(bad), "--out", str(out)]) == 2
        assert not out.exists()
        assert "error:" in capsys.readouterr().err

    def test_bad_marker_syntax(self, sweep_csv, tmp_path):
        assert main(["--in", str(sweep_csv), "--out", str(tmp_path / "m.png"),
                     "--marker", "abc"]) == 2

    def test_parse_marker_label_defaults(self):
        assert parse_marker("0.5") == (0.5, "0.5")
        assert parse_marker("0.5774:1/sqrt3") == (0.5774, "1/sqrt3")
