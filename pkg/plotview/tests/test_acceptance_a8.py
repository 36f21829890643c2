"""Acceptance criterion A8: render the Pauli-triple sweep CSV.

The figure must contain the 1/sqrt(3) marker, repeated renders must be
byte-identical, and malformed CSV input must fail cleanly without output.
"""

import hashlib
import math
import sys
from pathlib import Path

import matplotlib.pyplot as plt
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from plotview import FigureSpec, draw_figure, main  # noqa: E402

A1_STYLE_CSV = """\
# lhs-forge sweep config_hash=0123456789abcdef
v,train_loss,test_loss,steps,seed,verdict,wall_time_s
0.400000,1.1e-09,1.3e-09,30000,101,LhsFound,44.1
0.550000,2.0e-08,2.2e-08,30000,102,LhsFound,44.8
0.577000,6.1e-08,6.5e-08,30000,103,LhsFound,45.0
0.650000,3.6e-02,3.6e-02,30000,104,NotConverged,44.5
0.800000,1.2e-01,1.2e-01,30000,105,NotConverged,44.2
"""

MARKER = 1 / math.sqrt(3)


@pytest.fixture
def a1_csv(tmp_path):
    path = tmp_path / "a1_sweep.csv"
    path.write_text(A1_STYLE_CSV)
    return path


def test_a8_figure_contains_threshold_marker(a1_csv, tmp_path):
    spec = FigureSpec(csv_path=str(a1_csv), out_path=str(tmp_path / "a8.png"),
                      markers=((MARKER, "1/sqrt3"),))
    fig = draw_figure(spec)
    try:
        vlines = [ln for ln in fig.axes[0].get_lines()
                  if len(set(ln.get_xdata())) == 1
                  and abs(ln.get_xdata()[0] - MARKER) < 1e-12]
        print(f"[{'PASS' if vlines else 'FAIL'}] A8: figure contains the "
              f"1/sqrt(3) marker at x = {MARKER:.4f}")
        assert vlines
    finally:
        plt.close(fig)


def test_a8_byte_identical_renders(a1_csv, tmp_path):
    digests = []
    for name in ("first.png", "second.png"):
        out = tmp_path / name
        code = main(["--in", str(a1_csv), "--out", str(out),
                     "--marker", f"{MARKER}:1/sqrt3"])
        assert code == 0
        digests.append(hashlib.sha256(out.read_bytes()).hexdigest())
    same = digests[0] == digests[1]
    print(f"[{'PASS' if same else 'FAIL'}] A8: repeated renders byte-identical "
          f"({digests[0][:12]}...)")
    assert same


def test_a8_malformed_csv_fails_cleanly(tmp_path, capsys):
    bad = tmp_path / "mangled.csv"
    bad.write_text("v,train_loss,test_loss,steps,seed,verdict,wall_time_s\n"
                   "0.4,1e-9,yes,30000,101,LhsFound,44.1\n")
    out = tmp_path / "never.png"
    code = main(["--in", str(bad), "--out", str(out)])
    clean = code == 2 and not out.exists() and "mangled.csv:2" in capsys.readouterr().err
    print(f"[{'PASS' if clean else 'FAIL'}] A8: malformed CSV rejected with a "
          f"named line and no output file")
    assert clean
