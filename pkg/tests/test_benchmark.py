import runpy
from pathlib import Path

BENCH = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_kernels.py"


def test_benchmark_runs(capsys):
    mod = runpy.run_path(str(BENCH))
    mod["main"](["--iters", "20", "--repeat", "1"])
    out = capsys.readouterr().out
    assert "dense loop" in out and "python" in out
