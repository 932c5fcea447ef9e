import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from banach_pd import __version__
from banach_pd.cli import main
from banach_pd.harness import (
    ConfigError,
    ExperimentConfig,
    Reference,
    ReferenceError,
    config_from_dict,
    load_config,
    make_noise,
    reference_minimizer,
    spawn_seeds,
)
from banach_pd.harness import artifacts
from banach_pd.harness.experiments import comparison_experiment, default_C, scale_sigma
from banach_pd.harness.reference import cache_dir
from banach_pd.operators import MatrixOp
from banach_pd.resolvents import PowerNorm, QuadraticData
from banach_pd.solver import SaddleProblem
from banach_pd.spaces import WeightedLr


def scalar_problem(y0=1.0):
    X = Y = WeightedLr(2.0, 1)
    return SaddleProblem(MatrixOp(np.array([[1.0]])), PowerNorm(X, 2.0, 1.0), QuadraticData(Y, np.array([y0])), X, Y)


# --- config ----------------------------------------------------------------

def test_config_defaults_round_trip():
    cfg = ExperimentConfig()
    again = config_from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again.to_dict() == cfg.to_dict()
    assert cfg.deconv.n_x == 64 and cfg.comparison.repetitions == 10
    assert cfg.phase.epsilon == 0.1


def test_config_unknown_key():
    with pytest.raises(ConfigError, match="unknown key"):
        config_from_dict({"solver": {"sigmaa": 0.1}})
    with pytest.raises(ConfigError, match="unknown key"):
        config_from_dict({"colour": "red"})


@pytest.mark.parametrize("bad", [
    {"schema_version": 2},
    {"experiment": "tomography"},
    {"seed": -1},
    {"solver": {"variant": "V4"}},
    {"solver": {"max_iters": "many"}},
    {"deconv": {"r": 0.9}},
    {"phase": {"rho": 1.5}},
])
def test_config_rejects(bad):
    with pytest.raises(ConfigError):
        config_from_dict(bad)


def test_load_config(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"schema_version": 1, "seed": 7, "deconv": {"r": 1.5}}))
    cfg = load_config(p)
    assert cfg.seed == 7 and cfg.deconv.r == 1.5
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(p)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


# --- noise -----------------------------------------------------------------

def test_noise_level_zero(rng):
    y = rng.standard_normal(10)
    assert_array_equal(make_noise(y, 0.0, seed=1), y)


@given(st.floats(0.001, 2.0), st.integers(0, 2**32))
def test_noise_exact_relative_level(level, seed):
    y = np.linspace(1, 2, 17)
    yd = make_noise(y, level, seed=seed)
    assert np.linalg.norm(yd - y) / np.linalg.norm(y) == pytest.approx(level, rel=1e-12)


def test_noise_poisson_large_scale():
    y = np.linspace(0.1, 2.0, 200)
    yd = make_noise(y, 0.0, seed=0, mode="poisson", scale=1e6)
    assert np.mean((yd - y) ** 2) <= 1e-5
    assert np.all(yd >= 0)


def test_noise_errors():
    with pytest.raises(ValueError):
        make_noise([-1.0, 1.0], 0.0, mode="poisson")
    with pytest.raises(ValueError):
        make_noise([1.0], -0.1)
    with pytest.raises(ValueError):
        make_noise([1.0], 0.1, mode="laplace")


def test_noise_seeded():
    a = make_noise(np.ones(5), 0.2, seed=3)
    assert_array_equal(a, make_noise(np.ones(5), 0.2, seed=3))
    assert not np.array_equal(a, make_noise(np.ones(5), 0.2, seed=4))
    s1, s2 = spawn_seeds(0, 2)
    assert not np.array_equal(make_noise(np.ones(5), 0.2, s1), make_noise(np.ones(5), 0.2, s2))


# --- reference -------------------------------------------------------------

def test_reference_scalar_kkt():
    ref = reference_minimizer(scalar_problem(), budget=100_000, use_cache=False)
    assert isinstance(ref, Reference)
    assert abs(ref.x[0] - 0.5) <= 1e-12
    assert abs(ref.p[0] + 0.5) <= 1e-12


def test_reference_cache(tmp_path, monkeypatch):
    monkeypatch.setenv("BANACH_PD_CACHE", str(tmp_path))
    assert cache_dir() == tmp_path
    a = reference_minimizer(scalar_problem(), budget=100_000)
    assert not a.from_cache
    b = reference_minimizer(scalar_problem(), budget=100_000)
    assert b.from_cache
    assert a.x.tobytes() == b.x.tobytes() and a.p.tobytes() == b.p.tobytes()
    assert len(list(tmp_path.glob("ref_*.npz"))) == 1
    # any change of the problem data gives a new entry
    c = reference_minimizer(scalar_problem(y0=2.0), budget=100_000)
    assert not c.from_cache and c.x[0] == pytest.approx(1.0)
    d = reference_minimizer(scalar_problem(), budget=200_000)
    assert not d.from_cache
    assert len(list(tmp_path.glob("ref_*.npz"))) == 3


def test_reference_budget_and_failure(tmp_path, monkeypatch):
    monkeypatch.setenv("BANACH_PD_CACHE", str(tmp_path))
    with pytest.raises(ValueError):
        reference_minimizer(scalar_problem(), budget=99_999)
    with pytest.raises(ReferenceError):
        reference_minimizer(scalar_problem(), budget=100_000, stag_tol=-1.0)
    assert not list(tmp_path.glob("ref_*"))


# --- artifacts -------------------------------------------------------------

def test_csv_format_and_roundtrip(tmp_path):
    p = artifacts.write_csv(tmp_path / "a.csv", ("k", "v"), [(1, 0.1), (2, float("nan")), (3, float("inf"))])
    assert p.read_text().splitlines() == ["k,v", "1,0.10000000000000001", "2,nan", "3,inf"]
    cols = artifacts.read_csv(p)
    assert cols["v"][0] == 0.1 and np.isnan(cols["v"][1])


def test_meta_has_version_and_seed(tmp_path):
    p = artifacts.write_meta(tmp_path / "m.json", ExperimentConfig().to_dict(), 5, extra=np.arange(2))
    meta = json.loads(p.read_text())
    assert meta["library_version"] == __version__ and meta["seed"] == 5
    assert meta["config"]["deconv"]["alpha"] == 5.0
    assert meta["extra"] == [0, 1]


def test_sigma_scaling_and_C():
    assert scale_sigma(0.0023, 1.0 / np.sqrt(0.0023 * 0.279)) == pytest.approx(0.0023)
    assert default_C(2.0, 0.1, 2.0) == pytest.approx(1 - 2**-7 * 0.4)
    assert default_C(1.25, 0.1, 2.0) == 0.93


# --- CLI -------------------------------------------------------------------

def test_cli_selftest(capsys):
    assert main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert "[PASS]" in out and "[FAIL]" not in out


def test_cli_quadratic(tmp_path, capsys):
    assert main(["quadratic", "--out", str(tmp_path)]) == 0
    meta = json.loads((tmp_path / "meta.json").read_text())
    assert meta["final_error_max"] <= 1e-8
    assert (tmp_path / "trace.csv").exists() and (tmp_path / "plot_trace.py").exists()


def test_cli_quadratic_banach(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"quadratic": {"n": 8, "m": 6, "r": 1.5}}))
    assert main(["quadratic", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert json.loads((tmp_path / "o" / "meta.json").read_text())["final_error_max"] <= 1e-8


def test_cli_bit_reproducible(tmp_path):
    for name in ("a", "b"):
        assert main(["deconv", "--r", "1.25", "--seed", "4", "--out", str(tmp_path / name)]) == 0
    for f in ("trace.csv", "x.csv", "x_true.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    metas = [json.loads((tmp_path / n / "meta.json").read_text()) for n in ("a", "b")]
    assert metas[1]["reference_from_cache"]
    for m in metas:  # these two legitimately differ between the runs
        del m["config"]["output"]["dir"], m["reference_from_cache"]
    assert metas[0] == metas[1]
    trace = artifacts.read_csv(tmp_path / "a" / "trace.csv")
    assert list(trace) == ["k", "elapsed_s", "err_ref", "misfit", "gap", "tau_k", "sigma_k"]
    assert trace["err_ref"][-1] <= 1e-5


def test_cli_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"nope": 1}))
    assert main(["quadratic", "--config", str(bad)]) == 1
    # V1 steps beyond the premise
    assert main(["quadratic", "--sigma", "10", "--tau", "10", "--out", str(tmp_path / "q")]) == 1
    # V3 needs a strongly convex penalty
    assert main(["deconv", "--variant", "V3", "--out", str(tmp_path / "d")]) == 1
    with pytest.raises(SystemExit):
        main(["unknown"])


def test_cli_opnorm(tmp_path, capsys):
    assert main(["opnorm", "--r", "2", "--out", str(tmp_path)]) == 0
    meta = json.loads((tmp_path / "meta.json").read_text())
    assert meta["op_norm"] == pytest.approx(meta["svd_norm"], rel=1e-6)


def test_comparison_zero_noise_tiny(tmp_path):
    cfg = config_from_dict({
        "deconv": {"n_x": 16, "n_y": 31, "noise_level": 0.0, "alpha": 0.5},
        "comparison": {"repetitions": 1, "sigmas": [0.0023], "max_iters": 200000},
    })
    out = comparison_experiment(cfg, tmp_path)
    cells = out.summary["cells"]
    assert all(c["converged"] == 1 for c in cells)
    assert set(out.summary["ordering_banach_below_l2"]) == {"0.0023"}
    runs = artifacts.read_csv(tmp_path / "comparison_runs.csv")
    assert sorted(runs["r"]) == [1.25, 2.0]
