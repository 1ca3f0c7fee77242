"""Exit criteria, each at its stated tolerance and runtime budget.

Run on its own with ``pytest tests/test_acceptance.py -v``; the terminal
summary prints one PASS/FAIL line per criterion.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from kan_ntk import cli, ntk, optim, pinn
from kan_ntk.model import Dataset, KanShape, init_params

pytestmark = pytest.mark.acceptance

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def config(name, command):
    return cli.load_config(CONFIGS / name, command)


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.start


@pytest.fixture(scope="module")
def gd_run(tmp_path_factory):
    cfg = config("train_gd.json", "train")
    with Timer() as t:
        summary = cli.run_train(cfg, str(tmp_path_factory.mktemp("gd")))
    return summary, t.seconds


def test_criterion_01_gradient_oracles(tmp_path, record_property):
    cfg = config("gradcheck.json", "gradcheck")
    with Timer() as t:
        summary = cli.run_gradcheck(cfg, str(tmp_path))
    record_property("worst", summary["worst_relative_error"])
    record_property("seconds", round(t.seconds, 1))
    assert summary["instances"] >= 100
    assert all(summary["checks"].values()), summary["worst_relative_error"]
    assert t.seconds < 30


def test_criterion_02_dual_path_gram(record_property):
    rng = np.random.default_rng(2024)
    worst = 0.0
    with Timer() as t:
        for i in range(50):
            n, m, nd = int(rng.integers(1, 4)), int(rng.integers(1, 9)), int(rng.integers(1, 6))
            N = int(rng.integers(1, 13))
            shape = KanShape.create(n, m, nd)
            data = Dataset(rng.uniform(-1, 1, size=(N, n)), rng.normal(size=N))
            p = init_params(shape, i)
            G1 = ntk.gram(ntk.assemble_D(p, data)).G
            G2 = ntk.gram_closed_form(p, data).G
            worst = max(worst, float(np.max(np.abs(G1 - G2))))
    record_property("max_abs_diff", worst)
    assert worst <= 1e-10
    assert t.seconds < 10


def test_criterion_03_gd_rate(gd_run, record_property):
    summary, seconds = gd_run
    for key in ("steps_run", "final_loss", "rho_hat", "theory_ceiling"):
        record_property(key, summary[key])
    assert summary["monotone"]
    assert summary["final_loss"] <= 1e-6 and summary["steps_run"] <= 5000
    assert summary["rho_hat"] <= summary["theory_ceiling"] + 0.02
    assert seconds < 60


def test_criterion_04_chi_bound(gd_run, record_property):
    summary, _ = gd_run
    record_property("chi_max_ratio", summary["chi_max_ratio"])
    assert summary["chi_max_ratio"] is not None
    assert summary["chi_max_ratio"] <= 1.0


def test_criterion_05_gram_concentration(tmp_path, record_property):
    cfg = config("gram_scaling.json", "gram-scaling")
    with Timer() as t:
        summary = cli.run_gram_scaling(cfg, str(tmp_path))
    record_property("slope", summary["slope"])
    record_property("seconds", round(t.seconds, 1))
    assert -0.65 <= summary["slope"] <= -0.35
    assert t.seconds < 300


def test_criterion_06_lazy_training(tmp_path, record_property):
    cfg = config("lazy_scaling.json", "lazy-scaling")
    with Timer() as t:
        summary = cli.run_lazy_scaling(cfg, str(tmp_path))
    record_property("slope", summary["slope"])
    record_property("total_drift_ratio", summary["total_drift_ratio"])
    record_property("seconds", round(t.seconds, 1))
    assert not summary["unconverged"]
    assert -0.65 <= summary["slope"] <= -0.35
    assert summary["total_drift_ratio"] <= 3.0
    assert t.seconds < 300


def test_criterion_07_sgd_expectation(tmp_path, record_property):
    cfg = config("sgd_expectation.json", "sgd-expectation")
    with Timer() as t:
        summary = cli.run_sgd_expectation(cfg, str(tmp_path))
    record_property("max_ratio_to_bound", summary["max_ratio_to_bound"])
    record_property("frac_T_inf", summary["frac_T_inf"])
    record_property("seconds", round(t.seconds, 1))
    assert summary["num_runs"] == 20
    assert summary["max_ratio_to_bound"] <= 1.0
    assert summary["frac_T_inf"] >= 0.95
    assert t.seconds < 180


def test_criterion_08_full_batch_equivalence():
    cfg = config("train_gd.json", "train")
    shape, data, params = cli._regression_setup(cfg)
    eta = optim.default_gd_eta(shape.n_d)
    _, gd = optim.train(params, data, optim.TrainConfig(eta=eta, steps=1000))
    _, sgd = optim.train(params, data, optim.TrainConfig(eta=eta, steps=1000, batch=data.N, seed=17))
    assert len(gd) == 1001
    assert list(gd.rows()) == list(sgd.rows())


def test_criterion_09_distinct_samples(record_property):
    cfg = config("train_gd.json", "train")
    shape, data, params = cli._regression_setup(cfg)
    X = data.X.copy()
    X[7] = X[2]
    dup = Dataset(X, data.y)
    assert not ntk.distinctness_check(dup)
    sig_dup = ntk.gram_closed_form(params, dup).sigma_min
    record_property("sigma_min_duplicate", sig_dup)
    assert sig_dup <= 1e-9
    assert ntk.distinctness_check(data)
    est = ntk.estimate_G_infinity(shape, data, 200, base_seed=5000, keep_samples=True)
    se = max(est.sigma_min_jackknife(), est.spectral_stderr)
    record_property("sigma_min_ginf", est.report.sigma_min)
    record_property("stderr", se)
    assert shape.n_d >= 2
    assert est.report.sigma_min > 3 * se


@pytest.fixture(scope="module")
def pinn_run(tmp_path_factory):
    cfg = config("pinn_heat.json", "pinn")
    with Timer() as t:
        summary = cli.run_pinn(cfg, str(tmp_path_factory.mktemp("pinn")))
    return summary, t.seconds


def test_criterion_10_pinn(pinn_run, record_property):
    summary, seconds = pinn_run
    for key in ("eta", "steps_run", "final_loss", "solution_max_error", "monotone"):
        record_property(key, summary.get(key))
    record_property("seconds", round(seconds, 1))
    assert not summary.get("diverged", False)
    assert summary["monotone"]
    assert summary["final_loss"] <= 1e-4 and summary["steps_run"] <= 20000
    assert summary["solution_max_error"] <= 0.05
    assert seconds < 300


def test_criterion_10_pinn_full_batch_equivalence():
    cfg = config("pinn_heat.json", "pinn")
    shape = cli.build_shape(cfg)
    task = pinn.PinnTask(cli.build_problem(cfg))
    params = init_params(shape, 0)
    eta = pinn.default_pinn_eta(shape.n_d, shape.n)
    _, gd = optim.train(params, task, optim.TrainConfig(eta=eta, steps=200, gram_every=50, chi_every=50))
    _, sgd = optim.train(params, task, optim.TrainConfig(eta=eta, steps=200, batch=64, batch_boundary=16,
                                                         seed=3, gram_every=50, chi_every=50))
    assert list(gd.rows()) == list(sgd.rows())


def test_criterion_11_initial_loss(tmp_path, record_property):
    cfg = config("init_loss.json", "init-loss")
    with Timer() as t:
        summary = cli.run_init_loss(cfg, str(tmp_path))
    record_property("band_ratio", summary["band_ratio"])
    record_property("seconds", round(t.seconds, 1))
    assert [r["n_d"] for r in summary["rows"]] == [2, 4, 8, 16]
    assert summary["band_ratio"] <= 3.0
    assert not math.isnan(summary["band_ratio"])
    assert t.seconds < 60
