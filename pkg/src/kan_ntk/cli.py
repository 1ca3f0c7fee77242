"""Command-line experiment runner.

Every run is described by one JSON config; flags only pick the config file and
the output directory. Exit codes: 0 when every check passes, 1 on a check
breach or divergence, 2 on a configuration error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import datetime
import json
import math
import os
import sys
import warnings

import numpy as np

from . import _backend, ntk, optim, pinn
from .errors import ConfigError, DivergenceError
from .model import (
    Dataset,
    KanParams,
    KanShape,
    OperatorCoefficients,
    forward,
    forward_batch,
    init_params,
    input_derivatives,
    param_grad,
    param_grad_of_operator,
    operator_apply,
)

SCHEMA_HEADER = "# schema=1\n"

DEFAULTS = {
    "task": "regression",
    "n": 2,
    "m": 1024,
    "n_d": 4,
    "basis": "chebyshev",
    "transform": "tanh",
    "data": {
        "N": 16,
        "sampling": "grid",
        "target": "sincos",
        "seed": 0,
        "problem": "heat1d",
        "N1": 64,
        "N2": 16,
    },
    "train": {
        "eta": None,
        "steps": 5000,
        "batch": None,
        "batch_boundary": None,
        "seed": 0,
        "init_seed": 0,
        "loss_tolerance": 1e-6,
        "gram_every": 10,
        "chi_every": 10,
        "replacement": True,
    },
    "study": {
        "m_sweep": [64, 256, 1024, 4096],
        "nd_sweep": [2, 4, 8, 16],
        "seeds": 10,
        "ginf_seeds": 200,
        "ginf_width": 4096,
        "num_runs": 20,
        "horizon": 500,
        "delta": 0.05,
        "delta_tilde": 0.05,
        "radii": "trajectory",
        "radii_delta": 0.01,
        "grid": 32,
        "max_error": 0.05,
        "instances": 20,
        "zero_c": False,
        "fd_step": 1e-5,
        "tol_param": 1e-6,
        "tol_input": 1e-5,
        "slope_range": [-0.65, -0.35],
        "drift_ratio": 3.0,
        "band": 3.0,
        "rate_slack": 0.02,
        "bound_slack": 1.1,
        "t_inf_fraction": 0.95,
        "lazy_tolerance": 1e-5,
        "lazy_steps": 20000,
        "workers": 1,
    },
}

CHOICES = {
    "task": ("regression", "pinn"),
    "basis": ("chebyshev", "monomial", "rbf", "bspline"),
    "transform": ("tanh", "sigmoid", "identity"),
    "sampling": ("grid", "uniform"),
    "target": ("sincos", "zero", "init"),
    "problem": pinn.KINDS,
    "radii": ("trajectory", "sensitivity"),
}

# per-command overlays so that running a subcommand without a config file runs
# its reference experiment
COMMAND_DEFAULTS = {
    "gradcheck": {"m": 8, "study": {"instances": 100}},
    "init-loss": {"study": {"seeds": 50}},
    "sgd-expectation": {"train": {"batch": 4, "steps": 500}},
    "pinn": {
        "task": "pinn",
        "m": 512,
        "train": {"steps": 20000, "loss_tolerance": 1e-4, "gram_every": 100, "chi_every": 100},
    },
}

# keys whose default is None but that take a number when given
_NULLABLE = {"eta": float, "batch": int, "batch_boundary": int}


# ---------------------------------------------------------------------------
# Config handling
# ---------------------------------------------------------------------------


def _check_value(key, value, default, path):
    where = f"{path}{key}"
    if key in _NULLABLE:
        if value is None:
            return None
        default = _NULLABLE[key](0)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(f"{where} must be a finite number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string")
        if key in CHOICES and value not in CHOICES[key]:
            raise ConfigError(f"{where} must be one of {list(CHOICES[key])}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list) or not value:
            raise ConfigError(f"{where} must be a non-empty list")
        kind = type(default[0])
        out = []
        for v in value:
            out.append(_check_value(key, v, default[0], path) if kind is not int else _check_value(key, v, 0, path))
        return out
    raise ConfigError(f"{where}: unsupported value")


def _merge(user, defaults, path=""):
    if not isinstance(user, dict):
        raise ConfigError(f"{path or 'config'} must be an object")
    unknown = sorted(set(user) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown key(s) {', '.join(path + k for k in unknown)}")
    out = {}
    for key, default in defaults.items():
        if isinstance(default, dict):
            out[key] = _merge(user.get(key, {}), default, f"{path}{key}.")
        elif key in user:
            out[key] = _check_value(key, user[key], default, path)
        else:
            out[key] = copy.deepcopy(default)
    return out


def _overlay(base, extra):
    out = copy.deepcopy(base)
    for key, value in extra.items():
        out[key] = _overlay(out[key], value) if isinstance(value, dict) else value
    return out


def command_defaults(command=None) -> dict:
    """Defaults for ``command``: the global defaults plus that command's overlay."""
    return _overlay(DEFAULTS, COMMAND_DEFAULTS.get(command, {}))


def resolve_config(user: dict, command=None) -> dict:
    """Merge a user config over the command defaults, rejecting unknown keys and bad types."""
    cfg = _merge(user, command_defaults(command))
    for key in ("n", "m", "n_d"):
        if cfg[key] < 1:
            raise ConfigError(f"{key} must be >= 1")
    d = cfg["data"]
    if d["N"] < 1 or d["N1"] < 1 or d["N2"] < 1:
        raise ConfigError("sample counts must be >= 1")
    t = cfg["train"]
    if t["eta"] is not None and t["eta"] < 0:
        raise ConfigError("train.eta must be >= 0")
    if t["steps"] < 0:
        raise ConfigError("train.steps must be >= 0")
    if cfg["task"] == "pinn":
        if cfg["n"] != 2:
            raise ConfigError("manufactured problems are two-dimensional; set n = 2")
        b1 = d["N1"] if t["batch"] is None else t["batch"]
        b2 = d["N2"] if t["batch_boundary"] is None else t["batch_boundary"]
        pinn.PinnBatchConfig(b1, b2, d["N1"], d["N2"])
    elif t["batch"] is not None and not 1 <= t["batch"] <= d["N"]:
        raise ConfigError("train.batch must lie in [1, N]")
    return cfg


def load_config(path, command=None) -> dict:
    try:
        with open(path) as fh:
            user = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return resolve_config(user, command)


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------


def build_shape(cfg, m=None, n_d=None) -> KanShape:
    return KanShape.create(cfg["n"], cfg["m"] if m is None else m, cfg["n_d"] if n_d is None else n_d,
                           basis=cfg["basis"], transform=cfg["transform"])


def sample_points(n, N, sampling, seed):
    if sampling == "grid":
        k = round(N ** (1.0 / n))
        if k ** n != N:
            raise ConfigError(f"grid sampling needs N to be a perfect power of n; got N={N}, n={n}")
        g = np.linspace(-0.9, 0.9, k)
        mesh = np.meshgrid(*([g] * n), indexing="ij")
        return np.stack([a.ravel() for a in mesh], axis=1)
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.uniform(-1.0, 1.0, size=(N, n))


def target_values(kind, X, shape=None, init_seed=0):
    if kind == "zero":
        return np.zeros(X.shape[0])
    if kind == "init":
        return forward_batch(init_params(shape, init_seed), X)
    y = 0.5 * np.sin(np.pi * X[:, 0])
    for j in range(1, X.shape[1]):
        y = y * np.cos(np.pi * X[:, j])
    return y


def build_dataset(cfg, shape=None) -> Dataset:
    d = cfg["data"]
    X = sample_points(cfg["n"], d["N"], d["sampling"], d["seed"])
    shape = shape or build_shape(cfg)
    return Dataset(X, target_values(d["target"], X, shape, cfg["train"]["init_seed"]))


def build_problem(cfg) -> pinn.PdeProblem:
    d = cfg["data"]
    return pinn.make_manufactured_problem(d["problem"], d["N1"], d["N2"], d["seed"])


def build_radii(cfg, shape, G0, s0_norm):
    st = cfg["study"]
    if st["radii"] == "sensitivity":
        return ntk.LazyRadii.from_sensitivity(shape, G0.sigma_min, st["radii_delta"])
    return ntk.LazyRadii.from_trajectory_bound(shape, G0.sigma_min, G0.sigma_max, s0_norm, st["radii_delta"])


def train_config(cfg, eta) -> optim.TrainConfig:
    t = dict(cfg["train"])
    t["eta"] = eta
    return optim.TrainConfig(**t)


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(SCHEMA_HEADER)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def loglog_slope(xs, ys):
    """Least-squares slope of log y on log x with a 95% normal-approximation interval."""
    lx, ly = np.log(np.asarray(xs, dtype=float)), np.log(np.asarray(ys, dtype=float))
    A = np.stack([lx, np.ones_like(lx)], axis=1)
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ coef
    dof = max(len(lx) - 2, 1)
    s2 = float(resid @ resid) / dof
    se = math.sqrt(s2 / float(np.sum((lx - lx.mean()) ** 2)))
    return float(coef[0]), (float(coef[0]) - 1.96 * se, float(coef[0]) + 1.96 * se)


def _in_range(x, rng):
    return x is not None and rng[0] <= x <= rng[1]


# ---------------------------------------------------------------------------
# Studies
# ---------------------------------------------------------------------------


def _relerr(an, fd):
    an, fd = np.asarray(an, dtype=float), np.asarray(fd, dtype=float)
    scale = max(float(np.max(np.abs(an), initial=0.0)), float(np.max(np.abs(fd), initial=0.0)))
    diff = float(np.max(np.abs(an - fd), initial=0.0))
    return 0.0 if diff == 0.0 else diff / scale


def _fd(fun, theta, h):
    out = []
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = h
        out.append((fun(theta + e) - fun(theta - e)) / (2 * h))
    return np.array(out)


def gradcheck_instance(shape, seed, h, problem=None, zero_c=False):
    """Worst relative errors of every analytic derivative block against central differences."""
    rng = np.random.Generator(np.random.PCG64(seed))
    params = init_params(shape, seed)
    if zero_c:
        params = params.replace(c=np.zeros_like(params.c))
    x = rng.uniform(-0.8, 0.8, size=shape.n)
    theta = params.to_vector()
    na = shape.num_a

    def f_theta(th):
        return forward(KanParams.from_vector(shape, th), x)[0]

    _, cache = forward(params, x)
    ga, gc = param_grad(params, x, cache)
    fd = _fd(f_theta, theta, h)
    out = {"param_a": _relerr(ga.ravel(), fd[:na]), "param_c": _relerr(gc.ravel(), fd[na:])}

    grad, hess = input_derivatives(params, x, 2)
    fdx = _fd(lambda xx: forward(params, xx)[0], x, h)
    fdh = _fd(lambda xx: input_derivatives(params, xx, 1)[0], x, h)
    out["input_grad"] = _relerr(grad, fdx)
    out["input_hess"] = _relerr(hess, fdh)

    A = rng.normal(size=(shape.n, shape.n))
    ops = OperatorCoefficients(rng.normal(size=1), rng.normal(size=(1, shape.n)), (A + A.T)[None])

    def Lf(th):
        return operator_apply(KanParams.from_vector(shape, th), x[None], ops)[0]

    oa, oc = param_grad_of_operator(params, x, ops)
    fdo = _fd(Lf, theta, h)
    out["operator_a"] = _relerr(oa.ravel(), fdo[:na])
    out["operator_c"] = _relerr(oc.ravel(), fdo[na:])

    if problem is not None and shape.n == problem.n:
        pa, pc = pinn.pde_loss_grad(params, problem)
        fdp = _fd(lambda th: pinn.pde_loss(KanParams.from_vector(shape, th), problem), theta, h)
        out["pde_loss_a"] = _relerr(pa.ravel(), fdp[:na])
        out["pde_loss_c"] = _relerr(pc.ravel(), fdp[na:])
    return out


PARAM_BLOCKS = ("param_a", "param_c")


def run_gradcheck(cfg, out_dir=None):
    st = cfg["study"]
    rng = np.random.Generator(np.random.PCG64(cfg["data"]["seed"]))
    worst = {}
    problem = pinn.make_manufactured_problem("heat1d", 4, 4, cfg["data"]["seed"])
    shape0 = build_shape(cfg)
    if shape0.num_params > 5000:
        raise ConfigError("gradcheck needs at most 5000 parameters")
    for i in range(st["instances"]):
        if i == 0:
            shape = shape0
        else:
            n = int(rng.integers(1, 4))
            shape = KanShape.create(n, int(rng.integers(1, 9)), int(rng.integers(1, 6)),
                                    basis=cfg["basis"], transform=cfg["transform"])
        res = gradcheck_instance(shape, cfg["data"]["seed"] + i, st["fd_step"],
                                 problem if shape.n == 2 else None, zero_c=st["zero_c"])
        for k, v in res.items():
            worst[k] = max(worst.get(k, 0.0), v)
    checks = {
        k: v <= (st["tol_param"] if k in PARAM_BLOCKS else st["tol_input"]) for k, v in worst.items()
    }
    summary = {"worst_relative_error": worst, "instances": st["instances"], "checks": checks}
    if out_dir:
        write_json(os.path.join(out_dir, "summary.json"), _with_meta(summary, cfg))
    return summary


def _regression_setup(cfg):
    shape = build_shape(cfg)
    data = build_dataset(cfg, shape)
    params = init_params(shape, cfg["train"]["init_seed"])
    return shape, data, params


def run_train(cfg, out_dir=None):
    if cfg["task"] == "pinn":
        return run_pinn(cfg, out_dir)
    st = cfg["study"]
    shape, data, params = _regression_setup(cfg)
    dist = ntk.distinctness_check(data)
    if not dist:
        warnings.warn(f"duplicate samples {dist.duplicates[:5]}; G is singular")
    task = optim.RegressionTask(data)
    G0 = ntk.gram_closed_form(params, data)
    s0 = task.residuals(params)
    t = cfg["train"]
    full = t["batch"] is None or t["batch"] == data.N
    if t["eta"] is not None:
        eta = t["eta"]
    elif full:
        eta = optim.default_gd_eta(shape.n_d)
    else:
        eta = optim.default_sgd_eta(shape.n_d, t["batch"], data.N, G0.sigma_min)
    cfg["train"]["eta"] = eta
    radii = build_radii(cfg, shape, G0, float(np.linalg.norm(s0)))
    summary = {"eta": eta, "mode": "gd" if full else "sgd", "gram_init": G0.summary(),
               "radii": radii.to_dict()}
    try:
        final, traj = optim.train(params, task, train_config(cfg, eta), radii)
    except DivergenceError as exc:
        summary.update({"diverged": True, "divergence_step": exc.step,
                        "checks": {"no_divergence": False}})
        _write_run(out_dir, cfg, summary, exc.trajectory, G0)
        return summary
    ceiling = 1.0 - eta * G0.sigma_min / 2.0 if full else 1.0 - eta * G0.sigma_min
    summary.update(_trajectory_summary(traj, cfg, eta, G0.sigma_min, ceiling, full))
    _write_run(out_dir, cfg, summary, traj, G0)
    return summary


def _trajectory_summary(traj, cfg, eta, sigma_min, ceiling, full):
    st = cfg["study"]
    L = traj.losses()
    try:
        rho = optim.fit_contraction(L).rho_hat
    except ValueError:
        rho = None
    chi = np.asarray(traj.chi_norm)
    rn = np.asarray(traj.residual_norm)
    mask = ~np.isnan(chi)
    bound = eta * sigma_min / 4.0 * rn[mask]
    chi_ratio = float(np.max(chi[mask] / bound)) if mask.any() and np.all(bound > 0) else None
    tol = cfg["train"]["loss_tolerance"]
    out = {
        "steps_run": len(traj) - 1,
        "initial_loss": float(L[0]),
        "final_loss": float(L[-1]),
        "reached_tolerance": bool(L[-1] <= tol),
        "monotone": traj.is_monotone(),
        "rho_hat": rho,
        "theory_ceiling": ceiling,
        "rate_ok": None if rho is None else bool(rho <= ceiling + st["rate_slack"]),
        "chi_max_ratio": chi_ratio,
        "stopping_time": traj.stopping_time,
        "final_drift_a": traj.drift_a[-1],
        "final_drift_c": traj.drift_c[-1],
        "final_max_unit_drift_c": traj.final_unit_drift,
        "delta": st["delta"],
        "delta_tilde": st["delta_tilde"],
    }
    checks = {}
    if full and cfg["train"]["steps"] > 0:
        checks["monotone"] = out["monotone"]
        if tol > 0:
            checks["reached_tolerance"] = out["reached_tolerance"]
        if rho is not None:
            checks["rate_ok"] = out["rate_ok"]
        if chi_ratio is not None:
            checks["chi_bound"] = chi_ratio <= 1.0
    out["checks"] = checks
    return out


def _with_meta(summary, cfg):
    return {**summary, "backend": _backend.BACKEND, "config": cfg,
            "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat()}


def _write_run(out_dir, cfg, summary, traj, G0):
    if not out_dir:
        return
    write_json(os.path.join(out_dir, "config.json"), cfg)
    if traj is not None:
        traj.write_csv(os.path.join(out_dir, "trajectory.csv"))
    G0.write_csv(os.path.join(out_dir, "gram_init.csv"))
    write_json(os.path.join(out_dir, "summary.json"), _with_meta(summary, cfg))


def run_pinn(cfg, out_dir=None):
    st = cfg["study"]
    shape = build_shape(cfg)
    problem = build_problem(cfg)
    params = init_params(shape, cfg["train"]["init_seed"])
    task = pinn.PinnTask(problem)
    G0 = ntk.GramReport.from_matrix(task.gram(params))
    s0 = task.residuals(params)
    eta = cfg["train"]["eta"]
    if eta is None:
        eta = pinn.default_pinn_eta(shape.n_d, shape.n)
    cfg["train"]["eta"] = eta
    full = task.is_full_batch(train_config(cfg, eta))
    radii = build_radii(cfg, shape, G0, float(np.linalg.norm(s0)))
    summary = {"eta": eta, "mode": "gd" if full else "sgd", "problem": problem.descriptor,
               "gram_init": G0.summary(), "radii": radii.to_dict()}
    try:
        final, traj = optim.train(params, task, train_config(cfg, eta), radii)
    except DivergenceError as exc:
        summary.update({"diverged": True, "divergence_step": exc.step,
                        "checks": {"no_divergence": False}})
        _write_run(out_dir, cfg, summary, exc.trajectory, G0)
        return summary
    ceiling = 1.0 - eta * G0.sigma_min / 2.0 if full else 1.0 - eta * G0.sigma_min
    summary.update(_trajectory_summary(traj, cfg, eta, G0.sigma_min, ceiling, full))
    # the regression ceiling is not a PINN acceptance check
    summary["checks"].pop("rate_ok", None)
    summary["checks"].pop("chi_bound", None)
    err = pinn.solution_error(final, problem, st["grid"])
    summary["solution_max_error"] = err
    if cfg["train"]["steps"] > 0:
        summary["checks"]["solution_error"] = err <= st["max_error"]
    _write_run(out_dir, cfg, summary, traj, G0)
    return summary


def run_gram_scaling(cfg, out_dir=None):
    st = cfg["study"]
    sweep = st["m_sweep"]
    if len(sweep) < 3:
        raise ConfigError("m_sweep needs at least 3 widths")
    if st["seeds"] < 2:
        raise ConfigError("study.seeds must be >= 2")
    shape = build_shape(cfg)
    data = build_dataset(cfg, shape)
    ref = ntk.estimate_G_infinity(shape.with_width(st["ginf_width"]), data, st["ginf_seeds"], base_seed=1_000_000)
    rows = []
    means = []
    for m in sweep:
        sh = shape.with_width(m)
        devs = [ntk.gram_deviation(ntk._closed_form_matrix(init_params(sh, s), data.X), ref.report)
                for s in range(st["seeds"])]
        mean, se = float(np.mean(devs)), float(np.std(devs, ddof=1) / math.sqrt(len(devs)))
        rows.append((m, mean, se))
        means.append(mean)
    slope, ci = loglog_slope(sweep, means)
    other = ntk.estimate_G_infinity(shape.with_width(sweep[0]), data, st["ginf_seeds"], base_seed=2_000_000)
    consistency = ntk.cross_width_consistency(ref, other)
    summary = {
        "rows": [{"m": r[0], "mean_deviation": r[1], "stderr": r[2]} for r in rows],
        "slope": slope,
        "slope_ci95": ci,
        "ginf_sigma_min": ref.report.sigma_min,
        "ginf_spectral_stderr": ref.spectral_stderr,
        "cross_width": {"widths": [st["ginf_width"], sweep[0]], **consistency},
        "checks": {"slope_in_range": _in_range(slope, st["slope_range"])},
    }
    if out_dir:
        write_json(os.path.join(out_dir, "config.json"), cfg)
        write_rows(os.path.join(out_dir, "gram_scaling.csv"), ("m", "mean_deviation", "stderr"), rows)
        ref.report.write_csv(os.path.join(out_dir, "gram_init.csv"))
        write_json(os.path.join(out_dir, "summary.json"), _with_meta(summary, cfg))
    return summary


def run_lazy_scaling(cfg, out_dir=None):
    st = cfg["study"]
    sweep = st["m_sweep"]
    if len(sweep) < 3:
        raise ConfigError("m_sweep needs at least 3 widths")
    shape = build_shape(cfg)
    data = build_dataset(cfg, shape)
    eta = cfg["train"]["eta"] if cfg["train"]["eta"] is not None else optim.default_gd_eta(shape.n_d)
    tc = optim.TrainConfig(eta=eta, steps=st["lazy_steps"], loss_tolerance=st["lazy_tolerance"],
                           gram_every=0, chi_every=0)
    rows = []
    unconverged = []
    for m in sweep:
        sh = shape.with_width(m)
        unit, total = [], []
        for s in range(st["seeds"]):
            p0 = init_params(sh, s)
            final, traj = optim.train(p0, data, tc, record_chi=False)
            if st["lazy_steps"] > 0 and traj.loss[-1] > st["lazy_tolerance"]:
                unconverged.append({"m": m, "seed": s, "final_loss": traj.loss[-1]})
            unit.append(traj.final_unit_drift)
            total.append(traj.drift_c[-1])
        rows.append((m, float(np.mean(unit)), float(np.mean(total))))
    unit_means = [r[1] for r in rows]
    totals = [r[2] for r in rows]
    if min(unit_means) > 0:
        slope, ci = loglog_slope(sweep, unit_means)
        ratio = max(totals) / min(totals)
    else:
        slope, ci, ratio = None, None, None
    checks = {}
    if slope is not None:
        checks = {"slope_in_range": _in_range(slope, st["slope_range"]),
                  "total_drift_ratio": ratio <= st["drift_ratio"]}
    summary = {
        "eta": eta,
        "rows": [{"m": r[0], "max_unit_drift_c": r[1], "total_drift_c": r[2]} for r in rows],
        "slope": slope,
        "slope_ci95": ci,
        "total_drift_ratio": ratio,
        "unconverged": unconverged,
        "checks": checks,
    }
    if out_dir:
        write_json(os.path.join(out_dir, "config.json"), cfg)
        write_rows(os.path.join(out_dir, "lazy_scaling.csv"), ("m", "max_unit_drift_c", "total_drift_c"), rows)
        write_json(os.path.join(out_dir, "summary.json"), _with_meta(summary, cfg))
    return summary


def run_init_loss(cfg, out_dir=None):
    st = cfg["study"]
    seeds = st["seeds"]
    if seeds < 30:
        warnings.warn(f"{seeds} seeds per n_d is below the recommended 30; statistics are rough")
    rows = []
    for nd in st["nd_sweep"]:
        shape = build_shape(cfg, n_d=nd)
        data = build_dataset(cfg, shape)
        losses = []
        for s in range(seeds):
            params = init_params(shape, s)
            if cfg["data"]["target"] == "init":
                # targets copied from this very network
                data = Dataset(data.X, forward_batch(params, data.X))
            losses.append(optim.loss(params, data))
        rows.append((nd, float(np.median(losses)), float(np.percentile(losses, 95))))
    per = [r[1] / r[0] for r in rows]
    band = max(per) / min(per) if min(per) > 0 else None
    summary = {
        "rows": [{"n_d": r[0], "median_loss": r[1], "p95_loss": r[2]} for r in rows],
        "median_over_nd": per,
        "band_ratio": band,
        "checks": {} if band is None else {"band": band <= st["band"]},
    }
    if out_dir:
        write_json(os.path.join(out_dir, "config.json"), cfg)
        write_rows(os.path.join(out_dir, "init_loss.csv"), ("n_d", "median_loss", "p95_loss"), rows)
        write_json(os.path.join(out_dir, "summary.json"), _with_meta(summary, cfg))
    return summary


def run_sgd_expectation(cfg, out_dir=None):
    st = cfg["study"]
    shape, data, params = _regression_setup(cfg)
    G0 = ntk.gram_closed_form(params, data)
    s0 = optim.RegressionTask(data).residuals(params)
    t = cfg["train"]
    b = t["batch"] if t["batch"] is not None else data.N
    eta = t["eta"] if t["eta"] is not None else optim.default_sgd_eta(shape.n_d, b, data.N, G0.sigma_min)
    cfg["train"]["eta"] = eta
    radii = build_radii(cfg, shape, G0, float(np.linalg.norm(s0)))
    tc = train_config(cfg, eta)
    tc.loss_tolerance = 0.0
    rep = optim.expectation_harness(params, data, tc, st["num_runs"], radii, base_seed=t["seed"],
                                    workers=st["workers"])
    steps = np.arange(rep.mean.size)
    bound = st["bound_slack"] * (1.0 - eta * G0.sigma_min) ** steps * rep.mean[0]
    h = min(st["horizon"], rep.mean.size - 1)
    ratio = float(np.max(rep.mean[: h + 1] / bound[: h + 1]))
    summary = {
        "eta": eta,
        "sigma_min": G0.sigma_min,
        "num_runs": rep.num_runs,
        "frac_T_inf": rep.frac_T_inf,
        "max_ratio_to_bound": ratio,
        "radii": radii.to_dict(),
        "final_mean_loss": float(rep.mean[-1]),
        "checks": {"expectation_bound": ratio <= 1.0,
                   "T_inf_fraction": rep.frac_T_inf >= st["t_inf_fraction"]},
    }
    if out_dir:
        write_json(os.path.join(out_dir, "config.json"), cfg)
        cond = rep.conditional_mean if rep.conditional_mean is not None else np.full(rep.mean.size, np.nan)
        write_rows(os.path.join(out_dir, "expectation.csv"),
                   ("t", "mean_loss", "stderr", "conditional_mean", "bound"),
                   [(int(i), rep.mean[i], rep.stderr[i], cond[i], bound[i]) for i in steps])
        G0.write_csv(os.path.join(out_dir, "gram_init.csv"))
        write_json(os.path.join(out_dir, "summary.json"), _with_meta(summary, cfg))
    return summary


COMMANDS = {
    "gradcheck": run_gradcheck,
    "train": run_train,
    "gram-scaling": run_gram_scaling,
    "lazy-scaling": run_lazy_scaling,
    "init-loss": run_init_loss,
    "sgd-expectation": run_sgd_expectation,
    "pinn": run_pinn,
}


def output_dir(out, command):
    root = os.environ.get("KAN_NTK_OUTPUT_ROOT")
    if out is None:
        out = os.path.join(root or "runs", command)
    elif root and not os.path.isabs(out):
        out = os.path.join(root, out)
    os.makedirs(out, exist_ok=True)
    return out


def main(argv=None):
    parser = argparse.ArgumentParser(prog="kan-ntk", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="JSON config file (defaults apply when omitted)")
    parser.add_argument("--out", help="output directory (relative paths go under $KAN_NTK_OUTPUT_ROOT)")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.command) if args.config else resolve_config({}, args.command)
        if args.command == "pinn" and cfg["task"] != "pinn":
            raise ConfigError("the pinn command needs task = pinn")
        out = output_dir(args.out, args.command)
        summary = COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    checks = summary.get("checks", {})
    for name, ok in checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    if "worst_relative_error" in summary:
        for k, v in summary["worst_relative_error"].items():
            print(f"  {k}: {v:.3e}")
    print(f"artifacts in {out}")
    return 0 if all(checks.values()) else 1


if __name__ == "__main__":
    sys.exit(main())
