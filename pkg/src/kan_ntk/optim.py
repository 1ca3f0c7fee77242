"""GD and SGD trainers with trajectory instrumentation.

A *task* supplies the residual vector s (loss = sum s_i^2), the gradient of the
full or mini-batch loss, and the Jacobian ds/dtheta. :class:`RegressionTask`
covers the squared-error loss; the physics-informed task lives in
:mod:`kan_ntk.pinn` and plugs into the same trainer.

Mini-batches are index multisets drawn with replacement. Gradients are always
accumulated over the sorted unique indices with multiplicity weights, so a
batch that enumerates every sample once performs exactly the floating-point
operations of a full GD step.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError, ShapeError
from .model import (
    Dataset,
    KanParams,
    forward_batch,
    param_grad_batch,
    residuals,
    weighted_param_grad,
)
from .ntk import LazyRadii, stack_columns, sym_eig, _closed_form_matrix

CSV_COLUMNS = ("t", "loss", "drift_a", "drift_c", "max_cq", "contraction", "sigma_min", "chi_norm", "T_flag")


@dataclass
class TrainConfig:
    """Trainer settings.

    ``batch=None`` means full batch (GD). ``batch_boundary`` is the boundary
    batch size for physics-informed tasks. ``seed`` drives batch sampling and
    ``init_seed`` the parameter draw, so the two sources of randomness can be
    varied independently. A positive ``loss_tolerance`` stops training once
    the loss reaches it; zero disables early stopping.
    """

    eta: float
    steps: int
    batch: int | None = None
    batch_boundary: int | None = None
    seed: int = 0
    init_seed: int = 0
    loss_tolerance: float = 0.0
    gram_every: int = 10
    chi_every: int = 10
    replacement: bool = True

    def __post_init__(self):
        if not (self.eta >= 0 and math.isfinite(self.eta)):
            raise ConfigError("eta must be finite and >= 0")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.batch is not None and self.batch < 1:
            raise ConfigError("batch must be >= 1")
        if self.loss_tolerance < 0:
            raise ConfigError("loss_tolerance must be >= 0")
        if self.gram_every < 0 or self.chi_every < 0:
            raise ConfigError("cadences must be >= 0")

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def sample_batch(N, b, rng, replacement=True):
    """b indices in [0, N), i.i.d. uniform (or a uniform subset without replacement)."""
    if not 1 <= b <= N:
        raise ValueError(f"batch size {b} outside [1, {N}]")
    if replacement:
        return rng.integers(0, N, size=b)
    return rng.choice(N, size=b, replace=False)


def batch_weights(idx, N):
    """Sorted unique indices and their multiplicities."""
    counts = np.bincount(np.asarray(idx), minlength=N)
    uniq = np.flatnonzero(counts)
    return uniq, counts[uniq].astype(float)


# ---------------------------------------------------------------------------
# Regression task
# ---------------------------------------------------------------------------


class RegressionTask:
    """Squared-error loss (1/N) sum (f(x_i) - y_i)^2."""

    def __init__(self, data: Dataset):
        self.data = data

    @property
    def num_residuals(self):
        return self.data.N

    def residuals(self, params):
        return residuals(params, self.data)

    def loss(self, params):
        s = self.residuals(params)
        return float(s @ s)

    def _grad_on(self, params, idx, counts, b):
        X = self.data.X[idx]
        feats = self.data.features(params.shape.inner_basis, 0)[:, idx]
        f = forward_batch(params, X, features=feats)
        w = counts * (f - self.data.y[idx]) * (2.0 / b)
        return weighted_param_grad(params, X, w, features=feats)

    def full_grad(self, params):
        N = self.data.N
        return self._grad_on(params, np.arange(N), np.ones(N), N)

    def batch_grad(self, params, batch):
        uniq, counts = batch_weights(batch, self.data.N)
        return self._grad_on(params, uniq, counts, len(batch))

    def grad_from_residuals(self, params, s):
        """Full-loss gradient reusing already computed residuals s."""
        N = self.data.N
        return weighted_param_grad(params, self.data.X, s * (2.0 / np.sqrt(N)),
                                   features=self.data.features(params.shape.inner_basis, 0))

    def sample(self, rng, config: TrainConfig):
        return sample_batch(self.data.N, config.batch, rng, config.replacement)

    def is_full_batch(self, config: TrainConfig):
        return config.batch is None or config.batch == self.data.N

    def jacobian(self, params):
        """D^T: row i is ds_i/dtheta (a block then c block)."""
        Ga, Gc = param_grad_batch(params, self.data.X,
                                  features=self.data.features(params.shape.inner_basis, 0))
        return stack_columns(Ga, Gc, 1.0 / np.sqrt(self.data.N)).T

    def gram(self, params):
        return _closed_form_matrix(params, self.data.X)


# ---------------------------------------------------------------------------
# Losses and steps
# ---------------------------------------------------------------------------


def loss(params: KanParams, data: Dataset) -> float:
    """(1/N) sum_i (f(x_i) - y_i)^2."""
    return RegressionTask(data).loss(params)


def _apply(params, grad, eta):
    ga, gc = grad
    if not (np.all(np.isfinite(ga)) and np.all(np.isfinite(gc))):
        raise DivergenceError("non-finite gradient", step=None, trajectory=None)
    return params.replace(a=params.a - eta * ga, c=params.c - eta * gc)


def gd_step(params: KanParams, data, eta: float) -> KanParams:
    """theta <- theta - eta dL/dtheta over the full dataset (or task)."""
    task = data if hasattr(data, "full_grad") else RegressionTask(data)
    return _apply(params, task.full_grad(params), eta)


def sgd_step(params: KanParams, data, eta: float, batch) -> KanParams:
    """theta <- theta - eta dL~/dtheta for the mini-batch loss over ``batch``."""
    task = data if hasattr(data, "batch_grad") else RegressionTask(data)
    if len(batch) == 0:
        raise ValueError("empty batch")
    return _apply(params, task.batch_grad(params, batch), eta)


# ---------------------------------------------------------------------------
# Linearisation error
# ---------------------------------------------------------------------------


def compute_chi(params_t: KanParams, params_t1: KanParams, data, residuals_t=None, residuals_t1=None):
    """chi = s(t+1) - s(t) - <ds(t)/dtheta, theta(t+1) - theta(t)>.

    Returns ``(chi, ||chi||_2)``.
    """
    if params_t.shape != params_t1.shape:
        raise ShapeError("parameter snapshots have different shapes")
    task = data if hasattr(data, "jacobian") else RegressionTask(data)
    s0 = task.residuals(params_t) if residuals_t is None else np.asarray(residuals_t)
    s1 = task.residuals(params_t1) if residuals_t1 is None else np.asarray(residuals_t1)
    delta = params_t1.to_vector() - params_t.to_vector()
    chi = s1 - s0 - task.jacobian(params_t) @ delta
    return chi, float(np.linalg.norm(chi))


# ---------------------------------------------------------------------------
# Trajectory
# ---------------------------------------------------------------------------


@dataclass
class TrajectoryRecord:
    """Per-step telemetry of one run. NaN marks a quantity not measured at that step."""

    t: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    drift_a: list = field(default_factory=list)
    drift_c: list = field(default_factory=list)
    max_cq: list = field(default_factory=list)
    contraction: list = field(default_factory=list)
    sigma_min: list = field(default_factory=list)
    chi_norm: list = field(default_factory=list)
    residual_norm: list = field(default_factory=list)
    stopping_time: float = math.inf
    final_unit_drift: float = 0.0

    def append(self, **kw):
        for k, v in kw.items():
            getattr(self, k).append(v)

    def __len__(self):
        return len(self.t)

    def losses(self):
        return np.asarray(self.loss)

    def T_flags(self):
        return [int(t >= self.stopping_time) for t in self.t]

    def rows(self):
        flags = self.T_flags()
        for i in range(len(self)):
            yield (
                self.t[i], self.loss[i], self.drift_a[i], self.drift_c[i], self.max_cq[i],
                self.contraction[i], self.sigma_min[i], self.chi_norm[i], flags[i],
            )

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write("# schema=1\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for row in self.rows():
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:-1]] + [row[-1]])

    def is_monotone(self):
        L = self.losses()
        return bool(np.all(L[1:] <= L[:-1]))


def _gram_sigma_min(task, params):
    return float(sym_eig(task.gram(params))[0])


def train(params: KanParams, data, config: TrainConfig, radii: LazyRadii | None = None,
          record_chi=True):
    """Run GD (full batch) or SGD and record the trajectory.

    ``data`` is a :class:`Dataset` or a task object. Returns
    ``(final params, TrajectoryRecord)``. Raises :class:`DivergenceError` on a
    non-finite loss or gradient, carrying the offending step and the
    trajectory so far.
    """
    task = data if hasattr(data, "full_grad") else RegressionTask(data)
    full = task.is_full_batch(config)
    rng = np.random.Generator(np.random.PCG64(config.seed))
    a0, c0 = params.a, params.c
    traj = TrajectoryRecord()
    s = task.residuals(params)
    cur_loss = float(s @ s)
    prev_loss = None
    current = params

    for t in range(config.steps + 1):
        if not math.isfinite(cur_loss):
            raise DivergenceError(f"non-finite loss at step {t}", step=t, trajectory=traj)
        drift_a = float(np.linalg.norm(current.a - a0))
        drift_c = float(np.linalg.norm(current.c - c0))
        max_cq = float(np.max(current.unit_c_norms()))
        contraction = cur_loss / prev_loss if prev_loss else math.nan
        sig = math.nan
        if config.gram_every and t % config.gram_every == 0:
            sig = _gram_sigma_min(task, current)
        if radii is not None and traj.stopping_time == math.inf:
            if drift_a > radii.R_a / 2 or drift_c > radii.R_c / 2 or max_cq > radii.M_c / 2:
                traj.stopping_time = t
        traj.append(t=t, loss=cur_loss, drift_a=drift_a, drift_c=drift_c, max_cq=max_cq,
                    contraction=contraction, sigma_min=sig, chi_norm=math.nan,
                    residual_norm=float(np.linalg.norm(s)))
        if t == config.steps or (config.loss_tolerance > 0 and cur_loss <= config.loss_tolerance):
            break

        try:
            if full:
                grad = task.grad_from_residuals(current, s)
            else:
                grad = task.batch_grad(current, task.sample(rng, config))
            nxt = _apply(current, grad, config.eta)
        except DivergenceError as exc:
            raise DivergenceError(str(exc), step=t, trajectory=traj) from None
        s_next = task.residuals(nxt)
        if record_chi and config.chi_every and t % config.chi_every == 0:
            _, traj.chi_norm[-1] = compute_chi(current, nxt, task, s, s_next)
        current, s = nxt, s_next
        prev_loss, cur_loss = cur_loss, float(s @ s)

    traj.final_unit_drift = float(np.max(np.linalg.norm(current.c - c0, axis=1)))
    return current, traj


# ---------------------------------------------------------------------------
# Rate fitting and multi-run statistics
# ---------------------------------------------------------------------------


@dataclass
class ContractionFit:
    rho_hat: float
    steps_used: int
    theory_ceiling: float | None = None

    def within(self, slack=0.02):
        return self.theory_ceiling is None or self.rho_hat <= self.theory_ceiling + slack


def fit_contraction(losses, eta=None, sigma_min=None, floor=1e-14):
    """Geometric-mean per-step ratio over the prefix of the series above ``floor``.

    With ``eta`` and ``sigma_min`` the fit also carries the ceiling
    1 - eta sigma_min / 2.
    """
    L = np.asarray(losses, dtype=float)
    above = np.flatnonzero(L <= floor)
    end = above[0] if above.size else L.size
    L = L[:end]
    if L.size < 10:
        raise ValueError("need at least 10 steps with loss above the floor")
    steps = L.size - 1
    rho = math.exp((math.log(L[-1]) - math.log(L[0])) / steps)
    ceiling = None if eta is None or sigma_min is None else 1.0 - eta * sigma_min / 2.0
    return ContractionFit(rho, steps, ceiling)


@dataclass
class ExpectationReport:
    mean: np.ndarray
    stderr: np.ndarray
    frac_T_inf: float
    conditional_mean: np.ndarray | None
    num_runs: int
    curves: np.ndarray


def expectation_harness(params: KanParams, data, config: TrainConfig, num_runs: int,
                        radii: LazyRadii | None = None, base_seed: int = 0, workers: int = 1):
    """Average SGD loss curves over batch seeds ``base_seed ..`` at a fixed init.

    Runs are independent and may execute on ``workers`` threads; results are
    merged by run index. Runs stopping early on the tolerance are padded with
    their final loss.
    """
    if num_runs < 1:
        raise ValueError("num_runs must be >= 1")
    cfg = TrainConfig(**{**config.to_dict(), "gram_every": 0, "chi_every": 0})

    def one(r):
        run_cfg = TrainConfig(**{**cfg.to_dict(), "seed": base_seed + r})
        _, traj = train(params, data, run_cfg, radii, record_chi=False)
        return traj

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            trajs = list(pool.map(one, range(num_runs)))
    else:
        trajs = [one(r) for r in range(num_runs)]
    length = config.steps + 1
    curves = np.empty((num_runs, length))
    for r, tr in enumerate(trajs):
        L = tr.losses()
        curves[r, : L.size] = L
        curves[r, L.size :] = L[-1]
    mean = curves.mean(axis=0)
    stderr = curves.std(axis=0, ddof=1) / np.sqrt(num_runs) if num_runs > 1 else np.zeros(length)
    good = np.array([tr.stopping_time == math.inf for tr in trajs])
    cond = curves[good].mean(axis=0) if good.any() else None
    return ExpectationReport(mean, stderr, float(good.mean()), cond, num_runs, curves)


def default_gd_eta(n_d):
    return 0.1 / n_d


def default_sgd_eta(n_d, b, N, sigma_min):
    return 0.1 * (b / N) * sigma_min / n_d ** 2
