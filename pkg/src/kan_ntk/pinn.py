"""Physics-informed losses for linear second-order PDEs.

Coordinate 1 is time. The operator is

    D[u] = du/dx_1 - sum_{i,j>=2} h_ij d2u/dx_i dx_j - sum_{i>=2} g_i du/dx_i - l u

and the loss is (1/N1) sum (D[f](x_i) - v_i)^2 + (1/N2) sum (f(xb_i) - u_i)^2.
Residuals are ordered interior first, then boundary.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np

from .errors import ConfigError, ShapeError
from .model import (
    Dataset,
    KanParams,
    OperatorCoefficients,
    _OperatorParts,
    forward_batch,
    operator_apply,
    operator_jacobian,
    operator_vjp,
    weighted_param_grad,
)
from .ntk import DerivMatrix, GramReport, stack_columns
from .optim import TrainConfig, batch_weights, sample_batch

KINDS = ("heat1d", "advection1d")


@dataclass
class PdeProblem:
    """A linear PDE with sampled interior and boundary points.

    The coefficient callables are vectorised: each takes X of shape (N, n).
    ``h`` returns (N, n, n), ``g`` returns (N, n), ``l``, ``v`` and ``ubar``
    return (N,). Only entries with indices >= 2 (1-based) of h and g enter
    the operator. ``exact`` optionally returns (value, gradient, Hessian) of
    a known solution.
    """

    n: int
    h: Callable
    g: Callable
    l: Callable
    v: Callable
    ubar: Callable
    X_int: np.ndarray
    X_bnd: np.ndarray
    exact: Callable | None = None
    descriptor: dict | None = None

    def __post_init__(self):
        self.X_int = np.array(self.X_int, dtype=float, ndmin=2)
        self.X_bnd = np.array(self.X_bnd, dtype=float, ndmin=2)
        for X, name in ((self.X_int, "interior"), (self.X_bnd, "boundary")):
            if X.shape[0] < 1 or X.shape[1] != self.n:
                raise ShapeError(f"{name} samples must be (N >= 1, {self.n})")
            if not np.all(np.isfinite(X)):
                raise ValueError(f"{name} samples contain non-finite values")
        self.ops = operator_coefficients(self, self.X_int)
        self.v_int = np.asarray(self.v(self.X_int), dtype=float).reshape(-1)
        self.u_bnd = np.asarray(self.ubar(self.X_bnd), dtype=float).reshape(-1)
        self.X_int.setflags(write=False)
        self.X_bnd.setflags(write=False)
        self.interior = Dataset(self.X_int, self.v_int)
        self.boundary = Dataset(self.X_bnd, self.u_bnd)

    @property
    def N1(self):
        return self.X_int.shape[0]

    @property
    def N2(self):
        return self.X_bnd.shape[0]

    def to_json(self):
        if self.descriptor is None:
            raise ValueError("problem has no descriptor")
        return json.dumps(self.descriptor, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return make_manufactured_problem(d["kind"], d["N1"], d["N2"], d["seed"])


def operator_coefficients(problem: PdeProblem, X) -> OperatorCoefficients:
    """Coefficients of D at the rows of X in the generic operator form."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    N, n = X.shape
    if n != problem.n:
        raise ShapeError(f"points have dimension {n}, problem has {problem.n}")
    h = np.asarray(problem.h(X), dtype=float).reshape(N, n, n)
    if np.max(np.abs(h - h.transpose(0, 2, 1)), initial=0.0) > 0:
        raise ValueError("h must be symmetric")
    g = np.asarray(problem.g(X), dtype=float).reshape(N, n)
    l = np.asarray(problem.l(X), dtype=float).reshape(N)
    first = -g.copy()
    first[:, 0] = 1.0
    second = -h.copy()
    second[:, 0, :] = 0.0
    second[:, :, 0] = 0.0
    return OperatorCoefficients(-l, first, second)


def apply_operator(problem: PdeProblem, u, x):
    """D[u](x) for a callable ``u(X) -> (value, gradient, Hessian)``.

    ``x`` may be one point (n,) or a batch (N, n); the result has matching shape.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    ops = operator_coefficients(problem, X)
    val, grad, hess = u(X)
    val = np.asarray(val, dtype=float).reshape(X.shape[0])
    grad = np.asarray(grad, dtype=float).reshape(X.shape)
    hess = np.asarray(hess, dtype=float).reshape(X.shape[0], X.shape[1], X.shape[1])
    out = (ops.zeroth * val + np.einsum("ip,ip->i", ops.first, grad)
           + np.einsum("ipr,ipr->i", ops.second, hess))
    return float(out[0]) if single else out


def _residual_parts(params: KanParams, problem: PdeProblem):
    r_int = operator_apply(params, problem.X_int, problem.ops,
                           features=problem.interior.features(params.shape.inner_basis, 2)) - problem.v_int
    r_bnd = forward_batch(params, problem.X_bnd,
                          features=problem.boundary.features(params.shape.inner_basis, 0)) - problem.u_bnd
    return r_int, r_bnd


def pde_residuals(params: KanParams, problem: PdeProblem):
    """s = [r_int / sqrt(N1), r_bnd / sqrt(N2)], so the loss is sum s^2."""
    r_int, r_bnd = _residual_parts(params, problem)
    return np.concatenate([r_int / np.sqrt(problem.N1), r_bnd / np.sqrt(problem.N2)])


def pde_loss(params: KanParams, problem: PdeProblem) -> float:
    r_int, r_bnd = _residual_parts(params, problem)
    return float(np.mean(r_int ** 2) + np.mean(r_bnd ** 2))


def pde_loss_of_callable(problem: PdeProblem, u) -> float:
    """The PDE loss with the network replaced by a callable u(X) -> (value, grad, Hessian)."""
    r_int = apply_operator(problem, u, problem.X_int) - problem.v_int
    r_bnd = np.asarray(u(problem.X_bnd)[0]).reshape(-1) - problem.u_bnd
    return float(np.mean(r_int ** 2) + np.mean(r_bnd ** 2))


def _grad_on(params, problem, idx_int, w_int, idx_bnd, w_bnd):
    basis = params.shape.inner_basis
    ga, gc = operator_vjp(params, problem.X_int[idx_int], problem.ops.subset(idx_int), w_int,
                          features=problem.interior.features(basis, 2)[:, idx_int])
    gb_a, gb_c = weighted_param_grad(params, problem.X_bnd[idx_bnd], w_bnd,
                                     features=problem.boundary.features(basis, 0)[:, idx_bnd])
    return ga + gb_a, gc + gb_c


def _batch_grad(params, problem, I, Ib):
    ui, ci = batch_weights(I, problem.N1)
    ub, cb = batch_weights(Ib, problem.N2)
    basis = params.shape.inner_basis
    r_int = operator_apply(params, problem.X_int[ui], problem.ops.subset(ui),
                           features=problem.interior.features(basis, 2)[:, ui]) - problem.v_int[ui]
    r_bnd = forward_batch(params, problem.X_bnd[ub],
                          features=problem.boundary.features(basis, 0)[:, ub]) - problem.u_bnd[ub]
    return _grad_on(params, problem, ui, ci * r_int * (2.0 / len(I)),
                    ub, cb * r_bnd * (2.0 / len(Ib)))


def pde_loss_grad(params: KanParams, problem: PdeProblem):
    """(dL/da, dL/dc) of the full PDE loss."""
    return _batch_grad(params, problem, np.arange(problem.N1), np.arange(problem.N2))


@dataclass(frozen=True)
class PinnBatchConfig:
    """Interior and boundary batch sizes with b1/N1 = b2/N2 exactly."""

    b1: int
    b2: int
    N1: int
    N2: int

    def __post_init__(self):
        if not (1 <= self.b1 <= self.N1 and 1 <= self.b2 <= self.N2):
            raise ConfigError("batch sizes must satisfy 1 <= b1 <= N1 and 1 <= b2 <= N2")
        if Fraction(self.b1, self.N1) != Fraction(self.b2, self.N2):
            raise ConfigError(f"b1/N1 = {self.b1}/{self.N1} differs from b2/N2 = {self.b2}/{self.N2}")

    @classmethod
    def for_problem(cls, problem: PdeProblem, b1, b2):
        return cls(b1, b2, problem.N1, problem.N2)

    @property
    def is_full(self):
        return self.b1 == self.N1 and self.b2 == self.N2


def pde_minibatch_loss(params: KanParams, problem: PdeProblem, batch: PinnBatchConfig, rng,
                       replacement=True):
    """(1/b1) sum_I r_int^2 + (1/b2) sum_Ib r_bnd^2 and the sampled (I, Ib)."""
    I = sample_batch(problem.N1, batch.b1, rng, replacement)
    Ib = sample_batch(problem.N2, batch.b2, rng, replacement)
    return minibatch_loss_on(params, problem, I, Ib), (I, Ib)


def minibatch_loss_on(params, problem, I, Ib):
    r_int, r_bnd = _residual_parts(params, problem)
    return float(np.sum(r_int[np.asarray(I)] ** 2) / len(I) + np.sum(r_bnd[np.asarray(Ib)] ** 2) / len(Ib))


# ---------------------------------------------------------------------------
# Tangent-kernel matrices
# ---------------------------------------------------------------------------


def _all_points(problem):
    X = np.concatenate([problem.X_int, problem.X_bnd])
    ident = OperatorCoefficients.identity(problem.N2, problem.n)
    ops = OperatorCoefficients(
        np.concatenate([problem.ops.zeroth, ident.zeroth]),
        np.concatenate([problem.ops.first, ident.first]),
        np.concatenate([problem.ops.second, ident.second]),
    )
    scale = np.concatenate([np.full(problem.N1, 1.0 / np.sqrt(problem.N1)),
                            np.full(problem.N2, 1.0 / np.sqrt(problem.N2))])
    return X, ops, scale


def assemble_pinn_D(params: KanParams, problem: PdeProblem) -> DerivMatrix:
    """P x (N1 + N2) matrix of residual gradients, interior columns first."""
    basis = params.shape.inner_basis
    Ga, Gc = operator_jacobian(params, problem.X_int, problem.ops,
                               features=problem.interior.features(basis, 2))
    Da = stack_columns(Ga, Gc, 1.0 / np.sqrt(problem.N1))
    Ga, Gc = operator_jacobian(params, problem.X_bnd, OperatorCoefficients.identity(problem.N2, problem.n),
                               features=problem.boundary.features(basis, 0))
    Db = stack_columns(Ga, Gc, 1.0 / np.sqrt(problem.N2))
    return DerivMatrix(np.concatenate([Da, Db], axis=1), params.shape, num_interior=problem.N1)


def pinn_gram_blocked(params: KanParams, problem: PdeProblem) -> np.ndarray:
    """Gram matrix from per-unit inner products, without forming D.

    Per unit q the a-gradient of sample i is
    gamma_iq B0_i + F'_iq E_i + W_iq (x) B1_i with W_iqp = 2 F''_iq (M J)_iqp,
    so <Ga_iq, Ga_jq> expands into sample-pair inner products of B0, E, B1
    weighted by per-unit scalars.
    """
    X, ops, scale = _all_points(problem)
    m = params.shape.m
    p = _OperatorParts(params, X, ops, need_grad=True)
    N = X.shape[0]
    u = p.gamma()
    v = p.F[1] if p.level >= 1 else np.zeros_like(u)
    B0 = p.B[0]
    G = (u @ u.T) * np.einsum("ipk,jpk->ij", B0, B0)
    if p.level >= 1:
        E = p.E
        A0E = np.einsum("ipk,jpk->ij", B0, E)
        G += (u @ v.T) * A0E + (v @ u.T) * A0E.T + (v @ v.T) * np.einsum("ipk,jpk->ij", E, E)
    if p.level >= 2:
        B1 = p.B[1]
        W = 2.0 * p.F[2][:, :, None] * p.MJ  # (N, m, n)
        B0B1 = np.einsum("ipk,jpk->ijp", B0, B1)
        EB1 = np.einsum("ipk,jpk->ijp", E, B1)
        P1 = np.einsum("ipk,jpk->ijp", B1, B1)
        uW = np.einsum("iq,jqp->ijp", u, W)
        vW = np.einsum("iq,jqp->ijp", v, W)
        cross = np.sum(uW * B0B1, axis=2) + np.sum(vW * EB1, axis=2)
        G += cross + cross.T
        G += np.einsum("iqp,jqp,ijp->ij", W, W, P1, optimize=True)
    C = p.c_terms().reshape(N, -1)
    G += C @ C.T
    G /= m
    return G * np.outer(scale, scale)


def pinn_gram(params: KanParams, problem: PdeProblem) -> GramReport:
    D = assemble_pinn_D(params, problem).entries
    return GramReport.from_matrix(D.T @ D)


# ---------------------------------------------------------------------------
# Training task
# ---------------------------------------------------------------------------


class PinnTask:
    """Physics-informed loss plugged into :func:`kan_ntk.optim.train`.

    ``TrainConfig.batch`` is b1 and ``TrainConfig.batch_boundary`` is b2.
    """

    def __init__(self, problem: PdeProblem):
        self.problem = problem

    @property
    def num_residuals(self):
        return self.problem.N1 + self.problem.N2

    def residuals(self, params):
        return pde_residuals(params, self.problem)

    def loss(self, params):
        return pde_loss(params, self.problem)

    def full_grad(self, params):
        return pde_loss_grad(params, self.problem)

    def batch_grad(self, params, batch):
        I, Ib = batch
        return _batch_grad(params, self.problem, I, Ib)

    def grad_from_residuals(self, params, s):
        """Full-loss gradient reusing already computed residuals s."""
        pr = self.problem
        w_int = s[: pr.N1] * (2.0 / np.sqrt(pr.N1))
        w_bnd = s[pr.N1 :] * (2.0 / np.sqrt(pr.N2))
        return _grad_on(params, pr, np.arange(pr.N1), w_int, np.arange(pr.N2), w_bnd)

    def batch_config(self, config: TrainConfig):
        b1 = self.problem.N1 if config.batch is None else config.batch
        b2 = self.problem.N2 if config.batch_boundary is None else config.batch_boundary
        return PinnBatchConfig.for_problem(self.problem, b1, b2)

    def is_full_batch(self, config: TrainConfig):
        return self.batch_config(config).is_full

    def sample(self, rng, config: TrainConfig):
        bc = self.batch_config(config)
        I = sample_batch(self.problem.N1, bc.b1, rng, config.replacement)
        Ib = sample_batch(self.problem.N2, bc.b2, rng, config.replacement)
        return I, Ib

    def jacobian(self, params):
        return assemble_pinn_D(params, self.problem).entries.T

    def gram(self, params):
        return pinn_gram_blocked(params, self.problem)


# ---------------------------------------------------------------------------
# Manufactured problems
# ---------------------------------------------------------------------------


def _zeros_h(X):
    return np.zeros((X.shape[0], X.shape[1], X.shape[1]))


def _heat_exact(X):
    t, xi = X[:, 0], X[:, 1]
    e, s, c = np.exp(-t), np.sin(np.pi * xi), np.cos(np.pi * xi)
    u = e * s
    grad = np.stack([-u, np.pi * e * c], axis=1)
    hess = np.empty((X.shape[0], 2, 2))
    hess[:, 0, 0] = u
    hess[:, 0, 1] = hess[:, 1, 0] = -np.pi * e * c
    hess[:, 1, 1] = -np.pi ** 2 * u
    return u, grad, hess


def _advection_exact(X):
    arg = np.pi * (X[:, 1] - X[:, 0])
    s, c = np.sin(arg), np.cos(arg)
    grad = np.stack([-np.pi * c, np.pi * c], axis=1)
    hess = np.empty((X.shape[0], 2, 2))
    hess[:, 0, 0] = hess[:, 1, 1] = -np.pi ** 2 * s
    hess[:, 0, 1] = hess[:, 1, 0] = np.pi ** 2 * s
    return s, grad, hess


def _interior_points(rng, N):
    X = rng.uniform(0.0, 1.0, size=(N, 2))
    bad = np.any((X <= 0.0) | (X >= 1.0), axis=1)
    while np.any(bad):
        X[bad] = rng.uniform(0.0, 1.0, size=(int(bad.sum()), 2))
        bad = np.any((X <= 0.0) | (X >= 1.0), axis=1)
    return X


def _boundary_points(rng, N):
    """Points on the faces t = 0, xi = 0 and xi = 1, assigned round-robin."""
    pos = rng.uniform(0.0, 1.0, size=N)
    X = np.empty((N, 2))
    for i in range(N):
        face = i % 3
        if face == 0:
            X[i] = (0.0, pos[i])
        elif face == 1:
            X[i] = (pos[i], 0.0)
        else:
            X[i] = (pos[i], 1.0)
    return X


def make_manufactured_problem(kind: str, N1: int, N2: int, seed: int) -> PdeProblem:
    """Problem on [0,1]^2 with coordinates (t, xi) and a known exact solution.

    heat1d: u = exp(-t) sin(pi xi), h_22 = 1/pi^2, so D[u] = 0.
    advection1d: u = sin(pi (xi - t)), g_2 = -1, so D[u] = 0.
    Boundary data covers the initial face t = 0 and both spatial faces.
    """
    if kind not in KINDS:
        raise ValueError(f"unsupported problem kind {kind!r}; expected one of {KINDS}")
    if N1 < 1 or N2 < 1:
        raise ValueError("N1 and N2 must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    X_int = _interior_points(rng, N1)
    X_bnd = _boundary_points(rng, N2)
    zero = lambda X: np.zeros(X.shape[0])  # noqa: E731
    if kind == "heat1d":
        def h(X):
            out = _zeros_h(X)
            out[:, 1, 1] = 1.0 / np.pi ** 2
            return out

        g = lambda X: np.zeros(X.shape)  # noqa: E731
        exact = _heat_exact
    else:
        h = _zeros_h

        def g(X):
            out = np.zeros(X.shape)
            out[:, 1] = -1.0
            return out

        exact = _advection_exact
    return PdeProblem(
        n=2, h=h, g=g, l=zero, v=zero, ubar=lambda X: exact(X)[0],
        X_int=X_int, X_bnd=X_bnd, exact=exact,
        descriptor={"kind": kind, "N1": int(N1), "N2": int(N2), "seed": int(seed)},
    )


def solution_error(params: KanParams, problem: PdeProblem, grid=32):
    """max |f - u_exact| on a grid x grid lattice of [0,1]^2."""
    if problem.exact is None:
        raise ValueError("problem has no exact solution")
    g = np.linspace(0.0, 1.0, grid)
    T, Xi = np.meshgrid(g, g, indexing="ij")
    P = np.stack([T.ravel(), Xi.ravel()], axis=1)
    return float(np.max(np.abs(forward_batch(params, P) - problem.exact(P)[0])))


def default_pinn_eta(n_d, n):
    return 0.05 / (n_d ** 3 * n ** 4)
