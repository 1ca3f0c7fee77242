"""Two-layer KAN: parameters, initialisation, forward pass and exact derivatives.

The network is

    f(x; a, c) = m^{-1/2} sum_q sum_k c[q, k] b_k(phi(z_q(x))),
    z_q(x)     = sum_p sum_k a[q, p, k] b_k(x_p).

``a`` is stored as an ``(m, n, n_d)`` array and ``c`` as ``(m, n_d)``. The
flat parameter vector is ``a`` row-major followed by ``c`` row-major.

All derivative code works on batches of points. A linear differential
operator

    (L f)(x) = e0(x) f(x) + sum_p w_p(x) df/dx_p + sum_{p,r} M_pr(x) d2f/dx_p dx_r

is described by :class:`OperatorCoefficients`; regression is the identity
operator (e0 = 1, w = 0, M = 0). Writing F_q(z) = sum_k c[q,k] b_k(phi(z)),
J_qp = dz_q/dx_p and K_qp = d2z_q/dx_p^2, the operator applied to the network is

    (L f)(x) = m^{-1/2} sum_q [e0 F_q + alpha_q F_q' + beta_q F_q'']

with alpha_q = w.J_q + diag(M).K_q and beta_q = J_q^T M J_q, which makes both
parameter gradients closed-form.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .basis import (
    BasisSpec,
    TransformSpec,
    basis_values,
    composed_values,
    transform_values,
)
from .errors import ShapeError, StaleCacheError

_tags = itertools.count(1)


@dataclass(frozen=True)
class KanShape:
    n: int
    m: int
    n_d: int
    inner_basis: BasisSpec
    outer_basis: BasisSpec
    transform: TransformSpec

    def __post_init__(self):
        for name in ("n", "m", "n_d"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ShapeError(f"{name} must be a positive integer, got {v}")
        if self.inner_basis.count != self.n_d or self.outer_basis.count != self.n_d:
            raise ShapeError("inner and outer basis counts must both equal n_d")

    @classmethod
    def create(cls, n, m, n_d, basis="chebyshev", transform="tanh", **basis_kw):
        """Shape with the same basis family on both layers.

        For the RBF and B-spline families the outer basis lives on the image of
        the transform and the inner basis on [-1, 1].
        """
        tf = TransformSpec(transform)
        if basis == "chebyshev":
            inner = outer = BasisSpec.chebyshev(n_d)
        elif basis == "monomial":
            inner = outer = BasisSpec.monomial(n_d)
        elif basis in ("rbf", "bspline"):
            lo, hi = tf.image
            if not np.isfinite(lo):
                lo, hi = -1.0, 1.0
            make = BasisSpec.rbf if basis == "rbf" else BasisSpec.bspline
            inner = make(n_d, **basis_kw)
            outer = make(n_d, lo=lo, hi=hi, **basis_kw)
        else:
            raise ValueError(f"unknown basis family {basis!r}")
        return cls(n, m, n_d, inner, outer, tf)

    def with_width(self, m):
        return KanShape(self.n, m, self.n_d, self.inner_basis, self.outer_basis, self.transform)

    @property
    def num_a(self):
        return self.m * self.n * self.n_d

    @property
    def num_c(self):
        return self.m * self.n_d

    @property
    def num_params(self):
        return self.num_a + self.num_c


class KanParams:
    """Trainable tensors a (m, n, n_d) and c (m, n_d).

    Instances are immutable values: the arrays are read-only and every
    instance carries a unique monotone ``tag`` used to validate caches.
    """

    __slots__ = ("a", "c", "shape", "tag")

    def __init__(self, a, c, shape: KanShape):
        a = np.array(a, dtype=float)
        c = np.array(c, dtype=float)
        if a.shape != (shape.m, shape.n, shape.n_d):
            raise ShapeError(f"a has shape {a.shape}, expected {(shape.m, shape.n, shape.n_d)}")
        if c.shape != (shape.m, shape.n_d):
            raise ShapeError(f"c has shape {c.shape}, expected {(shape.m, shape.n_d)}")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(c))):
            raise ValueError("parameters must be finite")
        a.flags.writeable = False
        c.flags.writeable = False
        self.a = a
        self.c = c
        self.shape = shape
        self.tag = next(_tags)

    def __repr__(self):
        s = self.shape
        return f"KanParams(n={s.n}, m={s.m}, n_d={s.n_d}, tag={self.tag})"

    def replace(self, a=None, c=None):
        return KanParams(self.a if a is None else a, self.c if c is None else c, self.shape)

    def to_vector(self):
        return np.concatenate([self.a.ravel(), self.c.ravel()])

    @classmethod
    def from_vector(cls, shape: KanShape, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (shape.num_params,):
            raise ShapeError(f"expected {shape.num_params} parameters, got {theta.shape}")
        a = theta[: shape.num_a].reshape(shape.m, shape.n, shape.n_d)
        c = theta[shape.num_a :].reshape(shape.m, shape.n_d)
        return cls(a, c, shape)

    def save(self, path):
        """Write the flat vector; ``.npy`` is binary, anything else is text."""
        path = str(path)
        if path.endswith(".npy"):
            np.save(path, self.to_vector())
        else:
            np.savetxt(path, self.to_vector(), fmt="%.17g")

    @classmethod
    def load(cls, shape: KanShape, path):
        path = str(path)
        theta = np.load(path) if path.endswith(".npy") else np.loadtxt(path, ndmin=1)
        return cls.from_vector(shape, theta)

    def unit_c_norms(self):
        return np.sqrt(np.sum(self.c * self.c, axis=1))


def init_params(shape: KanShape, seed: int) -> KanParams:
    """NTK initialisation: every entry i.i.d. N(0, 1).

    The generator is numpy's PCG64 seeded with ``seed``; ``a`` is drawn first
    (row-major), then ``c``.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    a = rng.standard_normal((shape.m, shape.n, shape.n_d))
    c = rng.standard_normal((shape.m, shape.n_d))
    return KanParams(a, c, shape)


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    _features: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.X = np.array(self.X, dtype=float)
        self.y = np.array(self.y, dtype=float).reshape(-1)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise ShapeError("X must be (N, n) with N equal to len(y)")
        if self.X.shape[0] < 1:
            raise ShapeError("dataset needs at least one sample")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise ValueError("dataset contains non-finite entries")
        self.X.flags.writeable = False
        self.y.flags.writeable = False

    @property
    def N(self):
        return self.X.shape[0]

    @property
    def n(self):
        return self.X.shape[1]

    def subset(self, idx):
        idx = np.asarray(idx)
        return Dataset(self.X[idx], self.y[idx])

    def features(self, spec: BasisSpec, max_order=0):
        """Inner basis values at every sample, memoised per (spec, order)."""
        key = (spec, max_order)
        if key not in self._features:
            self._features[key] = basis_values(spec, self.X, max_order)
        return self._features[key]


def _check_points(shape, X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != shape.n:
        raise ShapeError(f"inputs must have {shape.n} columns, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite input")
    return X


def _inner(shape, X, max_order, features=None):
    if features is not None and features.shape[0] > max_order:
        return features
    return basis_values(shape.inner_basis, X, max_order)


def preactivations(params: KanParams, B0):
    """z[i, q] = sum_{p,k} a[q, p, k] B0[i, p, k]."""
    N = B0.shape[0]
    return B0.reshape(N, -1) @ params.a.reshape(params.shape.m, -1).T


def _use_kernel(shape):
    return shape.outer_basis.is_polynomial


# ---------------------------------------------------------------------------
# Identity operator (plain network output): hot path
# ---------------------------------------------------------------------------


def forward_batch(params: KanParams, X, features=None):
    """Network output at every row of X."""
    shape = params.shape
    X = _check_points(shape, X)
    B = _inner(shape, X, 0, features)
    if _use_kernel(shape):
        f, _ = _backend.kernels.kan_forward(
            params.a, params.c, np.ascontiguousarray(B[0]),
            _backend.family_code(shape.outer_basis), _backend.transform_code(shape.transform),
        )
        return f
    z = preactivations(params, B[0])
    phi0 = composed_values(shape.outer_basis, shape.transform, z, 0)[0]
    return np.sum(np.sum(phi0 * params.c, axis=-1), axis=-1) / np.sqrt(shape.m)


def weighted_param_grad(params: KanParams, X, w, features=None):
    """sum_i w_i df(x_i)/d(a, c), returned as (ga, gc)."""
    shape = params.shape
    X = _check_points(shape, X)
    w = np.asarray(w, dtype=float)
    B = _inner(shape, X, 0, features)
    if _use_kernel(shape):
        return _backend.kernels.kan_vjp(
            params.a, params.c, np.ascontiguousarray(B[0]), np.ascontiguousarray(w),
            _backend.family_code(shape.outer_basis), _backend.transform_code(shape.transform),
        )
    return operator_vjp(params, X, OperatorCoefficients.identity(X.shape[0], shape.n), w,
                        features=B)


def param_grad_batch(params: KanParams, X, features=None):
    """Per-sample gradients: (N, m, n, n_d) and (N, m, n_d)."""
    shape = params.shape
    X = _check_points(shape, X)
    return operator_jacobian(params, X, OperatorCoefficients.identity(X.shape[0], shape.n),
                             features=features)


# ---------------------------------------------------------------------------
# Single-point API with an explicit forward cache
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ForwardCache:
    """Intermediate values of one forward pass.

    ``phi`` stacks phi(z), phi'(z), phi''(z) per unit; ``outer`` holds the
    per-unit outer sums F_q = sum_k c[q,k] b_k(phi(z_q)).
    """

    tag: int
    x: np.ndarray
    z: np.ndarray
    phi: np.ndarray
    outer: np.ndarray


def forward(params: KanParams, x):
    shape = params.shape
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != shape.n:
        raise ShapeError(f"input has length {x.shape[0]}, expected {shape.n}")
    X = _check_points(shape, x)
    B = basis_values(shape.inner_basis, X, 0)
    z = preactivations(params, B[0])[0]
    phi = transform_values(shape.transform, z, 2)
    outer = np.sum(composed_values(shape.outer_basis, shape.transform, z, 0)[0] * params.c, axis=-1)
    value = float(np.sum(outer) / np.sqrt(shape.m))
    x_copy = x.copy()
    x_copy.flags.writeable = False
    return value, ForwardCache(params.tag, x_copy, z, phi, outer)


def _check_cache(params, x, cache):
    if cache.tag != params.tag:
        raise StaleCacheError("forward cache was produced by different parameters")
    if x is not None and not np.array_equal(np.asarray(x, dtype=float).reshape(-1), cache.x):
        raise StaleCacheError("forward cache was produced at a different input")


def param_grad(params: KanParams, x, cache: ForwardCache):
    """Exact (df/da, df/dc) at one point; shapes (m, n, n_d) and (m, n_d)."""
    _check_cache(params, x, cache)
    shape = params.shape
    B0 = basis_values(shape.inner_basis, cache.x, 0)[0]  # (n, n_d)
    Phi = composed_values(shape.outer_basis, shape.transform, cache.z, 1)  # (2, m, n_d)
    slope = np.sum(Phi[1] * params.c, axis=-1)
    scale = 1.0 / np.sqrt(shape.m)
    ga = scale * slope[:, None, None] * B0[None, :, :]
    gc = scale * Phi[0]
    return ga, gc


def input_derivatives(params: KanParams, x, max_order=2):
    """Exact gradient (n,) and, for ``max_order=2``, Hessian (n, n) in x."""
    if max_order not in (1, 2):
        raise ValueError("max_order must be 1 or 2")
    _, grad, hess = input_derivatives_batch(params, x, max_order)
    if max_order == 1:
        return grad[0], None
    return grad[0], hess[0]


def input_derivatives_batch(params: KanParams, X, max_order=2, features=None):
    """Values (N,), gradients (N, n) and Hessians (N, n, n) (or None)."""
    shape = params.shape
    X = _check_points(shape, X)
    B = _inner(shape, X, max_order, features)
    z = preactivations(params, B[0])
    Phi = composed_values(shape.outer_basis, shape.transform, z, max_order)
    F = np.sum(Phi * params.c, axis=-1)
    scale = 1.0 / np.sqrt(shape.m)
    J = np.einsum("ipk,qpk->iqp", B[1], params.a)
    value = scale * np.sum(F[0], axis=1)
    grad = scale * np.einsum("iq,iqp->ip", F[1], J)
    if max_order == 1:
        return value, grad, None
    K = np.einsum("ipk,qpk->iqp", B[2], params.a)
    hess = np.einsum("iq,iqp,iqr->ipr", F[2], J, J)
    diag = np.einsum("iq,iqp->ip", F[1], K)
    idx = np.arange(shape.n)
    hess[:, idx, idx] += diag
    hess *= scale
    return value, grad, hess


# ---------------------------------------------------------------------------
# General linear operators
# ---------------------------------------------------------------------------


@dataclass
class OperatorCoefficients:
    """Pointwise coefficients of a linear second-order operator.

    zeroth: (N,), first: (N, n), second: (N, n, n) symmetric.
    """

    zeroth: np.ndarray
    first: np.ndarray
    second: np.ndarray

    def __post_init__(self):
        self.zeroth = np.atleast_1d(np.asarray(self.zeroth, dtype=float))
        self.first = np.asarray(self.first, dtype=float)
        self.second = np.asarray(self.second, dtype=float)
        if self.first.ndim == 1:
            self.first = self.first[None, :]
        if self.second.ndim == 2:
            self.second = self.second[None, :, :]
        N, n = self.first.shape
        if self.zeroth.shape != (N,) or self.second.shape != (N, n, n):
            raise ShapeError("operator coefficient shapes are inconsistent")

    @classmethod
    def identity(cls, N, n):
        return cls(np.ones(N), np.zeros((N, n)), np.zeros((N, n, n)))

    @property
    def N(self):
        return self.zeroth.shape[0]

    def subset(self, idx):
        return OperatorCoefficients(self.zeroth[idx], self.first[idx], self.second[idx])

    def level(self):
        """Highest input-derivative order the operator actually uses."""
        if np.any(self.second):
            return 2
        if np.any(self.first):
            return 1
        return 0


class _OperatorParts:
    """Shared intermediates for operator values and parameter gradients."""

    def __init__(self, params, X, ops, need_grad, features=None):
        shape = params.shape
        if ops.N != X.shape[0] or ops.first.shape[1] != shape.n:
            raise ShapeError("operator coefficients do not match the sample set")
        self.level = level = ops.level()
        order = level + (1 if need_grad else 0)
        B = basis_values(shape.inner_basis, X, level) if features is None else features
        if B.shape[0] < level + 1:
            B = basis_values(shape.inner_basis, X, level)
        self.B = B
        self.scale = 1.0 / np.sqrt(shape.m)
        z = preactivations(params, B[0])
        self.Phi = composed_values(shape.outer_basis, shape.transform, z, order)
        self.F = np.sum(self.Phi * params.c, axis=-1)
        N, m = z.shape
        e0 = ops.zeroth[:, None]
        self.e0 = e0
        if level >= 1:
            self.J = np.einsum("ipk,qpk->iqp", B[1], params.a)
            self.alpha = np.einsum("ip,iqp->iq", ops.first, self.J)
        else:
            self.J = None
            self.alpha = np.zeros((N, m))
        if level >= 2:
            mdiag = np.einsum("ipp->ip", ops.second)
            K = np.einsum("ipk,qpk->iqp", B[2], params.a)
            self.alpha = self.alpha + np.einsum("ip,iqp->iq", mdiag, K)
            self.MJ = np.einsum("ipr,iqr->iqp", ops.second, self.J)
            self.beta = np.einsum("iqp,iqp->iq", self.J, self.MJ)
            self.E = ops.first[:, :, None] * B[1] + mdiag[:, :, None] * B[2]
        else:
            self.MJ = None
            self.beta = None
            self.E = ops.first[:, :, None] * B[1] if level >= 1 else None

    def unit_values(self):
        F = self.F
        out = self.e0 * F[0]
        if self.level >= 1:
            out = out + self.alpha * F[1]
        if self.level >= 2:
            out = out + self.beta * F[2]
        return out

    def gamma(self):
        F = self.F
        g = self.e0 * F[1]
        if self.level >= 1:
            g = g + self.alpha * F[2]
        if self.level >= 2:
            g = g + self.beta * F[3]
        return g

    def c_terms(self):
        Phi = self.Phi
        out = self.e0[:, :, None] * Phi[0]
        if self.level >= 1:
            out = out + self.alpha[:, :, None] * Phi[1]
        if self.level >= 2:
            out = out + self.beta[:, :, None] * Phi[2]
        return out


def _codes(shape):
    return _backend.family_code(shape.outer_basis), _backend.transform_code(shape.transform)


def _operator_features(shape, X, features):
    """Inner basis with derivatives to order 2, C-contiguous, for the operator kernels."""
    if features is None or features.shape[0] < 3:
        features = basis_values(shape.inner_basis, X, 2)
    return np.ascontiguousarray(features[:3])


def _operator_arrays(ops):
    return (np.ascontiguousarray(ops.zeroth), np.ascontiguousarray(ops.first),
            np.ascontiguousarray(ops.second))


def operator_apply(params: KanParams, X, ops: OperatorCoefficients, features=None):
    """(L f)(x_i) for every row of X."""
    X = _check_points(params.shape, X)
    if _use_kernel(params.shape):
        return _backend.kernels.kan_operator_forward(
            params.a, params.c, _operator_features(params.shape, X, features),
            *_operator_arrays(ops), *_codes(params.shape))
    parts = _OperatorParts(params, X, ops, need_grad=False, features=features)
    return parts.scale * np.sum(parts.unit_values(), axis=1)


def operator_jacobian(params: KanParams, X, ops: OperatorCoefficients, features=None):
    """Per-sample parameter gradients of (L f)(x_i).

    Returns ``(Ga, Gc)`` with shapes (N, m, n, n_d) and (N, m, n_d).
    """
    X = _check_points(params.shape, X)
    p = _OperatorParts(params, X, ops, need_grad=True, features=features)
    Ga = p.gamma()[:, :, None, None] * p.B[0][:, None, :, :]
    if p.level >= 1:
        Ga = Ga + p.F[1][:, :, None, None] * p.E[:, None, :, :]
    if p.level >= 2:
        Ga = Ga + 2.0 * (p.F[2][:, :, None] * p.MJ)[:, :, :, None] * p.B[1][:, None, :, :]
    Gc = p.c_terms()
    return p.scale * Ga, p.scale * Gc


def operator_vjp(params: KanParams, X, ops: OperatorCoefficients, w, features=None):
    """sum_i w_i d(L f)(x_i)/d(a, c) without materialising per-sample gradients."""
    shape = params.shape
    X = _check_points(shape, X)
    w = np.asarray(w, dtype=float)
    if _use_kernel(shape):
        return _backend.kernels.kan_operator_vjp(
            params.a, params.c, _operator_features(shape, X, features),
            *_operator_arrays(ops), np.ascontiguousarray(w), *_codes(shape))
    p = _OperatorParts(params, X, ops, need_grad=True, features=features)
    N = X.shape[0]
    m, n, nd = shape.m, shape.n, shape.n_d
    wq = w[:, None]
    ga = ((wq * p.gamma()).T @ p.B[0].reshape(N, -1)).reshape(m, n, nd)
    if p.level >= 1:
        ga += ((wq * p.F[1]).T @ p.E.reshape(N, -1)).reshape(m, n, nd)
    if p.level >= 2:
        coef = (wq * p.F[2])[:, :, None] * p.MJ  # (N, m, n)
        ga += 2.0 * np.einsum("iqp,ipk->qpk", coef, p.B[1])
    gc = np.einsum("i,iqk->qk", w, p.c_terms())
    return p.scale * ga, p.scale * gc


def param_grad_of_operator(params: KanParams, x, ops: OperatorCoefficients):
    """Exact parameter gradient of (L f)(x) at one point."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    if ops.N != 1:
        raise ShapeError("single-point operator expected")
    Ga, Gc = operator_jacobian(params, x, ops)
    return Ga[0], Gc[0]


# ---------------------------------------------------------------------------
# Regression residuals
# ---------------------------------------------------------------------------


def residuals(params: KanParams, data: Dataset):
    """s_i = (f(x_i) - y_i) / sqrt(N)."""
    if data.n != params.shape.n:
        raise ShapeError(f"dataset has {data.n} columns, model expects {params.shape.n}")
    f = forward_batch(params, data.X, features=data.features(params.shape.inner_basis, 0))
    return (f - data.y) / np.sqrt(data.N)
