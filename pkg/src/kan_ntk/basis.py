"""Univariate basis families and transformation functions.

Every family is evaluated together with its derivatives up to order 3. The
vectorised entry points (:func:`basis_values`, :func:`transform_values`) return
a stacked array indexed by derivative order; the scalar helpers
(:func:`basis_eval`, :func:`transform_eval`) wrap them for single points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MAX_ORDER = 3

CHEBYSHEV = "chebyshev"
MONOMIAL = "monomial"
RBF = "rbf"
BSPLINE = "bspline"
FAMILIES = (CHEBYSHEV, MONOMIAL, RBF, BSPLINE)

TANH = "tanh"
SIGMOID = "sigmoid"
IDENTITY = "identity"
TRANSFORMS = (TANH, SIGMOID, IDENTITY)


@dataclass(frozen=True)
class BasisSpec:
    """Descriptor of a basis family {b_k}, k = 1..count.

    ``centers``/``width`` are used by the Gaussian RBF family, ``knots``/``order``
    by the B-spline family (``order`` is the spline order, i.e. degree + 1).
    """

    family: str
    count: int
    centers: tuple = field(default=(), compare=True)
    width: float = 0.0
    knots: tuple = ()
    order: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown basis family {self.family!r}")
        if int(self.count) != self.count or self.count < 1:
            raise ValueError("basis count must be a positive integer")
        if self.family == RBF:
            if len(self.centers) != self.count:
                raise ValueError("RBF basis needs one center per function")
            if not self.width > 0:
                raise ValueError("RBF width must be > 0")
        if self.family == BSPLINE:
            if self.order < 1:
                raise ValueError("B-spline order must be >= 1")
            t = np.asarray(self.knots, dtype=float)
            if t.size < self.order + 1:
                raise ValueError("B-spline needs at least order + 1 knots")
            if np.any(np.diff(t) < 0):
                raise ValueError("B-spline knots must be nondecreasing")
            if t.size - self.order != self.count:
                raise ValueError(
                    f"B-spline with {t.size} knots and order {self.order} has "
                    f"{t.size - self.order} functions, not {self.count}"
                )

    @classmethod
    def chebyshev(cls, count):
        return cls(CHEBYSHEV, count)

    @classmethod
    def monomial(cls, count):
        return cls(MONOMIAL, count)

    @classmethod
    def rbf(cls, count, centers=None, width=None, lo=-1.0, hi=1.0):
        """Gaussian bumps; by default centers are equispaced on [lo, hi]."""
        if centers is None:
            centers = np.linspace(lo, hi, count) if count > 1 else np.array([0.5 * (lo + hi)])
        if width is None:
            width = (hi - lo) / max(count - 1, 1)
        return cls(RBF, count, centers=tuple(float(v) for v in centers), width=float(width))

    @classmethod
    def bspline(cls, count, order=4, lo=-1.0, hi=1.0, knots=None):
        """Uniform B-splines with ``count`` functions covering [lo, hi]."""
        if knots is None:
            n_int = count - order + 1
            if n_int >= 1:
                h = (hi - lo) / n_int
                knots = lo + h * np.arange(-(order - 1), n_int + order)
            else:
                knots = np.linspace(lo, hi, count + order)
        return cls(BSPLINE, count, knots=tuple(float(v) for v in knots), order=int(order))

    @property
    def is_polynomial(self):
        return self.family in (CHEBYSHEV, MONOMIAL)

    def to_dict(self):
        d = {"family": self.family, "count": self.count}
        if self.family == RBF:
            d.update(centers=list(self.centers), width=self.width)
        if self.family == BSPLINE:
            d.update(knots=list(self.knots), order=self.order)
        return d


@dataclass(frozen=True)
class TransformSpec:
    """The transformation phi applied before the outer basis."""

    kind: str

    def __post_init__(self):
        if self.kind not in TRANSFORMS:
            raise ValueError(f"unknown transform {self.kind!r}")

    @property
    def bounded(self):
        return self.kind != IDENTITY

    @property
    def image(self):
        """Closure of phi(R) as an interval."""
        return {TANH: (-1.0, 1.0), SIGMOID: (0.0, 1.0), IDENTITY: (-math.inf, math.inf)}[self.kind]


def _check_order(order):
    if int(order) != order or not 0 <= order <= MAX_ORDER:
        raise ValueError(f"derivative order must be in 0..{MAX_ORDER}, got {order}")


def _check_finite(x):
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")


def _chebyshev(x, count, max_order):
    out = np.zeros((max_order + 1,) + x.shape + (count,))
    out[0, ..., 0] = 1.0
    if count > 1:
        out[0, ..., 1] = x
        if max_order >= 1:
            out[1, ..., 1] = 1.0
    # d^r T_{k+1} = 2 r d^{r-1} T_k + 2 x d^r T_k - d^r T_{k-1}
    for k in range(1, count - 1):
        out[0, ..., k + 1] = 2.0 * x * out[0, ..., k] - out[0, ..., k - 1]
        for r in range(1, max_order + 1):
            out[r, ..., k + 1] = (
                2.0 * r * out[r - 1, ..., k] + 2.0 * x * out[r, ..., k] - out[r, ..., k - 1]
            )
    return out


def _monomial(x, count, max_order):
    out = np.zeros((max_order + 1,) + x.shape + (count,))
    powers = np.empty(x.shape + (count,))
    powers[..., 0] = 1.0
    for j in range(1, count):
        powers[..., j] = powers[..., j - 1] * x
    for r in range(max_order + 1):
        for j in range(r, count):
            coef = math.perm(j, r)
            out[r, ..., j] = coef * powers[..., j - r]
    return out


def _rbf(x, centers, width, max_order):
    d = x[..., None] - np.asarray(centers)
    w2 = width * width
    b = np.exp(-0.5 * d * d / w2)
    out = np.empty((max_order + 1,) + b.shape)
    out[0] = b
    if max_order >= 1:
        out[1] = -d / w2 * b
    if max_order >= 2:
        out[2] = (d * d / w2 - 1.0) / w2 * b
    if max_order >= 3:
        out[3] = (3.0 * d / w2 - d ** 3 / (w2 * w2)) / w2 * b
    return out


def _safe_div(num, den):
    return np.divide(num, den, out=np.zeros_like(num), where=den != 0)


def _bspline(x, knots, order, max_order):
    """Cox-de Boor recursion; half-open spans give right-limit values at knots."""
    t = np.asarray(knots, dtype=float)
    L = t.size
    xe = x[..., None]
    # tables[j][r] holds d^r B_{i,j} for i = 0..L-j-1
    base = ((xe >= t[:-1]) & (xe < t[1:])).astype(float)
    tables = {1: [base] + [np.zeros_like(base)] * max_order}
    for j in range(2, order + 1):
        prev = tables[j - 1]
        n_j = L - j
        left_den = t[j - 1 : j - 1 + n_j] - t[:n_j]
        right_den = t[j : j + n_j] - t[1 : 1 + n_j]
        cur0 = _safe_div(xe - t[:n_j], left_den) * prev[0][..., :n_j] + _safe_div(
            t[j : j + n_j] - xe, right_den
        ) * prev[0][..., 1 : 1 + n_j]
        cur = [cur0]
        for r in range(1, max_order + 1):
            cur.append(
                (j - 1)
                * (
                    _safe_div(prev[r - 1][..., :n_j], left_den)
                    - _safe_div(prev[r - 1][..., 1 : 1 + n_j], right_den)
                )
            )
        tables[j] = cur
    return np.stack(tables[order][: max_order + 1])


def basis_values(spec: BasisSpec, x, max_order=0):
    """All basis functions and derivatives at ``x``.

    Returns an array of shape ``(max_order + 1, *x.shape, spec.count)`` whose
    ``[r, ..., k-1]`` entry is the r-th derivative of b_k.
    """
    _check_order(max_order)
    x = np.asarray(x, dtype=float)
    _check_finite(x)
    if spec.family == CHEBYSHEV:
        return _chebyshev(x, spec.count, max_order)
    if spec.family == MONOMIAL:
        return _monomial(x, spec.count, max_order)
    if spec.family == RBF:
        return _rbf(x, spec.centers, spec.width, max_order)
    return _bspline(x, spec.knots, spec.order, max_order)


def basis_eval(spec: BasisSpec, k: int, x: float, order: int = 0) -> float:
    """r-th derivative of the k-th basis function (1-based k) at a point."""
    if int(k) != k or not 1 <= k <= spec.count:
        raise IndexError(f"basis index {k} outside 1..{spec.count}")
    _check_order(order)
    if not math.isfinite(x):
        raise ValueError("non-finite input")
    return float(basis_values(spec, np.array(float(x)), order)[order, k - 1])


def transform_values(spec: TransformSpec, z, max_order=0):
    """phi and its derivatives; shape ``(max_order + 1, *z.shape)``."""
    _check_order(max_order)
    z = np.asarray(z, dtype=float)
    _check_finite(z)
    out = np.empty((max_order + 1,) + z.shape)
    if spec.kind == TANH:
        t = np.tanh(z)
        d1 = 1.0 - t * t
        out[0] = t
        if max_order >= 1:
            out[1] = d1
        if max_order >= 2:
            out[2] = -2.0 * t * d1
        if max_order >= 3:
            out[3] = -2.0 * d1 * (1.0 - 3.0 * t * t)
    elif spec.kind == SIGMOID:
        # 0.5 * (1 + tanh(z/2)) avoids overflow of exp for large |z|
        s = 0.5 * (1.0 + np.tanh(0.5 * z))
        d1 = s * (1.0 - s)
        out[0] = s
        if max_order >= 1:
            out[1] = d1
        if max_order >= 2:
            out[2] = d1 * (1.0 - 2.0 * s)
        if max_order >= 3:
            out[3] = d1 * (1.0 - 6.0 * s + 6.0 * s * s)
    else:
        out[0] = z
        if max_order >= 1:
            out[1] = 1.0
        out[2:] = 0.0
    return out


def transform_eval(spec: TransformSpec, z: float, order: int = 0) -> float:
    _check_order(order)
    if not math.isfinite(z):
        raise ValueError("non-finite input")
    return float(transform_values(spec, np.array(float(z)), order)[order])


def composed_values(basis: BasisSpec, transform: TransformSpec, z, max_order=0):
    """Derivatives of b_k(phi(z)) with respect to z, by Faa di Bruno.

    Shape ``(max_order + 1, *z.shape, basis.count)``.
    """
    phi = transform_values(transform, z, max_order)
    b = basis_values(basis, phi[0], max_order)
    out = np.empty_like(b)
    out[0] = b[0]
    if max_order >= 1:
        p1 = phi[1][..., None]
        out[1] = b[1] * p1
    if max_order >= 2:
        p2 = phi[2][..., None]
        out[2] = b[2] * p1 * p1 + b[1] * p2
    if max_order >= 3:
        p3 = phi[3][..., None]
        out[3] = b[3] * p1 ** 3 + 3.0 * b[2] * p1 * p2 + b[1] * p3
    return out


@dataclass
class BoundednessReport:
    ok: bool
    warnings: list

    def __bool__(self):
        return self.ok


def validate_boundedness(basis: BasisSpec, transform: TransformSpec) -> BoundednessReport:
    """Advisory check that b_k and its first two derivatives stay bounded on phi(R).

    Never raises; combinations outside the bounded regime come back with
    ``ok=False`` and a human-readable warning.
    """
    warnings = []
    if basis.family in (CHEBYSHEV, MONOMIAL) and not transform.bounded:
        warnings.append(
            "unbounded image: polynomial basis composed with the identity transform "
            "is unbounded on R"
        )
    if basis.family == BSPLINE:
        warnings.append(
            "B-spline basis is piecewise polynomial: derivatives jump at knots and the "
            "implicit identity transform is modelled as-is"
        )
    return BoundednessReport(ok=not warnings, warnings=warnings)
