"""Independent reference implementations used by the tests."""

import math

import numpy as np


def central_diff(fun, x, h=1e-5):
    """Central differences of a scalar or vector valued function of a vector."""
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e.flat[j] = h
        cols.append((np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2 * h))
    return np.array(cols)


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    diff = np.max(np.abs(a - b), initial=0.0)
    if diff == 0.0:
        return 0.0
    return diff / max(np.max(np.abs(a)), np.max(np.abs(b)))


def cheb(k, x):
    """T_k(x) by the explicit power-sum formula."""
    total = 0.0
    for j in range(k // 2 + 1):
        total += math.comb(k, 2 * j) * (x * x - 1) ** j * x ** (k - 2 * j)
    return total


def scalar_basis(family, k, u):
    if family == "chebyshev":
        return cheb(k, u)
    return u ** k


def scalar_transform(kind, z):
    if kind == "tanh":
        return math.tanh(z)
    if kind == "sigmoid":
        return 1.0 / (1.0 + math.exp(-z))
    return z


def brute_forward(a, c, x, family="chebyshev", transform="tanh"):
    """f(x) with explicit loops over q, p and k and no caching."""
    m, n, nd = a.shape
    total = 0.0
    for q in range(m):
        z = 0.0
        for p in range(n):
            for k in range(nd):
                z += a[q, p, k] * scalar_basis(family, k, x[p])
        u = scalar_transform(transform, z)
        for k in range(nd):
            total += c[q, k] * scalar_basis(family, k, u)
    return total / math.sqrt(m)
