"""Pure-numpy implementations of the hot kernels.

Same signatures as the compiled ``_ckernels`` module. Used when the extension
is not built or when ``KAN_NTK_BACKEND=python``.
"""

import numpy as np

from .basis import BasisSpec, TransformSpec, composed_values

_FAMILIES = ("chebyshev", "monomial")
_TRANSFORMS = ("tanh", "sigmoid", "identity")


def _specs(family, transform, nd):
    return BasisSpec(_FAMILIES[family], nd), TransformSpec(_TRANSFORMS[transform])


def kan_forward(a, c, B0, family, transform):
    """Network outputs f (N,) and pre-activations z (N, m)."""
    m, nd = c.shape
    N = B0.shape[0]
    basis, tf = _specs(family, transform, nd)
    z = B0.reshape(N, -1) @ a.reshape(m, -1).T
    phi0 = composed_values(basis, tf, z, 0)[0]
    f = np.sum(np.sum(phi0 * c, axis=-1), axis=-1) / np.sqrt(m)
    return f, z


def kan_vjp(a, c, B0, w, family, transform):
    """sum_i w_i (df_i/da, df_i/dc)."""
    m, nd = c.shape
    N = B0.shape[0]
    basis, tf = _specs(family, transform, nd)
    Bf = B0.reshape(N, -1)
    z = Bf @ a.reshape(m, -1).T
    Phi = composed_values(basis, tf, z, 1)
    slope = np.sum(Phi[1] * c, axis=-1)
    scale = 1.0 / np.sqrt(m)
    ga = ((w[:, None] * slope).T @ Bf).reshape(a.shape) * scale
    gc = np.einsum("i,iqk->qk", w, Phi[0]) * scale
    return ga, gc


def _round_robin(n):
    """Rounds of disjoint index pairs covering every pair once (circle method)."""
    players = list(range(n + (n % 2)))
    size = len(players)
    rounds = []
    for _ in range(size - 1):
        pairs = [(players[i], players[size - 1 - i]) for i in range(size // 2)]
        pairs = [(min(p, q), max(p, q)) for p, q in pairs if p < n and q < n]
        if pairs:
            rounds.append((np.array([p for p, _ in pairs]), np.array([q for _, q in pairs])))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _off_norm(A):
    d = np.diag(A)
    return np.sqrt(max(np.sum(A * A) - np.sum(d * d), 0.0))


def jacobi_eigenvalues(M, tol=1e-12, max_sweeps=64):
    """Cyclic Jacobi with parallel (round-robin) ordering.

    Each round applies a set of disjoint rotations at once; a sweep visits
    every off-diagonal pair exactly once. Returns ``(eigenvalues ascending,
    final off-diagonal Frobenius norm, sweeps used)``.
    """
    A = np.array(M, dtype=float, copy=True)
    n = A.shape[0]
    fro = np.sqrt(np.sum(A * A))
    off = _off_norm(A)
    sweeps = 0
    if n < 2:
        return np.sort(np.diag(A)), off, sweeps
    rounds = _round_robin(n)
    while off > tol * fro and sweeps < max_sweeps:
        for P, Q in rounds:
            apq = A[P, Q]
            active = apq != 0.0
            if not np.any(active):
                continue
            P, Q, apq = P[active], Q[active], apq[active]
            tau = (A[Q, Q] - A[P, P]) / (2.0 * apq)
            t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.hypot(tau, 1.0))
            cs = 1.0 / np.sqrt(1.0 + t * t)
            sn = t * cs
            rp, rq = A[P, :].copy(), A[Q, :].copy()
            A[P, :] = cs[:, None] * rp - sn[:, None] * rq
            A[Q, :] = sn[:, None] * rp + cs[:, None] * rq
            cp, cq = A[:, P].copy(), A[:, Q].copy()
            A[:, P] = cp * cs - cq * sn
            A[:, Q] = cp * sn + cq * cs
            A[P, Q] = 0.0
            A[Q, P] = 0.0
        sweeps += 1
        off = _off_norm(A)
    return np.sort(np.diag(A)), off, sweeps


def _operator_parts(a, c, B, e0, W, M, family, transform):
    m, nd = c.shape
    N = B.shape[1]
    basis, tf = _specs(family, transform, nd)
    z = B[0].reshape(N, -1) @ a.reshape(m, -1).T
    J = np.einsum("ipk,qpk->iqp", B[1], a)
    K = np.einsum("ipk,qpk->iqp", B[2], a)
    mdiag = np.einsum("ipp->ip", M)
    alpha = np.einsum("ip,iqp->iq", W, J) + np.einsum("ip,iqp->iq", mdiag, K)
    MJ = np.einsum("ipr,iqr->iqp", M, J)
    beta = np.einsum("iqp,iqp->iq", J, MJ)
    Phi = composed_values(basis, tf, z, 3)
    F = np.sum(Phi * c, axis=-1)
    return Phi, F, alpha, beta, MJ, mdiag


def kan_operator_forward(a, c, B, e0, W, M, family, transform):
    """(L f)(x_i) for L f = e0 f + W . grad f + M : Hess f."""
    _, F, alpha, beta, _, _ = _operator_parts(a, c, B, e0, W, M, family, transform)
    units = e0[:, None] * F[0] + alpha * F[1] + beta * F[2]
    return np.sum(units, axis=1) / np.sqrt(c.shape[0])


def kan_operator_vjp(a, c, B, e0, W, M, w, family, transform):
    """sum_i w_i d(L f)(x_i)/d(a, c)."""
    Phi, F, alpha, beta, MJ, mdiag = _operator_parts(a, c, B, e0, W, M, family, transform)
    m = c.shape[0]
    wq = w[:, None] * np.ones_like(alpha)
    gamma = e0[:, None] * F[1] + alpha * F[2] + beta * F[3]
    E = W[:, :, None] * B[1] + mdiag[:, :, None] * B[2]
    ga = np.einsum("iq,ipk->qpk", wq * gamma, B[0])
    ga += np.einsum("iq,ipk->qpk", wq * F[1], E)
    ga += 2.0 * np.einsum("iqp,ipk->qpk", (wq * F[2])[:, :, None] * MJ, B[1])
    Ct = e0[:, None, None] * Phi[0] + alpha[:, :, None] * Phi[1] + beta[:, :, None] * Phi[2]
    gc = np.einsum("i,iqk->qk", w, Ct)
    return ga / np.sqrt(m), gc / np.sqrt(m)
