"""Neural-tangent-kernel Gram matrices of the two-layer KAN.

G = D^T D where column i of D stacks ds_i/da and ds_i/dc. Two independent
assembly routes are provided: :func:`assemble_D` + :func:`gram`, and
:func:`gram_closed_form`, which evaluates the per-unit sums

    S_ij = 1/(mN) sum_q g_q(x_i) g_q(x_j) sum_{p,k} b_k(x_ip) b_k(x_jp)
    Q_ij = 1/(mN) sum_q sum_k b_k(phi(z_q(x_i))) b_k(phi(z_q(x_j)))

with g_q(x) = sum_k c[q,k] b_k'(phi(z_q)) phi'(z_q), without forming D.
Spectra come from the dense Jacobi eigensolver in the kernel backend.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import _backend
from .basis import composed_values
from .errors import ShapeError
from .model import Dataset, KanParams, KanShape, init_params, operator_jacobian, preactivations, OperatorCoefficients

SYMMETRY_TOL = 1e-9
EIG_TOL = 1e-12


def sym_eig(M, tol=EIG_TOL, max_sweeps=64):
    """Eigenvalues of a symmetric matrix, ascending, by cyclic Jacobi rotations.

    The input is symmetrised as (M + M^T)/2 first. Raises ``ValueError`` for
    non-finite input or asymmetry above ``SYMMETRY_TOL`` (scaled by
    max(1, max|M|)), and ``RuntimeError`` if the off-diagonal Frobenius norm
    does not fall below ``tol * ||M||_F`` within ``max_sweeps`` sweeps.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ShapeError("sym_eig needs a square matrix")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    if M.size and np.max(np.abs(M - M.T)) > SYMMETRY_TOL * scale:
        raise ValueError("matrix is not symmetric within tolerance")
    A = np.ascontiguousarray(0.5 * (M + M.T))
    eigs, off, _ = _backend.kernels.jacobi_eigenvalues(A, tol, max_sweeps)
    fro = float(np.sqrt(np.sum(A * A)))
    if off > tol * fro:
        raise RuntimeError(f"Jacobi did not converge: off-diagonal norm {off:.3e}")
    return np.asarray(eigs)


@dataclass
class DerivMatrix:
    """P x N matrix whose column i is the stacked gradient (ds_i/da, ds_i/dc).

    ``num_interior`` is set for physics-informed problems, where the first
    ``num_interior`` columns are interior residuals and the rest boundary ones.
    """

    entries: np.ndarray
    shape: KanShape
    num_interior: int | None = None

    def __post_init__(self):
        if self.entries.shape[0] != self.shape.num_params:
            raise ShapeError("row count does not match the parameter count")

    @property
    def N(self):
        return self.entries.shape[1]

    def a_block(self):
        return self.entries[: self.shape.num_a]

    def c_block(self):
        return self.entries[self.shape.num_a :]


@dataclass
class GramReport:
    G: np.ndarray
    eigenvalues: np.ndarray

    @classmethod
    def from_matrix(cls, G):
        G = np.asarray(G, dtype=float)
        G = 0.5 * (G + G.T)
        return cls(G, sym_eig(G))

    @property
    def N(self):
        return self.G.shape[0]

    @property
    def sigma_min(self):
        return float(self.eigenvalues[0])

    @property
    def sigma_max(self):
        return float(self.eigenvalues[-1])

    def summary(self):
        return {
            "N": self.N,
            "sigma_min": self.sigma_min,
            "sigma_max": self.sigma_max,
            "eigenvalues": [float(v) for v in self.eigenvalues],
        }

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write("# schema=1\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"col{j}" for j in range(self.N)])
            for row in self.G:
                w.writerow([repr(float(v)) for v in row])


def stack_columns(Ga, Gc, scale):
    """Per-sample gradient blocks -> P x N matrix (a block first)."""
    N = Ga.shape[0]
    return np.concatenate([Ga.reshape(N, -1), Gc.reshape(N, -1)], axis=1).T * scale


def assemble_D(params: KanParams, data: Dataset) -> DerivMatrix:
    if data.n != params.shape.n:
        raise ShapeError(f"dataset has {data.n} columns, model expects {params.shape.n}")
    ops = OperatorCoefficients.identity(data.N, data.n)
    Ga, Gc = operator_jacobian(params, data.X, ops)
    return DerivMatrix(stack_columns(Ga, Gc, 1.0 / np.sqrt(data.N)), params.shape)


def gram(D: DerivMatrix) -> GramReport:
    E = D.entries if isinstance(D, DerivMatrix) else np.asarray(D, dtype=float)
    if not np.all(np.isfinite(E)):
        raise ValueError("D has non-finite entries")
    return GramReport.from_matrix(E.T @ E)


def _closed_form_matrix(params: KanParams, X):
    shape = params.shape
    N = X.shape[0]
    B0 = Dataset(X, np.zeros(N)).features(shape.inner_basis, 0)[0]
    z = preactivations(params, B0)
    Phi = composed_values(shape.outer_basis, shape.transform, z, 1)
    g = np.sum(Phi[1] * params.c, axis=-1)  # (N, m)
    Bf = B0.reshape(N, -1)
    S = (g @ g.T) * (Bf @ Bf.T)
    Pf = Phi[0].reshape(N, -1)
    Q = Pf @ Pf.T
    return (S + Q) / (shape.m * N)


def gram_closed_form(params: KanParams, data: Dataset) -> GramReport:
    if data.n != params.shape.n:
        raise ShapeError(f"dataset has {data.n} columns, model expects {params.shape.n}")
    return GramReport.from_matrix(_closed_form_matrix(params, data.X))


@dataclass
class GInfinityEstimate:
    """Monte-Carlo mean of G over independent initialisations."""

    report: GramReport
    stderr: np.ndarray
    num_seeds: int
    samples: np.ndarray | None = None

    @property
    def spectral_stderr(self):
        """Frobenius norm of the entrywise standard errors.

        By Weyl's inequality this bounds the standard error of every
        eigenvalue of the estimate, to first order.
        """
        return float(np.sqrt(np.sum(self.stderr ** 2)))

    def sigma_min_z(self):
        """sigma_min of the estimate in units of ``spectral_stderr``."""
        se = self.spectral_stderr
        return math.inf if se == 0 else self.report.sigma_min / se

    def sigma_min_jackknife(self):
        """Jackknife standard error of sigma_min (needs ``keep_samples=True``)."""
        if self.samples is None:
            raise ValueError("estimate was built without keep_samples=True")
        S = self.samples.shape[0]
        if S < 2:
            return math.nan
        total = self.samples.sum(axis=0)
        loo = np.array([sym_eig((total - G) / (S - 1))[0] for G in self.samples])
        return float(math.sqrt((S - 1) / S * np.sum((loo - loo.mean()) ** 2)))


def estimate_G_infinity(shape: KanShape, data: Dataset, num_seeds: int, base_seed: int = 0,
                        gram_fn=None, keep_samples=False) -> GInfinityEstimate:
    """Average G over inits seeded ``base_seed .. base_seed + num_seeds - 1``.

    ``gram_fn(params, data) -> ndarray`` overrides the Gram assembly (used for
    physics-informed Gram matrices). ``keep_samples`` retains every per-seed
    matrix for resampling statistics.
    """
    if num_seeds < 1:
        raise ValueError("num_seeds must be >= 1")
    if gram_fn is None:
        gram_fn = lambda p, d: _closed_form_matrix(p, d.X)  # noqa: E731
    mean = None
    m2 = None
    kept = []
    for s in range(num_seeds):
        G = gram_fn(init_params(shape, base_seed + s), data)
        if keep_samples:
            kept.append(G)
        if mean is None:
            mean = np.zeros_like(G)
            m2 = np.zeros_like(G)
        delta = G - mean
        mean += delta / (s + 1)
        m2 += delta * (G - mean)
    if num_seeds > 1:
        stderr = np.sqrt(m2 / (num_seeds - 1) / num_seeds)
    else:
        stderr = np.full_like(mean, np.nan)
    return GInfinityEstimate(GramReport.from_matrix(mean), stderr, num_seeds,
                             np.array(kept) if keep_samples else None)


def cross_width_consistency(est_1: GInfinityEstimate, est_2: GInfinityEstimate, k=3.0):
    """Entrywise z-scores between two G-infinity estimates (report only)."""
    se = np.sqrt(est_1.stderr ** 2 + est_2.stderr ** 2)
    diff = np.abs(est_1.report.G - est_2.report.G)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, diff / se, np.where(diff > 0, np.inf, 0.0))
    iu = np.triu_indices_from(z)
    zu = z[iu]
    return {
        "max_z": float(np.max(zu)),
        "fraction_within": float(np.mean(zu <= k)),
        "k": k,
        "entries": int(zu.size),
    }


@dataclass
class DistinctnessReport:
    distinct: bool
    duplicates: list

    def __bool__(self):
        return self.distinct


def distinctness_check(data) -> DistinctnessReport:
    """Exact row-equality scan. Duplicate pairs are reported 1-based, i < j."""
    X = data.X if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    seen = {}
    for i, row in enumerate(X):
        seen.setdefault(tuple(row.tolist()), []).append(i + 1)
    dups = []
    for rows in seen.values():
        for a in range(len(rows)):
            for b in range(a + 1, len(rows)):
                dups.append((rows[a], rows[b]))
    dups.sort()
    return DistinctnessReport(not dups, dups)


def gram_deviation(G_t, G_ref) -> float:
    """Spectral norm ||G_t - G_ref||_2."""
    A = G_t.G if isinstance(G_t, GramReport) else np.asarray(G_t, dtype=float)
    B = G_ref.G if isinstance(G_ref, GramReport) else np.asarray(G_ref, dtype=float)
    if A.shape != B.shape:
        raise ShapeError(f"dimension mismatch {A.shape} vs {B.shape}")
    eigs = sym_eig(A - B)
    return float(max(abs(eigs[0]), abs(eigs[-1])))


@dataclass
class LazyRadii:
    """Stability radii for the drift of a and c and the per-unit bound on ||c_q||.

    These are diagnostic thresholds; the stopping time T of a run is the first
    step where drift_a > R_a/2, drift_c > R_c/2 or max_q ||c_q|| > M_c/2.
    """

    R_a: float
    R_c: float
    M_c: float

    @classmethod
    def from_sensitivity(cls, shape: KanShape, sigma_min: float, delta: float = 0.01):
        """Radii from the Gram sensitivity bound, unit constants.

        M_c = sqrt(n_d) + sqrt(ln(m/delta)) and
        R_a = R_c = sigma_min sqrt(m) / (n_d^{5/2} n^{3/2} M_c^2).
        """
        nd, n, m = shape.n_d, shape.n, shape.m
        M_c = math.sqrt(nd) + math.sqrt(math.log(m / delta))
        R = sigma_min * math.sqrt(m) / (nd ** 2.5 * n ** 1.5 * M_c ** 2)
        return cls(R, R, M_c)

    @classmethod
    def from_trajectory_bound(cls, shape: KanShape, sigma_min: float, sigma_max: float,
                              s0_norm: float, delta: float = 0.01):
        """Radii from the GD displacement bound with explicit constants.

        Under ||s(t)|| <= (1 - eta sigma_min/2)^t ||s(0)||, each parameter block
        moves at most 2 eta sqrt(sigma_max) ||s(t)|| per step, so the total
        drift is at most R = 4 sqrt(sigma_max) ||s(0)|| / sigma_min.
        M_c = 2 (sqrt(n_d) + sqrt(2 ln(m/delta))) doubles the chi-square tail
        bound on max_q ||c_q(0)||, which holds with probability >= 1 - delta.
        """
        if sigma_min <= 0:
            return cls(math.inf, math.inf, math.inf)
        R = 4.0 * math.sqrt(max(float(sigma_max), 0.0)) * float(s0_norm) / float(sigma_min)
        M_c = 2.0 * (math.sqrt(shape.n_d) + math.sqrt(2.0 * math.log(shape.m / delta)))
        return cls(R, R, M_c)

    def to_dict(self):
        return {"R_a": self.R_a, "R_c": self.R_c, "M_c": self.M_c}
