"""Symmetric-PSD matrix primitives and the closed-form 2-Wasserstein
(Bures) distance between Gaussians, with analytic gradients.

All matrix square roots go through symmetric eigendecomposition; covariances
are kept inside the PSD cone by clipping eigenvalues at a floor that scales
with the matrix trace.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, NumericError

# Relative eigenvalue floor: floor = PSD_FLOOR_SCALE * trace(S)/dim.
PSD_FLOOR_SCALE = 1e-6
# Absolute fallback when the matrix has (numerically) zero trace.
PSD_FLOOR_ABS = 1e-6

SYMMETRY_RTOL = 1e-12


@dataclass
class LabelDistribution:
    """Gaussian summary of a class's feature distribution: N(mean, cov)."""

    mean: np.ndarray  # (d,)
    cov: np.ndarray   # (d, d), symmetric PSD

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.cov = np.asarray(self.cov, dtype=float)
        if self.mean.ndim != 1 or self.cov.shape != (self.mean.size, self.mean.size):
            raise DimensionMismatchError(
                f"mean of length {self.mean.size} incompatible with cov shape {self.cov.shape}"
            )

    @property
    def dim(self) -> int:
        return self.mean.size

    def copy(self) -> "LabelDistribution":
        return LabelDistribution(self.mean.copy(), self.cov.copy())


def _check_finite(m: np.ndarray, name: str = "matrix"):
    if not np.all(np.isfinite(m)):
        raise NumericError(f"{name} contains non-finite entries")


def _check_symmetric(m: np.ndarray, name: str = "matrix"):
    scale = max(float(np.abs(m).max(initial=0.0)), 1.0)
    if np.abs(m - m.T).max(initial=0.0) > SYMMETRY_RTOL * scale * 10:
        raise NumericError(f"{name} is not symmetric")


def psd_floor_value(m: np.ndarray) -> float:
    """Default eigenvalue floor for a covariance update: 1e-6 * trace/dim."""
    d = m.shape[0]
    rel = PSD_FLOOR_SCALE * float(np.trace(m)) / d
    return rel if rel > 0.0 else PSD_FLOOR_ABS


def spd_sqrt(m: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Negative eigenvalues from roundoff are clipped at zero, so the result
    satisfies s @ s == m to ~1e-8 relative error for any valid PSD input.
    """
    m = np.asarray(m, dtype=float)
    _check_finite(m)
    _check_symmetric(m)
    w, v = np.linalg.eigh(m)
    w = np.maximum(w, 0.0)
    return (v * np.sqrt(w)) @ v.T


def project_psd(m: np.ndarray, floor: float = 0.0) -> np.ndarray:
    """Nearest PSD matrix by eigenvalue clipping (eigenvalues >= floor)."""
    m = np.asarray(m, dtype=float)
    _check_finite(m)
    m = 0.5 * (m + m.T)
    w, v = np.linalg.eigh(m)
    if w.min() >= floor:
        return m
    w = np.maximum(w, floor)
    out = (v * w) @ v.T
    return 0.5 * (out + out.T)


def bures_w2_sq(a: LabelDistribution, b: LabelDistribution) -> float:
    """Squared 2-Wasserstein distance between Gaussians, closed form:

        ||mu_a - mu_b||^2 + tr(S_a) + tr(S_b) - 2 tr((S_a^1/2 S_b S_a^1/2)^1/2)
    """
    if a.dim != b.dim:
        raise DimensionMismatchError(f"dimension mismatch: {a.dim} vs {b.dim}")
    sa = spd_sqrt(a.cov)
    inner = sa @ b.cov @ sa
    w = np.linalg.eigvalsh(0.5 * (inner + inner.T))
    cross = 2.0 * np.sum(np.sqrt(np.maximum(w, 0.0)))
    mean_term = float(np.sum((a.mean - b.mean) ** 2))
    val = mean_term + float(np.trace(a.cov) + np.trace(b.cov)) - cross
    return max(val, 0.0)


def bures_w2_sq_grad_fd(a: LabelDistribution, b: LabelDistribution, h: float = 1e-5):
    """Central-difference gradient of ``bures_w2_sq``; the fallback route
    used to cross-check the analytic formula."""
    d = a.dim
    grad_mean = np.zeros(d)
    for l in range(d):
        e = np.zeros(d)
        e[l] = h
        grad_mean[l] = (
            bures_w2_sq(LabelDistribution(a.mean + e, a.cov), b)
            - bures_w2_sq(LabelDistribution(a.mean - e, a.cov), b)
        ) / (2 * h)
    grad_cov = np.zeros((d, d))
    for i in range(d):
        for j in range(i, d):
            e = np.zeros((d, d))
            e[i, j] = e[j, i] = h
            diff = (
                bures_w2_sq(LabelDistribution(a.mean, a.cov + e), b)
                - bures_w2_sq(LabelDistribution(a.mean, a.cov - e), b)
            ) / (2 * h)
            # diff = <grad, direction>; off-diagonal directions hit two entries
            grad_cov[i, j] = grad_cov[j, i] = diff if i == j else diff / 2.0
    return grad_mean, grad_cov


def bures_w2_sq_grad(a: LabelDistribution, b: LabelDistribution, verify: bool = False):
    """Analytic gradient of ``bures_w2_sq`` w.r.t. the first argument.

    Returns (grad_mean, grad_cov) with

        grad_mean = 2 (mu_a - mu_b)
        grad_cov  = I - T,   T = S_a^-1/2 (S_a^1/2 S_b S_a^1/2)^1/2 S_a^-1/2

    T is the symmetric factor of the optimal Gaussian transport map, so
    grad_cov vanishes iff the covariances coincide. Requires S_a strictly
    positive definite (floor the covariance first). With ``verify`` the
    result is cross-checked against central differences and a NumericError
    is raised on disagreement beyond 1e-3 relative.
    """
    if a.dim != b.dim:
        raise DimensionMismatchError(f"dimension mismatch: {a.dim} vs {b.dim}")
    d = a.dim
    wa, va = np.linalg.eigh(a.cov)
    if wa.min() <= 0.0 or wa.min() < 1e-14 * max(wa.max(), 1.0):
        raise NumericError(
            "covariance numerically singular; apply project_psd with a positive floor first"
        )
    sqrt_wa = np.sqrt(wa)
    sa = (va * sqrt_wa) @ va.T
    isa = (va / sqrt_wa) @ va.T
    inner = sa @ b.cov @ sa
    wm, vm = np.linalg.eigh(0.5 * (inner + inner.T))
    inner_sqrt = (vm * np.sqrt(np.maximum(wm, 0.0))) @ vm.T
    t = isa @ inner_sqrt @ isa
    grad_cov = np.eye(d) - 0.5 * (t + t.T)
    grad_mean = 2.0 * (a.mean - b.mean)
    if verify:
        fd_mean, fd_cov = bures_w2_sq_grad_fd(a, b)
        scale = max(np.abs(grad_mean).max(), np.abs(grad_cov).max(), 1e-6)
        if (
            np.abs(fd_mean - grad_mean).max() > 1e-3 * scale
            or np.abs(fd_cov - grad_cov).max() > 1e-3 * scale
        ):
            raise NumericError(
                "analytic Bures gradient disagrees with finite differences; "
                "covariance likely too close to the PSD boundary"
            )
    return grad_mean, grad_cov


def _batched_sqrt(covs: np.ndarray) -> np.ndarray:
    """PSD square roots of a stacked (k, d, d) array of symmetric matrices."""
    w, v = np.linalg.eigh(covs)
    w = np.sqrt(np.maximum(w, 0.0))
    return np.einsum("kij,kj,klj->kil", v, w, v)


def pairwise_bures_sq(dists_a, dists_b) -> np.ndarray:
    """All-pairs squared Bures-Wasserstein distances.

    ``dists_a`` and ``dists_b`` are sequences of LabelDistribution; returns a
    (len(a), len(b)) matrix. Batched over eigendecompositions, which keeps
    per-step flow costs flat even for per-particle label distributions.
    """
    means_a = np.stack([d.mean for d in dists_a])
    means_b = np.stack([d.mean for d in dists_b])
    covs_a = np.stack([d.cov for d in dists_a])
    covs_b = np.stack([d.cov for d in dists_b])
    p, q = means_a.shape[0], means_b.shape[0]

    mean_term = (
        np.sum(means_a**2, axis=1)[:, None]
        + np.sum(means_b**2, axis=1)[None, :]
        - 2.0 * means_a @ means_b.T
    )
    tr_a = np.trace(covs_a, axis1=1, axis2=2)
    tr_b = np.trace(covs_b, axis1=1, axis2=2)

    sa = _batched_sqrt(covs_a)
    # inner[i, j] = sa[i] @ covs_b[j] @ sa[i]
    inner = np.einsum("iab,jbc,icd->ijad", sa, covs_b, sa)
    inner = 0.5 * (inner + np.swapaxes(inner, 2, 3))
    w = np.linalg.eigvalsh(inner.reshape(p * q, *inner.shape[2:]))
    cross = 2.0 * np.sum(np.sqrt(np.maximum(w, 0.0)), axis=1).reshape(p, q)

    out = mean_term + tr_a[:, None] + tr_b[None, :] - cross
    return np.maximum(out, 0.0)


def pairwise_bures_grads(dists_a, dists_b):
    """All-pairs analytic Bures gradients w.r.t. the first argument.

    Returns (grad_means, grad_covs) of shapes (p, q, d) and (p, q, d, d).
    Same math as ``bures_w2_sq_grad``, batched; first-argument covariances
    must be strictly positive definite.
    """
    means_a = np.stack([d.mean for d in dists_a])
    means_b = np.stack([d.mean for d in dists_b])
    covs_a = np.stack([d.cov for d in dists_a])
    covs_b = np.stack([d.cov for d in dists_b])
    p, q, d = means_a.shape[0], means_b.shape[0], means_a.shape[1]

    grad_means = 2.0 * (means_a[:, None, :] - means_b[None, :, :])

    wa, va = np.linalg.eigh(covs_a)
    if wa.min() <= 0.0:
        raise NumericError("first-argument covariance numerically singular")
    sq = np.sqrt(wa)
    sa = np.einsum("kij,kj,klj->kil", va, sq, va)
    isa = np.einsum("kij,kj,klj->kil", va, 1.0 / sq, va)

    inner = np.einsum("iab,jbc,icd->ijad", sa, covs_b, sa)
    inner = 0.5 * (inner + np.swapaxes(inner, 2, 3))
    wm, vm = np.linalg.eigh(inner.reshape(p * q, d, d))
    inner_sqrt = np.einsum("kij,kj,klj->kil", vm, np.sqrt(np.maximum(wm, 0.0)), vm)
    inner_sqrt = inner_sqrt.reshape(p, q, d, d)
    t = np.einsum("iab,ijbc,icd->ijad", isa, inner_sqrt, isa)
    t = 0.5 * (t + np.swapaxes(t, 2, 3))
    grad_covs = np.eye(d)[None, None] - t
    return grad_means, grad_covs
