"""Consensus error, smallest Hessian eigenvalue, and stationary-point classes."""

from __future__ import annotations

import enum
import math

import numpy as np

from .objectives import Objective


class PointClass(str, enum.Enum):
    LARGE_GRADIENT = "large_gradient"
    EPS_STRICT_SADDLE = "eps_strict_saddle"
    EPS_SOSP = "eps_sosp"


class EigenvalueEstimationError(RuntimeError):
    pass


def consensus_error(x) -> float:
    """Squared Frobenius norm of the deviation of each agent's row from the mean row."""
    x = np.asarray(x, dtype=float)
    e = x - x.mean(axis=0, keepdims=True)
    return float(np.sum(e * e))


def shifted_power_min_eig(hvp, dim: int, shift: float, max_iter: int = 300, tol: float = 1e-6,
                          seed: int = 0) -> float:
    """Smallest eigenvalue of a symmetric operator from products ``hvp(v)``.

    Runs power iteration on ``shift*I - H``; with ``shift`` above the
    spectral radius that operator is positive semidefinite with top
    eigenvalue ``shift - lambda_min``. Raises
    :class:`EigenvalueEstimationError` when the Rayleigh quotient has not
    settled to ``tol`` (relative) within ``max_iter`` products.
    """
    if not shift > 0:
        raise ValueError("shift must be positive")
    v = np.random.default_rng(seed).normal(size=dim)
    v /= np.linalg.norm(v)
    mu_prev = None
    for _ in range(max_iter):
        w = shift * v - hvp(v)
        mu = float(v @ w)
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            return shift
        v = w / nw
        if mu_prev is not None and abs(mu - mu_prev) <= tol * max(1.0, abs(mu)):
            return shift - mu
        mu_prev = mu
    raise EigenvalueEstimationError(
        f"shifted power iteration did not converge in {max_iter} iterations (tol {tol:g})")


def min_hessian_eigenvalue(obj: Objective, x, *, max_iter: int = 300, tol: float = 1e-6,
                           shift: float | None = None) -> float:
    """lambda_min of the global Hessian at ``x``.

    Uses a dense symmetric eigensolver when ``obj.dim`` is within the dense
    limit, and shifted power iteration on finite-difference Hessian-vector
    products otherwise. The default shift is the objective's gradient
    Lipschitz bound on a box slightly larger than ``x``.
    """
    x = np.asarray(x, dtype=float)
    if obj.dim <= obj.hessian_dense_limit:
        h = obj.global_hessian(x)
        return float(np.linalg.eigvalsh(0.5 * (h + h.T))[0])
    if shift is None:
        shift = obj.lipschitz_bound(float(np.max(np.abs(x))) + 1.0)
    return shifted_power_min_eig(lambda v: obj.hessian_vector_product(x, v), obj.dim,
                                 shift, max_iter=max_iter, tol=tol)


def classify_point(obj: Objective, x, epsilon: float, rho: float, **eig_kw) -> PointClass:
    """Large gradient, epsilon-strict saddle or epsilon-second-order stationary."""
    if not epsilon > 0 or not rho > 0:
        raise ValueError("epsilon and rho must be positive")
    if float(np.linalg.norm(obj.global_grad(x))) > epsilon:
        return PointClass.LARGE_GRADIENT
    if min_hessian_eigenvalue(obj, x, **eig_kw) <= -math.sqrt(rho * epsilon):
        return PointClass.EPS_STRICT_SADDLE
    return PointClass.EPS_SOSP
