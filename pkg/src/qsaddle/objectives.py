"""Distributed nonconvex test objectives.

Every objective is a sum ``F(x) = (1/N) sum_i f_i(x)`` over ``N`` agents with
private local functions. Local gradients are exact; the global Hessian is
exact where cheap and a central finite difference of the global gradient
otherwise.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from pathlib import Path

import numpy as np
from scipy.special import expit

HESSIAN_DENSE_LIMIT = 400


class HessianTooLargeError(RuntimeError):
    """Dense Hessian requested for a problem above the dense limit."""


def _finite(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not np.isfinite(x).all():
        raise ValueError("objective evaluated at a non-finite point")
    return x


class Objective(ABC):
    n_agents: int
    dim: int
    hessian_dense_limit: int = HESSIAN_DENSE_LIMIT
    name: str = "objective"

    @abstractmethod
    def local_value(self, agent: int, x) -> float: ...

    @abstractmethod
    def local_grad(self, agent: int, x) -> np.ndarray: ...

    @abstractmethod
    def lipschitz_bound(self, radius: float) -> float:
        """Upper bound on the gradient Lipschitz constant of F over the
        box ``||x||_inf <= radius``."""

    def global_value(self, x) -> float:
        return float(np.mean([self.local_value(i, x) for i in range(self.n_agents)]))

    def global_grad(self, x) -> np.ndarray:
        return np.mean([self.local_grad(i, x) for i in range(self.n_agents)], axis=0)

    def value_and_grad(self, x) -> tuple[float, np.ndarray]:
        return self.global_value(x), self.global_grad(x)

    def local_grads(self, xs) -> np.ndarray:
        """Row ``i`` is ``grad f_i(xs[i])``; subclasses override with batched code."""
        xs = np.asarray(xs, dtype=float)
        return np.stack([self.local_grad(i, xs[i]) for i in range(self.n_agents)])

    def global_hessian(self, x) -> np.ndarray:
        """Central finite-difference Hessian, column ``j`` from ``+/- h e_j``.

        Not symmetrised; callers that need an eigendecomposition should use
        ``(H + H.T) / 2``.
        """
        x = _finite(x)
        self._check_dense()
        h = 1e-5 * max(1.0, float(np.max(np.abs(x))))
        cols = []
        for j in range(self.dim):
            e = np.zeros(self.dim)
            e[j] = h
            cols.append((self.global_grad(x + e) - self.global_grad(x - e)) / (2 * h))
        return np.column_stack(cols)

    def hessian_vector_product(self, x, v) -> np.ndarray:
        x = _finite(x)
        v = np.asarray(v, dtype=float)
        nv = float(np.linalg.norm(v))
        if not nv > 0:
            raise ValueError("hessian_vector_product needs a nonzero direction")
        delta = 1e-5 * max(1.0, float(np.linalg.norm(x))) / nv
        return (self.global_grad(x + delta * v) - self.global_grad(x - delta * v)) / (2 * delta)

    def _check_dense(self):
        if self.dim > self.hessian_dense_limit:
            raise HessianTooLargeError(
                f"d = {self.dim} exceeds hessian_dense_limit = {self.hessian_dense_limit}; "
                "use hessian_vector_product")

    def describe(self) -> dict:
        return {"name": self.name, "n_agents": self.n_agents, "dim": self.dim}


# --------------------------------------------------------------------------
# scalar bilinear logistic classifier


class LogisticBilinear(Objective):
    """Scalar two-weight logistic loss with ridge penalty.

    ``f_i(w1, w2) = mean_j log(1 + exp(-s_j w1 w2)) + (reg/2)(w1^2 + w2^2)``
    with ``s_j = y_j h_j`` over agent ``i``'s samples. When the agents'
    mean of ``s`` averages to 1 the origin is a strict saddle of ``F`` with
    Hessian ``[[reg, -1/2], [-1/2, reg]]``.
    """

    name = "logistic_bilinear"
    dim = 2

    def __init__(self, samples, reg: float = 0.1):
        if not reg > 0:
            raise ValueError(f"reg must be positive, got {reg}")
        self.reg = float(reg)
        self.samples = []
        for i, agent_samples in enumerate(samples):
            arr = np.asarray(agent_samples, dtype=float).reshape(-1, 2)
            if arr.shape[0] == 0:
                raise ValueError(f"agent {i} has no samples")
            if not np.all(np.isin(arr[:, 1], (-1.0, 1.0))):
                raise ValueError(f"agent {i}: labels must be +/-1")
            self.samples.append(arr)
        self.n_agents = len(self.samples)
        self._s = [arr[:, 0] * arr[:, 1] for arr in self.samples]
        # zero-padded margins with per-agent averaging weights, for batched evaluation
        width = max(len(s) for s in self._s)
        self._S = np.zeros((self.n_agents, width))
        self._W = np.zeros((self.n_agents, width))
        for i, s in enumerate(self._s):
            self._S[i, :len(s)] = s
            self._W[i, :len(s)] = 1.0 / len(s)
        self._WS = self._W * self._S
        # pooled view: F averages agents, each agent averages its samples
        flat = np.concatenate(self._s)
        wts = np.concatenate([np.full(len(s), 1.0 / (len(s) * self.n_agents)) for s in self._s])
        # repeated margins (e.g. identical splits) collapse into one weighted term
        self._s_flat, inv = np.unique(flat, return_inverse=True)
        self._w_flat = np.bincount(inv.ravel(), weights=wts)
        self._ws_flat = self._w_flat * self._s_flat

    @classmethod
    def synthetic(cls, n_agents: int = 5, n_samples: int = 200, split: str = "identical",
                  seed: int = 0, reg: float = 0.1, label_noise: float = 0.2) -> "LogisticBilinear":
        """Random samples rescaled so the pooled mean of ``y*h`` is exactly 1.

        ``split='identical'`` gives every agent the whole pool;
        ``split='heterogeneous'`` deals the pool round-robin, so local means
        differ while their average stays 1.
        """
        rng = np.random.default_rng(seed)
        if split == "heterogeneous" and n_samples % n_agents:
            raise ValueError("heterogeneous split needs n_samples divisible by n_agents")
        h = rng.normal(0.0, 1.0, n_samples)
        y = np.where(h >= 0, 1.0, -1.0)
        flip = rng.random(n_samples) < label_noise
        y[flip] *= -1
        s = y * h
        h = h / s.mean()
        pool = np.column_stack([h, y])
        if split == "identical":
            parts = [pool.copy() for _ in range(n_agents)]
        elif split == "heterogeneous":
            order = np.argsort(y * h)  # sort by margin so the shards really differ
            parts = [pool[order[i::n_agents]] for i in range(n_agents)]
        else:
            raise ValueError(f"unknown split {split!r}")
        return cls(parts, reg=reg)

    @classmethod
    def from_files(cls, paths, reg: float = 0.1) -> "LogisticBilinear":
        """One file per agent, each line ``h y``."""
        return cls([np.loadtxt(Path(p), dtype=float, ndmin=2) for p in paths], reg=reg)

    def pooled_margin_mean(self) -> float:
        return float(np.mean([s.mean() for s in self._s]))

    def local_value(self, agent, x):
        w1, w2 = _finite(x)
        u = self._s[agent] * (w1 * w2)
        return float(np.mean(np.logaddexp(0.0, -u)) + 0.5 * self.reg * (w1 * w1 + w2 * w2))

    def local_grad(self, agent, x):
        w1, w2 = _finite(x)
        s = self._s[agent]
        # d/du log(1 + e^-u) = -sigmoid(-u)
        g = -s * _sigmoid(-s * (w1 * w2))
        m = float(g.mean())
        return np.array([m * w2 + self.reg * w1, m * w1 + self.reg * w2])

    def local_grads(self, xs):
        xs = _finite(xs)
        w1, w2 = xs[:, 0], xs[:, 1]
        sig = expit(self._S * (-(w1 * w2))[:, None])
        m = -np.einsum("ij,ij->i", self._WS, sig)
        out = np.empty_like(xs)
        out[:, 0] = m * w2 + self.reg * w1
        out[:, 1] = m * w1 + self.reg * w2
        return out

    def value_and_grad(self, x):
        w1, w2 = _finite(x)
        u = self._s_flat * (w1 * w2)
        value = float(self._w_flat @ np.logaddexp(0.0, -u))
        m = -float(self._ws_flat @ expit(-u))
        ridge = 0.5 * self.reg * (w1 * w1 + w2 * w2)
        return value + ridge, np.array([m * w2 + self.reg * w1, m * w1 + self.reg * w2])

    def local_hessian(self, agent, x) -> np.ndarray:
        w1, w2 = _finite(x)
        s = self._s[agent]
        sig = _sigmoid(-s * (w1 * w2))
        curv = float(np.mean(s * s * sig * (1 - sig)))
        first = float(np.mean(-s * sig))
        h12 = curv * w1 * w2 + first
        return np.array([[curv * w2 * w2 + self.reg, h12], [h12, curv * w1 * w1 + self.reg]])

    def global_hessian(self, x):
        return np.mean([self.local_hessian(i, x) for i in range(self.n_agents)], axis=0)

    def lipschitz_bound(self, radius):
        # row sums of |Hessian| with |sigma'| <= 1/4, |sigma| <= 1
        per_agent = [float(np.mean(s * s)) * radius**2 / 2 + float(np.mean(np.abs(s)))
                     for s in self._s]
        return float(np.mean(per_agent)) + self.reg

    def describe(self):
        out = super().describe()
        out.update(reg=self.reg, samples_per_agent=[len(s) for s in self._s],
                   pooled_margin_mean=self.pooled_margin_mean())
        return out


def _sigmoid(z):
    return expit(z)


# --------------------------------------------------------------------------
# matrix factorization


class MatrixFactorization(Objective):
    """``F(U, V) = ||P_Omega(U V^T - A)||_F^2 / 2`` with Omega split across agents.

    Agent ``i`` holds the entries ``Omega_i`` and
    ``f_i = (N/2) ||P_Omega_i(U V^T - A)||_F^2``, so the average over agents
    is ``F``. The variable is ``x = [vec(U); vec(V)]`` with both blocks
    row-major, ``d = (m + n) r``.
    """

    name = "matrix_factorization"

    def __init__(self, target, rank: int, masks):
        self.target = np.asarray(target, dtype=float)
        self.m, self.n = self.target.shape
        self.rank = int(rank)
        if not 0 < self.rank < min(self.m, self.n):
            raise ValueError(f"rank must lie in [1, min(m, n)), got {rank}")
        self.masks = [np.asarray(mk, dtype=bool) for mk in masks]
        self.n_agents = len(self.masks)
        total = np.zeros_like(self.target, dtype=np.int64)
        for mk in self.masks:
            if mk.shape != self.target.shape:
                raise ValueError("mask shape differs from the target matrix")
            total += mk
        if np.any(total > 1):
            raise ValueError("observed entries must be disjoint across agents")
        observed = total.astype(bool)
        if not observed.any(axis=1).all() or not observed.any(axis=0).all():
            raise ValueError("every row and column must be observed at least once")
        self.observed = observed
        self.dim = (self.m + self.n) * self.rank
        self._masked_target = [np.where(mk, self.target, 0.0) for mk in self.masks]
        self._mask_stack = np.stack(self.masks)
        self._target_stack = np.stack(self._masked_target)
        self.planted_factors = None
        self.reference = None

    @classmethod
    def planted(cls, m: int = 30, n: int = 20, rank: int = 3, n_agents: int = 5,
                seed: int = 0, factor_scale: float = 0.15,
                noise: float = 0.0) -> "MatrixFactorization":
        """Planted rank-``rank`` matrix, fully observed, rows dealt round-robin.

        Planted factor entries are N(0, factor_scale^2). The small default keeps
        the local curvature (which carries a factor N) below 2/eta for stepsizes
        up to about 0.3. ``noise`` adds i.i.d. N(0, noise^2) to the observed
        matrix, so the fit is no longer exact; :meth:`relative_error` still
        compares against the clean planted product.
        """
        if not factor_scale > 0:
            raise ValueError("factor_scale must be positive")
        if noise < 0:
            raise ValueError("noise must be >= 0")
        rng = np.random.default_rng(seed)
        U = factor_scale * rng.normal(size=(m, rank))
        V = factor_scale * rng.normal(size=(n, rank))
        clean = U @ V.T
        target = clean + noise * rng.normal(size=clean.shape) if noise else clean
        masks = []
        for i in range(n_agents):
            mk = np.zeros((m, n), dtype=bool)
            mk[i::n_agents, :] = True
            masks.append(mk)
        obj = cls(target, rank, masks)
        obj.planted_factors = (U, V)
        obj.reference = clean
        return obj

    @classmethod
    def from_triplets(cls, path, rank: int, n_agents: int, shape=None) -> "MatrixFactorization":
        """Load ``row col value`` lines; rows are dealt to agents round-robin."""
        data = np.loadtxt(Path(path), dtype=float, ndmin=2)
        rows, cols = data[:, 0].astype(int), data[:, 1].astype(int)
        m, n = shape if shape is not None else (rows.max() + 1, cols.max() + 1)
        target = np.zeros((m, n))
        target[rows, cols] = data[:, 2]
        masks = [np.zeros((m, n), dtype=bool) for _ in range(n_agents)]
        for r, c in zip(rows, cols):
            masks[r % n_agents][r, c] = True
        return cls(target, rank, masks)

    def split(self, x) -> tuple[np.ndarray, np.ndarray]:
        x = _finite(x)
        k = self.m * self.rank
        return x[:k].reshape(self.m, self.rank), x[k:].reshape(self.n, self.rank)

    def join(self, U, V) -> np.ndarray:
        return np.concatenate([np.ravel(U), np.ravel(V)])

    def _residual(self, agent, U, V):
        return np.where(self.masks[agent], U @ V.T, 0.0) - self._masked_target[agent]

    def local_value(self, agent, x):
        U, V = self.split(x)
        r = self._residual(agent, U, V)
        return 0.5 * self.n_agents * float(np.sum(r * r))

    def local_grad(self, agent, x):
        U, V = self.split(x)
        r = self.n_agents * self._residual(agent, U, V)
        return self.join(r @ V, r.T @ U)

    def local_grads(self, xs):
        xs = _finite(xs)
        k = self.m * self.rank
        U = xs[:, :k].reshape(-1, self.m, self.rank)
        V = xs[:, k:].reshape(-1, self.n, self.rank)
        r = self.n_agents * (np.where(self._mask_stack, U @ V.transpose(0, 2, 1), 0.0)
                             - self._target_stack)
        gu = r @ V
        gv = r.transpose(0, 2, 1) @ U
        return np.concatenate([gu.reshape(len(xs), -1), gv.reshape(len(xs), -1)], axis=1)

    def value_and_grad(self, x):
        U, V = self.split(x)
        r = np.where(self.observed, U @ V.T - self.target, 0.0)
        return 0.5 * float(np.sum(r * r)), self.join(r @ V, r.T @ U)

    def global_value(self, x):
        U, V = self.split(x)
        r = np.where(self.observed, U @ V.T - self.target, 0.0)
        return 0.5 * float(np.sum(r * r))

    def global_grad(self, x):
        U, V = self.split(x)
        r = np.where(self.observed, U @ V.T - self.target, 0.0)
        return self.join(r @ V, r.T @ U)

    def rank_deficient_point(self, seed: int = 0, scale: float = 0.1, drop: int = 1) -> np.ndarray:
        """Random factors with the last ``drop`` columns of U and V zeroed.

        Exact-gradient methods started here never leave the rank
        ``rank - drop`` subspace, because the gradient of a zero column pair
        is zero.
        """
        if not 1 <= drop <= self.rank:
            raise ValueError(f"drop must lie in [1, rank], got {drop}")
        rng = np.random.default_rng(seed)
        U = scale * rng.normal(size=(self.m, self.rank))
        V = scale * rng.normal(size=(self.n, self.rank))
        U[:, self.rank - drop:] = 0.0
        V[:, self.rank - drop:] = 0.0
        return self.join(U, V)

    def relative_error(self, x) -> float:
        """``||U V^T - M||_F / ||M||_F`` with ``M`` the clean planted product
        when known, else the observed target."""
        U, V = self.split(x)
        ref = self.target if self.reference is None else self.reference
        return float(np.linalg.norm(U @ V.T - ref) / np.linalg.norm(ref))

    def lipschitz_bound(self, radius):
        # GN part ||J||^2 <= ||U||_F^2 + ||V||_F^2; residual part <= ||R||_F
        fu = radius**2 * self.m * self.rank
        fv = radius**2 * self.n * self.rank
        res = radius**2 * self.rank * math.sqrt(self.m * self.n) + float(np.linalg.norm(self.target))
        return fu + fv + res

    def describe(self):
        out = super().describe()
        out.update(shape=[self.m, self.n], rank=self.rank,
                   entries_per_agent=[int(mk.sum()) for mk in self.masks])
        return out


# --------------------------------------------------------------------------
# quadratic strict saddle


class QuadraticSaddle(Objective):
    """``f_i(x) = x^T H_i x / 2`` whose average Hessian is indefinite."""

    name = "quadratic_saddle"

    def __init__(self, hessians):
        hs = [np.asarray(h, dtype=float) for h in hessians]
        if not hs:
            raise ValueError("need at least one agent")
        d = hs[0].shape[0]
        for i, h in enumerate(hs):
            if h.shape != (d, d):
                raise ValueError(f"H_{i} has shape {h.shape}, expected {(d, d)}")
            if not np.allclose(h, h.T, atol=1e-12):
                raise ValueError(f"H_{i} is not symmetric")
        self.hessians = [0.5 * (h + h.T) for h in hs]
        self.n_agents = len(hs)
        self.dim = d
        self._stack = np.stack(self.hessians)
        self.mean_hessian = self._stack.mean(axis=0)
        lam = np.linalg.eigvalsh(self.mean_hessian)
        self.margin = float(-lam[0])

    @classmethod
    def random(cls, n_agents: int = 5, dim: int = 4, margin: float = 0.1,
               spread: float = 0.1, seed: int = 0) -> "QuadraticSaddle":
        """Average Hessian with spectrum ``-margin, 1, ..., 2`` in a random basis;
        each agent adds a zero-sum symmetric perturbation of size ``spread``."""
        if not margin > 0:
            raise ValueError("margin must be positive")
        if dim < 2:
            raise ValueError("need dim >= 2 for a saddle")
        rng = np.random.default_rng(seed)
        q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
        lam = np.concatenate([[-margin], np.linspace(1.0, 2.0, dim - 1)])
        mean = (q * lam) @ q.T
        pert = rng.normal(size=(n_agents, dim, dim))
        pert = 0.5 * (pert + pert.transpose(0, 2, 1))
        pert -= pert.mean(axis=0)
        return cls([mean + spread * p for p in pert])

    def local_value(self, agent, x):
        x = _finite(x)
        return 0.5 * float(x @ self.hessians[agent] @ x)

    def local_grad(self, agent, x):
        return self.hessians[agent] @ _finite(x)

    def local_grads(self, xs):
        return np.einsum("iab,ib->ia", self._stack, _finite(xs))

    def value_and_grad(self, x):
        x = _finite(x)
        g = self.mean_hessian @ x
        return 0.5 * float(x @ g), g

    def global_hessian(self, x):
        _finite(x)
        return self.mean_hessian.copy()

    def lipschitz_bound(self, radius):
        return float(np.mean([np.max(np.abs(np.linalg.eigvalsh(h))) for h in self.hessians]))

    def describe(self):
        out = super().describe()
        out.update(margin=self.margin)
        return out


def estimate_gradient_bound(obj: Objective, lo: float, hi: float, n_points: int = 200,
                            seed: int = 0) -> float:
    """Largest local gradient norm over random points in the box ``[lo, hi]^d``."""
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(n_points):
        x = rng.uniform(lo, hi, obj.dim)
        for i in range(obj.n_agents):
            best = max(best, float(np.linalg.norm(obj.local_grad(i, x))))
    return best
