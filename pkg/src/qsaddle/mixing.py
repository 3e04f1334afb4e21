"""Interaction weight matrices for the agent network."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

STOCHASTIC_TOL = 1e-12


class MixingError(ValueError):
    pass


class NotSquareError(MixingError):
    pass


class AsymmetricWeightsError(MixingError):
    pass


class StochasticityError(MixingError):
    pass


class WeightSignError(MixingError):
    pass


class DisconnectedGraphError(MixingError):
    pass


@dataclass(frozen=True, eq=False)
class MixingMatrix:
    """A validated symmetric doubly stochastic weight matrix.

    ``sigma2`` is the largest eigenvalue magnitude of ``weights`` on the
    subspace orthogonal to the all-ones vector, i.e. ``||A - 11^T/N||_2``.
    Construct through :func:`from_weights` or :func:`metropolis`.
    """

    weights: np.ndarray
    sigma2: float

    @property
    def n_agents(self) -> int:
        return self.weights.shape[0]

    @cached_property
    def neighbors(self) -> tuple[np.ndarray, ...]:
        """Neighbor indices of each agent, excluding the agent itself."""
        a = self.weights
        return tuple(np.flatnonzero((a[i] > 0) & (np.arange(self.n_agents) != i))
                     for i in range(self.n_agents))

    @cached_property
    def closed_neighborhoods(self) -> tuple[np.ndarray, ...]:
        """Neighbor indices including the agent itself, sorted."""
        return tuple(np.sort(np.append(nb, i)) for i, nb in enumerate(self.neighbors))

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.array([len(nb) for nb in self.neighbors], dtype=np.int64)

    def edges(self) -> set[tuple[int, int]]:
        return {(i, int(j)) for i, nb in enumerate(self.neighbors) for j in nb if i < j}


def _second_eigen_magnitude(a: np.ndarray) -> float:
    lam = np.linalg.eigvalsh(a)
    # drop the consensus eigenvalue 1 (largest for a stochastic matrix)
    return float(np.max(np.abs(lam[:-1]))) if lam.size > 1 else 0.0


def from_weights(raw, tol: float = STOCHASTIC_TOL) -> MixingMatrix:
    """Validate a weight matrix and compute its spectral gap quantity."""
    a = np.array(raw, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
        raise NotSquareError(f"weights must be a non-empty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise MixingError("weights contain NaN or infinity")
    asym = float(np.max(np.abs(a - a.T)))
    if asym > tol:
        raise AsymmetricWeightsError(f"weights are not symmetric (max |a_ij - a_ji| = {asym:.3e})")
    row_err = float(np.max(np.abs(a.sum(axis=1) - 1.0)))
    if row_err > tol:
        raise StochasticityError(f"rows do not sum to 1 (max deviation {row_err:.3e})")
    col_err = float(np.max(np.abs(a.sum(axis=0) - 1.0)))
    if col_err > tol:
        raise StochasticityError(f"columns do not sum to 1 (max deviation {col_err:.3e})")
    if np.any(a < 0):
        raise WeightSignError("weights must be nonnegative")
    if np.any(np.diag(a) <= 0):
        raise WeightSignError("self-weights a_ii must be positive")
    a = 0.5 * (a + a.T)
    sigma2 = _second_eigen_magnitude(a)
    if sigma2 >= 1.0 - tol:
        raise DisconnectedGraphError(
            f"||A - 11^T/N|| = {sigma2:.6f} >= 1: interaction graph is disconnected")
    a.setflags(write=False)
    return MixingMatrix(weights=a, sigma2=sigma2)


def _normalise_edges(edge_list, n_agents: int) -> set[tuple[int, int]]:
    edges = set()
    for i, j in edge_list:
        i, j = int(i), int(j)
        if i == j:
            raise MixingError(f"self-loop ({i}, {i}) in edge list")
        if not (0 <= i < n_agents and 0 <= j < n_agents):
            raise MixingError(f"edge ({i}, {j}) out of range for {n_agents} agents")
        edges.add((min(i, j), max(i, j)))
    return edges


def metropolis(edge_list, n_agents: int) -> MixingMatrix:
    """Metropolis weights ``a_ij = 1 / (1 + max(deg_i, deg_j))`` on an undirected graph."""
    edges = _normalise_edges(edge_list, n_agents)
    deg = np.zeros(n_agents, dtype=np.int64)
    for i, j in edges:
        deg[i] += 1
        deg[j] += 1
    a = np.zeros((n_agents, n_agents))
    for i, j in edges:
        a[i, j] = a[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
    a[np.diag_indices(n_agents)] = 1.0 - a.sum(axis=1)
    if n_agents > 1 and np.any(deg == 0):
        raise DisconnectedGraphError(f"agents {np.flatnonzero(deg == 0).tolist()} have no neighbors")
    return from_weights(a)


def ring_edges(n_agents: int) -> set[tuple[int, int]]:
    if n_agents <= 2:
        return path_edges(n_agents)
    return {(min(i, (i + 1) % n_agents), max(i, (i + 1) % n_agents)) for i in range(n_agents)}


def complete_edges(n_agents: int) -> set[tuple[int, int]]:
    return {(i, j) for i in range(n_agents) for j in range(i + 1, n_agents)}


def path_edges(n_agents: int) -> set[tuple[int, int]]:
    return {(i, i + 1) for i in range(n_agents - 1)}


def metropolis_ring(n_agents: int = 5) -> MixingMatrix:
    """The default five-agent topology."""
    return metropolis(ring_edges(n_agents), n_agents)


def lazy(m: MixingMatrix, eps_k: float) -> np.ndarray:
    """``(1 - eps_k) I + eps_k A``."""
    if not 0 < eps_k <= 1:
        raise ValueError(f"eps_k must lie in (0, 1], got {eps_k}")
    return (1.0 - eps_k) * np.eye(m.n_agents) + eps_k * m.weights


def load_weights(path) -> MixingMatrix:
    """Read a whitespace-separated matrix file (one row per line)."""
    return from_weights(np.loadtxt(Path(path), dtype=float, ndmin=2))


def load_edge_list(path, n_agents: int | None = None) -> MixingMatrix:
    """Read an edge-list file, one ``i j`` pair per line (``#`` starts a comment),
    and build Metropolis weights. ``n_agents`` defaults to the largest index + 1."""
    pairs = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise MixingError(f"{path}:{lineno}: expected 'i j', got {line!r}")
        try:
            pairs.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise MixingError(f"{path}:{lineno}: non-integer agent index in {line!r}") from None
    if n_agents is None:
        n_agents = 1 + max(max(p) for p in pairs) if pairs else 1
    return metropolis(pairs, n_agents)


def save_weights(m: MixingMatrix, path) -> None:
    np.savetxt(Path(path), m.weights, fmt="%.17g")
