"""Synchronous multi-agent simulation of quantized distributed gradient descent.

Each round ``k`` every agent ``i``

1. quantizes its iterate once, ``q_i = Q(x_i^k)``, and broadcasts ``q_i``;
2. mixes ``x~_i = x_i + eps_k * sum_{j in N_i + {i}} a_ij (q_j - x_i)``;
3. descends ``x_i^{k+1} = x~_i - eta_k * grad f_i(x_i^k)``.

The self term uses the same broadcast realization, so stacked over agents
the round is exactly ``x^{k+1} = A_k x^k + eps_k A xi^k - eta_k grad f(x^k)``
with ``A_k = (1 - eps_k) I + eps_k A`` and ``xi^k = Q(x^k) - x^k``.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .diagnostics import classify_point, min_hessian_eigenvalue
from .mixing import MixingMatrix
from .objectives import Objective
from .quantizer import QuantizerSpec, Scheme, realize
from .schedule import ConstantSchedule, StepsizeSchedule
from .streams import INIT, AgentStreams

SCHEMA_VERSION = 1
CSV_COLUMNS = ("k", "consensus_error_sq", "F_bar", "grad_norm", "lambda_min",
               "bits_cum", "eps_k", "eta_k")
DIVERGENCE_THRESHOLD = 1e12


class DivergenceError(RuntimeError):
    def __init__(self, agent: int, iteration: int, detail: str):
        self.agent, self.iteration = agent, iteration
        super().__init__(f"agent {agent} diverged at iteration {iteration}: {detail}")


@dataclass(frozen=True)
class AtPoint:
    """Every agent starts at ``point`` (or row ``i`` of an ``N x d`` array)."""

    point: tuple

    def initial_states(self, n_agents, dim, streams):
        p = np.asarray(self.point, dtype=float)
        if p.ndim == 1:
            if p.size != dim:
                raise ValueError(f"initial point has {p.size} coordinates, objective has {dim}")
            return np.tile(p, (n_agents, 1))
        if p.shape != (n_agents, dim):
            raise ValueError(f"initial states have shape {p.shape}, expected {(n_agents, dim)}")
        return p.copy()

    def describe(self):
        return {"kind": "at_point", "point": np.asarray(self.point, dtype=float).tolist()}


@dataclass(frozen=True)
class RandomBox:
    """Independent uniform draws in ``[lo, hi]^d`` per agent, from each agent's init stream."""

    lo: float
    hi: float

    def initial_states(self, n_agents, dim, streams):
        if not self.lo < self.hi:
            raise ValueError("random_box needs lo < hi")
        return np.stack([streams.generator(i, 0, INIT).uniform(self.lo, self.hi, dim)
                         for i in range(n_agents)])

    def describe(self):
        return {"kind": "random_box", "lo": self.lo, "hi": self.hi}


@dataclass
class RunConfig:
    objective: Objective
    mixing: MixingMatrix
    quantizer: QuantizerSpec
    schedule: StepsizeSchedule
    n_iters: int
    master_seed: int = 0
    init: AtPoint | RandomBox = field(default_factory=lambda: AtPoint((0.0, 0.0)))
    hessian_cadence: int = 0
    classify_epsilon: float = 0.1
    classify_rho: float = 1.0
    keep_trajectory: bool = False
    divergence_threshold: float = DIVERGENCE_THRESHOLD

    def __post_init__(self):
        if self.n_iters < 1:
            raise ValueError("n_iters must be >= 1")
        if self.mixing.n_agents != self.objective.n_agents:
            raise ValueError(f"mixing has {self.mixing.n_agents} agents, "
                             f"objective has {self.objective.n_agents}")
        if self.hessian_cadence < 0:
            raise ValueError("hessian_cadence must be >= 0")

    def describe(self) -> dict:
        return {
            "objective": self.objective.describe(),
            "mixing": {"n_agents": self.mixing.n_agents, "sigma2": self.mixing.sigma2,
                       "weights": self.mixing.weights.tolist()},
            "quantizer": {"scheme": self.quantizer.scheme.value,
                          "interval_ell": self.quantizer.interval_ell,
                          "bit_width": self.quantizer.bit_width,
                          "log_base": self.quantizer.log_base},
            "schedule": self.schedule.describe(),
            "n_iters": self.n_iters,
            "master_seed": self.master_seed,
            "init": self.init.describe(),
            "hessian_cadence": self.hessian_cadence,
            "classify": {"epsilon": self.classify_epsilon, "rho": self.classify_rho},
        }


@dataclass
class StepResult:
    x_next: np.ndarray
    xi: np.ndarray          # realized quantization noise Q(x^k) - x^k
    grads: np.ndarray       # grad f_i(x_i^k), one row per agent
    eps_k: float
    eta_k: float
    bits: int
    saturated: int


def step(x: np.ndarray, k: int, cfg: RunConfig, streams: AgentStreams) -> StepResult:
    """One synchronous round of quantize, broadcast, mix, descend."""
    obj, mix, spec = cfg.objective, cfg.mixing, cfg.quantizer
    n, d = x.shape
    eps_k, eta_k = cfg.schedule.eps(k), cfg.schedule.eta(k)

    if spec.scheme is Scheme.IDENTITY:
        uniforms = None
    else:
        uniforms = np.empty((n, d))
        for i in range(n):
            streams.generator(i, k).random(out=uniforms[i])
    try:
        q, saturated = realize(x, k, spec, uniforms)
    except ValueError as exc:
        bad = int(np.flatnonzero(~np.isfinite(x).all(axis=1))[0])
        raise DivergenceError(bad, k, str(exc)) from None

    grads = obj.local_grads(x)
    # sum_j a_ij (q_j - x_i) = (A q)_i - x_i since rows of A sum to one
    pull = mix.weights @ q - x
    x_next = x + eps_k * pull - eta_k * grads
    peak = np.abs(x_next).max()
    if not peak <= cfg.divergence_threshold:
        bad = ~np.isfinite(x_next) | (np.abs(x_next) > cfg.divergence_threshold)
        agent = int(np.flatnonzero(bad.any(axis=1))[0])
        raise DivergenceError(agent, k + 1, f"|x| exceeds {cfg.divergence_threshold:g} or is non-finite")

    bits = d * spec.wire_bits_per_coord() * int(mix.degrees.sum())
    return StepResult(x_next, q - x, grads, eps_k, eta_k, bits, saturated)


@dataclass
class RunRecord:
    """Per-iteration metrics (row ``k`` describes ``x^k``) plus run metadata.

    ``eps_k``/``eta_k`` in row ``k`` are the stepsizes of the round that
    leaves ``x^k``; ``bits_cum`` counts bits sent before ``x^k`` existed.
    """

    columns: dict
    metadata: dict
    final_states: np.ndarray | None = None
    trajectory: np.ndarray | None = None

    @property
    def n_rows(self) -> int:
        return len(self.columns["k"])

    def __getitem__(self, name) -> np.ndarray:
        return self.columns[name]

    @property
    def final_mean(self) -> np.ndarray:
        return self.final_states.mean(axis=0)

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        cols = [self.columns[c] for c in CSV_COLUMNS]
        for row in zip(*cols):
            w.writerow([int(row[0])] + [_fmt(v) for v in row[1:5]] + [int(row[5])]
                       + [_fmt(v) for v in row[6:]])
        return buf.getvalue()

    def write(self, csv_path, include_wall_time: bool = True) -> tuple[Path, Path]:
        """Write the CSV and a ``.meta.yaml`` sidecar next to it, atomically."""
        csv_path = Path(csv_path)
        meta = dict(self.metadata)
        if not include_wall_time:
            meta.pop("wall_time_s", None)
        meta_path = csv_path.with_suffix(".meta.yaml")
        atomic_write(csv_path, self.to_csv_text())
        atomic_write(meta_path, yaml.safe_dump(_plain(meta), sort_keys=False))
        return csv_path, meta_path

    @classmethod
    def read(cls, csv_path) -> "RunRecord":
        csv_path = Path(csv_path)
        with open(csv_path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV header {header}")
        cols = {}
        for j, name in enumerate(header):
            vals = [r[j] for r in body]
            if name in ("k", "bits_cum"):
                cols[name] = np.array([int(v) for v in vals], dtype=np.int64)
            else:
                cols[name] = np.array([float(v) for v in vals])
        meta_path = csv_path.with_suffix(".meta.yaml")
        meta = yaml.safe_load(meta_path.read_text()) if meta_path.exists() else {}
        return cls(cols, meta)


def _fmt(v) -> str:
    return repr(float(v))


def _plain(obj):
    """Convert numpy scalars/arrays and enums into YAML-safe builtins."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def run(cfg: RunConfig) -> RunRecord:
    """Execute ``cfg.n_iters`` rounds and collect one metrics row per iterate."""
    t_start = time.perf_counter()
    obj = cfg.objective
    n, d = cfg.mixing.n_agents, obj.dim
    streams = AgentStreams(cfg.master_seed, n)
    x = cfg.init.initial_states(n, d, streams)

    rows = cfg.n_iters + 1
    cols = {
        "k": np.arange(rows, dtype=np.int64),
        "consensus_error_sq": np.empty(rows),
        "F_bar": np.empty(rows),
        "grad_norm": np.empty(rows),
        "lambda_min": np.full(rows, np.nan),
        "bits_cum": np.zeros(rows, dtype=np.int64),
        "eps_k": np.empty(rows),
        "eta_k": np.empty(rows),
    }
    traj = np.empty((rows, n, d)) if cfg.keep_trajectory else None
    bits = 0
    saturated = 0

    for k in range(rows):
        xbar = x.sum(axis=0) / n
        e = x - xbar
        cols["consensus_error_sq"][k] = float(np.vdot(e, e))
        f_bar, g_bar = obj.value_and_grad(xbar)
        cols["F_bar"][k] = f_bar
        cols["grad_norm"][k] = float(np.linalg.norm(g_bar))
        if cfg.hessian_cadence and k % cfg.hessian_cadence == 0:
            cols["lambda_min"][k] = min_hessian_eigenvalue(obj, xbar)
        cols["bits_cum"][k] = bits
        if traj is not None:
            traj[k] = x
        if k == cfg.n_iters:
            cols["eps_k"][k] = cfg.schedule.eps(k)
            cols["eta_k"][k] = cfg.schedule.eta(k)
            break
        res = step(x, k, cfg, streams)
        cols["eps_k"][k] = res.eps_k
        cols["eta_k"][k] = res.eta_k
        x = res.x_next
        bits += res.bits
        saturated += res.saturated

    final_class = classify_point(obj, x.mean(axis=0), cfg.classify_epsilon, cfg.classify_rho)
    meta = {
        "schema_version": SCHEMA_VERSION,
        "config": cfg.describe(),
        "saturation_count": saturated,
        "saturated": saturated > 0,
        "final_class": final_class.value,
        "final_mean": x.mean(axis=0).tolist(),
        "wall_time_s": time.perf_counter() - t_start,
    }
    return RunRecord(cols, meta, final_states=x, trajectory=traj)


# --------------------------------------------------------------------------
# decentralized gradient descent baseline


DGD_STEPSIZE_GRID = (0.5, 0.2, 0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001)


def dgd_config(cfg: RunConfig, eta: float) -> RunConfig:
    """Same problem, exact exchange, plain mixing (eps = 1) and constant eta."""
    return dataclasses.replace(
        cfg,
        quantizer=dataclasses.replace(cfg.quantizer, scheme=Scheme.IDENTITY),
        schedule=ConstantSchedule(1.0, eta),
    )


def dgd_converged(rec: RunRecord, settle_tol: float = 1e-2) -> bool:
    """Finite, below the starting objective, and settled over the last tenth."""
    f = rec["F_bar"]
    if not np.all(np.isfinite(f)) or not f[-1] < f[0]:
        return False
    tail = f[-max(2, len(f) // 10):]
    return float(tail.max() - tail.min()) <= settle_tol * max(float(f[0] - f[-1]), 1e-300)


def largest_stable_constant_stepsize(cfg: RunConfig, eps: float = 1.0,
                                     grid=DGD_STEPSIZE_GRID) -> float:
    """Largest ``eta`` on ``grid`` for which ``cfg`` with constant stepsizes
    ``(eps, eta)`` converges (keeps ``cfg``'s quantizer)."""
    for eta in sorted(grid, reverse=True):
        try:
            rec = run(dataclasses.replace(cfg, schedule=ConstantSchedule(eps, eta)))
        except DivergenceError:
            continue
        if dgd_converged(rec):
            return float(eta)
    raise RuntimeError(f"no stepsize in {sorted(grid, reverse=True)} converged")


def largest_stable_dgd_stepsize(cfg: RunConfig, grid=DGD_STEPSIZE_GRID) -> float:
    """Largest constant stepsize on ``grid`` for which DGD converges."""
    return largest_stable_constant_stepsize(dgd_config(cfg, 1.0), 1.0, grid)
