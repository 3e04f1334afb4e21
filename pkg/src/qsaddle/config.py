"""Experiment configuration files.

A config is a YAML document with a ``schema_version`` and four sections::

    schema_version: 1
    run:            # one RunConfig in file form (no seed)
      objective: {kind: logistic_bilinear, n_agents: 5}
      quantizer: {interval_ell: 0.1, scheme: switching}
      schedule:  {mode: practical, practical_t0: 10, practical_hold: 3000, practical_n_holds: 1}
      n_iters: 5000
    batch:          # either an explicit seed list or seed_base + n_seeds
      seeds: [0, 1, 2]
    comparisons:    # optional named variants, deep-merged over ``run``
      - name: identity
        overrides: {quantizer: {scheme: identity}}
    output_dir: out

Unknown keys are errors. Semantic checks are delegated to the library
constructors, so error messages are the same ones raised by
:class:`~qsaddle.schedule.ScheduleParams` and friends.
"""

from __future__ import annotations

import copy
import dataclasses
from pathlib import Path
from typing import Annotated, Any, Literal, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import mixing as mx
from .engine import (DGD_STEPSIZE_GRID, AtPoint, RandomBox, RunConfig, atomic_write,
                     largest_stable_constant_stepsize)
from .objectives import (LogisticBilinear, MatrixFactorization, Objective, QuadraticSaddle,
                         estimate_gradient_bound)
from .quantizer import QuantizerSpec
from .schedule import (ConstantSchedule, ProblemConstants, ScheduleParams,
                       diminishing_schedule, practical_schedule, random_hold_schedule,
                       theoretical_schedule)
from .streams import AgentStreams

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration file; the message carries file and line."""


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# -- objectives -------------------------------------------------------------


class LogisticCfg(_Model):
    kind: Literal["logistic_bilinear"]
    n_agents: int = Field(5, ge=1)
    n_samples: int = Field(200, ge=1)
    split: Literal["identical", "heterogeneous"] = "identical"
    seed: int = 0
    reg: float = Field(0.1, ge=0)
    label_noise: float = Field(0.2, ge=0, le=1)
    files: tuple[str, ...] | None = None  # one "h y" file per agent

    def build(self, base: Path) -> Objective:
        if self.files:
            return LogisticBilinear.from_files([base / f for f in self.files], reg=self.reg)
        return LogisticBilinear.synthetic(self.n_agents, self.n_samples, self.split,
                                          seed=self.seed, reg=self.reg,
                                          label_noise=self.label_noise)


class MatrixFactorizationCfg(_Model):
    kind: Literal["matrix_factorization"]
    m: int = Field(30, ge=2)
    n: int = Field(20, ge=2)
    rank: int = Field(3, ge=1)
    n_agents: int = Field(5, ge=1)
    seed: int = 0
    factor_scale: float = Field(0.15, gt=0)
    noise: float = Field(0.0, ge=0)
    triplets: str | None = None  # "row col value" file replaces the planted matrix
    shape: tuple[int, int] | None = None

    def build(self, base: Path) -> Objective:
        if self.triplets:
            return MatrixFactorization.from_triplets(base / self.triplets, self.rank,
                                                     self.n_agents, self.shape)
        return MatrixFactorization.planted(self.m, self.n, self.rank, self.n_agents,
                                           seed=self.seed, factor_scale=self.factor_scale,
                                           noise=self.noise)


class QuadraticCfg(_Model):
    kind: Literal["quadratic_saddle"]
    n_agents: int = Field(5, ge=1)
    dim: int = Field(4, ge=2)
    margin: float = Field(0.1, gt=0)
    spread: float = Field(0.1, ge=0)
    seed: int = 0

    def build(self, base: Path) -> Objective:
        return QuadraticSaddle.random(self.n_agents, self.dim, self.margin, self.spread,
                                      seed=self.seed)


ObjectiveCfg = Annotated[Union[LogisticCfg, MatrixFactorizationCfg, QuadraticCfg],
                         Field(discriminator="kind")]


# -- mixing, quantizer, schedule, init --------------------------------------


class MixingCfg(_Model):
    kind: Literal["ring", "complete", "path", "edge_list", "weights"] = "ring"
    path: str | None = None

    @model_validator(mode="after")
    def _needs_path(self):
        if self.kind in ("edge_list", "weights") and not self.path:
            raise ValueError(f"mixing kind {self.kind!r} needs a path")
        return self

    def build(self, n_agents: int, base: Path) -> mx.MixingMatrix:
        if self.kind == "ring":
            return mx.metropolis(mx.ring_edges(n_agents), n_agents)
        if self.kind == "complete":
            return mx.metropolis(mx.complete_edges(n_agents), n_agents)
        if self.kind == "path":
            return mx.metropolis(mx.path_edges(n_agents), n_agents)
        if self.kind == "edge_list":
            return mx.load_edge_list(base / self.path, n_agents)
        return mx.load_weights(base / self.path)


class QuantizerCfg(_Model):
    interval_ell: float
    scheme: Literal["switching", "level1_only", "log_scale", "identity"] = "switching"
    bit_width: int = 9
    log_base: float = 2.0

    @model_validator(mode="after")
    def _check(self):
        self.build()
        return self

    def build(self) -> QuantizerSpec:
        return QuantizerSpec(self.interval_ell, self.scheme, self.bit_width, self.log_base)


class TheoryCfg(_Model):
    """Problem constants for the theoretical schedule; G and L are estimated
    on ``[-box, box]^d`` when omitted."""

    rho: float = Field(1.0, gt=0)
    G: float | None = Field(None, gt=0)
    L: float | None = Field(None, gt=0)
    f_star: float = 0.0
    box: float = Field(1.0, gt=0)


class ScheduleCfg(_Model):
    mode: Literal["practical", "theoretical", "diminishing", "random_hold", "constant"] = "practical"
    alpha: float = 0.62
    beta: float = 0.94
    c1: float = 0.03
    c2: float = 0.3
    p: float = 0.1
    epsilon_target: float = 0.1
    gamma: float = 1.0
    practical_t0: int | None = None
    practical_hold: int | None = None
    practical_n_holds: int | None = None
    hold_seed: int = 0                             # random_hold only
    eps: float | None = None                       # constant only
    eta: float | Literal["auto"] | None = None     # constant only; "auto" = grid search
    theory: TheoryCfg | None = None                # theoretical only

    @model_validator(mode="after")
    def _check(self):
        if self.mode == "constant":
            if self.eps is None or self.eta is None:
                raise ValueError("constant schedule needs eps and eta")
            ConstantSchedule(self.eps, 1.0 if self.eta == "auto" else self.eta)
            return self
        sp = self.params()  # raises on alpha/beta/c1/c2/p violations
        if self.mode in ("practical", "random_hold"):
            practical_schedule(sp)
        return self

    def params(self) -> ScheduleParams:
        return ScheduleParams(
            alpha=self.alpha, beta=self.beta, c1=self.c1, c2=self.c2, p=self.p,
            epsilon_target=self.epsilon_target, gamma=self.gamma,
            mode="theoretical" if self.mode == "theoretical" else "practical",
            practical_t0=self.practical_t0, practical_hold=self.practical_hold,
            practical_n_holds=self.practical_n_holds)


class AtPointCfg(_Model):
    kind: Literal["at_point"]
    point: tuple[float, ...] | None = None  # default: the origin

    def build(self, obj: Objective, seed: int) -> AtPoint:
        p = np.zeros(obj.dim) if self.point is None else np.asarray(self.point, dtype=float)
        return AtPoint(tuple(p.tolist()))


class RandomBoxCfg(_Model):
    kind: Literal["random_box"]
    lo: float = -1.0
    hi: float = 1.0

    @model_validator(mode="after")
    def _check(self):
        if not self.lo < self.hi:
            raise ValueError(f"random_box needs lo < hi, got lo={self.lo}, hi={self.hi}")
        return self

    def build(self, obj: Objective, seed: int) -> RandomBox:
        return RandomBox(self.lo, self.hi)


class RankDeficientCfg(_Model):
    """Shared start with the last ``drop`` factor columns zeroed (matrix factorization).

    Without ``seed`` the factors are drawn from the run's master seed, so
    every batch seed starts from its own point.
    """

    kind: Literal["rank_deficient"]
    seed: int | None = None
    scale: float = Field(0.1, gt=0)
    drop: int = Field(1, ge=1)

    def build(self, obj: Objective, seed: int) -> AtPoint:
        if not isinstance(obj, MatrixFactorization):
            raise ConfigError("init kind 'rank_deficient' needs a matrix_factorization objective")
        s = seed if self.seed is None else self.seed
        return AtPoint(tuple(obj.rank_deficient_point(s, self.scale, self.drop).tolist()))


InitCfg = Annotated[Union[AtPointCfg, RandomBoxCfg, RankDeficientCfg], Field(discriminator="kind")]


class ClassifyCfg(_Model):
    epsilon: float = Field(0.1, gt=0)
    rho: float = Field(1.0, gt=0)


class RunCfg(_Model):
    objective: ObjectiveCfg
    quantizer: QuantizerCfg
    schedule: ScheduleCfg
    n_iters: int = Field(ge=1)
    mixing: MixingCfg = MixingCfg()
    init: InitCfg = AtPointCfg(kind="at_point")
    hessian_cadence: int = Field(0, ge=0)
    classify: ClassifyCfg = ClassifyCfg()
    divergence_threshold: float = Field(1e12, gt=0)


# -- batch and experiment ---------------------------------------------------


class BatchCfg(_Model):
    seeds: tuple[int, ...] | None = None
    seed_base: int | None = None
    n_seeds: int | None = None

    @model_validator(mode="after")
    def _check(self):
        if self.seeds is not None:
            if self.seed_base is not None or self.n_seeds is not None:
                raise ValueError("give either seeds or seed_base/n_seeds, not both")
            if not self.seeds:
                raise ValueError("n_seeds must be >= 1 (empty seed list)")
            if len(set(self.seeds)) != len(self.seeds):
                raise ValueError("batch seeds must be unique")
        elif self.n_seeds is not None and self.n_seeds < 1:
            raise ValueError(f"n_seeds must be >= 1, got {self.n_seeds}")
        for s in self.seed_list():
            if not 0 <= s < 2**64:
                raise ValueError(f"seed {s} outside [0, 2**64)")
        return self

    def seed_list(self) -> tuple[int, ...]:
        if self.seeds is not None:
            return tuple(self.seeds)
        base = self.seed_base or 0
        return tuple(range(base, base + (1 if self.n_seeds is None else self.n_seeds)))


class VariantCfg(_Model):
    name: str = Field(min_length=1, pattern=r"^[A-Za-z0-9_.-]+$")
    overrides: dict[str, Any] = Field(default_factory=dict)


class ExperimentConfig(_Model):
    schema_version: Literal[1]
    run: RunCfg
    batch: BatchCfg = BatchCfg()
    comparisons: tuple[VariantCfg, ...] = ()
    output_dir: str | None = None

    @model_validator(mode="after")
    def _check(self):
        names = [v.name for v in self.comparisons]
        dup = sorted({n for n in names if names.count(n) > 1})
        if dup:
            raise ValueError(f"variant names must be unique, repeated: {dup}")
        return self

    def variants(self) -> list[tuple[str, RunCfg]]:
        """``(name, run config)`` per variant; a bare ``run`` is the variant ``main``."""
        if not self.comparisons:
            return [("main", self.run)]
        base = self.run.model_dump(mode="json", exclude_none=True)
        return [(v.name, RunCfg.model_validate(deep_merge(base, v.overrides)))
                for v in self.comparisons]

    def seeds(self) -> tuple[int, ...]:
        return self.batch.seed_list()


def deep_merge(base: dict, over: dict) -> dict:
    """Recursive dict merge. A mapping whose ``kind`` changes is replaced whole,
    since the fields of one kind are not valid for another."""
    out = copy.deepcopy(base)
    for key, val in over.items():
        cur = out.get(key)
        if isinstance(cur, dict) and isinstance(val, dict) and val.get("kind", cur.get("kind")) == cur.get("kind"):
            out[key] = deep_merge(cur, val)
        else:
            out[key] = copy.deepcopy(val)
    return out


# -- loading and writing ----------------------------------------------------


def _line_of(root, loc) -> int | None:
    """1-based line of the deepest node of ``loc`` present in the YAML tree."""
    node, line = root, None
    for key in loc:
        if node is None:
            break
        line = node.start_mark.line + 1
        nxt = None
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                if k.value == str(key):
                    nxt = v
                    line = k.start_mark.line + 1
                    break
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            nxt = node.value[key]
        node = nxt
    if node is not None:
        line = node.start_mark.line + 1
    return line


def _describe_error(err: dict) -> str:
    loc = ".".join(str(p) for p in err["loc"] if not _is_union_tag(p))
    if err["type"] == "missing":
        return f"missing required key '{loc}'"
    if err["type"] == "extra_forbidden":
        return f"unknown key '{loc}'"
    msg = err["msg"].removeprefix("Value error, ")
    return f"{loc}: {msg}" if loc else msg


def _is_union_tag(p) -> bool:
    # discriminated unions insert the tag value into the location
    return p in ("logistic_bilinear", "matrix_factorization", "quadratic_saddle",
                 "at_point", "random_box", "rank_deficient")


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}:{mark.column + 1}" if mark else source
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigError(f"{where}: parse error: {problem}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: expected a mapping at the top level")
    if "schema_version" in data and data["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"{source}: unsupported schema_version {data['schema_version']!r} "
                          f"(this build reads {SCHEMA_VERSION})")
    try:
        cfg = ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc, root, source, ())) from None
    for i, v in enumerate(cfg.comparisons):
        try:
            RunCfg.model_validate(deep_merge(cfg.run.model_dump(mode="json", exclude_none=True),
                                             v.overrides))
        except ValidationError as exc:
            raise ConfigError(_format_errors(exc, root, source, ("comparisons", i, "overrides"),
                                             f"variant {v.name!r}: ", ("run",))) from None
    return cfg


def _format_errors(exc: ValidationError, root, source, prefix, label="", fallback=()) -> str:
    lines = []
    for err in exc.errors():
        loc = tuple(p for p in err["loc"] if not _is_union_tag(p))
        line = _line_of(root, prefix + loc) if root is not None else None
        if line is None and fallback:
            line = _line_of(root, fallback + loc)
        where = f"{source}:{line}" if line else source
        lines.append(f"{where}: {label}{_describe_error(err)}")
    return "\n".join(lines)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.model_dump(mode="json", exclude_none=True), sort_keys=False)


def write_config(cfg: ExperimentConfig, path) -> Path:
    path = Path(path)
    atomic_write(path, dump_config(cfg))
    return path


# -- building library objects -----------------------------------------------


def build_run_config(rc: RunCfg, seed: int, base_dir=".") -> RunConfig:
    """Materialize a file-form run into an executable :class:`RunConfig`."""
    base = Path(base_dir)
    obj = rc.objective.build(base)
    mix = rc.mixing.build(obj.n_agents, base)
    spec = rc.quantizer.build()
    init = rc.init.build(obj, seed)
    sc = rc.schedule
    placeholder = ConstantSchedule(1.0, 1.0)
    cfg = RunConfig(obj, mix, spec, placeholder, rc.n_iters, master_seed=seed, init=init,
                    hessian_cadence=rc.hessian_cadence, classify_epsilon=rc.classify.epsilon,
                    classify_rho=rc.classify.rho, divergence_threshold=rc.divergence_threshold)
    return dataclasses.replace(cfg, schedule=build_schedule(sc, cfg))


def build_schedule(sc: ScheduleCfg, cfg: RunConfig):
    if sc.mode == "constant":
        eta = sc.eta
        if eta == "auto":
            eta = largest_stable_constant_stepsize(cfg, sc.eps, DGD_STEPSIZE_GRID)
        return ConstantSchedule(sc.eps, eta)
    sp = sc.params()
    if sc.mode == "practical":
        return practical_schedule(sp)
    if sc.mode == "random_hold":
        return random_hold_schedule(sp, seed=sc.hold_seed)
    if sc.mode == "diminishing":
        return diminishing_schedule(sp)
    return theoretical_schedule(sp, problem_constants(sc.theory or TheoryCfg(), cfg))


def problem_constants(th: TheoryCfg, cfg: RunConfig) -> ProblemConstants:
    obj = cfg.objective
    streams = AgentStreams(cfg.master_seed, cfg.mixing.n_agents)
    x0 = cfg.init.initial_states(cfg.mixing.n_agents, obj.dim, streams).mean(axis=0)
    G = th.G if th.G is not None else estimate_gradient_bound(obj, -th.box, th.box)
    L = th.L if th.L is not None else obj.lipschitz_bound(th.box)
    return ProblemConstants(G=G, rho=th.rho, L=L, sigma2=cfg.mixing.sigma2, N=obj.n_agents,
                            d=obj.dim, ell=cfg.quantizer.interval_ell,
                            f0=obj.global_value(x0), f_star=th.f_star)

