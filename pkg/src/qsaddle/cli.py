"""Batch runner: one CSV per (variant, seed) plus a summary of every variant.

    qsaddle --config experiment.yaml --out results/

Files written to the output directory:

* ``<variant>__<seed>.csv`` and ``<variant>__<seed>.meta.yaml`` per run;
* ``summary.txt`` (table) and ``summary.yaml`` (same numbers, machine-readable).

Exit status is 0 on success, 1 if any run diverged, 2 for usage or config
errors and 3 for I/O failures.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .config import ConfigError, ExperimentConfig, RunCfg, build_run_config, load_config
from .engine import DivergenceError, atomic_write, run

ENV_OUT = "QSADDLE_OUT"
EXIT_OK, EXIT_DIVERGED, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("qsaddle")


@dataclass
class VariantSummary:
    name: str
    seeds: list
    final_F_mean: float
    final_F_min: float
    final_F_max: float
    final_grad_norm_mean: float
    final_grad_norm_max: float
    escape_rate: float
    mean_bits_per_iter: float
    saturation_count: int
    diverged: list = field(default_factory=list)
    resolved_eta: float | None = None


@dataclass
class SummaryReport:
    variants: list

    def to_dict(self) -> dict:
        return {"schema_version": 1, "variants": [asdict(v) for v in self.variants]}

    def to_text(self) -> str:
        head = (f"{'variant':<16} {'seeds':>5} {'F mean':>11} {'F min':>11} {'F max':>11} "
                f"{'|grad|':>10} {'escape':>7} {'bits/iter':>10} {'sat':>5} {'div':>4}")
        lines = [head, "-" * len(head)]
        for v in self.variants:
            lines.append(
                f"{v.name:<16} {len(v.seeds):>5} {v.final_F_mean:>11.5g} {v.final_F_min:>11.5g} "
                f"{v.final_F_max:>11.5g} {v.final_grad_norm_mean:>10.3g} {v.escape_rate:>7.2f} "
                f"{v.mean_bits_per_iter:>10.5g} {v.saturation_count:>5d} {len(v.diverged):>4d}")
        for v in self.variants:
            if v.resolved_eta is not None:
                lines.append(f"{v.name}: constant eta chosen by grid search = {v.resolved_eta:g}")
            if v.diverged:
                lines.append(f"{v.name}: diverged seeds {v.diverged}")
        return "\n".join(lines) + "\n"

    def by_name(self, name: str) -> VariantSummary:
        for v in self.variants:
            if v.name == name:
                return v
        raise KeyError(name)


def csv_name(variant: str, seed: int) -> str:
    return f"{variant}__{seed}.csv"


def _execute(task) -> dict:
    """Run one (variant, seed) and write its files; picklable for worker processes."""
    name, rc_data, seed, out_dir, base_dir = task
    rc = RunCfg.model_validate(rc_data)
    cfg = build_run_config(rc, seed, base_dir)
    t = time.perf_counter()
    try:
        rec = run(cfg)
    except DivergenceError as exc:
        return {"name": name, "seed": seed, "diverged": str(exc)}
    rec.write(Path(out_dir) / csv_name(name, seed))
    return {
        "name": name, "seed": seed, "diverged": None,
        "F": float(rec["F_bar"][-1]), "grad_norm": float(rec["grad_norm"][-1]),
        "final_class": rec.metadata["final_class"],
        "bits_per_iter": float(rec["bits_cum"][-1]) / cfg.n_iters,
        "saturated": int(rec.metadata["saturation_count"]),
        "seconds": time.perf_counter() - t,
    }


def _resolve_auto_eta(rc: RunCfg, seed: int, base_dir) -> tuple[RunCfg, float | None]:
    """Fix ``eta: auto`` once per variant (searched on the first seed)."""
    sc = rc.schedule
    if sc.mode != "constant" or sc.eta != "auto":
        return rc, None
    eta = build_run_config(rc, seed, base_dir).schedule.eta(0)
    return rc.model_copy(update={"schedule": sc.model_copy(update={"eta": eta})}), eta


def _summarize(name, seeds, results, eta) -> VariantSummary:
    ok = [r for r in results if r["diverged"] is None]
    F = np.array([r["F"] for r in ok]) if ok else np.array([math.nan])
    g = np.array([r["grad_norm"] for r in ok]) if ok else np.array([math.nan])
    escaped = sum(r["final_class"] == "eps_sosp" for r in ok)
    return VariantSummary(
        name=name, seeds=list(seeds),
        final_F_mean=float(F.mean()), final_F_min=float(F.min()), final_F_max=float(F.max()),
        final_grad_norm_mean=float(g.mean()), final_grad_norm_max=float(g.max()),
        escape_rate=escaped / len(ok) if ok else 0.0,
        mean_bits_per_iter=float(np.mean([r["bits_per_iter"] for r in ok])) if ok else math.nan,
        saturation_count=sum(r["saturated"] for r in ok),
        diverged=[r["seed"] for r in results if r["diverged"] is not None],
        resolved_eta=eta,
    )


def run_batch(cfg: ExperimentConfig, out_dir, *, base_dir=".", seeds=None,
              iters_cap: int | None = None, jobs: int = 1) -> SummaryReport:
    """Run every (variant, seed), write CSVs and the summary, return the report."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = tuple(cfg.seeds() if seeds is None else seeds)
    variants = []
    for name, rc in cfg.variants():
        if iters_cap is not None:
            rc = rc.model_copy(update={"n_iters": min(rc.n_iters, iters_cap)})
        rc, eta = _resolve_auto_eta(rc, seeds[0], base_dir)
        variants.append((name, rc, eta))

    tasks = [(name, rc.model_dump(mode="json"), s, str(out_dir), str(base_dir))
             for name, rc, _ in variants for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_execute, tasks))
    else:
        results = []
        for task in tasks:
            results.append(_execute(task))
            _log_result(results[-1])
    if jobs > 1:
        for r in results:
            _log_result(r)

    report = SummaryReport([
        _summarize(name, seeds, [r for r in results if r["name"] == name], eta)
        for name, _, eta in variants])
    atomic_write(out_dir / "summary.txt", report.to_text())
    atomic_write(out_dir / "summary.yaml", yaml.safe_dump(report.to_dict(), sort_keys=False))
    return report


def _log_result(r):
    if r["diverged"]:
        log.error("%s seed %d: %s", r["name"], r["seed"], r["diverged"])
    else:
        log.info("%s seed %d: F=%.6g |grad|=%.3g %s (%.1fs)", r["name"], r["seed"], r["F"],
                 r["grad_norm"], r["final_class"], r["seconds"])


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="qsaddle",
        description="Run multi-seed batches of quantized distributed gradient descent.")
    p.add_argument("--config", required=True, metavar="PATH", help="experiment YAML file")
    p.add_argument("--out", metavar="DIR",
                   help=f"output directory (default: ${ENV_OUT}, then the config's "
                        "output_dir, then ./out)")
    seeds = p.add_mutually_exclusive_group()
    seeds.add_argument("--seed-override", type=int, metavar="INT",
                       help="run the single seed INT instead of the configured batch")
    seeds.add_argument("--seeds", metavar="LIST",
                       help="comma-separated seeds replacing the configured batch")
    p.add_argument("--iters-override", type=_positive_int, metavar="INT",
                   help="cap every run at INT iterations")
    p.add_argument("--jobs", type=_positive_int, default=1, metavar="N",
                   help="worker processes (results do not depend on N)")
    noise = p.add_mutually_exclusive_group()
    noise.add_argument("--quiet", action="store_true", help="only print errors")
    noise.add_argument("--verbose", action="store_true", help="debug logging")
    return p


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _parse_seeds(text: str) -> tuple[int, ...]:
    try:
        seeds = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise ConfigError(f"--seeds expects comma-separated integers, got {text!r}") from None
    if not seeds or len(set(seeds)) != len(seeds):
        raise ConfigError("--seeds needs at least one seed and no repeats")
    return seeds


def resolve_out_dir(flag: str | None, cfg: ExperimentConfig, config_path: Path) -> Path:
    if flag:
        return Path(flag)
    env = os.environ.get(ENV_OUT)
    if env:
        return Path(env)
    if cfg.output_dir:
        return config_path.parent / cfg.output_dir
    return Path("out")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.ERROR if args.quiet else logging.DEBUG if args.verbose else logging.INFO
    logging.basicConfig(level=level, format="%(message)s", stream=sys.stderr, force=True)
    config_path = Path(args.config)
    try:
        cfg = load_config(config_path)
        if args.seed_override is not None:
            seeds = (args.seed_override,)
        elif args.seeds is not None:
            seeds = _parse_seeds(args.seeds)
        else:
            seeds = None
        out_dir = resolve_out_dir(args.out, cfg, config_path)
        report = run_batch(cfg, out_dir, base_dir=config_path.parent, seeds=seeds,
                           iters_cap=args.iters_override, jobs=args.jobs)
    except ConfigError as exc:
        print(f"qsaddle: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:  # constructor checks that need built objects (shapes, files)
        print(f"qsaddle: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RuntimeError as exc:  # e.g. no stable stepsize for eta: auto
        print(f"qsaddle: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"qsaddle: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    if not args.quiet:
        sys.stdout.write(report.to_text())
        print(f"wrote {out_dir}")
    return EXIT_DIVERGED if any(v.diverged for v in report.variants) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
