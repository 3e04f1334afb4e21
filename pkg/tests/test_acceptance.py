"""Acceptance criteria 1-11, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL ...`` line (collected and
repeated in the pytest terminal summary). Run alone with::

    python3 -m pytest tests/test_acceptance.py -v

Experiment parameters below (interval, hold lengths, start points) were fixed
by pilot runs before these tests were written and are not tuned per seed.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from oracles import (CONSTANT_CASES, average_step, compact_step, consensus_step,
                     schedule_constants_mp)
from qsaddle.diagnostics import min_hessian_eigenvalue
from qsaddle.engine import (AtPoint, RandomBox, RunConfig, dgd_config,
                            largest_stable_dgd_stepsize, run, step)
from qsaddle.mixing import metropolis, metropolis_ring
from qsaddle.objectives import LogisticBilinear, MatrixFactorization, QuadraticSaddle
from qsaddle.quantizer import Parity, QuantizerSpec, empirical_moments, interval_for_bits
from qsaddle.schedule import (ProblemConstants, ScheduleParams, derive_constants,
                              practical_schedule)
from qsaddle.streams import AgentStreams

RESULTS = []
SEEDS = range(10)
ESCAPE_SCHEDULE = ScheduleParams(alpha=0.62, beta=0.94, c1=0.03, c2=0.3, practical_t0=10,
                                 practical_hold=3000, practical_n_holds=1)


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def logistic_run(seed, scheme, **kw):
    cfg = RunConfig(objective=LogisticBilinear.synthetic(5, 200, "identical", seed=0),
                    mixing=metropolis_ring(5), quantizer=QuantizerSpec(0.1, scheme),
                    schedule=practical_schedule(ESCAPE_SCHEDULE), n_iters=5000,
                    master_seed=seed, init=AtPoint((0.0, 0.0)), classify_epsilon=0.1,
                    classify_rho=1.0, **kw)
    return run(cfg)


@pytest.fixture(scope="module")
def moments():
    """Criteria 1 and 2 share one sampling pass."""
    ell, d, n = 0.5, 8, 100_000
    rng = np.random.default_rng(20240601)
    vectors = rng.uniform(-10 * ell, 10 * ell, (100, d))
    spec = QuantizerSpec(ell)
    t = time.perf_counter()
    out = [(v, par, *empirical_moments(v, spec, par, n, rng))
           for v in vectors for par in (Parity.EVEN, Parity.ODD)]
    return dict(rows=out, ell=ell, d=d, n=n, seconds=time.perf_counter() - t)


def test_criterion_1_unbiased(moments):
    ell, n = moments["ell"], moments["n"]
    tol = 4 * (ell / 2) / math.sqrt(n)
    worst = max(float(np.max(np.abs(mean - v))) for v, _, mean, _ in moments["rows"])
    ok = worst <= tol and moments["seconds"] < 10
    report(1, ok, f"max |mean - v| = {worst:.3g} (tol {tol:.3g}) over 100 vectors x 2 parities, "
                  f"{moments['seconds']:.1f}s")


def test_criterion_2_variance(moments):
    ell, d = moments["ell"], moments["d"]
    worst = max(mse for *_, mse in moments["rows"])
    ok = worst <= d * ell**2 and worst <= d * ell**2 / 4 * 1.05 and moments["seconds"] < 10
    report(2, ok, f"max MSE = {worst:.4g} (bounds {d * ell**2:g} and {d * ell**2 / 4 * 1.05:.4g})")


def test_criterion_3_saddle_certificate():
    t = time.perf_counter()
    obj = LogisticBilinear.synthetic(5, 200, "identical", seed=0, reg=0.1)
    g = float(np.linalg.norm(obj.global_grad([0.0, 0.0])))
    lam = min_hessian_eigenvalue(obj, [0.0, 0.0])
    dt = time.perf_counter() - t
    ok = (abs(obj.pooled_margin_mean() - 1) <= 1e-12 and g <= 1e-12
          and abs(lam + 0.4) <= 1e-10 and dt < 1)
    report(3, ok, f"|grad F(0,0)| = {g:.2g}, lambda_min = {lam:.15f}, {dt:.2f}s")


def test_criterion_4_identity_fixed_point():
    t = time.perf_counter()
    cfg = RunConfig(objective=LogisticBilinear.synthetic(5, 200, seed=0),
                    mixing=metropolis_ring(5), quantizer=QuantizerSpec(0.1, "identity"),
                    schedule=practical_schedule(ESCAPE_SCHEDULE), n_iters=10_000,
                    init=AtPoint((0.0, 0.0)))
    rec = run(cfg)
    dt = time.perf_counter() - t
    ok = bool(np.all(rec.final_states == 0.0)) and dt < 5
    report(4, ok, f"max |x_i| after 1e4 iterations = {np.abs(rec.final_states).max():g}, "
                  f"{dt:.1f}s")


def test_criterion_5_saddle_escape():
    t = time.perf_counter()
    target = math.log(2) - 0.01
    good, finals = 0, []
    for seed in SEEDS:
        rec = logistic_run(seed, "switching")
        F, cons = rec["F_bar"][-1], rec["consensus_error_sq"][-1]
        cls = rec.metadata["final_class"]
        finals.append(F)
        good += F < target and cls in ("eps_sosp", "large_gradient") and cons < 1e-4
    dt = time.perf_counter() - t
    ok = good >= 9 and dt < 30
    report(5, ok, f"{good}/10 seeds escaped (final F in [{min(finals):.4f}, {max(finals):.4f}], "
                  f"threshold {target:.4f}), {dt:.1f}s")


def test_criterion_6_log_scale_stuck():
    t = time.perf_counter()
    stuck = sum(bool(np.all(logistic_run(seed, "log_scale", keep_trajectory=True).trajectory == 0))
                for seed in SEEDS)
    dt = time.perf_counter() - t
    report(6, stuck == 10 and dt < 10, f"{stuck}/10 seeds exactly at (0,0) for all iterations, "
                                       f"{dt:.1f}s")


def test_criterion_7_recursion_equivalence():
    t = time.perf_counter()
    rng = np.random.default_rng(77)
    n, d = 5, 6
    edges = {(i, i + 1) for i in range(n - 1)} | {(i, j) for i in range(n)
                                                  for j in range(i + 2, n) if rng.random() < 0.5}
    sched = practical_schedule(ScheduleParams(alpha=0.62, beta=0.94, c1=0.3, c2=0.3,
                                              practical_t0=20, practical_hold=30,
                                              practical_n_holds=2))
    cfg = RunConfig(objective=QuadraticSaddle.random(n, d, margin=0.2, seed=77),
                    mixing=metropolis(edges, n), quantizer=QuantizerSpec(0.05), schedule=sched,
                    n_iters=100, master_seed=77, init=RandomBox(-1.0, 1.0))
    a = cfg.mixing.weights
    streams = AgentStreams(cfg.master_seed, n)
    x = cfg.init.initial_states(n, d, streams)
    x_or, xbar, e = x.copy(), x.mean(axis=0), x - x.mean(axis=0)
    worst = 0.0
    for k in range(100):
        res = step(x, k, cfg, streams)
        x_or = compact_step(x_or, res.eps_k, res.eta_k, a, res.xi, res.grads)
        xbar = average_step(xbar, res.eps_k, res.eta_k, res.xi, res.grads)
        e = consensus_step(e, res.eps_k, res.eta_k, a, res.xi, res.grads)
        x = res.x_next
        mean = x.mean(axis=0)
        worst = max(worst, np.abs(x - x_or).max(), np.abs(mean - xbar).max(),
                    np.abs(x - mean - e).max())
    dt = time.perf_counter() - t
    report(7, worst <= 1e-10 and dt < 5, f"max deviation from the three oracles = {worst:.2g}, "
                                         f"{dt:.2f}s")


def zero_mean_start(seed, n=5, d=4):
    x = np.random.default_rng(1000 + seed).uniform(-1.0, 1.0, (n, d))
    return x - x.mean(axis=0)


def test_criterion_8_consensus_decay():
    t = time.perf_counter()
    hits, details = 0, []
    for seed in SEEDS:
        cfg = RunConfig(objective=QuadraticSaddle.random(5, 4, seed=seed),
                        mixing=metropolis_ring(5), quantizer=QuantizerSpec(0.1),
                        schedule=practical_schedule(ESCAPE_SCHEDULE), n_iters=20_000,
                        master_seed=seed, init=AtPoint(zero_mean_start(seed)))
        e = run(cfg)["consensus_error_sq"]
        suffix_max = np.maximum.accumulate(e[::-1])[::-1]
        assert np.all(np.diff(suffix_max) <= 0)
        below = np.flatnonzero(suffix_max < 1e-3)
        hits += below.size > 0
        details.append(int(below[0]) if below.size else None)
    dt = time.perf_counter() - t
    report(8, hits >= 9 and dt < 60, f"{hits}/10 seeds with max_(j>=k) |e^j|^2 < 1e-3 "
                                     f"(first k: {details}), {dt:.1f}s")


def test_criterion_9_matrix_factorization():
    t = time.perf_counter()
    obj = MatrixFactorization.planted(30, 20, 3, 5)
    spec = QuantizerSpec(interval_for_bits(1.0, 9), "switching", bit_width=9)
    sched = practical_schedule(ScheduleParams(alpha=0.62, beta=0.94, c1=0.3, c2=0.3,
                                              practical_t0=10, practical_hold=3000,
                                              practical_n_holds=1))
    wins = accurate = 0
    eta = None
    rows = []
    for seed in SEEDS:
        cfg = RunConfig(objective=obj, mixing=metropolis_ring(5), quantizer=spec, schedule=sched,
                        n_iters=5000, master_seed=seed,
                        init=AtPoint(obj.rank_deficient_point(seed)))
        if eta is None:
            eta = largest_stable_dgd_stepsize(cfg)  # tuned once, shared by every seed
        rq, rd = run(cfg), run(dgd_config(cfg, eta))
        rel = obj.relative_error(rq.final_mean)
        wins += rq["F_bar"][-1] <= rd["F_bar"][-1]
        accurate += rel <= 1e-2
        rows.append((rq["F_bar"][-1], rd["F_bar"][-1], rel))
    dt = time.perf_counter() - t
    fq = max(r[0] for r in rows)
    fd = min(r[1] for r in rows)
    ok = wins >= 8 and accurate >= 7 and dt < 300
    report(9, ok, f"quantized F <= DGD F in {wins}/10, rel error <= 1e-2 in {accurate}/10 "
                  f"(worst quantized F {fq:.2g}, best DGD F {fd:.2g}, DGD eta {eta:g}), {dt:.0f}s")


def test_criterion_10_scheduler_constants():
    t = time.perf_counter()
    worst = 0.0
    for spk, pck in CONSTANT_CASES:
        tc = derive_constants(ScheduleParams(**spk, mode="theoretical"), ProblemConstants(**pck))
        for name, ref in schedule_constants_mp(spk, pck).items():
            worst = max(worst, abs(getattr(tc, name) - ref) / abs(ref))
    dt = time.perf_counter() - t
    report(10, worst <= 1e-10 and dt < 1, f"max relative error vs 60-digit oracle = {worst:.2g} "
                                          f"on 3 parameter sets, {dt:.2f}s")


def test_criterion_11_disclosure():
    readme = (Path(__file__).resolve().parents[1] / "README.md").read_text()
    needed = ("CIFAR-10", "ResNet-18", "tensor decomposition", "robust PCA", "not reproduced")
    missing = [w for w in needed if w not in readme]
    report(11, not missing, "README discloses the unreproduced large-scale experiments"
           if not missing else f"README lacks {missing}")
