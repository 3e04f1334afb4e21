"""Planted 30x20 rank-3 factorization started from a rank-2 point.

Exact gradients cannot grow the zero factor column back, so DGD settles on
a rank-2 saddle. Quantization noise with 9-bit messages breaks the symmetry
and the quantized method recovers the planted matrix.

    python3 demos/mf_vs_dgd.py [n_seeds]
"""

import sys

from qsaddle import (AtPoint, MatrixFactorization, QuantizerSpec, RunConfig, ScheduleParams,
                     dgd_config, interval_for_bits, largest_stable_dgd_stepsize,
                     metropolis_ring, practical_schedule, run)

n_seeds = int(sys.argv[1]) if len(sys.argv) > 1 else 3
obj = MatrixFactorization.planted()
spec = QuantizerSpec(interval_for_bits(1.0, 9), bit_width=9)
sched = practical_schedule(ScheduleParams(alpha=0.62, beta=0.94, c1=0.3, c2=0.3,
                                          practical_t0=10, practical_hold=3000,
                                          practical_n_holds=1))

eta = None
print(f"{'seed':>4} {'F quantized':>12} {'rel err':>9} {'F DGD':>9} {'rel err':>9}")
for seed in range(n_seeds):
    cfg = RunConfig(obj, metropolis_ring(5), spec, sched, 5000, master_seed=seed,
                    init=AtPoint(obj.rank_deficient_point(seed)))
    if eta is None:
        eta = largest_stable_dgd_stepsize(cfg)
        print(f"DGD stepsize from grid search: {eta}")
    q, d = run(cfg), run(dgd_config(cfg, eta))
    print(f"{seed:>4} {q['F_bar'][-1]:>12.3g} {obj.relative_error(q.final_mean):>9.3g} "
          f"{d['F_bar'][-1]:>9.3g} {obj.relative_error(d.final_mean):>9.3g}")
