"""A short tour of the switching quantizer.

    python3 demos/quantizer_tour.py
"""

import numpy as np

from qsaddle import Parity, QuantizerSpec, decode, encode, empirical_moments, quantize_vector
from qsaddle.streams import stream

ell = 0.5
spec = QuantizerSpec(ell)
v = np.array([0.0, 0.3, -1.1, 2.25])

print("input            ", v)
for k in (0, 1):
    q = quantize_vector(v, k, spec, stream(0, 0, k))
    print(f"k={k} ({Parity.of(k).name.lower():4s}) output ", q.values(), " indices", q.indices)

# a grid-aligned point is a fixed point of the even grid but not of the odd one
x = np.array([1.0, -0.5])
for k in (0, 1):
    noise = quantize_vector(x, k, spec, stream(3, 0, k)).values() - x
    print(f"noise at grid point, k={k}:", noise)

mean, mse = empirical_moments(v, spec, Parity.ODD, 200_000, np.random.default_rng(1))
print("mean over 2e5 draws", mean.round(4), " MSE", round(mse, 4), " bound d*l^2/4 =",
      len(v) * ell**2 / 4)

# the log-scale baseline maps zero to zero, so agents at the origin never move
log = QuantizerSpec(ell, "log_scale")
print("log-scale Q(0, 0) =", quantize_vector(np.zeros(2), 1, log, stream(0, 0, 1)))

q = quantize_vector(v, 1, spec, stream(0, 0, 1))
wire = encode(q, spec.bit_width)
print(f"wire message: {len(wire)} bytes, {wire.hex()}")
assert np.array_equal(decode(wire, len(v), spec.bit_width, ell).values(), q.values())
