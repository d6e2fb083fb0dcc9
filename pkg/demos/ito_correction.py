"""Why the triple integral needs a curvature correction.

Take one step of the scalar equation dY = -Y dt + sin(Y) dW and compare the
closed-form triple-integral term with the same term built from iterated
integrals computed on ever finer sub-grids of one Brownian path.  With the
1/2 B''(Bg, Bg)(h dW - dZ) term the gap closes as the sub-grid is refined.
Without it the gap stays put.
"""
import numpy as np

from wpspde import (IncrementPair, NoiseSpec, OperatorSpec,
                    ScalarCoefficients, StepContext, SuppliedIntegrals,
                    iterated_integrals_oracle)
from wpspde.schemes import triple_integral_closed_form, triple_integral_from

coeffs = ScalarCoefficients(NoiseSpec([1.0]), a=lambda v: 0 * v,
                            b=np.sin, db=np.cos, d2b=lambda v: -np.sin(v))
h, paths, fine_n = 0.5, 500, 2048
ctx = StepContext(OperatorSpec([1.0]), coeffs, h)
Y = np.array([0.8])

fine = np.random.default_rng(8).standard_normal((paths, fine_n, 1)) \
    * np.sqrt(h / fine_n)
exact = iterated_integrals_oracle(fine, h)
pair = IncrementPair(exact.I1, exact.Iz, h)
target = {c: triple_integral_closed_form(ctx, Y, pair, c)
          for c in (True, False)}

print('sub-steps  corrected   uncorrected')
for n in (8, 64, 512):
    o = iterated_integrals_oracle(
        fine.reshape(paths, n, fine_n // n, 1).sum(axis=2), h)
    approx = triple_integral_from(ctx, Y, SuppliedIntegrals.from_oracle(o),
                                  Isq=o.Isq)
    gaps = [np.sqrt(np.mean((approx - target[c]) ** 2)) for c in (True, False)]
    print('%-10d %.3e   %.3e' % (n, *gaps))
