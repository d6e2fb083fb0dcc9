"""Sampling (dW, dZ) pairs and coupling a coarse grid to a fine one.

dZ is the time integral of W - W(t_n) over a step.  Coarsening fine pairs
must reproduce the coarse law exactly, which is what lets every resolution in
a study share one Brownian path.
"""
import numpy as np

from wpspde import NoiseSpec, PathSeed, coarsen
from wpspde.stochastics import fine_increments

noise = NoiseSpec([1.0, 0.25])
fine_dt, steps, factor = 1 / 256, 256, 16
seeds = [PathSeed(1, p) for p in range(20000)]
fine = fine_increments(noise, fine_dt, steps, seeds)
coarse = coarsen(fine, factor)

dt = coarse.dt
q = noise.q
print('coarse dt', dt)
for label, x, y, target in (('dW dW', coarse.dW, coarse.dW, q * dt),
                            ('dW dZ', coarse.dW, coarse.dZ, q * dt ** 2 / 2),
                            ('dZ dZ', coarse.dZ, coarse.dZ, q * dt ** 3 / 3)):
    est = (x * y).mean(axis=(0, 1))
    print('%s  sample %s  law %s' % (label, np.round(est, 7),
                                      np.round(target, 7)))

# path 7 replayed alone gives the same coarse increments bit for bit
alone = coarsen(fine_increments(noise, fine_dt, steps, seeds[7:8]), factor)
print('replay identical:', np.array_equal(alone.dW[0], coarse.dW[7]))
