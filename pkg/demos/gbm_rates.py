"""Scalar geometric Brownian motion, where the exact solution is known.

With one mode and no operator the three integrators reduce to the classical
Euler, Milstein and order 1.5 Taylor steps, so the fitted slopes should land
near 1/2, 1 and 3/2.
"""
from wpspde import StudyPlan, run_study

plan = StudyPlan(coefficients='SCALAR_GBM', params=dict(sigma=1.0),
                 resolutions=(4, 8, 16, 32, 64), paths=1000, batch_size=250)
report = run_study(plan)

print('M     ' + ''.join('%-15s' % s for s in plan.schemes))
for M in plan.resolutions:
    print('%-5d ' % M + ''.join('%-15.3e' % report.row(s, M)['rms']
                                for s in plan.schemes))
for s, fit in report.orders.items():
    print('%-14s slope %.2f  [%.2f, %.2f]' % (s, fit.order, fit.ci_lo,
                                               fit.ci_hi))
