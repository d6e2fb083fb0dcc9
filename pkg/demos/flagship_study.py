"""Heat equation with linear multiplicative noise on 32 sine modes.

The reference is the Wagner-Platen scheme at 16 times the finest step,
driven by the same Brownian path.  Watch the Milstein column: with
q_j = 1/lambda_j the noise is rough enough that the step-size error of the
stiff noise part flattens its slope, while Wagner-Platen keeps pulling away.
"""
import sys

from wpspde import StudyPlan, run_study, write_report

plan = StudyPlan(modes=32, paths=200)
report = run_study(plan)

for s in plan.schemes:
    print('%-14s ' % s + ' '.join('%.2e' % e for e in report.rms(s))
          + '   slope %.2f' % report.orders[s].order)

if len(sys.argv) > 1:
    write_report(report, sys.argv[1])
    print('artifacts in', sys.argv[1])
