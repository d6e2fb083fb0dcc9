"""Second moments of the terminal state as the step shrinks.

A stable integrator keeps E||Y_M||^2 flat in M.  The negative control
inflates the noise by a factor of a thousand so coarse steps blow up, and the
probe should say so.
"""
from wpspde import StudyPlan, moment_probe

for label, scale in (('flagship', 1.0), ('inflated noise', 1000.0)):
    plan = StudyPlan(modes=32, paths=100, noise_scale=scale,
                     moment_resolutions=(4, 8, 16, 32, 64))
    table = moment_probe(plan)
    print(label)
    for M, m, se, ab in zip(table.resolutions, table.mean, table.stderr,
                            table.aborted):
        print('  M=%-4d mean %.4e  se %.1e  aborted %d' % (M, m, se, ab))
    print('  spearman rho %.2f p %.3g  bounded: %s'
          % (table.spearman_rho, table.spearman_p, table.bounded))
