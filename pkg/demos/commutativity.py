"""Which coefficient pairs satisfy the commutativity conditions.

Pointwise multiplication by smooth functions commutes, but only when the
product is evaluated on the collocation grid of the N modes.  Truncating the
product back to N modes after a finer evaluation breaks it, as does an affine
diffusion whose first noise direction feeds the second state component.
"""
import numpy as np

from wpspde import (AffineDiffusion, LinearMultiplicative, NoiseSpec,
                    check_commutativity_first, check_commutativity_second,
                    dirichlet_laplacian)

n = 8
noise = NoiseSpec(1.0 / dirichlet_laplacian(n).eigenvalues)

B1 = np.zeros((2, 2, 2))
B1[1, 1, 0] = 1.0      # B(v) g_1 = e_1 + v_2 e_2
cases = {
    'collocated product': LinearMultiplicative(n, noise),
    'truncated product': LinearMultiplicative(n, noise, product='dealiased'),
    'affine, v_2 coupling': AffineDiffusion(NoiseSpec([1.0, 1.0]), np.eye(2),
                                            B1),
}
for name, c in cases.items():
    r1 = check_commutativity_first(c)
    r2 = check_commutativity_second(c)
    print('%-22s first %-5s (%.1e)  second %-5s (%.1e)'
          % (name, bool(r1), r1.residual, bool(r2), r2.residual))
