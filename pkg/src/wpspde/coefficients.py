"""Drift and diffusion coefficients.

A coefficient bundle exposes ``F``, ``F'``, ``F''`` and the actions of
``B``, ``B'``, ``B''`` on noise directions.  Noise directions ``u`` are given
in ``U`` coordinates (the same coordinates as ``IncrementPair.dW``), so
``B(v) dW`` is simply ``c.diffusion(v, dW)``.  Every method broadcasts over
leading batch axes: states have shape ``(..., N)``, directions ``(..., J)``.

Derivatives are supplied analytically by each bundle; ``check_derivatives``
compares them with finite differences.
"""

from dataclasses import dataclass
import itertools

import numpy as np

from .errors import ConfigurationError, ConstraintViolation
from .spectral import GridProfile

__all__ = [
    'Regularity', 'Coefficients', 'ZeroCoefficients', 'LinearMultiplicative',
    'NemytskiiDrift', 'ScalarCoefficients', 'ScalarGBM', 'AffineDiffusion',
    'CommutativityResult', 'trace_F2', 'trace_dB_B', 'trace_d2B_BB',
    'trace_dB_dB_B', 'check_commutativity_first',
    'check_commutativity_second', 'check_derivatives', 'CATALOG',
]


@dataclass(frozen=True)
class Regularity:
    """Declared regularity exponents.  The library cannot verify them; it
    only checks that they form an admissible chain."""

    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    delta: float = 1.0

    def validate(self):
        a, b, g, d = self.alpha, self.beta, self.gamma, self.delta
        if not 1.0 <= g < 1.5:
            raise ConstraintViolation('γ ∈ [1, 3/2) violated: γ = %g' % g)
        if not g - 1 < a <= g:
            raise ConstraintViolation('α ∈ (γ-1, γ] violated: α = %g, γ = %g'
                                      % (a, g))
        if not g - 0.5 < b <= g:
            raise ConstraintViolation(
                'β ∈ (γ-1/2, γ] violated: β = %g, γ = %g' % (b, g))
        if not g - 1 < d <= b:
            raise ConstraintViolation(
                'δ ∈ (γ-1, β] violated: δ = %g, γ = %g, β = %g' % (d, g, b))
        return self


class Coefficients:
    """Base bundle: ``F = 0`` and ``B = 0``.

    Subclasses override the evaluation methods and clear the ``zero_*``
    flags for the parts that are present; the steppers skip terms whose
    flag says they vanish identically.
    """

    name = 'ZERO'
    zero_drift = True
    zero_drift_d2 = True
    zero_diffusion = True
    zero_diffusion_d2 = True

    def __init__(self, n_modes, noise, regularity=None):
        self.n_modes = int(n_modes)
        self.noise = noise
        self.regularity = regularity or Regularity()
        if np.any(noise.mode_map >= self.n_modes):
            raise ConfigurationError('noise mode_map points past the %d state '
                                     'modes' % self.n_modes)

    @property
    def n_noise(self):
        return self.noise.n_modes

    def _zeros(self, *arrays):
        shape = np.broadcast_shapes(*(np.shape(a)[:-1] for a in arrays))
        return np.zeros(shape + (self.n_modes,))

    def drift(self, v):
        return self._zeros(v)

    def drift_d1(self, v, w):
        return self._zeros(v, w)

    def drift_d2(self, v, w1, w2):
        return self._zeros(v, w1, w2)

    def diffusion(self, v, u):
        return self._zeros(v, u)

    def diffusion_d1(self, v, w, u):
        return self._zeros(v, w, u)

    def diffusion_d2(self, v, w1, w2, u):
        return self._zeros(v, w1, w2, u)

    def trace_dB_B(self, v, rows):
        """``sum_k B'(v)(B(v) b_k) b_k`` for basis rows ``(K, J)``."""
        vv = v[..., None, :]
        return self.diffusion_d1(vv, self.diffusion(vv, rows),
                                 rows).sum(axis=-2)

    def diffusion_matrix(self, v):
        """``B(v)`` as an ``(..., N, J)`` matrix acting on U coordinates."""
        v = np.asarray(v, float)
        cols = self.diffusion(v[..., None, :], np.eye(self.n_noise))
        return np.swapaxes(cols, -1, -2)

    def __repr__(self):
        return '%s(n_modes=%d, n_noise=%d)' % (type(self).__name__,
                                                self.n_modes, self.n_noise)


class ZeroCoefficients(Coefficients):
    pass


class LinearMultiplicative(Coefficients):
    """``B(v) u = sigma * v * w_u`` with ``w_u = sum_j u_j e_{map(j)}``.

    The pointwise product is evaluated on the square collocation grid by
    default, where multiplication operators commute exactly.  With
    ``product='dealiased'`` the product is the Galerkin projection of the
    exact product instead; truncated multiplication operators do not
    commute, so that variant fails the commutativity checks.
    """

    name = 'LINEAR_MULT'
    zero_diffusion = False

    def __init__(self, n_modes, noise, sigma=1.0, product='collocation',
                 regularity=None):
        super().__init__(n_modes, noise, regularity)
        self.sigma = float(sigma)
        if product == 'collocation':
            self.grid = GridProfile.collocation(self.n_modes)
        elif product == 'dealiased':
            self.grid = GridProfile(self.n_modes)
        else:
            raise ConfigurationError('unknown product rule %r' % (product,))
        self.product = product

    def embed(self, u):
        u = np.asarray(u, float)
        out = np.zeros(u.shape[:-1] + (self.n_modes,))
        out[..., self.noise.mode_map] = u
        return out

    def diffusion(self, v, u):
        return self.sigma * self.grid.multiply(v, self.embed(u))

    def diffusion_d1(self, v, w, u):
        v, w = np.broadcast_arrays(v, w)
        return self.sigma * self.grid.multiply(w, self.embed(u))

    def trace_dB_B(self, v, rows):
        if self.product != 'collocation':
            return super().trace_dB_B(v, rows)
        # grid multiplication operators are diagonal: sum_k v w_k w_k
        weight = np.sum(self.grid.to_grid(self.embed(rows)) ** 2, axis=0)
        return self.sigma ** 2 * self.grid.to_spectrum(
            weight * self.grid.to_grid(v))

    def lipschitz_constant(self):
        """Bound on ``||B(v) - B(w)||_{HS(U_0, H)} / ||v - w||``."""
        # |e_j| <= sqrt(2) on the grid and the projection is a contraction
        return self.sigma * np.sqrt(2.0 * self.noise.trace)


class NemytskiiDrift(LinearMultiplicative):
    """``F(v)(x) = f(v(x))`` with ``f(y) = c y / (1 + y^2)`` plus the
    linear multiplicative noise of ``LinearMultiplicative``.

    ``F`` and its derivatives are projected from a ``2N`` grid.
    """

    name = 'NEMYTSKII_DRIFT'
    zero_drift = False
    zero_drift_d2 = False

    def __init__(self, n_modes, noise, strength=1.0, sigma=1.0,
                 product='collocation', regularity=None):
        super().__init__(n_modes, noise, sigma, product, regularity)
        self.strength = float(strength)
        self.drift_grid = GridProfile(self.n_modes)

    def _f(self, y):
        return self.strength * y / (1 + y * y)

    def _df(self, y):
        y2 = y * y
        return self.strength * (1 - y2) / (1 + y2) ** 2

    def _d2f(self, y):
        y2 = y * y
        return self.strength * 2 * y * (y2 - 3) / (1 + y2) ** 3

    def drift(self, v):
        g = self.drift_grid
        return g.to_spectrum(self._f(g.to_grid(v)))

    def drift_d1(self, v, w):
        g = self.drift_grid
        return g.to_spectrum(self._df(g.to_grid(v)) * g.to_grid(w))

    def drift_d2(self, v, w1, w2):
        g = self.drift_grid
        return g.to_spectrum(self._d2f(g.to_grid(v)) * g.to_grid(w1)
                             * g.to_grid(w2))


class ScalarCoefficients(Coefficients):
    """One state mode, one noise mode: ``F(v) = a(v)``, ``B(v) u = b(v) u``.

    Args:
      a, da, d2a: drift and its first two derivatives (``None`` for zero).
      b, db, d2b: diffusion and its first two derivatives.
    """

    name = 'SCALAR'

    def __init__(self, noise, a=None, da=None, d2a=None, b=None, db=None,
                 d2b=None, regularity=None):
        if noise.n_modes != 1:
            raise ConfigurationError('scalar coefficients need one noise mode')
        super().__init__(1, noise, regularity)
        self._a, self._da, self._d2a = a, da, d2a
        self._b, self._db, self._d2b = b, db, d2b
        self.zero_drift = a is None
        self.zero_drift_d2 = d2a is None
        self.zero_diffusion = b is None
        self.zero_diffusion_d2 = d2b is None

    @staticmethod
    def _call(fn, v, *factors):
        v = np.asarray(v, float)
        out = np.zeros(v.shape) if fn is None else fn(v)
        for f in factors:
            out = out * np.asarray(f, float)
        return out

    def drift(self, v):
        return self._call(self._a, v)

    def drift_d1(self, v, w):
        return self._call(self._da, v, w)

    def drift_d2(self, v, w1, w2):
        return self._call(self._d2a, v, w1, w2)

    def diffusion(self, v, u):
        return self._call(self._b, v, u)

    def diffusion_d1(self, v, w, u):
        return self._call(self._db, v, w, u)

    def diffusion_d2(self, v, w1, w2, u):
        return self._call(self._d2b, v, w1, w2, u)


class ScalarGBM(ScalarCoefficients):
    """Geometric Brownian motion ``dX = -lambda X dt + sigma X dW`` (the
    ``-lambda`` lives in the operator)."""

    name = 'SCALAR_GBM'

    def __init__(self, noise, sigma=1.0, regularity=None):
        self.sigma = s = float(sigma)
        super().__init__(noise, b=lambda v: s * v,
                         db=lambda v: np.full(v.shape, s),
                         regularity=regularity)

    def exact(self, x0, lam, t, W_t):
        """Exact solution given the U-coordinate Brownian value ``W_t``."""
        q = self.noise.q[0]
        return x0 * np.exp((-lam - 0.5 * self.sigma ** 2 * q) * t
                           + self.sigma * W_t)


class AffineDiffusion(Coefficients):
    """``B(v) u = (B0 + sum_i v_i B1[:, i, :]) u`` with ``F = 0``.

    ``B0`` has shape ``(N, J)`` and ``B1`` shape ``(N, N, J)``.  Handy for
    building non-commutative counterexamples.
    """

    name = 'AFFINE'
    zero_diffusion = False

    def __init__(self, noise, B0, B1, regularity=None):
        B0 = np.asarray(B0, float)
        B1 = np.asarray(B1, float)
        super().__init__(B0.shape[0], noise, regularity)
        if B0.shape != (self.n_modes, noise.n_modes) or \
                B1.shape != (self.n_modes, self.n_modes, noise.n_modes):
            raise ConfigurationError('B0/B1 shapes do not match N, J')
        self.B0, self.B1 = B0, B1

    def diffusion(self, v, u):
        return (np.einsum('nj,...j->...n', self.B0, u)
                + np.einsum('nij,...i,...j->...n', self.B1, v, u))

    def diffusion_d1(self, v, w, u):
        v, w = np.broadcast_arrays(v, w)
        return np.einsum('nij,...i,...j->...n', self.B1, w, u)


def _basis_rows(noise, basis):
    basis = noise.basis() if basis is None else np.asarray(basis, float)
    return basis.T


def _noise_of(c, noise):
    return c.noise if noise is None else noise


def trace_F2(c, v, noise=None, basis=None):
    """``sum_k F''(v)(B(v) b_k, B(v) b_k)`` over an orthonormal basis of
    ``U_0`` (``basis`` columns in U coordinates; default ``g_j``)."""
    v = np.asarray(v, float)
    rows = _basis_rows(_noise_of(c, noise), basis)
    if c.zero_drift_d2 or c.zero_diffusion:
        return np.zeros(v.shape)
    vv = v[..., None, :]
    Bg = c.diffusion(vv, rows)
    return c.drift_d2(vv, Bg, Bg).sum(axis=-2)


def trace_dB_B(c, v, noise=None, basis=None):
    """``sum_k B'(v)(B(v) b_k) b_k``."""
    v = np.asarray(v, float)
    if c.zero_diffusion:
        return np.zeros(v.shape)
    rows = _basis_rows(_noise_of(c, noise), basis)
    return c.trace_dB_B(v, rows)


def trace_d2B_BB(c, v, u, noise=None, basis=None):
    """``sum_k B''(v)(B(v) b_k, B(v) b_k) u``."""
    v = np.asarray(v, float)
    if c.zero_diffusion or c.zero_diffusion_d2:
        return np.zeros(np.broadcast_shapes(v.shape[:-1],
                                            np.shape(u)[:-1]) + v.shape[-1:])
    rows = _basis_rows(_noise_of(c, noise), basis)
    vv = v[..., None, :]
    Bg = c.diffusion(vv, rows)
    return c.diffusion_d2(vv, Bg, Bg, np.asarray(u)[..., None, :]).sum(axis=-2)


def trace_dB_dB_B(c, v, u, noise=None, basis=None):
    """``sum_k B'(v)(B'(v)(B(v) b_k) b_k) u``."""
    v = np.asarray(v, float)
    if c.zero_diffusion:
        return np.zeros(np.broadcast_shapes(v.shape[:-1],
                                            np.shape(u)[:-1]) + v.shape[-1:])
    inner = trace_dB_B(c, v, noise, basis)
    return c.diffusion_d1(v, inner, u)


@dataclass(frozen=True)
class CommutativityResult:
    passed: bool
    residual: float
    probes: int

    def __bool__(self):
        return self.passed


def _probe_setup(c, v, noise, probes, rng, n_dirs):
    noise = _noise_of(c, noise)
    rng = np.random.default_rng(0) if rng is None else rng
    if v is None:
        states = rng.standard_normal((probes, c.n_modes))
    else:
        states = np.broadcast_to(np.asarray(v, float), (probes, c.n_modes))
    basis = noise.basis()
    dirs = [rng.standard_normal((probes, noise.n_modes)) @ basis.T
            for _ in range(n_dirs)]
    return states, dirs


def _relative(diff, *refs):
    scale = max(float(np.max(np.linalg.norm(r, axis=-1))) for r in refs)
    num = float(np.max(np.linalg.norm(diff, axis=-1)))
    if num == 0.0:
        return 0.0
    return num / scale if scale > 0 else np.inf


def check_commutativity_first(c, v=None, noise=None, tol=1e-8, probes=32,
                              rng=None):
    """Probe the symmetry of ``(u1, u2) -> B'(v)(B(v) u1) u2``.

    Directions are random combinations of the ``U_0`` basis.  When ``v`` is
    ``None`` random states are probed as well.
    """
    if c.zero_diffusion:
        return CommutativityResult(True, 0.0, probes)
    v, (u1, u2) = _probe_setup(c, v, noise, probes, rng, 2)
    a = c.diffusion_d1(v, c.diffusion(v, u1), u2)
    b = c.diffusion_d1(v, c.diffusion(v, u2), u1)
    res = _relative(a - b, a, b)
    return CommutativityResult(res <= tol, res, probes)


def _second_kind_form(c, v, u1, u2, u3):
    Bu1 = c.diffusion(v, u1)
    out = c.diffusion_d1(v, c.diffusion_d1(v, Bu1, u2), u3)
    if not c.zero_diffusion_d2:
        out = out + c.diffusion_d2(v, Bu1, c.diffusion(v, u2), u3)
    return out


def check_commutativity_second(c, v=None, noise=None, tol=1e-8, probes=32,
                               rng=None):
    """Probe full permutation symmetry of
    ``(u1, u2, u3) -> [B'(v)(B'(v)(B(v) u1) u2) + B''(v)(B(v) u1, B(v) u2)] u3``.
    """
    if c.zero_diffusion:
        return CommutativityResult(True, 0.0, probes)
    v, dirs = _probe_setup(c, v, noise, probes, rng, 3)
    ref = _second_kind_form(c, v, *dirs)
    res = 0.0
    for perm in itertools.permutations(range(3)):
        if perm == (0, 1, 2):
            continue
        other = _second_kind_form(c, v, *(dirs[p] for p in perm))
        res = max(res, _relative(other - ref, other, ref))
    return CommutativityResult(res <= tol, res, probes)


def check_derivatives(c, v, rng, probes=4):
    """Largest relative mismatch between analytic derivatives and central
    finite differences, per derivative."""
    v = np.asarray(v, float)
    J = c.n_noise
    eps = np.finfo(float).eps
    h1 = eps ** (1 / 3) * max(1.0, float(np.linalg.norm(v)))

    def rel(approx, exact):
        scale = max(np.linalg.norm(exact), np.linalg.norm(approx), 1e-300)
        return float(np.linalg.norm(approx - exact) / scale)

    err = dict(F1=0.0, F2=0.0, B1=0.0, B2=0.0)
    for _ in range(probes):
        w1 = rng.standard_normal(v.shape)
        w2 = rng.standard_normal(v.shape)
        u = rng.standard_normal(J)
        if not c.zero_drift:
            fd = (c.drift(v + h1 * w1) - c.drift(v - h1 * w1)) / (2 * h1)
            err['F1'] = max(err['F1'], rel(fd, c.drift_d1(v, w1)))
            fd2 = (c.drift_d1(v + h1 * w2, w1)
                   - c.drift_d1(v - h1 * w2, w1)) / (2 * h1)
            err['F2'] = max(err['F2'], rel(fd2, c.drift_d2(v, w1, w2)))
        if not c.zero_diffusion:
            fd = (c.diffusion(v + h1 * w1, u)
                  - c.diffusion(v - h1 * w1, u)) / (2 * h1)
            err['B1'] = max(err['B1'], rel(fd, c.diffusion_d1(v, w1, u)))
            fd2 = (c.diffusion_d1(v + h1 * w2, w1, u)
                   - c.diffusion_d1(v - h1 * w2, w1, u)) / (2 * h1)
            err['B2'] = max(err['B2'], rel(fd2, c.diffusion_d2(v, w1, w2, u)))
    return err


def _linear_mult(n_modes, noise, **params):
    return LinearMultiplicative(n_modes, noise, **params)


def _nemytskii(n_modes, noise, **params):
    return NemytskiiDrift(n_modes, noise, **params)


def _zero(n_modes, noise, **params):
    return ZeroCoefficients(n_modes, noise, **params)


def _scalar_gbm(n_modes, noise, **params):
    if n_modes != 1:
        raise ConfigurationError('SCALAR_GBM has exactly one mode')
    return ScalarGBM(noise, **params)


CATALOG = {
    'ZERO': _zero,
    'LINEAR_MULT': _linear_mult,
    'NEMYTSKII_DRIFT': _nemytskii,
    'SCALAR_GBM': _scalar_gbm,
}
