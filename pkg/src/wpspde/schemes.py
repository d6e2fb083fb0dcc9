"""Exponential time steppers: Euler, Milstein and Wagner-Platen.

All steps are pure functions ``step(ctx, Y, pair) -> Y_next`` acting on a
``SpectralVector`` or on a batch of coefficient vectors ``(..., N)`` with
matching increment pairs ``(..., J)``.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .coefficients import (check_commutativity_first,
                           check_commutativity_second, trace_dB_B,
                           trace_d2B_BB, trace_F2)
from .errors import (CommutativityError, ConfigurationError, DomainError,
                     NumericalOverflowError)
from .spectral import SpectralVector, norms
from .stochastics import IncrementPair, sample_pair

__all__ = [
    'StepContext', 'SuppliedIntegrals', 'exp_euler_step', 'exp_milstein_step',
    'wagner_platen_step', 'wagner_platen_step_integral_form', 'evolve',
    'EvolveResult', 'double_integral_closed_form',
    'triple_integral_closed_form', 'double_integral_from',
    'triple_integral_from', 'SCHEMES',
]


@dataclass(frozen=True)
class StepContext:
    """Everything a step needs besides the state and the increments.

    The commutativity probes run once here (``probes`` random states and
    directions at tolerance ``tol``); the closed-form steps refuse to run
    when they failed.
    """

    op: object
    coeffs: object
    dt: float
    noise: object = None
    mode: str = 'closed_form'
    probes: int = 32
    tol: float = 1e-8
    first_kind: object = field(default=None, compare=False)
    second_kind: object = field(default=None, compare=False)

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError('step size must be positive, got %r' % self.dt)
        if self.mode not in ('closed_form', 'supplied_integrals'):
            raise ConfigurationError('unknown mode %r' % (self.mode,))
        if self.noise is None:
            object.__setattr__(self, 'noise', self.coeffs.noise)
        if self.coeffs.n_modes != self.op.dimension:
            raise ConfigurationError('operator has %d modes, coefficients %d'
                                     % (self.op.dimension,
                                        self.coeffs.n_modes))
        if self.noise.n_modes != self.coeffs.n_noise:
            raise ConfigurationError('noise has %d modes, coefficients expect '
                                     '%d' % (self.noise.n_modes,
                                             self.coeffs.n_noise))
        if self.first_kind is None:
            rng = np.random.default_rng(12345)
            object.__setattr__(self, 'first_kind', check_commutativity_first(
                self.coeffs, None, self.noise, self.tol, self.probes, rng))
            object.__setattr__(self, 'second_kind', check_commutativity_second(
                self.coeffs, None, self.noise, self.tol, self.probes, rng))

    @property
    def commutative(self):
        return bool(self.first_kind) and bool(self.second_kind)

    def with_dt(self, dt):
        return replace(self, dt=float(dt))

    def require(self, second=True):
        if not self.first_kind:
            raise CommutativityError(
                'noise is not commutative of the first kind (residual %.3g); '
                'closed-form iterated integrals are invalid'
                % self.first_kind.residual)
        if second and not self.second_kind:
            raise CommutativityError(
                'noise is not commutative of the second kind (residual %.3g)'
                % self.second_kind.residual)


def _unwrap(Y):
    if isinstance(Y, SpectralVector):
        return Y.coeffs, True
    return np.asarray(Y, float), False


def _check_terms(terms):
    for name, value in terms.items():
        bad = ~np.isfinite(value)
        if bad.any():
            rows = np.flatnonzero(bad.reshape(-1, bad.shape[-1]).any(axis=-1))
            raise NumericalOverflowError(name, rows)


def _finish(out, wrap, terms, check):
    if check:
        _check_terms(terms)
        _check_terms({'result': out})
    return SpectralVector(out) if wrap else out


def double_integral_closed_form(ctx, Y, pair):
    """``int B'(Y)(int B(Y) dW) dW`` for first-kind commutative noise:
    ``1/2 B'(Y)(B(Y) dW) dW - dt/2 sum_j B'(Y)(B(Y) g_j) g_j``."""
    c = ctx.coeffs
    BdW = c.diffusion(Y, pair.dW)
    return (0.5 * c.diffusion_d1(Y, BdW, pair.dW)
            - 0.5 * pair.dt * trace_dB_B(c, Y, ctx.noise))


def triple_integral_closed_form(ctx, Y, pair, ito_correction=True):
    """Closed form of
    ``int B'(int B'(int B dW) dW) dW + 1/2 int B''(int B dW, int B dW) dW``
    for second-kind commutative noise.

    With ``ito_correction`` the term
    ``1/2 sum_j B''(Y)(B(Y) g_j, B(Y) g_j)(dt dW - dZ)`` is included.  It
    comes from ``I_(i) I_(i) = 2 I_(i,i) + dt`` inside the ``B''`` integral
    and vanishes whenever ``B'' = 0``.
    """
    c = ctx.coeffs
    h, dW, dZ = pair.dt, pair.dW, pair.dZ
    BdW = c.diffusion(Y, dW)
    inner = trace_dB_B(c, Y, ctx.noise)
    out = (c.diffusion_d1(Y, c.diffusion_d1(Y, BdW, dW), dW) / 6
           - 0.5 * h * c.diffusion_d1(Y, inner, dW))
    if not c.zero_diffusion_d2:
        out = out + (c.diffusion_d2(Y, BdW, BdW, dW) / 6
                     - 0.5 * h * trace_d2B_BB(c, Y, dW, ctx.noise))
        if ito_correction:
            out = out + 0.5 * trace_d2B_BB(c, Y, h * dW - dZ, ctx.noise)
    return out


def exp_euler_step(ctx, Y, pair, check=True):
    """``Y' = e^{A dt} (Y + dt F(Y) + B(Y) dW)``."""
    Y, wrap = _unwrap(Y)
    c, h = ctx.coeffs, ctx.dt
    terms = {'state': Y}
    if not c.zero_drift:
        terms['drift'] = h * c.drift(Y)
    if not c.zero_diffusion:
        terms['noise'] = c.diffusion(Y, pair.dW)
    out = ctx.op.semigroup(h) * sum(terms.values())
    return _finish(out, wrap, terms, check)


def exp_milstein_step(ctx, Y, pair, check=True):
    """Exponential Euler plus the closed-form double integral."""
    Y, wrap = _unwrap(Y)
    c, h = ctx.coeffs, ctx.dt
    terms = {'state': Y}
    if not c.zero_drift:
        terms['drift'] = h * c.drift(Y)
    if not c.zero_diffusion:
        ctx.require(second=False)
        terms['noise'] = c.diffusion(Y, pair.dW)
        terms['double_integral'] = double_integral_closed_form(ctx, Y, pair)
    out = ctx.op.semigroup(h) * sum(terms.values())
    return _finish(out, wrap, terms, check)


def wagner_platen_step(ctx, Y, pair, check=True, ito_correction=True):
    """Exponential Wagner-Platen step with closed-form iterated integrals.

    ``Y' = e^{A h/2} { e^{A h/2} Y + h F + h^2/2 F'[AY + F] + F'[B dZ]
    + h^2/4 sum_j F''(B g_j, B g_j) + B dW + A[B dZ - h/2 B dW]
    + B'(AY + F)(h dW - dZ) + double integral + triple integral }``

    where ``B = B(Y)`` etc. and the iterated integrals are replaced by the
    closed forms of ``double_integral_closed_form`` and
    ``triple_integral_closed_form``.
    """
    Y, wrap = _unwrap(Y)
    c, op, h = ctx.coeffs, ctx.op, ctx.dt
    dW, dZ = pair.dW, pair.dZ
    half = op.semigroup(0.5 * h)
    terms = {'semigroup': half * Y}
    AYF = op.apply(Y)
    if not c.zero_drift:
        FY = c.drift(Y)
        AYF = AYF + FY
        terms['drift'] = h * FY
        terms['drift_taylor'] = 0.5 * h * h * c.drift_d1(Y, AYF)
    if not c.zero_diffusion:
        ctx.require()
        BdW = c.diffusion(Y, dW)
        BdZ = c.diffusion(Y, dZ)
        if not c.zero_drift:
            terms['drift_noise'] = c.drift_d1(Y, BdZ)
            if not c.zero_drift_d2:
                terms['drift_trace'] = 0.25 * h * h * trace_F2(c, Y, ctx.noise)
        terms['noise'] = BdW
        terms['noise_stiff'] = op.apply(BdZ - 0.5 * h * BdW)
        terms['noise_drift'] = c.diffusion_d1(Y, AYF, h * dW - dZ)
        terms['double_integral'] = double_integral_closed_form(ctx, Y, pair)
        terms['triple_integral'] = triple_integral_closed_form(
            ctx, Y, pair, ito_correction)
    with np.errstate(over='ignore', invalid='ignore'):
        out = half * sum(terms.values())
    return _finish(out, wrap, terms, check)


@dataclass(frozen=True)
class SuppliedIntegrals:
    """Iterated integrals of one step in ``U_0`` coordinates of ``basis``.

    Attributes:
      I1, I2, I3: ``I_(i)``, ``I_(i,j)``, ``I_(i,j,k)``.
      Iz: ``int_t^{t+dt} int_t^s dW_u ds`` per basis direction.
      basis: ``(J, K)`` basis columns in U coordinates; ``None`` means the
        default ``g_j``.
    """

    I1: np.ndarray
    I2: np.ndarray
    I3: np.ndarray
    Iz: np.ndarray
    dt: float
    basis: np.ndarray = None

    def __post_init__(self):
        K = np.shape(self.I1)[-1]
        if (np.shape(self.I2)[-2:] != (K, K)
                or np.shape(self.I3)[-3:] != (K, K, K)
                or np.shape(self.Iz)[-1] != K):
            raise ConfigurationError('iterated integral shapes disagree with '
                                     '%d basis directions' % K)
        if self.basis is not None and np.shape(self.basis)[-1] != K:
            raise ConfigurationError('basis has %d columns, integrals %d'
                                     % (np.shape(self.basis)[-1], K))

    @classmethod
    def symmetrized(cls, pair, noise, basis=None):
        """Integrals implied by ``(dW, dZ)`` through the Ito product rules:
        ``I_(i,j) = (I_i I_j - dt [i=j]) / 2`` and
        ``I_(i,j,k) = (I_i I_j I_k - dt([i=j] I_k + [i=k] I_j + [j=k] I_i)) / 6``.
        """
        h = pair.dt
        I = noise.u0_coordinates(pair.dW, basis)
        Iz = noise.u0_coordinates(pair.dZ, basis)
        K = I.shape[-1]
        eye = np.eye(K)
        I2 = 0.5 * (I[..., :, None] * I[..., None, :] - h * eye)
        I3 = (I[..., :, None, None] * I[..., None, :, None]
              * I[..., None, None, :]
              - h * (eye[:, :, None] * I[..., None, None, :]
                     + eye[:, None, :] * I[..., None, :, None]
                     + eye[None, :, :] * I[..., :, None, None])) / 6
        return cls(I, I2, I3, Iz, h, basis)

    @classmethod
    def from_oracle(cls, oracle, basis=None):
        return cls(oracle.I1, oracle.I2, oracle.I3, oracle.Iz, oracle.dt,
                   basis)


def _tensors(c, Y, rows):
    """``B g_i``, ``B'(B g_i) g_j`` and ``B'(B'(B g_i) g_j) g_k`` stacks."""
    Bg = c.diffusion(Y[..., None, :], rows)
    dBBg = c.diffusion_d1(Y[..., None, None, :], Bg[..., :, None, :],
                          rows[None, :, :])
    dBdBBg = c.diffusion_d1(Y[..., None, None, None, :],
                            dBBg[..., None, :], rows[None, None, :, :])
    return Bg, dBBg, dBdBBg


def double_integral_from(ctx, Y, ints):
    """``sum_ij B'(B g_i) g_j I_(i,j)``."""
    rows = _rows(ctx, ints)
    _, dBBg, _ = _tensors(ctx.coeffs, np.asarray(Y, float), rows)
    return np.einsum('...ijn,...ij->...n', dBBg, ints.I2)


def triple_integral_from(ctx, Y, ints, Isq=None):
    """``sum_ijk B'(B'(B g_i) g_j) g_k I_(i,j,k)`` plus the ``B''`` part.

    The ``B''`` part uses ``Isq`` (``int I_i I_j dW_k``) when given,
    otherwise ``I_(i,j,k) + I_(j,i,k)`` plus the diagonal Ito term.
    """
    c = ctx.coeffs
    Y = np.asarray(Y, float)
    rows = _rows(ctx, ints)
    Bg, _, dBdBBg = _tensors(c, Y, rows)
    out = np.einsum('...ijkn,...ijk->...n', dBdBBg, ints.I3)
    if not c.zero_diffusion_d2:
        out = out + 0.5 * _d2_part(c, Y, Bg, rows, ints, Isq)
    return out


def _d2_part(c, Y, Bg, rows, ints, Isq=None):
    T = c.diffusion_d2(Y[..., None, None, None, :], Bg[..., :, None, None, :],
                       Bg[..., None, :, None, :], rows[None, None, :, :])
    if Isq is not None:
        return np.einsum('...ijkn,...ijk->...n', T, Isq)
    sym = ints.I3 + np.swapaxes(ints.I3, -3, -2)
    out = np.einsum('...ijkn,...ijk->...n', T, sym)
    lag = ints.dt * ints.I1 - ints.Iz
    return out + np.einsum('...iikn,...k->...n', T, lag)


def _rows(ctx, ints):
    basis = ctx.noise.basis() if ints.basis is None else ints.basis
    return np.asarray(basis, float).T


def wagner_platen_step_integral_form(ctx, Y, ints, check=True):
    """Wagner-Platen step with every stochastic integral taken from
    ``ints`` (no commutativity needed).

    Tensor sizes grow like ``K^3 N`` per state, so keep batches small.
    """
    Y, wrap = _unwrap(Y)
    c, op, h = ctx.coeffs, ctx.op, ctx.dt
    if abs(ints.dt - h) > 1e-12 * h:
        raise ConfigurationError('integrals cover dt=%g, context has %g'
                                 % (ints.dt, h))
    rows = _rows(ctx, ints)
    if rows.shape[-1] != c.n_noise:
        raise ConfigurationError('basis is not expressed in %d noise modes'
                                 % c.n_noise)
    half = op.semigroup(0.5 * h)
    terms = {'semigroup': half * Y}
    AYF = op.apply(Y)
    if not c.zero_drift:
        FY = c.drift(Y)
        AYF = AYF + FY
        terms['drift'] = h * FY
        terms['drift_taylor'] = 0.5 * h * h * c.drift_d1(Y, AYF)
    if not c.zero_diffusion:
        Bg, dBBg, dBdBBg = _tensors(c, Y, rows)
        BI = np.einsum('...kn,...k->...n', Bg, ints.I1)
        BIz = np.einsum('...kn,...k->...n', Bg, ints.Iz)
        if not c.zero_drift:
            terms['drift_noise'] = c.drift_d1(Y, BIz)
            if not c.zero_drift_d2:
                terms['drift_trace'] = 0.25 * h * h * trace_F2(
                    c, Y, ctx.noise, rows.T)
        terms['noise'] = BI
        terms['noise_stiff'] = op.apply(BIz - 0.5 * h * BI)
        lag = (h * ints.I1 - ints.Iz) @ rows
        terms['noise_drift'] = c.diffusion_d1(Y, AYF, lag)
        terms['double_integral'] = np.einsum('...ijn,...ij->...n', dBBg,
                                             ints.I2)
        triple = np.einsum('...ijkn,...ijk->...n', dBdBBg, ints.I3)
        if not c.zero_diffusion_d2:
            triple = triple + 0.5 * _d2_part(c, Y, Bg, rows, ints)
        terms['triple_integral'] = triple
    with np.errstate(over='ignore', invalid='ignore'):
        out = half * sum(terms.values())
    return _finish(out, wrap, terms, check)


SCHEMES = {
    'euler': exp_euler_step,
    'milstein': exp_milstein_step,
    'wagner_platen': wagner_platen_step,
}


@dataclass
class EvolveResult:
    """Terminal states (NaN rows for aborted paths), abort mask and the
    optional per-step norm record ``{r: array (M + 1, ...)}``."""

    terminal: np.ndarray
    aborted: np.ndarray
    norms: dict = None


def evolve(ctx, Y0, scheme='wagner_platen', increments=None, steps=None,
           rng=None, record=()):
    """Fold a step ``M`` times over a uniform grid.

    Args:
      ctx: ``StepContext`` whose ``dt`` is the step size.
      Y0: initial state(s), ``(..., N)``.
      scheme: key of ``SCHEMES`` or a step function.
      increments: ``IncrementPair`` with step axis ``(..., M, J)``.  When
        omitted, ``steps`` pairs are sampled from ``rng``.
      record: H_r exponents whose norms are recorded after every step.
    """
    step = SCHEMES[scheme] if isinstance(scheme, str) else scheme
    Y, wrap = _unwrap(Y0)
    if increments is None:
        if steps is None or steps < 1 or rng is None:
            raise DomainError('need increments, or steps >= 1 and an rng')
        increments = sample_pair(ctx.noise, ctx.dt, rng,
                                 Y.shape[:-1] + (steps,))
    M = increments.dW.shape[-2]
    if M < 1:
        raise DomainError('need at least one step')
    if abs(increments.dt - ctx.dt) > 1e-12 * ctx.dt:
        raise ConfigurationError('increments are for dt=%g, context has %g'
                                 % (increments.dt, ctx.dt))
    batch = np.broadcast_shapes(Y.shape[:-1], increments.dW.shape[:-2])
    Y = np.array(np.broadcast_to(Y, batch + Y.shape[-1:]))
    aborted = np.zeros(batch, dtype=bool)
    with np.errstate(over='ignore'):
        rec = {r: [norms(ctx.op, Y, r)] for r in record}
    for m in range(M):
        pair = IncrementPair(increments.dW[..., m, :],
                             increments.dZ[..., m, :], increments.dt)
        with np.errstate(all='ignore'):
            Y = step(ctx, Y, pair, check=False)
        bad = ~np.all(np.isfinite(Y), axis=-1)
        if bad.any():
            aborted |= bad
            Y[bad] = 0.0
        with np.errstate(over='ignore'):
            for r in record:
                rec[r].append(norms(ctx.op, Y, r))
    terminal = Y.copy()
    terminal[aborted] = np.nan
    if wrap and not aborted.any():
        terminal = SpectralVector(terminal)
    return EvolveResult(terminal, aborted,
                        {r: np.array(v) for r, v in rec.items()} or None)
