"""Spectral representation of the state space.

The state space is truncated to the first ``N`` eigenfunctions
``e_i(x) = sqrt(2) sin(i pi x)`` of a diagonal, negative definite operator
``A`` with ``A e_i = -lambda_i e_i``.  A state is stored as its coefficient
vector in that basis; batches of states are arrays whose last axis has
length ``N``.

Pointwise (Nemytskii) operations go through a sine collocation grid built on
the type-I discrete sine transform.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import fft

from .errors import ConfigurationError, DomainError

__all__ = [
    'OperatorSpec', 'SpectralVector', 'GridProfile', 'dirichlet_laplacian',
    'semigroup_apply', 'fractional_apply', 'to_grid', 'to_spectrum',
]


@dataclass(frozen=True)
class OperatorSpec:
    """Eigenvalues ``lambda_1 <= ... <= lambda_N`` of ``-A``.

    Semigroup factors ``exp(-lambda t)`` are cached per ``t`` because the
    steppers request the same two or three step sizes over and over.
    """

    eigenvalues: np.ndarray
    _cache: dict = field(default_factory=dict, init=False, repr=False,
                         compare=False)

    def __post_init__(self):
        lam = np.array(self.eigenvalues, dtype=float)
        if lam.ndim != 1:
            raise ConfigurationError(
                'only diagonal operators are supported; pass the eigenvalue '
                'sequence, got an array of shape %s' % (lam.shape,))
        if lam.size == 0:
            raise ConfigurationError('operator needs at least one mode')
        if not np.all(np.isfinite(lam)) or np.any(lam <= 0):
            raise DomainError('eigenvalues of -A must be finite and > 0')
        if np.any(np.diff(lam) < 0):
            raise DomainError('eigenvalues must be in nondecreasing order')
        lam.setflags(write=False)
        object.__setattr__(self, 'eigenvalues', lam)

    @property
    def dimension(self):
        return self.eigenvalues.size

    def semigroup(self, t):
        """Diagonal of ``exp(A t)``."""
        t = float(t)
        if t < 0:
            raise DomainError('semigroup time must be nonnegative, got %r' % t)
        key = ('exp', t)
        out = self._cache.get(key)
        if out is None:
            out = np.exp(-self.eigenvalues * t)
            out.setflags(write=False)
            self._cache[key] = out
        return out

    def power(self, r):
        """Diagonal of ``(-A)^r``."""
        r = float(r)
        key = ('pow', r)
        out = self._cache.get(key)
        if out is None:
            out = self.eigenvalues ** r
            out.setflags(write=False)
            self._cache[key] = out
        return out

    def apply(self, v):
        """``A v`` for an array of coefficients (batched on leading axes)."""
        return -self.eigenvalues * v


def dirichlet_laplacian(n, length=1.0, diffusivity=1.0):
    """``OperatorSpec`` of the Dirichlet Laplacian on ``(0, length)``."""
    i = np.arange(1, n + 1)
    return OperatorSpec(diffusivity * (np.pi * i / length) ** 2)


@dataclass(frozen=True)
class SpectralVector:
    """Coefficients ``<e_i, v>`` of a single state."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.ndim != 1:
            raise ConfigurationError('SpectralVector holds a 1-d coefficient '
                                     'array, got shape %s' % (c.shape,))
        if not np.all(np.isfinite(c)):
            raise DomainError('SpectralVector entries must be finite')
        c.setflags(write=False)
        object.__setattr__(self, 'coeffs', c)

    def __len__(self):
        return self.coeffs.size

    def norm(self, op=None, r=0.0):
        """Norm in ``H_r = D((-A)^r)``; ``r = 0`` is the plain l2 norm."""
        if r == 0:
            return float(np.linalg.norm(self.coeffs))
        if op is None:
            raise ConfigurationError('an OperatorSpec is needed for r != 0')
        return float(np.linalg.norm(op.power(r) * self.coeffs))

    def inner(self, other, op=None, r=0.0):
        a, b = self.coeffs, np.asarray(getattr(other, 'coeffs', other))
        if r != 0:
            w = op.power(r)
            a, b = w * a, w * b
        return float(a @ b)


def _coeffs(v):
    return v.coeffs if isinstance(v, SpectralVector) else np.asarray(v, float)


def _wrap_like(v, out):
    return SpectralVector(out) if isinstance(v, SpectralVector) else out


def semigroup_apply(op, t, v):
    """``exp(A t) v``.  Accepts a ``SpectralVector`` or a batch array."""
    return _wrap_like(v, op.semigroup(t) * _coeffs(v))


def fractional_apply(op, r, v):
    """``(-A)^r v``."""
    return _wrap_like(v, op.power(r) * _coeffs(v))


def norms(op, v, r=0.0):
    """H_r norms of a batch of coefficient vectors (last axis = modes)."""
    v = np.asarray(v)
    if r != 0:
        v = op.power(r) * v
    return np.sqrt(np.sum(v * v, axis=-1))


@dataclass(frozen=True)
class GridProfile:
    """Sine collocation grid with ``size`` interior nodes ``k / (size + 1)``.

    With ``size >= 2 * n_modes`` products of two band-limited fields are
    resolved exactly and projecting back onto ``n_modes`` coefficients is the
    Galerkin projection.  ``GridProfile.collocation(n)`` builds the square
    ``size == n_modes`` grid instead: products there alias, but pointwise
    multiplication operators are simultaneously diagonal and hence commute.
    """

    n_modes: int
    size: int = None
    aliased: bool = False

    def __post_init__(self):
        n = int(self.n_modes)
        if n < 1:
            raise ConfigurationError('n_modes must be positive')
        size = (n if self.aliased else 2 * n) if self.size is None \
            else int(self.size)
        if not self.aliased and size < 2 * n:
            raise ConfigurationError(
                'grid of size %d cannot de-alias %d modes; need size >= %d'
                % (size, n, 2 * n))
        if size < n:
            raise ConfigurationError('grid smaller than the number of modes')
        object.__setattr__(self, 'n_modes', n)
        object.__setattr__(self, 'size', size)

    @classmethod
    def collocation(cls, n_modes):
        return cls(n_modes, n_modes, aliased=True)

    @property
    def nodes(self):
        return np.arange(1, self.size + 1) / (self.size + 1)

    @property
    def weights(self):
        return np.full(self.size, 1.0 / (self.size + 1))

    def to_grid(self, coeffs):
        c = np.asarray(coeffs, dtype=float)
        if c.shape[-1] != self.n_modes:
            raise ConfigurationError('expected %d modes, got %d'
                                     % (self.n_modes, c.shape[-1]))
        if self.size > self.n_modes:
            pad = [(0, 0)] * (c.ndim - 1) + [(0, self.size - self.n_modes)]
            c = np.pad(c, pad)
        return fft.dst(c, type=1, axis=-1) * (1 / np.sqrt(2))

    def to_spectrum(self, values):
        values = np.asarray(values, dtype=float)
        if values.shape[-1] != self.size:
            raise ConfigurationError('expected %d grid values, got %d'
                                     % (self.size, values.shape[-1]))
        c = fft.idst(values * np.sqrt(2), type=1, axis=-1)
        return c[..., :self.n_modes]

    def multiply(self, *fields):
        """Projected pointwise product of band-limited fields."""
        prod = self.to_grid(fields[0])
        for f in fields[1:]:
            prod = prod * self.to_grid(f)
        return self.to_spectrum(prod)


def to_grid(v, g):
    return g.to_grid(_coeffs(v))


def to_spectrum(values, g):
    out = g.to_spectrum(values)
    return SpectralVector(out) if out.ndim == 1 else out
