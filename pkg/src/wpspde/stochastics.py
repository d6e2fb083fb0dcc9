"""Q-Wiener increments, their time integrals and iterated-integral oracles.

Noise mode ``j`` is the scalar Brownian motion ``beta_j`` in the expansion
``W = sum_j sqrt(q_j) beta_j u_j`` where ``(u_j)`` is orthonormal in ``U``.
Increment components are stored in ``U`` coordinates, i.e. ``dW_j`` has
variance ``q_j * dt``.  The orthonormal basis of ``U_0 = Q^{1/2} U`` is
``g_j = sqrt(q_j) u_j``.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError

__all__ = [
    'NoiseSpec', 'IncrementPair', 'PathSeed', 'OracleIntegrals',
    'sample_pair', 'pairs_from_normals', 'standard_normals',
    'aggregate_pairs', 'coarsen', 'fine_increments',
    'iterated_integrals_oracle', 'write_increment_trace',
    'read_increment_trace',
]

_INV_2SQRT3 = 1.0 / (2.0 * np.sqrt(3.0))


@dataclass(frozen=True)
class NoiseSpec:
    """Eigenvalues ``q_j`` of the covariance ``Q`` and the state index each
    noise mode is attached to (``mode_map``, identity by default)."""

    q: np.ndarray
    mode_map: np.ndarray = None

    def __post_init__(self):
        q = np.array(self.q, dtype=float).ravel()
        if q.size == 0:
            raise ConfigurationError('need at least one noise mode')
        if not np.all(np.isfinite(q)) or np.any(q <= 0):
            raise DomainError('covariance eigenvalues must be finite and > 0')
        if self.mode_map is None:
            mm = np.arange(q.size)
        else:
            mm = np.array(self.mode_map, dtype=int).ravel()
            if mm.shape != q.shape:
                raise ConfigurationError('mode_map must have one entry per '
                                         'noise mode')
            if np.any(mm < 0) or len(set(mm.tolist())) != mm.size:
                raise ConfigurationError('mode_map must be an injection into '
                                         'the state basis')
        q.setflags(write=False)
        mm.setflags(write=False)
        object.__setattr__(self, 'q', q)
        object.__setattr__(self, 'mode_map', mm)

    @property
    def n_modes(self):
        return self.q.size

    @property
    def trace(self):
        return float(np.sum(self.q))

    def basis(self):
        """Orthonormal basis of ``U_0`` in ``U`` coordinates, as columns."""
        return np.diag(np.sqrt(self.q))

    def u0_coordinates(self, u, basis=None):
        """Coordinates ``<b_k, u>_{U_0}`` of U-coordinate vectors ``u``."""
        if basis is None:
            return np.asarray(u) / np.sqrt(self.q)
        return (np.asarray(u) / self.q) @ np.asarray(basis)

    def scaled(self, factor):
        return NoiseSpec(self.q * factor, self.mode_map)

    @classmethod
    def inverse_of(cls, op, n_modes=None):
        """Covariance ``Q = (-A)^{-1}`` restricted to the first modes."""
        lam = op.eigenvalues if n_modes is None else op.eigenvalues[:n_modes]
        return cls(1.0 / lam)


@dataclass(frozen=True)
class IncrementPair:
    """``(W_{t+dt} - W_t, int_t^{t+dt} (W_s - W_t) ds)`` in U coordinates.

    ``dW`` and ``dZ`` may carry leading batch/step axes; the last axis is the
    noise mode.
    """

    dW: np.ndarray
    dZ: np.ndarray
    dt: float

    def __post_init__(self):
        dW, dZ = np.asarray(self.dW, float), np.asarray(self.dZ, float)
        if dW.shape != dZ.shape:
            raise ConfigurationError('dW and dZ shapes differ: %s vs %s'
                                     % (dW.shape, dZ.shape))
        object.__setattr__(self, 'dW', dW)
        object.__setattr__(self, 'dZ', dZ)
        object.__setattr__(self, 'dt', float(self.dt))

    def __getitem__(self, idx):
        return IncrementPair(self.dW[idx], self.dZ[idx], self.dt)


@dataclass(frozen=True)
class PathSeed:
    """Seed of one Monte-Carlo path.

    Each ``(seed, path)`` owns an independent Philox stream, so paths can be
    generated in any order or on any worker.
    """

    seed: int
    path: int

    def generator(self):
        ss = np.random.SeedSequence([int(self.seed) & (2**64 - 1),
                                     int(self.path)])
        return np.random.Generator(np.random.Philox(ss))


def pairs_from_normals(noise, dt, normals):
    """Build increment pairs from standard normals of shape ``(..., J, 2)``
    (``[..., 0]`` is xi, ``[..., 1]`` is eta)."""
    if dt <= 0:
        raise DomainError('step size must be positive, got %r' % (dt,))
    normals = np.asarray(normals, dtype=float)
    xi, eta = normals[..., 0], normals[..., 1]
    sq = np.sqrt(noise.q)
    dW = sq * np.sqrt(dt) * xi
    dZ = sq * dt ** 1.5 * (0.5 * xi + _INV_2SQRT3 * eta)
    return IncrementPair(dW, dZ, dt)


def standard_normals(rng, steps, n_modes):
    """Draw ``(steps, J, 2)`` normals: step-major, mode-minor, xi then eta."""
    return rng.standard_normal(steps * n_modes * 2).reshape(steps, n_modes, 2)


def sample_pair(noise, dt, rng, size=()):
    """Sample increment pairs with the exact joint law.

    Per mode the pair is ``sqrt(q dt) xi`` and
    ``sqrt(q) dt^{3/2} (xi / 2 + eta / (2 sqrt 3))``, whose covariance is
    ``q [[dt, dt^2/2], [dt^2/2, dt^3/3]]``.
    """
    if dt <= 0:
        raise DomainError('step size must be positive, got %r' % (dt,))
    size = (size,) if np.isscalar(size) else tuple(size)
    normals = rng.standard_normal(size + (noise.n_modes, 2))
    return pairs_from_normals(noise, dt, normals)


def fine_increments(noise, dt, steps, seeds):
    """Increment pairs of shape ``(len(seeds), steps, J)`` on the finest
    grid, one independent stream per ``PathSeed``."""
    normals = np.stack([standard_normals(s.generator(), steps, noise.n_modes)
                        for s in seeds])
    return pairs_from_normals(noise, dt, normals)


def coarsen(pair, factor, axis=-2):
    """Aggregate consecutive groups of ``factor`` sub-steps along ``axis``.

    Uses the exact pathwise identity
    ``Z[t0, t0 + k d] = sum_m (Z_m + (k - 1 - m) d dW_m)``.
    """
    factor = int(factor)
    if factor < 1:
        raise DomainError('coarsening factor must be >= 1')
    if factor == 1:
        return pair
    dW = np.moveaxis(pair.dW, axis, -2)
    dZ = np.moveaxis(pair.dZ, axis, -2)
    steps = dW.shape[-2]
    if steps % factor:
        raise ConfigurationError('%d sub-steps do not split into groups of %d'
                                 % (steps, factor))
    shape = dW.shape[:-2] + (steps // factor, factor, dW.shape[-1])
    dW = dW.reshape(shape)
    dZ = dZ.reshape(shape)
    lag = (factor - 1 - np.arange(factor))[:, None] * pair.dt
    cW = dW.sum(axis=-2)
    cZ = (dZ + lag * dW).sum(axis=-2)
    return IncrementPair(np.moveaxis(cW, -2, axis), np.moveaxis(cZ, -2, axis),
                         pair.dt * factor)


def aggregate_pairs(pairs):
    """Combine a sequence of equal-length sub-step pairs into one pair."""
    pairs = list(pairs)
    if not pairs:
        raise DomainError('cannot aggregate an empty sequence of pairs')
    dt = pairs[0].dt
    shape = pairs[0].dW.shape
    for p in pairs[1:]:
        if p.dt != dt or p.dW.shape != shape:
            raise ConfigurationError('sub-steps must share step size and '
                                     'mode count')
    stacked = IncrementPair(np.stack([p.dW for p in pairs], axis=-2),
                            np.stack([p.dZ for p in pairs], axis=-2), dt)
    out = coarsen(stacked, len(pairs))
    return IncrementPair(out.dW[..., 0, :], out.dZ[..., 0, :], out.dt)


@dataclass(frozen=True)
class OracleIntegrals:
    """Left-point Riemann sums over one step, in ``U_0`` coordinates.

    Attributes:
      I1: ``I_(i)``, shape ``(..., K)``.
      I2: ``I_(i,j)``, shape ``(..., K, K)``.
      I3: ``I_(i,j,k)``, shape ``(..., K, K, K)``.
      Iz: ``int int dW du``, shape ``(..., K)``.
      Isq: ``int I_(i)(s) I_(j)(s) dW_k(s)``, shape ``(..., K, K, K)``,
        summed directly rather than via Ito identities.
    """

    I1: np.ndarray
    I2: np.ndarray
    I3: np.ndarray
    Iz: np.ndarray
    Isq: np.ndarray
    dt: float


def iterated_integrals_oracle(increments, dt):
    """Brute-force iterated Ito integrals from sub-step increments.

    Args:
      increments: array ``(..., n, K)`` of sub-step increments
        ``<g_k, W_{t_{m+1}} - W_{t_m}>_{U_0}`` (variance ``dt / n`` each).
      dt: length of the whole step.
    """
    inc = np.asarray(increments, dtype=float)
    n, K = inc.shape[-2:]
    batch = inc.shape[:-2]
    delta = dt / n
    W = np.zeros(batch + (K,))
    I2 = np.zeros(batch + (K, K))
    I3 = np.zeros(batch + (K, K, K))
    Isq = np.zeros(batch + (K, K, K))
    Iz = np.zeros(batch + (K,))
    for m in range(n):
        d = inc[..., m, :]
        I3 += I2[..., :, :, None] * d[..., None, None, :]
        WW = W[..., :, None] * W[..., None, :]
        Isq += WW[..., None] * d[..., None, None, :]
        I2 += W[..., :, None] * d[..., None, :]
        Iz += W * delta
        W = W + d
    return OracleIntegrals(W, I2, I3, Iz, Isq, float(dt))


def write_increment_trace(path, pair):
    """Write ``(steps, J)`` increments as CSV rows ``step, j, dW, dZ``
    (``.csv``) or as a compressed numpy archive (``.npz``)."""
    path = str(path)
    dW = np.atleast_2d(pair.dW)
    dZ = np.atleast_2d(pair.dZ)
    if path.endswith('.npz'):
        np.savez_compressed(path, dW=dW, dZ=dZ, dt=pair.dt)
        return
    with open(path, 'w', newline='') as fh:
        w = csv.writer(fh)
        w.writerow(['step', 'j', 'dW', 'dZ'])
        for step in range(dW.shape[0]):
            for j in range(dW.shape[1]):
                w.writerow([step, j, repr(float(dW[step, j])),
                            repr(float(dZ[step, j]))])


def read_increment_trace(path, dt):
    path = str(path)
    if path.endswith('.npz'):
        with np.load(path) as data:
            return IncrementPair(data['dW'], data['dZ'], float(data['dt']))
    rows = np.loadtxt(path, delimiter=',', skiprows=1, ndmin=2)
    steps = int(rows[:, 0].max()) + 1
    J = int(rows[:, 1].max()) + 1
    dW = np.zeros((steps, J))
    dZ = np.zeros((steps, J))
    s, j = rows[:, 0].astype(int), rows[:, 1].astype(int)
    dW[s, j] = rows[:, 2]
    dZ[s, j] = rows[:, 3]
    return IncrementPair(dW, dZ, dt)
