"""Strong convergence studies on coupled Brownian paths.

Every path owns one fine increment stream at ``M_ref`` steps; every scheme
and resolution consumes that stream after exact aggregation, so strong
errors are measured pathwise.  Reductions run in path-index order with
numpy's pairwise summation, which makes reports reproducible bit for bit.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
import csv
import json
import os
import time

import numpy as np
from scipy import stats

from . import __version__
from .coefficients import CATALOG, Regularity
from .errors import ConfigurationError, DomainError, StudyError
from .schemes import SCHEMES, StepContext, evolve
from .spectral import OperatorSpec, dirichlet_laplacian, norms
from .stochastics import NoiseSpec, PathSeed, coarsen, fine_increments

__all__ = [
    'StudyPlan', 'Problem', 'ConvergenceReport', 'OrderFit', 'MomentTable',
    'build_problem', 'reference_solution', 'reference_gap', 'strong_error', 'fit_order',
    'run_study', 'moment_probe', 'write_report', 'convergence_svg',
]

THREADS_ENV = 'WPSPDE_THREADS'


@dataclass
class StudyPlan:
    """Resolved description of a convergence study."""

    coefficients: str = 'LINEAR_MULT'
    params: dict = field(default_factory=dict)
    modes: int = 32
    horizon: float = 1.0
    initial: str = 'sine'
    noise_exponent: float = 1.0
    noise_scale: float = 1.0
    regularity: Regularity = field(default_factory=Regularity)
    resolutions: tuple = (4, 8, 16, 32, 64)
    reference_multiplier: int = 16
    paths: int = 200
    schemes: tuple = ('euler', 'milstein', 'wagner_platen')
    seed: int = 20240229
    norm: str = 'H'
    batch_size: int = 50
    threads: int = None
    record_timing: bool = False
    moment_resolutions: tuple = (4, 8, 16, 32, 64, 128, 256)

    def __post_init__(self):
        self.resolutions = tuple(int(m) for m in self.resolutions)
        self.moment_resolutions = tuple(int(m)
                                        for m in self.moment_resolutions)
        self.schemes = tuple(self.schemes)
        if isinstance(self.regularity, dict):
            self.regularity = Regularity(**self.regularity)

    @property
    def reference_steps(self):
        return self.reference_multiplier * max(self.resolutions)

    def validate(self):
        if self.coefficients not in CATALOG:
            raise ConfigurationError('unknown coefficients %r; choose from %s'
                                     % (self.coefficients, sorted(CATALOG)))
        for s in self.schemes:
            if s not in SCHEMES:
                raise ConfigurationError('unknown scheme %r' % (s,))
        if self.horizon <= 0:
            raise ConfigurationError('horizon must be positive')
        if self.modes < 1:
            raise ConfigurationError('modes must be positive')
        if self.paths < 2:
            raise ConfigurationError('need at least 2 paths')
        if self.batch_size < 1:
            raise ConfigurationError('batch_size must be positive')
        for name in ('resolutions', 'moment_resolutions'):
            res = getattr(self, name)
            if not res or any(m < 1 or m & (m - 1) for m in res):
                raise ConfigurationError('%s must be powers of two' % name)
            if any(b <= a for a, b in zip(res, res[1:])):
                raise ConfigurationError('%s must be strictly increasing'
                                         % name)
        if self.reference_multiplier < 8:
            raise ConfigurationError('reference_multiplier must be >= 8 '
                                     '(M_ref >= 8 max(M))')
        if self.norm not in ('H', 'H_gamma'):
            raise ConfigurationError('norm must be "H" or "H_gamma"')
        if self.initial not in INITIAL_STATES:
            raise ConfigurationError('unknown initial state %r; choose from %s'
                                     % (self.initial, sorted(INITIAL_STATES)))
        self.regularity.validate()
        return self

    def to_dict(self):
        d = asdict(self)
        d['resolutions'] = list(self.resolutions)
        d['moment_resolutions'] = list(self.moment_resolutions)
        d['schemes'] = list(self.schemes)
        return d


def _sine(n):
    y = np.zeros(n)
    y[0] = 1.0
    return y


def _parabola(n):
    # coefficients of x (1 - x) in the sqrt(2) sin(i pi x) basis
    i = np.arange(1, n + 1)
    return np.where(i % 2 == 1, 4 * np.sqrt(2) / (np.pi * i) ** 3, 0.0)


INITIAL_STATES = {'sine': _sine, 'parabola': _parabola}


@dataclass
class Problem:
    op: OperatorSpec
    noise: NoiseSpec
    coeffs: object
    initial: np.ndarray
    horizon: float

    def exact_terminal(self, W_T):
        """Closed-form terminal states ``(P, 1)`` for Brownian values ``W_T``
        of shape ``(P,)``, or None when no closed form is known."""
        exact = getattr(self.coeffs, 'exact', None)
        if exact is None:
            return None
        x = exact(self.initial[0], self.op.eigenvalues[0], self.horizon, W_T)
        return np.asarray(x)[:, None]


def build_problem(plan):
    """Instantiate operator, noise, coefficients and initial state."""
    params = dict(plan.params)
    name = plan.coefficients
    if name == 'SCALAR_GBM':
        op = OperatorSpec([float(params.pop('lam', 1.0))])
        noise = NoiseSpec([float(params.pop('q', 1.0))])
        initial = np.array([float(params.pop('x0', 1.0))])
        n = 1
    else:
        n = int(plan.modes)
        op = dirichlet_laplacian(n)
        noise = NoiseSpec(plan.noise_scale
                          * op.eigenvalues ** -float(plan.noise_exponent))
        initial = INITIAL_STATES[plan.initial](n)
    try:
        coeffs = CATALOG[name](n, noise, regularity=plan.regularity,
                               **params)
    except TypeError as exc:
        raise ConfigurationError('bad parameters for %s: %s' % (name, exc))
    return Problem(op, noise, coeffs, initial, float(plan.horizon))


def _norm_power(plan):
    return 0.0 if plan.norm == 'H' else plan.regularity.gamma


def _path_seeds(plan, paths):
    return [PathSeed(plan.seed, p) for p in paths]


def _batches(plan, n_paths=None):
    n_paths = plan.paths if n_paths is None else n_paths
    return [range(a, min(a + plan.batch_size, n_paths))
            for a in range(0, n_paths, plan.batch_size)]


def _threads(plan):
    if plan.threads:
        return int(plan.threads)
    return int(os.environ.get(THREADS_ENV, '1') or 1)


def _map_batches(plan, fn, batches):
    workers = _threads(plan)
    if workers <= 1 or len(batches) <= 1:
        return [fn(b) for b in batches]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, batches))


def _reference(problem, plan, fine):
    """Terminal reference states ``(P, N)`` and their abort mask."""
    exact = problem.exact_terminal(fine.dW.sum(axis=(-2, -1)))
    if exact is not None:
        return exact, np.zeros(exact.shape[0], dtype=bool)
    ctx = StepContext(problem.op, problem.coeffs, fine.dt)
    res = evolve(ctx, problem.initial, 'wagner_platen', increments=fine)
    return res.terminal, res.aborted


def reference_solution(plan, path_index, problem=None):
    """Reference terminal state of one path (``NaN`` if it aborted)."""
    problem = problem or build_problem(plan)
    T, M_ref = problem.horizon, plan.reference_steps
    fine = fine_increments(problem.noise, T / M_ref, M_ref,
                           _path_seeds(plan, [path_index]))
    ref, _ = _reference(problem, plan, fine)
    return ref[0]


def reference_gap(plan, problem=None):
    """RMS distance between the reference at ``M_ref`` and at ``2 M_ref``
    on the same Brownian paths (the ``2 M_ref`` stream coarsened by 2).

    Note the ``M_ref`` reference here is driven by a refinement of the study
    stream, not by the study stream itself; this is a consistency gauge.
    """
    plan.validate()
    problem = problem or build_problem(plan)
    T, M2 = problem.horizon, 2 * plan.reference_steps
    ctx = StepContext(problem.op, problem.coeffs, T / M2)

    def batch(paths):
        fine = fine_increments(problem.noise, T / M2, M2,
                               _path_seeds(plan, paths))
        a = evolve(ctx, problem.initial, 'wagner_platen', increments=fine)
        b = evolve(ctx.with_dt(2 * ctx.dt), problem.initial, 'wagner_platen',
                   increments=coarsen(fine, 2))
        return norms(problem.op, a.terminal - b.terminal,
                     _norm_power(plan)) ** 2

    sq = np.concatenate(_map_batches(plan, batch, _batches(plan)))
    return _summarize(sq)[0]


def _batch_errors(problem, plan, pairs, paths):
    """Squared terminal errors for every (scheme, M) on a batch of paths."""
    T, M_ref = problem.horizon, plan.reference_steps
    fine = fine_increments(problem.noise, T / M_ref, M_ref,
                           _path_seeds(plan, paths))
    ref, ref_aborted = _reference(problem, plan, fine)
    ctx = StepContext(problem.op, problem.coeffs, T / M_ref)
    r = _norm_power(plan)
    out = {}
    for scheme, M in pairs:
        if M_ref % M:
            raise ConfigurationError('M=%d does not divide M_ref=%d'
                                     % (M, M_ref))
        t0 = time.perf_counter()
        inc = coarsen(fine, M_ref // M)
        res = evolve(ctx.with_dt(T / M), problem.initial, scheme,
                     increments=inc)
        err = norms(problem.op, res.terminal - ref, r) ** 2
        aborted = res.aborted | ref_aborted
        err[aborted] = np.nan
        out[scheme, M] = (err, aborted, time.perf_counter() - t0)
    return out


def _summarize(sq):
    ok = sq[np.isfinite(sq)]
    if ok.size == 0:
        return np.nan, np.nan
    mean = np.sum(ok) / ok.size
    rms = np.sqrt(mean)
    if ok.size < 2 or rms == 0:
        return float(rms), 0.0
    var = np.sum((ok - mean) ** 2) / (ok.size - 1)
    # delta method: se(sqrt(m)) = se(m) / (2 sqrt(m))
    return float(rms), float(np.sqrt(var / ok.size) / (2 * rms))


@dataclass(frozen=True)
class OrderFit:
    order: float
    ci_lo: float
    ci_hi: float
    intercept: float


def fit_order(resolutions, rms, confidence=0.95):
    """Least-squares slope of ``log2 rms`` against ``log2 M``, reported as a
    positive order with a t-based confidence interval."""
    M = np.asarray(resolutions, float)
    e = np.asarray(rms, float)
    if M.size < 3 or M.size != e.size:
        raise DomainError('need at least 3 (M, rms) points')
    if not np.all(np.isfinite(e)) or np.any(e <= 0):
        raise DomainError('rms values must be positive and finite')
    fit = stats.linregress(np.log2(M), np.log2(e))
    t = stats.t.ppf(0.5 + confidence / 2, M.size - 2)
    order = -fit.slope
    half = t * fit.stderr
    return OrderFit(float(order), float(order - half), float(order + half),
                    float(fit.intercept))


@dataclass
class ConvergenceReport:
    """Per ``(scheme, M)``: ``rms``, ``stderr``, ``aborted``, ``seconds``;
    per scheme: an ``OrderFit``."""

    plan: StudyPlan
    rows: list
    orders: dict

    def rms(self, scheme):
        return [r['rms'] for r in self.rows if r['scheme'] == scheme]

    def row(self, scheme, M):
        for r in self.rows:
            if r['scheme'] == scheme and r['M'] == M:
                return r
        raise KeyError((scheme, M))


def run_study(plan, problem=None):
    """Strong errors of every scheme at every resolution, plus fitted
    orders."""
    plan.validate()
    problem = problem or build_problem(plan)
    pairs = [(s, M) for s in plan.schemes for M in plan.resolutions]
    batches = _batches(plan)
    results = _map_batches(
        plan, lambda b: _batch_errors(problem, plan, pairs, b), batches)
    rows = []
    for s, M in pairs:
        sq = np.concatenate([r[s, M][0] for r in results])
        aborted = int(sum(r[s, M][1].sum() for r in results))
        seconds = float(sum(r[s, M][2] for r in results))
        if aborted == plan.paths:
            raise StudyError('all paths aborted for %s at M=%d' % (s, M))
        rms, se = _summarize(sq)
        rows.append(dict(scheme=s, M=M, rms=rms, stderr=se, aborted=aborted,
                         seconds=seconds))
    orders = {}
    if len(plan.resolutions) >= 3:
        for s in plan.schemes:
            e = [r['rms'] for r in rows if r['scheme'] == s]
            if all(np.isfinite(x) and x > 0 for x in e):
                orders[s] = fit_order(plan.resolutions, e)
    return ConvergenceReport(plan, rows, orders)


def strong_error(plan, scheme, M, problem=None):
    """``(rms, stderr)`` of one scheme at ``M`` steps against the
    reference."""
    plan.validate()
    problem = problem or build_problem(plan)
    results = _map_batches(
        plan, lambda b: _batch_errors(problem, plan, [(scheme, M)], b),
        _batches(plan))
    sq = np.concatenate([r[scheme, M][0] for r in results])
    if not np.any(np.isfinite(sq)):
        raise StudyError('all paths aborted for %s at M=%d' % (scheme, M))
    return _summarize(sq)


@dataclass
class MomentTable:
    """``E ||Y^M_M||^2_{H_gamma}`` estimates and the boundedness verdict."""

    resolutions: tuple
    mean: np.ndarray
    stderr: np.ndarray
    aborted: np.ndarray
    spearman_rho: float
    spearman_p: float
    spread_ok: bool
    trend_free: bool

    @property
    def bounded(self):
        return self.spread_ok and self.trend_free and not self.aborted.any()


def moment_probe(plan, problem=None, scheme='wagner_platen', alpha=0.05):
    """Second moments in ``H_gamma`` at ``m = M`` for each moment
    resolution, on coupled paths.

    Verdict: the largest mean lies within 3 standard errors (of the smallest
    mean's estimate) above the smallest, and a one-sided Spearman test finds
    no increasing trend in ``M`` at level ``alpha``.
    """
    plan.validate()
    problem = problem or build_problem(plan)
    Ms = plan.moment_resolutions
    M_fine = max(Ms)
    T = problem.horizon
    gamma = plan.regularity.gamma
    ctx = StepContext(problem.op, problem.coeffs, T / M_fine)

    def batch(paths):
        fine = fine_increments(problem.noise, T / M_fine, M_fine,
                               _path_seeds(plan, paths))
        out = []
        for M in Ms:
            res = evolve(ctx.with_dt(T / M), problem.initial, scheme,
                         increments=coarsen(fine, M_fine // M))
            out.append((norms(problem.op, res.terminal, gamma) ** 2,
                        res.aborted))
        return out

    results = _map_batches(plan, batch, _batches(plan))
    mean, se, aborted = [], [], []
    for k in range(len(Ms)):
        x = np.concatenate([r[k][0] for r in results])
        ab = np.concatenate([r[k][1] for r in results])
        ok = x[~ab]
        mean.append(np.sum(ok) / max(ok.size, 1))
        se.append(np.std(ok, ddof=1) / np.sqrt(ok.size) if ok.size > 1
                  else np.inf)
        aborted.append(int(ab.sum()))
    mean, se, aborted = np.array(mean), np.array(se), np.array(aborted)
    finite = bool(np.all(np.isfinite(mean)))
    # round-off allowance so that M-independent moments count as constant
    slack = 1e-12 * np.max(np.abs(mean)) if finite else 0.0
    with np.errstate(invalid='ignore'):
        lo = int(np.argmin(mean))
        spread_ok = finite and bool(mean.max() - mean[lo]
                                    <= 3 * se[lo] + slack)
    rho, p = np.nan, np.nan
    if not finite:
        trend_free = False
    elif len(Ms) < 3 or np.ptp(mean) <= slack:
        trend_free = True
    else:
        sp = stats.spearmanr(Ms, mean, alternative='greater')
        rho, p = float(sp.statistic), float(sp.pvalue)
        trend_free = p >= alpha
    return MomentTable(Ms, mean, se, aborted, rho, p, spread_ok, trend_free)


def _fmt(x):
    return repr(float(x))


def write_report(report, directory, svg=True, extra_manifest=None):
    """Write ``report.csv``, ``orders.csv``, ``manifest.json`` and
    optionally ``convergence.svg``; returns the written paths."""
    os.makedirs(directory, exist_ok=True)
    plan = report.plan
    written = []
    path = os.path.join(directory, 'report.csv')
    with open(path, 'w', newline='') as fh:
        w = csv.writer(fh, lineterminator='\n')
        w.writerow(['scheme', 'M', 'rms', 'stderr', 'aborted', 'seconds'])
        for r in report.rows:
            w.writerow([r['scheme'], r['M'], _fmt(r['rms']),
                        _fmt(r['stderr']), r['aborted'],
                        '%.3f' % r['seconds'] if plan.record_timing else ''])
    written.append(path)
    path = os.path.join(directory, 'orders.csv')
    with open(path, 'w', newline='') as fh:
        w = csv.writer(fh, lineterminator='\n')
        w.writerow(['scheme', 'slope', 'ci_lo', 'ci_hi'])
        for s, fit in report.orders.items():
            w.writerow([s, _fmt(fit.order), _fmt(fit.ci_lo), _fmt(fit.ci_hi)])
    written.append(path)
    if svg:
        path = os.path.join(directory, 'convergence.svg')
        with open(path, 'w') as fh:
            fh.write(convergence_svg(report))
        written.append(path)
    path = os.path.join(directory, 'manifest.json')
    manifest = {
        'library': 'wpspde',
        'version': __version__,
        'numpy': np.__version__,
        'plan': plan.to_dict(),
        'seed': plan.seed,
        'reference_steps': plan.reference_steps,
        'artifacts': [os.path.basename(p) for p in written]
        + ['manifest.json'],
    }
    manifest.update(extra_manifest or {})
    with open(path, 'w') as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write('\n')
    written.append(path)
    return written


_COLORS = ('#1f77b4', '#d62728', '#2ca02c', '#9467bd', '#ff7f0e')


def convergence_svg(report, width=480, height=360):
    """Log-log plot of rms error against M, one polyline per scheme."""
    pad = 50
    Ms = np.array(report.plan.resolutions, float)
    curves = {s: np.array(report.rms(s), float) for s in report.plan.schemes}
    vals = np.concatenate([c[np.isfinite(c) & (c > 0)]
                           for c in curves.values()] or [np.ones(1)])
    x0, x1 = np.log2(Ms.min()), np.log2(Ms.max())
    y0, y1 = np.floor(np.log10(vals.min())), np.ceil(np.log10(vals.max()))
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y1 = y0 + 1

    def px(m):
        return pad + (np.log2(m) - x0) / (x1 - x0) * (width - 2 * pad)

    def py(e):
        return height - pad - (np.log10(e) - y0) / (y1 - y0) \
            * (height - 2 * pad)

    out = ['<svg xmlns="http://www.w3.org/2000/svg" width="%d" height="%d" '
           'font-family="sans-serif" font-size="11">' % (width, height),
           '<rect width="100%" height="100%" fill="white"/>',
           '<rect x="%d" y="%d" width="%d" height="%d" fill="none" '
           'stroke="black"/>' % (pad, pad, width - 2 * pad, height - 2 * pad)]
    for m in Ms:
        out.append('<text x="%.1f" y="%d" text-anchor="middle">%d</text>'
                   % (px(m), height - pad + 15, m))
    for k in range(int(y0), int(y1) + 1):
        out.append('<text x="%d" y="%.1f" text-anchor="end">1e%d</text>'
                   % (pad - 4, py(10.0 ** k) + 4, k))
    out.append('<text x="%d" y="%d" text-anchor="middle">M</text>'
               % (width // 2, height - 12))
    out.append('<text x="14" y="%d" transform="rotate(-90 14 %d)" '
               'text-anchor="middle">rms error</text>'
               % (height // 2, height // 2))
    for k, (s, c) in enumerate(curves.items()):
        color = _COLORS[k % len(_COLORS)]
        ok = np.isfinite(c) & (c > 0)
        pts = ' '.join('%.1f,%.1f' % (px(m), py(e))
                       for m, e in zip(Ms[ok], c[ok]))
        out.append('<polyline fill="none" stroke="%s" stroke-width="1.5" '
                   'points="%s"/>' % (color, pts))
        label = s
        if s in report.orders:
            label += ' (%.2f)' % report.orders[s].order
        out.append('<text x="%d" y="%d" fill="%s">%s</text>'
                   % (pad + 8, pad + 16 + 14 * k, color, label))
    out.append('</svg>')
    return '\n'.join(out) + '\n'
