"""Command-line front end.

    wpspde study [config.toml] [--set study.paths=400] [-o out/]

The config file is TOML with the tables listed by ``wpspde --help``.  Flag
overrides win over the file, the file wins over built-in defaults.
"""

import argparse
import csv
import json
import logging
import os
import sys
import time

import numpy as np

try:
    import tomllib
except ImportError:  # python < 3.11
    import tomli as tomllib

from . import __version__
from .coefficients import (CATALOG, Regularity, check_commutativity_first,
                           check_commutativity_second)
from .errors import (ConfigurationError, ConstraintViolation, StudyError,
                     WPSPDEError)
from .experiments import (THREADS_ENV, StudyPlan, build_problem,
                          moment_probe, run_study, write_report)
from .schemes import SCHEMES, StepContext, evolve
from .stochastics import (PathSeed, coarsen, fine_increments, sample_pair,
                          write_increment_trace)

log = logging.getLogger('wpspde')

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_MISSING = 2
EXIT_SCHEMA = 3
EXIT_CONSTRAINT = 4

_NUM = (int, float)

# section -> key -> (accepted types, default, constraint shown in --help)
SCHEMA = {
    'problem': {
        'coefficients': (str, 'LINEAR_MULT', 'one of ' + ', '.join(CATALOG)),
        'modes': (int, 32, 'integer >= 1 (ignored for SCALAR_GBM)'),
        'horizon': (_NUM, 1.0, 'T > 0'),
        'initial': (str, 'sine', 'sine | parabola'),
        'noise_exponent': (_NUM, 1.0,
                           'q_j = noise_scale * lambda_j^(-noise_exponent)'),
        'noise_scale': (_NUM, 1.0, '> 0'),
        'params': (dict, {}, 'table of coefficient parameters: sigma, '
                   'product, strength; SCALAR_GBM also lam, q, x0'),
    },
    'regularity': {
        'alpha': (_NUM, 1.0, 'alpha in (gamma-1, gamma]'),
        'beta': (_NUM, 1.0, 'beta in (gamma-1/2, gamma]'),
        'gamma': (_NUM, 1.0, 'gamma in [1, 3/2)'),
        'delta': (_NUM, 1.0, 'delta in (gamma-1, beta]'),
    },
    'study': {
        'resolutions': (list, [4, 8, 16, 32, 64],
                        'strictly increasing powers of two, >= 3 to fit'),
        'reference_multiplier': (int, 16,
                                 'integer >= 8, M_ref = multiplier * max(M)'),
        'paths': (int, 200, 'integer >= 2'),
        'schemes': (list, list(SCHEMES),
                    'subset of ' + ', '.join(SCHEMES)),
        'seed': (int, 20240229, 'integer >= 0'),
        'norm': (str, 'H', 'H | H_gamma'),
        'batch_size': (int, 50, 'integer >= 1, paths per work unit'),
        'threads': (int, 0, 'integer >= 0, 0 reads %s' % THREADS_ENV),
        'record_timing': (bool, False,
                          'fill the seconds column (breaks byte identity)'),
        'moments': (bool, False, 'also run the moment probe'),
        'moment_resolutions': (list, [4, 8, 16, 32, 64, 128, 256],
                               'strictly increasing powers of two'),
    },
    'simulate': {
        'steps': (int, 64, 'power of two'),
        'path': (int, 0, 'integer >= 0, path index within the seed'),
    },
    'diagnostics': {
        'samples': (int, 100000, 'integer >= 2 per mode'),
        'dt': (_NUM, 0.01, '> 0'),
        'trace': (str, '', 'increment trace file (.csv or .npz) for path 0 '
                  'of the study stream, empty for none'),
    },
    'output': {
        'directory': (str, 'wpspde-out', 'writable directory'),
        'svg': (bool, True, 'write convergence.svg'),
    },
    'logging': {
        'level': (str, 'INFO', 'DEBUG | INFO | WARNING | ERROR'),
    },
}


class SchemaError(ConfigurationError):
    pass


def keys_help():
    lines = ['configuration keys (TOML tables, override with '
             '--set table.key=value):']
    for section, keys in SCHEMA.items():
        lines.append('  [%s]' % section)
        for key, (_, default, rule) in keys.items():
            lines.append('    %-22s %s (default %s)'
                         % (key, rule, json.dumps(default)))
    return '\n'.join(lines)


def defaults():
    return {s: {k: v[1] for k, v in keys.items()}
            for s, keys in SCHEMA.items()}


def _type_ok(value, types):
    if isinstance(value, bool):
        return types is bool
    if types is bool:
        return False
    return isinstance(value, types)


def merge(config, source, where):
    for section, table in source.items():
        if section not in SCHEMA:
            raise SchemaError('%s: unknown table [%s]' % (where, section))
        if not isinstance(table, dict):
            raise SchemaError('%s: [%s] must be a table' % (where, section))
        for key, value in table.items():
            if key not in SCHEMA[section]:
                raise SchemaError('%s: unknown key %s.%s'
                                  % (where, section, key))
            types = SCHEMA[section][key][0]
            if not _type_ok(value, types):
                raise SchemaError('%s: %s.%s has the wrong type (%r)'
                                  % (where, section, key, value))
            config[section][key] = value
    return config


def parse_override(text):
    """``table.key=value`` with a TOML value; bare words become strings."""
    if '=' not in text or '.' not in text.split('=', 1)[0]:
        raise SchemaError('override %r is not table.key=value' % text)
    lhs, rhs = text.split('=', 1)
    section, key = lhs.strip().split('.', 1)
    try:
        value = tomllib.loads('v = ' + rhs.strip())['v']
    except tomllib.TOMLDecodeError:
        value = rhs.strip()
    return {section: {key: value}}


def load_config(path=None, overrides=()):
    config = defaults()
    if path is not None:
        with open(path, 'rb') as fh:
            try:
                data = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise SchemaError('%s: %s' % (path, exc))
        merge(config, data, path)
    for text in overrides:
        merge(config, parse_override(text), '--set')
    return config


def plan_from_config(config):
    p, s = config['problem'], config['study']
    plan = StudyPlan(
        coefficients=p['coefficients'], params=dict(p['params']),
        modes=p['modes'], horizon=float(p['horizon']), initial=p['initial'],
        noise_exponent=float(p['noise_exponent']),
        noise_scale=float(p['noise_scale']),
        regularity=Regularity(**{k: float(v) for k, v in
                                 config['regularity'].items()}),
        resolutions=s['resolutions'],
        reference_multiplier=s['reference_multiplier'], paths=s['paths'],
        schemes=s['schemes'], seed=s['seed'], norm=s['norm'],
        batch_size=s['batch_size'], threads=s['threads'] or None,
        record_timing=s['record_timing'],
        moment_resolutions=s['moment_resolutions'])
    if plan.noise_scale <= 0:
        raise SchemaError('problem.noise_scale must be > 0')
    if plan.seed < 0:
        raise SchemaError('study.seed must be >= 0')
    return plan.validate()


def _write_csv(path, header, rows):
    with open(path, 'w', newline='') as fh:
        w = csv.writer(fh, lineterminator='\n')
        w.writerow(header)
        w.writerows(rows)


def _write_manifest(directory, config, plan, artifacts, **extra):
    manifest = {'library': 'wpspde', 'version': __version__,
                'config': config, 'plan': plan.to_dict(), 'seed': plan.seed,
                'artifacts': sorted(artifacts + ['manifest.json'])}
    manifest.update(extra)
    with open(os.path.join(directory, 'manifest.json'), 'w') as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write('\n')


def cmd_study(config, plan, out):
    t0 = time.perf_counter()
    report = run_study(plan)
    extra = {'config': config}
    moments = None
    if config['study']['moments']:
        moments = moment_probe(plan)
        extra['moment_verdict'] = {
            'bounded': moments.bounded, 'spearman_rho': moments.spearman_rho,
            'spearman_p': moments.spearman_p}
    written = write_report(report, out, svg=config['output']['svg'],
                           extra_manifest=extra)
    if moments is not None:
        _write_csv(os.path.join(out, 'moments.csv'),
                   ['M', 'mean', 'stderr', 'aborted'],
                   [[M, repr(float(m)), repr(float(e)), a] for M, m, e, a
                    in zip(moments.resolutions, moments.mean,
                           moments.stderr, moments.aborted)])
        # keep the manifest's artifact list complete
        path = os.path.join(out, 'manifest.json')
        with open(path) as fh:
            manifest = json.load(fh)
        manifest['artifacts'] = sorted(manifest['artifacts'] + ['moments.csv'])
        with open(path, 'w') as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write('\n')
    print('%-14s %6s %12s %12s %7s' % ('scheme', 'M', 'rms', 'stderr',
                                        'aborted'))
    for r in report.rows:
        print('%-14s %6d %12.4e %12.4e %7d' % (r['scheme'], r['M'], r['rms'],
                                               r['stderr'], r['aborted']))
    for s, fit in report.orders.items():
        print('order %-14s %.3f  [%.3f, %.3f]'
              % (s, fit.order, fit.ci_lo, fit.ci_hi))
    if moments is not None:
        print('moment probe: %s (rho=%.3f, p=%.3g)'
              % ('bounded' if moments.bounded else 'growth',
                 moments.spearman_rho, moments.spearman_p))
    log.info('study finished in %.1fs, artifacts in %s',
             time.perf_counter() - t0, out)
    log.debug('wrote %s', written)
    return EXIT_OK


def cmd_simulate(config, plan, out):
    steps = config['simulate']['steps']
    path_index = config['simulate']['path']
    if steps < 1 or steps & (steps - 1):
        raise SchemaError('simulate.steps must be a power of two')
    if path_index < 0:
        raise SchemaError('simulate.path must be >= 0')
    problem = build_problem(plan)
    T = problem.horizon
    fine_steps = max(steps, plan.reference_steps)
    fine = fine_increments(problem.noise, T / fine_steps, fine_steps,
                           [PathSeed(plan.seed, path_index)])
    inc = coarsen(fine, fine_steps // steps)[0]
    ctx = StepContext(problem.op, problem.coeffs, T / steps)
    gamma = plan.regularity.gamma
    traj, term = [], []
    for scheme in plan.schemes:
        res = evolve(ctx, problem.initial, scheme, increments=inc,
                     record=(0.0, gamma))
        for m in range(steps + 1):
            traj.append([scheme, m, repr(m * T / steps),
                         repr(float(res.norms[0.0][m])),
                         repr(float(res.norms[gamma][m]))])
        y = np.asarray(getattr(res.terminal, 'coeffs', res.terminal))
        term.extend([scheme, i, repr(float(c))] for i, c in enumerate(y))
        print('%-14s ||Y_M||_H = %.6e%s' % (
            scheme, res.norms[0.0][-1],
            '  (aborted)' if bool(np.any(res.aborted)) else ''))
    os.makedirs(out, exist_ok=True)
    _write_csv(os.path.join(out, 'trajectory.csv'),
               ['scheme', 'm', 't', 'norm_H', 'norm_H_gamma'], traj)
    _write_csv(os.path.join(out, 'terminal.csv'), ['scheme', 'i', 'coeff'],
               term)
    _write_manifest(out, config, plan, ['trajectory.csv', 'terminal.csv'])
    return EXIT_OK


def cmd_verify(config, plan, out):
    problem = build_problem(plan)
    rng = np.random.default_rng(plan.seed)
    first = check_commutativity_first(problem.coeffs, rng=rng)
    second = check_commutativity_second(problem.coeffs, rng=rng)
    print('first kind   residual %.3e  %s'
          % (first.residual, 'ok' if first else 'FAILED'))
    print('second kind  residual %.3e  %s'
          % (second.residual, 'ok' if second else 'FAILED'))
    return EXIT_OK if first and second else EXIT_FAILED


def cmd_diagnostics(config, plan, out):
    d = config['diagnostics']
    S, dt = d['samples'], float(d['dt'])
    if S < 2 or dt <= 0:
        raise SchemaError('diagnostics.samples >= 2 and diagnostics.dt > 0')
    problem = build_problem(plan)
    noise = problem.noise
    rng = PathSeed(plan.seed, 0).generator()
    pair = sample_pair(noise, dt, rng, size=S)
    q = noise.q
    products = {'dW*dW': (pair.dW * pair.dW, q * dt),
                'dW*dZ': (pair.dW * pair.dZ, q * dt ** 2 / 2),
                'dZ*dW': (pair.dZ * pair.dW, q * dt ** 2 / 2),
                'dZ*dZ': (pair.dZ * pair.dZ, q * dt ** 3 / 3)}
    rows, worst = [], 0.0
    for name, (x, expected) in products.items():
        mean = x.mean(axis=0)
        se = x.std(axis=0, ddof=1) / np.sqrt(S)
        z = (mean - expected) / se
        worst = max(worst, float(np.max(np.abs(z))))
        rows.extend([j, name, repr(float(m)), repr(float(e)), repr(float(s)),
                     repr(float(zz))]
                    for j, (m, e, s, zz) in enumerate(zip(mean, expected,
                                                          se, z)))
    os.makedirs(out, exist_ok=True)
    _write_csv(os.path.join(out, 'diagnostics.csv'),
               ['j', 'moment', 'empirical', 'expected', 'stderr', 'z'], rows)
    artifacts = ['diagnostics.csv']
    if d['trace']:
        M_ref = plan.reference_steps
        fine = fine_increments(noise, problem.horizon / M_ref, M_ref,
                               [PathSeed(plan.seed, 0)])
        trace = d['trace']
        if not os.path.isabs(trace):
            trace = os.path.join(out, trace)
        write_increment_trace(trace, fine[0])
        artifacts.append(os.path.relpath(trace, out))
    _write_manifest(out, config, plan, artifacts, max_abs_z=worst)
    print('%d modes, %d samples per mode, max |z| = %.2f (%s 4 stderr)'
          % (noise.n_modes, S, worst, 'within' if worst <= 4 else 'beyond'))
    return EXIT_OK


COMMANDS = {
    'study': cmd_study,
    'simulate': cmd_simulate,
    'verify-commutativity': cmd_verify,
    'sample-diagnostics': cmd_diagnostics,
}


def build_parser():
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(
        prog='wpspde', formatter_class=fmt, epilog=keys_help(),
        description='Exponential Wagner-Platen SPDE integrators: studies, '
                    'single runs and diagnostics.')
    parser.add_argument('--version', action='version', version=__version__)
    sub = parser.add_subparsers(dest='command', required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, formatter_class=fmt, epilog=keys_help())
        p.add_argument('config', nargs='?', help='TOML configuration file')
        p.add_argument('--set', action='append', default=[],
                       metavar='TABLE.KEY=VALUE', help='override a config key')
        p.add_argument('-o', '--output-dir', help='output directory')
        p.add_argument('--seed', type=int)
        p.add_argument('--paths', type=int)
        p.add_argument('--threads', type=int)
        p.add_argument('-v', '--verbose', action='store_true')
        p.add_argument('-q', '--quiet', action='store_true')
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    overrides = list(args.set)
    for flag, key in (('seed', 'study.seed'), ('paths', 'study.paths'),
                      ('threads', 'study.threads'),
                      ('output_dir', 'output.directory')):
        value = getattr(args, flag)
        if value is not None:
            overrides.append('%s=%s' % (key, json.dumps(value)))
    try:
        config = load_config(args.config, overrides)
        level = 'DEBUG' if args.verbose else 'WARNING' if args.quiet \
            else config['logging']['level']
        if level not in ('DEBUG', 'INFO', 'WARNING', 'ERROR'):
            raise SchemaError('logging.level must be DEBUG, INFO, WARNING '
                              'or ERROR')
        logging.basicConfig(level=level, format='%(levelname)s %(message)s')
        plan = plan_from_config(config)
        return COMMANDS[args.command](config, plan,
                                      config['output']['directory'])
    except FileNotFoundError as exc:
        print('error: %s' % exc, file=sys.stderr)
        return EXIT_MISSING
    except ConstraintViolation as exc:
        print('error: constraint violation: %s' % exc, file=sys.stderr)
        return EXIT_CONSTRAINT
    except ConfigurationError as exc:
        print('error: invalid configuration: %s' % exc, file=sys.stderr)
        return EXIT_SCHEMA
    except (StudyError, WPSPDEError) as exc:
        print('error: %s' % exc, file=sys.stderr)
        return EXIT_FAILED


if __name__ == '__main__':
    sys.exit(main())
