import json
import subprocess
import sys

import pytest

from wpspde.cli import SCHEMA, load_config, main, parse_override

FAST = ['--set', 'problem.modes=8', '--set', 'study.paths=6',
        '--set', 'study.resolutions=[4, 8, 16]', '--set', 'study.batch_size=3']


def test_verify_commutativity(capsys):
    assert main(['verify-commutativity']) == 0
    out = capsys.readouterr().out
    assert 'first kind' in out and 'residual' in out


def test_verify_noncommutative_dealiased(capsys):
    code = main(['verify-commutativity', '--set', 'problem.modes=8',
                 '--set', 'problem.params={product = "dealiased"}'])
    assert code == 1
    assert 'FAILED' in capsys.readouterr().out


def test_gamma_constraint(capsys):
    assert main(['study', '--set', 'regularity.gamma=1.6']) == 4
    assert 'γ ∈ [1, 3/2)' in capsys.readouterr().err


def test_missing_file(tmp_path):
    assert main(['study', str(tmp_path / 'nope.toml')]) == 2


@pytest.mark.parametrize('text', [
    '[study]\nunknown = 1\n',
    '[nothing]\nx = 1\n',
    '[study]\npaths = "many"\n',
    '[study]\nresolutions = [4, 6, 8]\n',
    '[problem]\ncoefficients = "NOPE"\n',
    'not toml at all [[[',
])
def test_schema_violations(tmp_path, text):
    cfg = tmp_path / 'c.toml'
    cfg.write_text(text)
    assert main(['study', str(cfg)]) == 3


def test_study_writes_artifacts_and_is_idempotent(tmp_path):
    cfg = tmp_path / 'c.toml'
    cfg.write_text('[output]\ndirectory = "%s"\n' % (tmp_path / 'out'))
    assert main(['study', str(cfg)] + FAST) == 0
    out = tmp_path / 'out'
    first = {p.name: p.read_bytes() for p in out.iterdir()}
    for name in ('report.csv', 'orders.csv', 'manifest.json',
                 'convergence.svg'):
        assert name in first
    manifest = json.loads(first['manifest.json'])
    assert sorted(manifest['artifacts']) == sorted(first)
    assert main(['study', str(cfg)] + FAST) == 0
    second = {p.name: p.read_bytes() for p in out.iterdir()}
    assert first == second


def test_study_with_moments(tmp_path):
    out = tmp_path / 'm'
    code = main(['study', '-o', str(out), '--set', 'study.moments=true',
                 '--set', 'study.moment_resolutions=[4, 8, 16]'] + FAST)
    assert code == 0
    manifest = json.loads((out / 'manifest.json').read_text())
    assert 'moments.csv' in manifest['artifacts']
    assert 'bounded' in manifest['moment_verdict']


def test_simulate(tmp_path):
    out = tmp_path / 's'
    assert main(['simulate', '-o', str(out), '--set', 'simulate.steps=16']
                + FAST) == 0
    rows = (out / 'trajectory.csv').read_text().splitlines()
    assert rows[0] == 'scheme,m,t,norm_H,norm_H_gamma'
    assert len(rows) == 1 + 3 * 17


def test_sample_diagnostics_with_trace(tmp_path):
    out = tmp_path / 'd'
    code = main(['sample-diagnostics', '-o', str(out),
                 '--set', 'diagnostics.samples=20000',
                 '--set', 'diagnostics.trace="inc.csv"'] + FAST)
    assert code == 0
    manifest = json.loads((out / 'manifest.json').read_text())
    assert set(manifest['artifacts']) == {'diagnostics.csv', 'inc.csv',
                                          'manifest.json'}
    assert manifest['max_abs_z'] < 5


def test_help_lists_every_key():
    proc = subprocess.run([sys.executable, '-m', 'wpspde', '--help'],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    for section, keys in SCHEMA.items():
        assert '[%s]' % section in proc.stdout
        for key, (_, _, rule) in keys.items():
            assert key in proc.stdout
            assert rule in proc.stdout


def test_overrides_win():
    cfg = load_config(None, ['study.paths=7', 'output.directory=x'])
    assert cfg['study']['paths'] == 7
    assert cfg['output']['directory'] == 'x'
    assert parse_override('problem.initial=parabola') == {
        'problem': {'initial': 'parabola'}}
