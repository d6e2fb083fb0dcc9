import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from wpspde import (ConfigurationError, DomainError, StudyError, StudyPlan,
                    build_problem, fit_order, moment_probe,
                    reference_solution, run_study, strong_error, write_report)
from wpspde.experiments import reference_gap
from wpspde.stochastics import PathSeed, fine_increments


def small_flagship(**kw):
    base = dict(modes=8, paths=20, resolutions=(4, 8, 16), batch_size=10,
                seed=5)
    base.update(kw)
    return StudyPlan(**base)


@pytest.mark.parametrize('kw', [
    dict(resolutions=(4, 6, 8)),
    dict(resolutions=(8, 4, 16)),
    dict(paths=1),
    dict(reference_multiplier=4),
    dict(norm='L2'),
    dict(coefficients='NOPE'),
    dict(schemes=('euler', 'rk4')),
])
def test_plan_validation(kw):
    with pytest.raises(ConfigurationError):
        small_flagship(**kw).validate()


def test_fit_order_exact_power_law():
    M = [4, 8, 16, 32]
    fit = fit_order(M, [4 * m ** -1.5 for m in M])
    assert fit.order == pytest.approx(1.5, abs=1e-12)
    assert fit.ci_lo == pytest.approx(1.5, abs=1e-9)


def test_fit_order_flat():
    assert fit_order([4, 8, 16], [0.1, 0.1, 0.1]).order == pytest.approx(
        0.0, abs=1e-12)


def test_fit_order_errors():
    with pytest.raises(DomainError):
        fit_order([4, 8, 16], [0.1, 0.0, 0.1])
    with pytest.raises(DomainError):
        fit_order([4, 8], [0.1, 0.05])


def test_fit_order_noisy_power_law():
    # polyfit oracle put all of 2000 such draws inside [1.35, 1.65]
    rng = np.random.default_rng(0)
    M = np.array([4, 8, 16, 32.0])
    slopes = [fit_order(M, 4 * M ** -1.5
                        * np.exp(0.05 * rng.standard_normal(4))).order
              for _ in range(200)]
    assert np.mean((np.array(slopes) >= 1.35) & (np.array(slopes) <= 1.65)) \
        >= 0.99


def test_reference_zero_coefficients_exact():
    plan = StudyPlan(coefficients='ZERO', modes=5, paths=2,
                     resolutions=(4, 8, 16))
    problem = build_problem(plan)
    ref = reference_solution(plan, 0)
    np.testing.assert_allclose(
        ref, np.exp(-problem.op.eigenvalues * plan.horizon) * problem.initial,
        rtol=1e-12)


def test_gbm_reference_is_exact_and_scheme_error_small():
    plan = StudyPlan(coefficients='SCALAR_GBM', params=dict(sigma=1.0),
                     paths=400, resolutions=(4, 8, 16), batch_size=200)
    problem = build_problem(plan)
    ref = reference_solution(plan, 3)
    M_ref = plan.reference_steps
    W = fine_increments(problem.noise, 1 / M_ref, M_ref,
                        [PathSeed(plan.seed, 3)]).dW.sum()
    assert ref[0] == pytest.approx(np.exp(-1.5 + W), rel=1e-12)
    rms, _ = strong_error(plan, 'wagner_platen', M_ref)
    assert rms < M_ref ** -1.5


def test_self_comparison_is_zero():
    plan = small_flagship()
    rms, se = strong_error(plan, 'wagner_platen', plan.reference_steps)
    assert rms == 0.0 and se == 0.0


def test_reference_gap_gate():
    plan = small_flagship()
    coarse, _ = strong_error(plan, 'euler', plan.resolutions[0])
    assert reference_gap(plan) < 0.5 * coarse


def test_gbm_euler_halving():
    plan = StudyPlan(coefficients='SCALAR_GBM', params=dict(sigma=1.0),
                     paths=2000, resolutions=(16, 32, 64), batch_size=500,
                     schemes=('euler',), seed=3)
    e = run_study(plan).rms('euler')
    for a, b in zip(e, e[1:]):
        assert 0.6 <= b / a <= 0.85


def test_flagship_small_errors_decrease():
    rep = run_study(small_flagship(paths=40))
    for s in rep.plan.schemes:
        e = rep.rms(s)
        se = [rep.row(s, M)['stderr'] for M in rep.plan.resolutions]
        inversions = [i for i in range(len(e) - 1) if e[i + 1] > e[i]]
        assert len(inversions) <= 1
        for i in inversions:
            assert e[i + 1] - e[i] <= 2 * np.hypot(se[i], se[i + 1])


def test_all_paths_aborted_is_study_error():
    plan = small_flagship(modes=16, paths=4, noise_scale=1e12, batch_size=2)
    with pytest.raises(StudyError):
        run_study(plan)


def test_moment_probe_zero_constant():
    plan = StudyPlan(coefficients='ZERO', modes=6, paths=4,
                     moment_resolutions=(4, 8, 16, 32))
    m = moment_probe(plan)
    np.testing.assert_allclose(m.mean, m.mean[0], rtol=1e-12)
    assert m.bounded


def test_moment_probe_negative_control():
    plan = StudyPlan(modes=32, paths=40, noise_scale=1000.0)
    assert not moment_probe(plan).bounded


def _report_bytes(plan, tmp_path, name):
    out = tmp_path / name
    write_report(run_study(plan), str(out))
    return (out / 'report.csv').read_bytes(), out


def test_report_determinism_and_threads(tmp_path):
    plan = small_flagship()
    a, out = _report_bytes(plan, tmp_path, 'a')
    b, _ = _report_bytes(plan, tmp_path, 'b')
    c, _ = _report_bytes(small_flagship(threads=3), tmp_path, 'c')
    assert a == b == c
    assert (tmp_path / 'a' / 'orders.csv').read_bytes() == \
        (tmp_path / 'c' / 'orders.csv').read_bytes()


def test_thread_env(tmp_path, monkeypatch):
    monkeypatch.setenv('WPSPDE_THREADS', '2')
    a, _ = _report_bytes(small_flagship(), tmp_path, 'env')
    monkeypatch.delenv('WPSPDE_THREADS')
    b, _ = _report_bytes(small_flagship(), tmp_path, 'plain')
    assert a == b


def test_artifacts(tmp_path):
    plan = small_flagship()
    _, out = _report_bytes(plan, tmp_path, 'art')
    lines = (out / 'report.csv').read_text().splitlines()
    assert lines[0] == 'scheme,M,rms,stderr,aborted,seconds'
    assert len(lines) == 1 + 3 * 3
    assert lines[1].endswith(',')          # seconds left empty
    orders = (out / 'orders.csv').read_text().splitlines()
    assert orders[0] == 'scheme,slope,ci_lo,ci_hi'
    manifest = json.loads((out / 'manifest.json').read_text())
    assert manifest['seed'] == plan.seed
    assert manifest['plan']['resolutions'] == [4, 8, 16]
    for name in manifest['artifacts']:
        assert (out / name).exists()
    root = ET.parse(out / 'convergence.svg').getroot()
    assert len(root.findall('{http://www.w3.org/2000/svg}polyline')) == 3


def test_record_timing_fills_seconds(tmp_path):
    plan = small_flagship(record_timing=True, schemes=('euler',))
    _, out = _report_bytes(plan, tmp_path, 't')
    row = (out / 'report.csv').read_text().splitlines()[1].split(',')
    assert float(row[-1]) >= 0
