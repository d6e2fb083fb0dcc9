import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wpspde import (ConfigurationError, DomainError, IncrementPair, NoiseSpec,
                    PathSeed, aggregate_pairs, coarsen,
                    iterated_integrals_oracle, sample_pair)
from wpspde.stochastics import (fine_increments, pairs_from_normals,
                                read_increment_trace, standard_normals,
                                write_increment_trace)


def test_noise_spec_validation():
    with pytest.raises(DomainError):
        NoiseSpec([1.0, 0.0])
    with pytest.raises(ConfigurationError):
        NoiseSpec([])
    with pytest.raises(ConfigurationError):
        NoiseSpec([1.0, 1.0], mode_map=[0, 0])
    noise = NoiseSpec([4.0, 1.0])
    assert noise.trace == 5.0
    np.testing.assert_allclose(noise.basis(), np.diag([2.0, 1.0]))


def test_u0_basis_is_orthonormal():
    noise = NoiseSpec([4.0, 0.25, 9.0])
    g = noise.basis()
    # <a, b>_{U_0} = sum a_j b_j / q_j
    gram = (g / noise.q[:, None]).T @ g
    np.testing.assert_allclose(gram, np.eye(3), atol=1e-15)


def test_sample_pair_rejects_nonpositive_dt():
    with pytest.raises(DomainError):
        sample_pair(NoiseSpec([1.0]), 0.0, np.random.default_rng(0))


def test_hand_evaluated_pair():
    dt = 0.04
    pair = pairs_from_normals(NoiseSpec([1.0]), dt, np.ones((1, 2)))
    assert pair.dW[0] == pytest.approx(np.sqrt(dt), rel=1e-15)
    assert pair.dZ[0] == pytest.approx(
        dt ** 1.5 * (0.5 + 1 / (2 * np.sqrt(3))), rel=1e-15)


def test_closed_form_second_moments():
    # xi, eta independent standard normals: E[dZ^2] = q dt^3 (1/4 + 1/12)
    a, b = 0.5, 1 / (2 * np.sqrt(3))
    assert a * a + b * b == pytest.approx(1 / 3, rel=1e-15)
    assert a == 0.5


def test_covariance_law():
    noise = NoiseSpec([1.0, 0.3, 0.01])
    dt, S = 0.05, 100_000
    pair = sample_pair(noise, dt, np.random.default_rng(3), size=S)
    q = noise.q
    for x, y, target in ((pair.dW, pair.dW, q * dt),
                         (pair.dW, pair.dZ, q * dt ** 2 / 2),
                         (pair.dZ, pair.dZ, q * dt ** 3 / 3)):
        prod = x * y
        se = prod.std(axis=0, ddof=1) / np.sqrt(S)
        assert np.all(np.abs(prod.mean(axis=0) - target) <= 4 * se)
    # distinct modes independent
    corr = np.corrcoef(pair.dW.T)
    off = corr[~np.eye(3, dtype=bool)]
    assert np.all(np.abs(off) <= 4 / np.sqrt(S))


def test_aggregate_single_step_unchanged():
    p = IncrementPair([0.3, -0.1], [0.01, 0.02], 0.1)
    out = aggregate_pairs([p])
    np.testing.assert_array_equal(out.dW, p.dW)
    np.testing.assert_array_equal(out.dZ, p.dZ)


def test_aggregate_empty():
    with pytest.raises(DomainError):
        aggregate_pairs([])


def _piecewise_oracle(dW, dZ, delta):
    """Integrate W_s - W_0 over [0, k delta] cell by cell:
    on cell m it is (W_{t_m} - W_0) delta + dZ_m."""
    W, Z = 0.0, 0.0
    for a, z in zip(dW, dZ):
        Z += W * delta + z
        W += a
    return W, Z


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-2, 2), st.floats(-1, 1)), min_size=1,
                max_size=9), st.floats(1e-3, 1.0))
def test_aggregate_matches_piecewise_integral(cells, delta):
    dW = np.array([c[0] for c in cells])
    dZ = np.array([c[1] for c in cells])
    pairs = [IncrementPair([a], [z], delta) for a, z in cells]
    out = aggregate_pairs(pairs)
    W, Z = _piecewise_oracle(dW, dZ, delta)
    assert out.dt == pytest.approx(len(cells) * delta)
    assert out.dW[0] == pytest.approx(W, abs=1e-12)
    assert out.dZ[0] == pytest.approx(Z, abs=1e-12)


def test_aggregate_two_steps_formula():
    a1, z1, a2, z2, d = 0.7, 0.05, -0.2, 0.01, 0.1
    out = aggregate_pairs([IncrementPair([a1], [z1], d),
                           IncrementPair([a2], [z2], d)])
    assert out.dW[0] == pytest.approx(a1 + a2)
    assert out.dZ[0] == pytest.approx(z1 + z2 + d * a1)


def test_aggregated_law_matches_coarse_law():
    noise = NoiseSpec([2.0])
    S, k, d = 100_000, 8, 0.01
    fine = pairs_from_normals(noise, d,
                              np.random.default_rng(5).standard_normal(
                                  (S, k, 1, 2)))
    c = coarsen(fine, k)
    dt = k * d
    for x, y, target in ((c.dW, c.dW, 2 * dt), (c.dW, c.dZ, dt ** 2),
                         (c.dZ, c.dZ, 2 * dt ** 3 / 3)):
        prod = (x * y).ravel()
        se = prod.std(ddof=1) / np.sqrt(S)
        assert abs(prod.mean() - target) <= 4 * se


def test_coupling_bit_exact():
    noise = NoiseSpec([1.0, 0.5])
    seeds = [PathSeed(7, 0), PathSeed(7, 1)]
    fine = fine_increments(noise, 1 / 64, 64, seeds)
    again = fine_increments(noise, 1 / 64, 64, seeds[1:])
    np.testing.assert_array_equal(fine.dW[1], again.dW[0])
    # coarsening in two stages equals coarsening in one
    a = coarsen(coarsen(fine, 4), 2)
    b = coarsen(fine, 8)
    np.testing.assert_allclose(a.dW, b.dW, rtol=0, atol=1e-15)
    np.testing.assert_allclose(a.dZ, b.dZ, rtol=0, atol=1e-16)
    # replaying one path alone gives the same coarse increments bit for bit
    c1 = coarsen(fine, 8)[1]
    c2 = coarsen(again, 8)[0]
    np.testing.assert_array_equal(c1.dW, c2.dW)
    np.testing.assert_array_equal(c1.dZ, c2.dZ)


def test_stream_discipline():
    # step-major, mode-minor, xi then eta
    rng = PathSeed(11, 3).generator()
    raw = PathSeed(11, 3).generator().standard_normal(3 * 2 * 2)
    z = standard_normals(rng, 3, 2)
    assert z[1, 0, 1] == raw[1 * 4 + 0 * 2 + 1]
    assert z[2, 1, 0] == raw[2 * 4 + 1 * 2 + 0]


def test_paths_independent_streams():
    a = PathSeed(1, 0).generator().standard_normal(5)
    b = PathSeed(1, 1).generator().standard_normal(5)
    assert not np.allclose(a, b)


def test_oracle_single_cell():
    inc = np.random.default_rng(0).standard_normal((4, 1, 3))
    o = iterated_integrals_oracle(inc, 0.1)
    assert not np.any(o.I2)
    assert not np.any(o.I3)


def test_oracle_discrete_product_rule():
    # for left sums, I_i I_j = I_(i,j) + I_(j,i) + sum_m d_i d_j exactly
    inc = np.random.default_rng(1).standard_normal((5, 16, 3)) * 0.1
    o = iterated_integrals_oracle(inc, 0.16)
    qv = np.einsum('pmi,pmj->pij', inc, inc)
    lhs = o.I1[:, :, None] * o.I1[:, None, :]
    np.testing.assert_allclose(lhs, o.I2 + np.swapaxes(o.I2, 1, 2) + qv,
                               atol=1e-14)


def _ito_residuals(n, P=1000, K=2, dt=0.1, seed=0):
    rng = np.random.default_rng(seed)
    inc = rng.standard_normal((P, n, K)) * np.sqrt(dt / n)
    o = iterated_integrals_oracle(inc, dt)
    eye = np.eye(K)
    I = o.I1
    r2 = I[:, :, None] * I[:, None, :] - o.I2 - np.swapaxes(o.I2, 1, 2) \
        - dt * eye
    perms = sum(np.transpose(o.I3, (0,) + tuple(1 + np.array(p)))
                for p in ((0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0),
                          (2, 0, 1), (2, 1, 0)))
    I111 = I[:, :, None, None] * I[:, None, :, None] * I[:, None, None, :]
    corr = dt * (eye[:, :, None] * I[:, None, None, :]
                 + eye[:, None, :] * I[:, None, :, None]
                 + eye[None, :, :] * I[:, :, None, None])
    r3 = I111 - perms - corr
    return np.sqrt(np.mean(r2 ** 2)), np.sqrt(np.mean(r3 ** 2))


def test_ito_identities_decay():
    res = [_ito_residuals(n) for n in (8, 64, 512)]
    assert res[0][0] > res[1][0] > res[2][0]
    assert res[0][1] > res[1][1] > res[2][1]


def test_oracle_time_integral_matches_pair_law():
    # Iz is the left sum of W over sub-cells; its variance tends to dt^3 / 3
    dt, n, P = 0.5, 256, 20000
    inc = np.random.default_rng(4).standard_normal((P, n, 1)) * np.sqrt(dt / n)
    o = iterated_integrals_oracle(inc, dt)
    v = np.var(o.Iz)
    assert v == pytest.approx(dt ** 3 / 3, rel=0.05)


@pytest.mark.parametrize('ext', ['csv', 'npz'])
def test_trace_round_trip(tmp_path, ext):
    noise = NoiseSpec([1.0, 0.5, 0.2])
    pair = fine_increments(noise, 0.01, 6, [PathSeed(3, 0)])[0]
    path = tmp_path / ('trace.' + ext)
    write_increment_trace(path, pair)
    back = read_increment_trace(path, 0.01)
    np.testing.assert_array_equal(back.dW, pair.dW)
    np.testing.assert_array_equal(back.dZ, pair.dZ)
    if ext == 'csv':
        rows = path.read_text().splitlines()
        assert rows[0] == 'step,j,dW,dZ'
        assert rows[1].startswith('0,0,') and rows[2].startswith('0,1,')
