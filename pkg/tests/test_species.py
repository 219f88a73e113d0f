import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mspks import species as sm
from mspks.species import CouplingModel, Verdict

PI = np.pi


def model(B, M, chi=None):
    return CouplingModel(np.array(B, dtype=float), np.array(M, dtype=float), chi)


# ---------------------------------------------------------------- oracles

def q_oracle(B, M, J):
    # plain double loop over the subset
    num = sum(B[a][b] * M[a] * M[b] for a in J for b in J)
    return num / sum(M[a] for a in J)


def verdict_oracle(B, M):
    k = len(M)
    Bp = [[max(x, 0.0) for x in row] for row in B]
    full = list(range(k))
    q_full = q_oracle(Bp, M, full)
    proper = [[a for a in range(k) if mask >> a & 1] for mask in range(1, 2**k - 1)]
    sym = all(B[a][b] == B[b][a] for a in range(k) for b in range(k))
    tol = 1e-12 * 8 * PI
    if sym and q_oracle(B, M, full) > 8 * PI + tol:
        return Verdict.SUPERCRITICAL
    if any(x > 0 for row in Bp for x in row) and q_full < 8 * PI - tol and all(
            q_oracle(Bp, M, J) < q_full - 1e-12 * max(abs(q_full), 8 * PI) for J in proper):
        return Verdict.SUBCRITICAL
    return Verdict.INDETERMINATE


# ---------------------------------------------------------------- examples

@pytest.mark.parametrize("B, expected", [
    ([[0, 1], [1, 0]], [[0, 1], [1, 0]]),
    ([[0, 1], [-2, 0]], [[0, 1], [0, 0]]),
    ([[-3]], [[0]]),
])
def test_positive_part(B, expected):
    np.testing.assert_array_equal(sm.positive_part(B), expected)


def test_q_functional_examples():
    m = model([[0, 1], [1, 0]], [4 * PI, 12 * PI])
    assert sm.q_functional(m, (0, 1)) == pytest.approx(6 * PI, rel=1e-14)
    assert sm.q_functional(m, (0,)) == 0.0
    assert sm.q_functional(model([[1]], [8 * PI]), (0,)) == pytest.approx(8 * PI, rel=1e-15)
    with pytest.raises(ValueError):
        sm.q_functional(m, ())


@pytest.mark.parametrize("B, M, expected", [
    ([[0, 1], [1, 0]], [3.9 * PI, 1000 * PI], Verdict.SUBCRITICAL),
    ([[1]], [8.1 * PI], Verdict.SUPERCRITICAL),
    ([[1]], [8 * PI], Verdict.INDETERMINATE),
    ([[0, 1], [1, 0]], [3.9 * PI, 12 * PI], Verdict.SUBCRITICAL),
    ([[0, 1], [1, 0]], [5 * PI, 100 * PI], Verdict.SUPERCRITICAL),
])
def test_subcritical_check_examples(B, M, expected):
    v = sm.subcritical_check(model(B, M))
    assert v.verdict is expected


def test_subcritical_witness():
    v = sm.subcritical_check(model([[0, 1], [1, 0]], [3.9 * PI, 1000 * PI]))
    assert v.q_full == pytest.approx(2 * 3.9 * 1000 * PI / 1003.9, rel=1e-14)
    assert v.q_full / PI == pytest.approx(7.77, abs=5e-3)
    assert v.worst_q == 0.0


def test_species_cap():
    with pytest.raises(ValueError):
        model(np.eye(17), np.ones(17))


def test_lambda_examples():
    assert sm.lambda_J([[1]], [8 * PI], (0,)) == pytest.approx(0.0, abs=1e-10)
    A = [[0, 1], [1, 0]]
    assert sm.lambda_J(A, [4 * PI, 4 * PI], (0, 1)) == pytest.approx(32 * PI**2, rel=1e-14)
    assert sm.lambda_J(A, [4 * PI, 4 * PI], (0,)) == pytest.approx(32 * PI**2, rel=1e-14)
    with pytest.raises(ValueError):
        sm.lambda_J([[-1]], [PI], (0,))


def test_log_hls_examples():
    r = sm.log_hls_condition([[1]], [8 * PI])
    assert r.bounded_below and r.minimizer_exists
    r = sm.log_hls_condition([[0, 1], [1, 0]], [4 * PI, 4 * PI])
    assert not r.bounded_below
    r = sm.log_hls_condition([[2]], [4 * PI])
    assert r.bounded_below and r.minimizer_exists
    with pytest.raises(sm.NotSymmetricError):
        sm.log_hls_condition([[0, 1], [2, 0]], [PI, PI])


def test_spectral_examples():
    s = sm.spectral_sufficient(model([[0, 1], [1, 0]], [4 * PI, 4 * PI]))
    assert s.rho == pytest.approx(1.0) and s.bound_holds
    s = sm.spectral_sufficient(model([[1]], [8 * PI]))
    assert s.rho == pytest.approx(1.0) and not s.bound_holds
    m = model([[0, 1], [1, 0]], [7 * PI, 9 * PI])
    s = sm.spectral_sufficient(m)
    assert not s.bound_holds
    assert sm.q_functional(m, (0, 1), True) == pytest.approx(7.875 * PI, rel=1e-14)


def test_spectral_bound_randomized():
    # sufficient condition: Q_{B+}[I] <= rho(B+) max M for symmetric nonnegative B
    rng = np.random.default_rng(7)
    violations = 0
    for _ in range(1000):
        k = int(rng.integers(1, 7))
        A = rng.random((k, k)) * rng.choice([0.0, 1.0], size=(k, k), p=[0.3, 0.7])
        A = 0.5 * (A + A.T)
        M = rng.random(k) * 20 + 0.01
        m = model(A, M)
        rho = sm.spectral_sufficient(m).rho
        q = sm.q_functional(m, m.full_set, True)
        if q > rho * M.max() * (1 + 1e-12) + 1e-14:
            violations += 1
    assert violations == 0


@pytest.mark.parametrize("B, chain, ok", [
    ([[0, 1], [-1, 0]], [{1}, {0, 1}], True),
    ([[0, 1, 2], [-1, 0, 3], [-2, -4, 0]], None, True),
    ([[0, 1], [1, 0]], [set(), set()], False),
])
def test_essentially_dissipative(B, chain, ok):
    r = sm.essentially_dissipative(B)
    assert r.is_essentially_dissipative is ok
    if chain is not None:
        assert [set(s) for s in r.chain[:len(chain)]] == chain
    assert all(a <= b for a, b in zip(r.chain, r.chain[1:]))


def test_symmetrize_examples():
    s = sm.symmetrize_tridiagonal([[0, 2, 0], [1, 0, 6], [0, 3, 0]])
    np.testing.assert_allclose(s.eta, [1, 2, 4])
    np.testing.assert_allclose(s.B_sym, [[0, 1, 0], [1, 0, 1.5], [0, 1.5, 0]])
    B = [[1, 2, 0], [2, 0, 3], [0, 3, 5]]
    s = sm.symmetrize_tridiagonal(B)
    np.testing.assert_array_equal(s.eta, [1, 1, 1])
    np.testing.assert_array_equal(s.B_sym, B)
    with pytest.raises(ValueError):
        sm.symmetrize_tridiagonal([[0, 1], [-1, 0]])
    with pytest.raises(ValueError):
        sm.symmetrize_tridiagonal([[0, 1, 1], [1, 0, 1], [1, 1, 0]])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(0.01, 100), st.floats(0.01, 100), st.booleans()),
                min_size=1, max_size=8))
def test_symmetrize_is_symmetric(pairs):
    k = len(pairs) + 1
    B = np.zeros((k, k))
    for i, (u, d, neg) in enumerate(pairs):
        s = -1.0 if neg else 1.0
        B[i, i + 1], B[i + 1, i] = s * u, s * d
    r = sm.symmetrize_tridiagonal(B)
    assert np.max(np.abs(r.B_sym - r.B_sym.T)) <= 1e-14 * np.max(np.abs(r.B_sym))
    # tagged densities eta n reproduce the original sources
    n = np.arange(1.0, k + 1)
    np.testing.assert_allclose(r.B_sym @ (r.eta * n), B @ n, rtol=1e-13)


def test_symmetrize_block_restart():
    B = [[0, 2, 0, 0], [1, 0, 0, 0], [0, 0, 0, 4], [0, 0, 1, 0]]
    r = sm.symmetrize_tridiagonal(B)
    np.testing.assert_allclose(r.eta, [1, 2, 1, 4])


def test_rescale_sensitivities():
    m = model([[0, 1], [1, 0]], [PI, 2 * PI])
    assert sm.rescale_sensitivities(m) == m
    m = model([[0, 1], [1, 0]], [PI, 2 * PI], [2.0, 3.0])
    t = sm.rescale_sensitivities(m)
    np.testing.assert_allclose(t.B, [[0, 6], [6, 0]])
    np.testing.assert_allclose(t.M, [PI / 2, 2 * PI / 3])
    m = model([[1, 1], [1, 1]], [PI, PI], [2.0, 3.0])
    np.testing.assert_allclose(sm.rescale_sensitivities(m).B, [[4, 6], [6, 9]])
    assert sm.rescale_sensitivities(m).symmetric


def test_second_moment_slope():
    assert sm.second_moment_slope(model([[1]], [8 * PI])) == pytest.approx(0.0, abs=1e-12)
    assert sm.second_moment_slope(model([[0, 1], [1, 0]], [4 * PI, 12 * PI])) == pytest.approx(16 * PI)
    assert sm.second_moment_slope(model([[1]], [16 * PI])) == pytest.approx(-64 * PI)
    with pytest.raises(sm.NotSymmetricError):
        sm.second_moment_slope(model([[0, 1], [-1, 0]], [PI, PI]))


def test_decomposition_examples():
    r = sm.check_decomposition_condition(model([[1]], [4 * PI]), [[[1]]])
    assert r.valid_decomposition and r.condition_holds
    assert r.parts[0].C == pytest.approx(4 * PI)
    r = sm.check_decomposition_condition(model([[1]], [4 * PI]), [[[0.5]]])
    assert not r.valid_decomposition
    r = sm.check_decomposition_condition(model([[1]], [9 * PI]), [[[1]]])
    assert r.valid_decomposition and not r.condition_holds
    with pytest.raises(ValueError):
        sm.check_decomposition_condition(model([[1]], [PI]), [np.eye(2)])


def test_decomposition_two_parts():
    B = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)
    parts = [np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0]]), np.array([[0, 0, 0], [0, 0, 1], [0, 1, 0]])]
    r = sm.check_decomposition_condition(model(B, [PI, PI, PI]), parts)
    assert r.valid_decomposition and r.condition_holds
    np.testing.assert_allclose(r.row_sums, [PI, 2 * PI, PI])


# ---------------------------------------------------------------- properties

square = st.integers(1, 4).flatmap(lambda k: st.tuples(
    st.lists(st.lists(st.sampled_from([-2.0, -1.0, 0.0, 0.5, 1.0, 2.0]), min_size=k, max_size=k),
             min_size=k, max_size=k),
    st.lists(st.floats(0.1, 12.0), min_size=k, max_size=k),
    st.booleans()))


@settings(max_examples=300, deadline=None)
@given(square)
def test_verdict_matches_oracle(args):
    B, Mpi, symmetrize = args
    B = np.array(B)
    if symmetrize:
        B = np.triu(B) + np.triu(B, 1).T
    M = [m * PI for m in Mpi]
    assert sm.subcritical_check(model(B, M)).verdict is verdict_oracle(B.tolist(), M)


@settings(max_examples=200, deadline=None)
@given(square)
def test_q_full_matrix_form(args):
    B, Mpi, _ = args
    B, M = np.array(B), np.array(Mpi) * PI
    m = model(B, M)
    expected = (B @ M) @ M / M.sum()
    assert sm.q_functional(m, m.full_set) == pytest.approx(expected, rel=1e-12, abs=1e-12)
    for J in itertools.chain.from_iterable(
            itertools.combinations(range(len(M)), r) for r in range(1, len(M) + 1)):
        assert sm.q_functional(m, J) == pytest.approx(q_oracle(B.tolist(), M.tolist(), J),
                                                      rel=1e-12, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(square, st.randoms(use_true_random=False))
def test_permutation_equivariance(args, rnd):
    B, Mpi, _ = args
    B, M = np.array(B), np.array(Mpi) * PI
    p = list(range(len(M)))
    rnd.shuffle(p)
    a = sm.subcritical_check(model(B, M)).verdict
    b = sm.subcritical_check(model(B[np.ix_(p, p)], M[p])).verdict
    assert a is b


@settings(max_examples=100, deadline=None)
@given(square, st.floats(0.1, 10.0), st.integers(0, 3))
def test_chain_invariant_under_row_scaling(args, c, row):
    B = np.array(args[0])
    row %= B.shape[0]
    B2 = B.copy()
    B2[row] *= c
    assert sm.essentially_dissipative(B).chain == sm.essentially_dissipative(B2).chain
