
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from bdprecoding.errors import DependentRows, RankDeficient, SingularGram
from bdprecoding.matkernel import (FlopCounter, UnimodularTransform, clll_reduce,
                                   gram_schmidt, herm, is_clll_reduced,
                                   orthogonality_defect, qr_thin,
                                   regularized_pinv, svd_full)


def crand(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def complex_matrices(rows, cols):
    return st.tuples(arrays(float, (rows, cols), elements=finite),
                     arrays(float, (rows, cols), elements=finite)).map(
        lambda ri: ri[0] + 1j * ri[1])


# ---------------------------------------------------------------- thin QR

def test_qr_identity():
    q, r = qr_thin(np.eye(3))
    np.testing.assert_allclose(q, np.eye(3), atol=1e-15)
    np.testing.assert_allclose(r, np.eye(3), atol=1e-15)


def test_qr_single_column():
    q, r = qr_thin(np.array([[0.0], [2.0]]))
    np.testing.assert_allclose(q, [[0], [1]], atol=1e-15)
    np.testing.assert_allclose(r, [[2]], atol=1e-15)


def test_qr_random_reconstruction():
    a = crand(np.random.default_rng(1), 6, 2)
    q, r = qr_thin(a)
    assert np.linalg.norm(a - q @ r) <= 1e-9 * np.linalg.norm(a)
    assert np.linalg.norm(herm(q) @ q - np.eye(2)) <= 1e-10
    assert np.all(np.abs(np.tril(r, -1)) == 0)
    assert np.all(np.diag(r).real >= 0) and np.all(np.diag(r).imag == 0)


def test_qr_rank_deficient():
    a = np.ones((4, 2), dtype=complex)
    with pytest.raises(RankDeficient):
        qr_thin(a)


def test_qr_batched_matches_single():
    a = crand(np.random.default_rng(2), 5, 6, 3)
    q, r = qr_thin(a)
    for j in range(5):
        qj, rj = qr_thin(a[j])
        np.testing.assert_allclose(q[j], qj, atol=1e-12)
        np.testing.assert_allclose(r[j], rj, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(complex_matrices(5, 3))
def test_qr_property(a):
    if np.linalg.matrix_rank(a, tol=1e-6 * max(np.linalg.norm(a), 1e-300)) < 3:
        return
    q, r = qr_thin(a)
    assert np.linalg.norm(herm(q) @ q - np.eye(3)) <= 1e-10
    assert np.linalg.norm(a - q @ r) <= 1e-9 * np.linalg.norm(a)


# ---------------------------------------------------------------- SVD

def test_svd_diagonal():
    u, s, v = svd_full(np.diag([3.0, 1.0]))
    np.testing.assert_allclose(s, [3, 1])


def test_svd_zero():
    _, s, _ = svd_full(np.zeros((2, 2)))
    np.testing.assert_array_equal(s, [0, 0])


def test_svd_energy_and_reconstruction():
    a = crand(np.random.default_rng(3), 4, 6)
    u, s, v = svd_full(a)
    assert s.shape == (4,)
    assert np.isclose(np.linalg.norm(a) ** 2, np.sum(s ** 2), rtol=1e-12)
    sig = np.zeros((4, 6))
    sig[:4, :4] = np.diag(s)
    assert np.linalg.norm(a - u @ sig @ herm(v)) <= 1e-9 * np.linalg.norm(a)
    assert np.linalg.norm(herm(u) @ u - np.eye(4)) <= 1e-10
    assert np.linalg.norm(herm(v) @ v - np.eye(6)) <= 1e-10


@settings(max_examples=60, deadline=None)
@given(complex_matrices(3, 4))
def test_svd_property(a):
    _, s, _ = svd_full(a)
    assert np.all(np.diff(s) <= 1e-12)
    assert np.isclose(np.sum(s ** 2), np.linalg.norm(a) ** 2, rtol=1e-9, atol=1e-9)


# ---------------------------------------------------------------- regularized inverse

def test_pinv_identity_cases():
    np.testing.assert_allclose(regularized_pinv(np.eye(2), 1.0), 0.5 * np.eye(2))
    np.testing.assert_allclose(regularized_pinv(np.eye(2), 0.0), np.eye(2))


def test_pinv_matches_left_form():
    h = crand(np.random.default_rng(4), 4, 6)
    alpha = 0.3
    left = np.linalg.solve(herm(h) @ h + alpha * np.eye(6), herm(h))
    right = regularized_pinv(h, alpha)
    assert np.linalg.norm(left - right) <= 1e-9 * np.linalg.norm(left)


def test_pinv_singular_gram():
    h = np.array([[1, 1], [1, 1]], dtype=complex)
    with pytest.raises(SingularGram):
        regularized_pinv(h, 0.0)


def test_pinv_converges_monotonically_to_right_inverse():
    h = crand(np.random.default_rng(5), 4, 6)
    errs = [np.linalg.norm(h @ regularized_pinv(h, a) - np.eye(4))
            for a in 10.0 ** -np.arange(0, 10)]
    assert all(e1 > e2 for e1, e2 in zip(errs, errs[1:]))
    assert errs[-1] < 1e-6


# ---------------------------------------------------------------- unimodular transforms

def test_unimodular_identity_and_inverse():
    t = UnimodularTransform.identity(3)
    assert t.abs_det_squared() == 1
    np.testing.assert_array_equal(t.inverse(), np.eye(3))


def test_unimodular_exact_det():
    t = UnimodularTransform.from_complex(np.array([[1 + 1j, 1], [1j, 1]]))
    # det = (1+j) - j = 1
    assert t.abs_det_squared() == 1
    np.testing.assert_array_equal(t.t @ t.inverse(), np.eye(2))
    bad = UnimodularTransform.from_complex(np.array([[2, 0], [0, 1]]))
    assert not bad.is_unimodular()


def test_unimodular_rejects_fractional_entries():
    with pytest.raises(ValueError):
        UnimodularTransform.from_complex(np.array([[0.5, 0], [0, 2]]))


# ---------------------------------------------------------------- Gram-Schmidt

def test_gram_schmidt_reconstructs_basis():
    b = crand(np.random.default_rng(6), 3, 5)
    bstar, mu, norms = gram_schmidt(b)
    np.testing.assert_allclose(mu @ bstar, b, atol=1e-12)
    g = bstar @ herm(bstar)
    np.testing.assert_allclose(g, np.diag(norms), atol=1e-10)


# ---------------------------------------------------------------- CLLL

def test_clll_identity():
    red, t = clll_reduce(np.eye(2))
    np.testing.assert_array_equal(red, np.eye(2))
    np.testing.assert_array_equal(t.t, np.eye(2))


def test_clll_known_small_case():
    # second row is the first plus a tiny offset: reduction must subtract it
    b = np.array([[1, 0], [1, 0.1]], dtype=complex)
    red, t = clll_reduce(b)
    assert is_clll_reduced(red)
    assert np.max(np.abs(red)) <= 1 + 1e-12
    np.testing.assert_allclose(t.t @ b, red, atol=1e-12)


def test_clll_dependent_rows():
    with pytest.raises(DependentRows):
        clll_reduce(np.array([[1, 2], [2, 4]], dtype=complex))


def test_clll_rejects_bad_delta():
    with pytest.raises(ValueError):
        clll_reduce(np.eye(2), delta=0.4)


def test_clll_random_4x4_contract():
    rng = np.random.default_rng(7)
    better, ln_before, ln_after = 0, [], []
    for _ in range(1000):
        b = crand(rng, 4, 4)
        red, t = clll_reduce(b)
        assert t.abs_det_squared() == 1
        assert np.linalg.norm(red - t.t @ b) <= 1e-9 * np.linalg.norm(b)
        assert is_clll_reduced(red, 0.75)
        c0, c1 = np.linalg.cond(b), np.linalg.cond(red)
        better += c1 <= c0 * (1 + 1e-12)
        ln_before.append(np.log(c0))
        ln_after.append(np.log(c1))
    assert better >= 900
    assert np.mean(ln_after) < np.mean(ln_before)


def _small_bases():
    vals = [a + 1j * b for a in range(-2, 3) for b in range(-2, 3)]
    # a fixed subsample of all 25^4 bases keeps the run short while
    # covering every entry value in every position
    rng = np.random.default_rng(8)
    for _ in range(20000):
        yield np.array(rng.choice(vals, size=(2, 2)))
    for v in vals:
        yield np.array([[v, 1], [1, v]])


def test_clll_defect_never_increases_on_small_integer_bases():
    checked = 0
    for b in _small_bases():
        if abs(np.linalg.det(b)) < 1e-9:
            continue
        red, t = clll_reduce(b)
        assert orthogonality_defect(red) <= orthogonality_defect(b) * (1 + 1e-12)
        assert t.abs_det_squared() == 1
        checked += 1
    assert checked > 15000


def test_clll_flop_counter_basic():
    c = FlopCounter()
    clll_reduce(np.array([[2.0 + 0j]]), counter=c)
    # a single row needs only its squared norm
    assert c.total == 4 * 1 - 1
    c2 = FlopCounter()
    clll_reduce(np.array([[2.0 + 0j]]), counter=c2)
    assert c.total == c2.total


@settings(max_examples=40, deadline=None)
@given(complex_matrices(3, 3), st.sampled_from([0.51, 0.75, 0.99, 1.0]))
def test_clll_property(b, delta):
    if abs(np.linalg.det(b)) < 1e-3:
        return
    red, t = clll_reduce(b, delta)
    assert t.abs_det_squared() == 1
    assert np.linalg.norm(red - t.t @ b) <= 1e-9 * np.linalg.norm(b)
    assert is_clll_reduced(red, delta)
