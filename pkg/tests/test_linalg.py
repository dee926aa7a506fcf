import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from dkae.errors import DimensionError, NotPositiveDefiniteError, ParameterError, ParseError, SymmetryError
from dkae.linalg import (as_matrix, load_matrix, pca_fit, pca_project, pca_reconstruct, save_matrix,
                         solve_spd, sym_eig)


def random_symmetric(rng, n):
    a = rng.normal(size=(n, n))
    return (a + a.T) / 2


@pytest.mark.parametrize("method", ["lapack", "jacobi"])
def test_identity_eigenpairs(method):
    res = sym_eig(np.eye(3), method)
    np.testing.assert_allclose(res.eigenvalues, [1, 1, 1], atol=1e-14)
    np.testing.assert_allclose(res.eigenvectors.T @ res.eigenvectors, np.eye(3), atol=1e-12)


@pytest.mark.parametrize("method", ["lapack", "jacobi"])
def test_diagonal_eigenpairs(method):
    res = sym_eig(np.diag([2.0, 5.0, -1.0]), method)
    np.testing.assert_allclose(res.eigenvalues, [5, 2, -1], atol=1e-14)
    # axis aligned, and the sign convention makes the nonzero entry positive
    np.testing.assert_allclose(res.eigenvectors, [[0, 1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-14)


@pytest.mark.parametrize("method", ["lapack", "jacobi"])
def test_random_symmetric_residual_and_trace(rng, method):
    m = random_symmetric(rng, 6)
    res = sym_eig(m, method)
    norm = np.linalg.norm(m)
    for j in range(6):
        v = res.eigenvectors[:, j]
        assert abs(np.linalg.norm(v) - 1) < 1e-10
        assert np.linalg.norm(m @ v - res.eigenvalues[j] * v) <= 1e-8 * norm
    assert abs(res.eigenvalues.sum() - np.trace(m)) < 1e-10
    assert np.all(np.diff(res.eigenvalues) <= 0)
    assert np.linalg.norm(res.reconstruct() - m) <= 1e-8 * norm


def test_jacobi_matches_lapack(rng):
    m = random_symmetric(rng, 8)
    a, b = sym_eig(m, "jacobi"), sym_eig(m, "lapack")
    np.testing.assert_allclose(a.eigenvalues, b.eigenvalues, atol=1e-10)
    np.testing.assert_allclose(a.eigenvectors, b.eigenvectors, atol=1e-8)


def test_sign_convention():
    res = sym_eig(np.array([[2.0, 1.0], [1.0, 2.0]]))
    first = res.eigenvectors[np.argmax(np.abs(res.eigenvectors) > 1e-12, axis=0), [0, 1]]
    assert np.all(first > 0)


def test_sym_eig_deterministic(rng):
    m = random_symmetric(rng, 10)
    a, b = sym_eig(m), sym_eig(m.copy())
    assert np.array_equal(a.eigenvalues, b.eigenvalues) and np.array_equal(a.eigenvectors, b.eigenvectors)


def test_sym_eig_errors():
    with pytest.raises(DimensionError):
        sym_eig(np.ones((2, 3)))
    with pytest.raises(SymmetryError):
        sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ParameterError):
        sym_eig(np.eye(2), "qr")


@given(arrays(np.float64, (5, 5), elements=st.floats(-100, 100)))
def test_trace_property(a):
    m = (a + a.T) / 2
    vals = sym_eig(m).eigenvalues
    scale = max(1.0, np.abs(m).sum())
    assert abs(vals.sum() - np.trace(m)) <= 1e-10 * scale


def test_solve_spd_examples(rng):
    b = rng.normal(size=(3, 2))
    np.testing.assert_allclose(solve_spd(np.eye(3), b), b, atol=1e-15)
    np.testing.assert_allclose(solve_spd(np.diag([2.0, 4.0]), np.array([2.0, 8.0])), [1.0, 2.0])
    g = rng.normal(size=(7, 7))
    a = g.T @ g + np.eye(7)
    b = rng.normal(size=(7, 3))
    x = solve_spd(a, b)
    assert np.linalg.norm(a @ x - b) < 1e-8 * np.linalg.norm(b)


def test_solve_spd_rejects_indefinite():
    with pytest.raises(NotPositiveDefiniteError):
        solve_spd(np.diag([1.0, -1.0]), np.ones(2))
    with pytest.raises(DimensionError):
        solve_spd(np.eye(2), np.ones(3))


@given(st.integers(1, 6), st.integers(0, 10_000))
def test_solve_then_multiply_is_identity(n, seed):
    r = np.random.default_rng(seed)
    g = r.normal(size=(n, n))
    a = g @ g.T + n * np.eye(n)
    b = r.normal(size=(n, 2))
    assert np.linalg.norm(a @ solve_spd(a, b) - b) <= 1e-8 * max(np.linalg.norm(b), 1e-300)


def test_pca_full_rank_round_trip(rng):
    x = rng.normal(size=(30, 4))
    model = pca_fit(x, 4)
    np.testing.assert_allclose(pca_reconstruct(model, pca_project(model, x)), x, atol=1e-8)
    np.testing.assert_allclose(model.components.T @ model.components, np.eye(4), atol=1e-8)
    assert np.all(model.explained_variance >= 0) and np.all(np.diff(model.explained_variance) <= 0)


def test_pca_exact_line():
    t = np.linspace(-1, 1, 11)[:, None]
    x = np.hstack([t, 2 * t + 3])
    model = pca_fit(x, 1)
    np.testing.assert_allclose(pca_reconstruct(model, pca_project(model, x)), x, atol=1e-8)


def test_pca_dropped_eigenvalue_oracle(rng):
    x = rng.normal(size=(20, 5)) @ rng.normal(size=(5, 5))
    model = pca_fit(x, 3)
    rec = pca_reconstruct(model, pca_project(model, x))
    # independent oracle: eigenvalues of the 1/n covariance from numpy directly
    cov_eigs = np.sort(np.linalg.eigvalsh(np.cov(x.T, bias=True)))[::-1]
    per_sample = np.sum((rec - x) ** 2) / x.shape[0]
    assert per_sample == pytest.approx(cov_eigs[3:].sum(), rel=1e-9)


def test_pca_mean_projects_to_zero(rng):
    x = rng.normal(size=(15, 3)) + 5
    model = pca_fit(x, 2)
    np.testing.assert_allclose(pca_project(model, x.mean(axis=0)), 0, atol=1e-12)


def test_pca_parameter_errors(rng):
    x = rng.normal(size=(4, 3))
    for m in (0, 4):
        with pytest.raises(ParameterError):
            pca_fit(x, m)
    with pytest.raises(DimensionError):
        pca_project(pca_fit(x, 2), np.ones((2, 5)))


def test_as_matrix_rejects_nan():
    with pytest.raises(ParameterError):
        as_matrix([[1.0, np.nan]])
    assert as_matrix([1.0, 2.0]).shape == (1, 2)


def test_dkmat_round_trip_and_header(tmp_path, rng):
    m = rng.normal(size=(3, 4))
    p = tmp_path / "m.dkmat"
    save_matrix(p, m)
    raw = p.read_bytes()
    assert raw[:6] == b"DKMAT1"
    assert int.from_bytes(raw[6:14], "little") == 3 and int.from_bytes(raw[14:22], "little") == 4
    assert len(raw) == 22 + 8 * 12
    assert np.array_equal(load_matrix(p), m)


def test_dkmat_parse_errors(tmp_path):
    bad = tmp_path / "bad.dkmat"
    bad.write_bytes(b"NOTMAT" + bytes(16))
    with pytest.raises(ParseError, match="offset 0"):
        load_matrix(bad)
    short = tmp_path / "short.dkmat"
    save_matrix(short, np.ones((2, 2)))
    short.write_bytes(short.read_bytes()[:-8])
    with pytest.raises(ParseError):
        load_matrix(short)
