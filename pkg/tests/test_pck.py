import numpy as np
import pytest

from dkae.errors import DimensionError, ParameterError
from dkae.gmm import GmmModel, posteriors
from dkae.pck import PckEnsemble, fit_pck, load_ensemble, pck_kernel, save_ensemble


@pytest.fixture
def data(rng):
    return np.vstack([rng.normal(0, 1, size=(40, 3)), rng.normal(4, 1, size=(40, 3))])


def test_minimal_grid(data):
    ens = fit_pck(data, 1, 2, 30, seed=0)
    assert list(ens.models) == [(1, 2)] and ens.Z == 1.0 and ens.fit_subset_size == 30


def test_grid_size_formula(data):
    ens = fit_pck(data, 3, 5, 40, seed=0)
    assert len(ens.models) == 3 * 4 and ens.Z == 12.0
    assert sorted(ens.models) == [(q, g) for q in (1, 2, 3) for g in (2, 3, 4, 5)]


def test_full_grid_count():
    # Q = G = 30 gives 30 * 29 = 870 cells
    ens = PckEnsemble({}, 30, 30, 0, np.arange(200))
    assert len(ens.cells()) == 870 and ens.Z == 870.0


def test_determinism(data):
    a, b = fit_pck(data, 2, 4, 50, seed=7), fit_pck(data, 2, 4, 50, seed=7)
    assert np.array_equal(a.subset_indices, b.subset_indices)
    for c in a.cells():
        assert np.array_equal(a.models[c].means, b.models[c].means)
        assert np.array_equal(a.models[c].variances, b.models[c].variances)
    assert np.array_equal(pck_kernel(a, data), pck_kernel(b, data))


def test_parallel_matches_serial(data):
    a, b = fit_pck(data, 2, 3, 50, seed=2), fit_pck(data, 2, 3, 50, seed=2, n_jobs=2)
    assert np.array_equal(pck_kernel(a, data), pck_kernel(b, data))


def test_parameter_errors(data):
    with pytest.raises(ParameterError):
        fit_pck(data, 1, 2, 500, seed=0)
    with pytest.raises(ParameterError):
        fit_pck(data, 1, 1, 10, seed=0)
    ens = fit_pck(data, 1, 2, 20, seed=0)
    with pytest.raises(DimensionError):
        pck_kernel(ens, np.zeros((2, 4)))


def test_identical_rows(data):
    ens = fit_pck(data, 2, 4, 50, seed=1)
    x = np.vstack([data[:3], data[1]])
    k = pck_kernel(ens, x)
    assert k[1, 3] == k[1, 1] == k[3, 3]


def test_hand_built_one_hot():
    # two far-apart components; each point sits on one of them
    model = GmmModel(np.array([0.5, 0.5]), np.array([[0.0], [50.0]]), np.ones((2, 1)))
    ens = PckEnsemble({(1, 2): model}, 1, 2, 0, np.arange(2))
    k = pck_kernel(ens, np.array([[0.0], [50.0]]))
    np.testing.assert_allclose(k, np.eye(2), atol=1e-12)


def test_symmetry_psd_bounds(rng):
    x = rng.normal(size=(50, 2))
    ens = fit_pck(x, 3, 4, 50, seed=4)
    k = pck_kernel(ens, x)
    assert np.array_equal(k, k.T)
    assert k.min() >= 0 and k.max() <= 1
    assert np.linalg.eigvalsh(k).min() >= -1e-8 * np.linalg.norm(k)


def test_average_of_cell_grams(data):
    ens = fit_pck(data, 2, 4, 60, seed=3)
    x = data[::5]
    cells = [posteriors(ens.models[c], x) @ posteriors(ens.models[c], x).T for c in ens.cells()]
    np.testing.assert_allclose(pck_kernel(ens, x), np.mean(cells, axis=0), atol=1e-12)


def test_cross_kernel_matches_self_kernel_block(data):
    ens = fit_pck(data, 2, 3, 40, seed=5)
    full = pck_kernel(ens, data)
    cross = pck_kernel(ens, data[:10], data[10:30])
    np.testing.assert_allclose(cross, full[:10, 10:30], atol=1e-12)


def test_save_load(tmp_path, data):
    ens = fit_pck(data, 2, 3, 40, seed=5)
    save_ensemble(ens, tmp_path / "ens")
    back = load_ensemble(tmp_path / "ens")
    assert back.Q == 2 and back.G == 3 and back.seed == 5
    assert np.array_equal(back.subset_indices, ens.subset_indices)
    assert np.array_equal(pck_kernel(back, data), pck_kernel(ens, data))
