import numpy as np
import pytest
import scipy.sparse

from stcos import cov, errors, geom

PATH = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]])


def _random_connected_graph(rng, n):
    w = np.zeros((n, n))
    for i in range(1, n):
        j = rng.integers(i)
        w[i, j] = w[j, i] = 1.0
    extra = np.triu(rng.random((n, n)) < 0.1, k=1)
    w = np.maximum(w, extra + extra.T)
    return w


@pytest.mark.parametrize(
    "scale, expected",
    [
        (True, [[1.0, -0.9, 0.0], [-0.45, 1.0, -0.45], [0.0, -0.9, 1.0]]),
        (False, [[1.0, -0.9, 0.0], [-0.9, 2.0, -0.9], [0.0, -0.9, 1.0]]),
    ],
    ids=["scaled", "unscaled"],
)
def test_car_precision_path_graph(scale, expected):
    car = cov.car_precision(PATH, tau=0.9, scale=scale)
    np.testing.assert_allclose(car.q.toarray(), expected)
    assert car.scaled == scale


@pytest.mark.parametrize("tau", [0.1, 0.5, 0.9], ids=["tau_0.1", "tau_0.5", "tau_0.9"])
def test_car_spectra_on_random_graphs(rng, tau):
    for _ in range(10):
        w = _random_connected_graph(rng, int(rng.integers(3, 31)))
        unscaled = cov.car_precision(w, tau=tau, scale=False).q.toarray()
        assert np.linalg.eigvalsh(unscaled).min() > 0.0
        scaled = cov.car_precision(w, tau=tau, scale=True).q.toarray()
        dq = np.diag(w.sum(axis=1)) @ scaled
        np.testing.assert_allclose(dq, dq.T, atol=1e-12)


def test_car_precision_errors():
    with pytest.raises(errors.ConfigError):
        cov.car_precision(PATH, tau=1.0)
    isolated = np.zeros((3, 3))
    isolated[0, 1] = isolated[1, 0] = 1.0
    with pytest.raises(errors.SingularDegreeError):
        cov.car_precision(isolated, scale=True)
    cov.car_precision(isolated, scale=False)


def test_car_covariance_is_symmetric_inverse(make_grid):
    w = geom.adjacency_matrix(make_grid(3))
    car = cov.car_precision(w)
    q_inv = car.covariance()
    np.testing.assert_allclose(q_inv, q_inv.T)
    # The unscaled inverse is exactly symmetric already.
    unscaled = cov.car_precision(w, scale=False)
    np.testing.assert_allclose(unscaled.covariance() @ unscaled.q.toarray(), np.eye(9), atol=1e-10)


def _vec_least_squares(s, sigma):
    r = s.shape[1]
    design = np.kron(s, s)
    x, *_ = np.linalg.lstsq(design, sigma.ravel(), rcond=None)
    return x.reshape(r, r)


def test_best_positive_approximant_identity_and_orthonormal(rng):
    m = rng.standard_normal((4, 4))
    sigma = m @ m.T + np.eye(4)
    np.testing.assert_allclose(cov.best_positive_approximant(np.eye(4), sigma), sigma)
    q, _ = np.linalg.qr(rng.standard_normal((4, 2)))
    np.testing.assert_allclose(cov.best_positive_approximant(q, sigma), q.T @ sigma @ q)


def test_best_positive_approximant_matches_least_squares(rng):
    for _ in range(25):
        s = rng.standard_normal((6, 3))
        m = rng.standard_normal((6, 6))
        sigma = m @ m.T + 0.1 * np.eye(6)
        x = cov.best_positive_approximant(s, sigma)
        oracle = _vec_least_squares(s, sigma)
        np.testing.assert_allclose(x, oracle, rtol=1e-8, atol=1e-10)
        residual = s.T @ (sigma - s @ x @ s.T) @ s
        assert np.linalg.norm(residual) <= 1e-8 * np.linalg.norm(s.T @ sigma @ s)


def test_best_positive_approximant_is_optimal_under_perturbation(rng):
    s = rng.standard_normal((6, 3))
    m = rng.standard_normal((6, 6))
    sigma = m @ m.T
    x = cov.best_positive_approximant(s, sigma)
    best = np.linalg.norm(sigma - s @ x @ s.T)
    for _ in range(20):
        e = rng.standard_normal((3, 3))
        e = (e + e.T) / 2.0
        assert np.linalg.norm(sigma - s @ (x + 1e-3 * e) @ s.T) >= best


def test_best_positive_approximant_rank_deficient():
    s = np.array([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]])
    with pytest.raises(errors.RankDeficientError):
        cov.best_positive_approximant(s, np.eye(3))


def test_single_year_structures_agree(rng):
    s = rng.standard_normal((5, 2))
    m = rng.standard_normal((5, 5))
    q_inv = m @ m.T + np.eye(5)
    rw = cov.cov_approx_randwalk(q_inv, s)
    bd = cov.cov_approx_blockdiag(q_inv, s)
    np.testing.assert_allclose(rw.k, cov.best_positive_approximant(s, q_inv))
    np.testing.assert_allclose(rw.k, bd.k)
    assert rw.structure == cov.FineLevelStructure.random_walk
    assert bd.structure == cov.FineLevelStructure.independent


def test_randwalk_two_years_by_hand():
    # Orthonormal columns in row 0 of each year block: S'S = I, so
    # K = sum_s sum_t min(s, t) S_s' S_t with Q^-1 = I.
    s = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    k = cov.cov_approx_randwalk(np.eye(2), s).k
    np.testing.assert_allclose(k, [[1.0, 1.0], [1.0, 2.0]])

    mixed = np.array([[1.0, 1.0], [0.0, 0.0], [1.0, -1.0], [0.0, 0.0]]) / np.sqrt(2.0)
    k = cov.cov_approx_randwalk(np.eye(2), mixed).k
    # blocks b1 = (1, 1)/sqrt2 and b2 = (1, -1)/sqrt2 in row 0 of each year.
    b1 = np.array([[1.0, 1.0]]) / np.sqrt(2.0)
    b2 = np.array([[1.0, -1.0]]) / np.sqrt(2.0)
    expected = b1.T @ b1 + b1.T @ b2 + b2.T @ b1 + 2.0 * b2.T @ b2
    np.testing.assert_allclose(k, expected, atol=1e-12)


def test_blockdiag_matches_kronecker_target(rng):
    s = rng.standard_normal((6, 2))
    m = rng.standard_normal((3, 3))
    q_inv = m @ m.T + np.eye(3)
    k = cov.cov_approx_blockdiag(q_inv, s).k
    sigma = np.kron(np.eye(2), q_inv)
    np.testing.assert_allclose(k, cov.best_positive_approximant(s, sigma), rtol=1e-8)


def test_k_is_symmetric_pd(make_grid, rng):
    q_inv = cov.car_precision(geom.adjacency_matrix(make_grid(3))).covariance()
    s = rng.uniform(0, 4, size=(27, 5))
    for structure in cov.FineLevelStructure:
        k = cov.build_k(structure, q_inv, s).k
        assert k.shape == (5, 5)
        np.testing.assert_allclose(k, k.T, atol=1e-8)
        assert np.linalg.eigvalsh(k).min() > 0.0


def test_k_rejects_misaligned_blocks(rng):
    with pytest.raises(errors.DataError):
        cov.cov_approx_randwalk(np.eye(4), rng.standard_normal((10, 2)))


def test_identity_k():
    np.testing.assert_array_equal(cov.identity_k(1).k, [[1.0]])
    np.testing.assert_array_equal(cov.identity_k(3).k, np.eye(3))


def test_car_precision_accepts_sparse_input(make_grid):
    w = geom.adjacency_matrix(make_grid(2))
    assert scipy.sparse.issparse(cov.car_precision(w).q)
