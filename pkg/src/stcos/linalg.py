"""Linear-algebra kernels: Cholesky factors, MVN draws, eigenpairs, quantiles, distances."""

import logging

import attrs
import numpy as np
import numpy.typing as npt
import scipy.linalg
import scipy.sparse
import scipy.spatial.distance

from stcos import errors

SYMMETRY_TOLERANCE = 1e-10
JITTER_SCALE = 1e-8
JITTER_RETRIES = 3

Matrix = npt.NDArray[np.float64] | scipy.sparse.spmatrix


def _check_symmetric(a: npt.NDArray[np.float64], name: str) -> None:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise errors.NumericalError(f"{name} must be square, got shape {a.shape}")
    scale = max(1.0, float(np.abs(a).max(initial=0.0)))
    if not np.allclose(a, a.T, rtol=0.0, atol=SYMMETRY_TOLERANCE * scale):
        raise errors.NumericalError(f"{name} is not symmetric")


def as_dense(a: Matrix) -> npt.NDArray[np.float64]:
    if scipy.sparse.issparse(a):
        return a.toarray()
    return np.asarray(a, dtype=np.float64)


@attrs.frozen
class CholeskyFactor:
    """Lower-triangular L with L @ L.T equal to the factored matrix."""

    lower: npt.NDArray[np.float64]

    @property
    def size(self) -> int:
        return self.lower.shape[0]

    def solve(self, b: npt.ArrayLike) -> npt.NDArray[np.float64]:
        """Solves (L L^T) x = b."""
        return scipy.linalg.cho_solve((self.lower, True), np.asarray(b, dtype=np.float64))

    def logdet(self) -> float:
        return 2.0 * float(np.log(np.diag(self.lower)).sum())

    def inverse(self) -> npt.NDArray[np.float64]:
        inv = self.solve(np.eye(self.size))
        return (inv + inv.T) / 2.0


def cholesky(a: npt.ArrayLike) -> CholeskyFactor:
    a = as_dense(a)
    _check_symmetric(a, "matrix")
    if a.shape[0] == 0:
        return CholeskyFactor(np.zeros((0, 0)))
    try:
        lower = scipy.linalg.cholesky(a, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise errors.NotPositiveDefiniteError(str(e)) from e
    return CholeskyFactor(lower)


def cholesky_with_jitter(
    a: npt.ArrayLike, retries: int = JITTER_RETRIES
) -> CholeskyFactor:
    """Factors `a`, adding escalating diagonal jitter on failure.

    The k-th retry adds 10^(k-1) * 1e-8 * mean(diag(a)) to the diagonal.
    """
    a = as_dense(a)
    try:
        return cholesky(a)
    except errors.NotPositiveDefiniteError:
        if retries <= 0:
            raise
    base = JITTER_SCALE * float(np.mean(np.diag(a)))
    base = base if base > 0.0 else JITTER_SCALE
    identity = np.eye(a.shape[0])
    for attempt in range(retries):
        jitter = base * 10.0**attempt
        try:
            factor = cholesky(a + jitter * identity)
        except errors.NotPositiveDefiniteError:
            continue
        logging.warning("Added jitter %.3g to the diagonal to factor", jitter)
        return factor
    raise errors.NotPositiveDefiniteError(
        f"matrix not positive definite after {retries} jitter retries"
    )


def mvn_sample(
    mean: npt.ArrayLike,
    precision: npt.ArrayLike | CholeskyFactor,
    rng: np.random.Generator,
) -> npt.NDArray[np.float64]:
    """Draws from N(mean, precision^-1).

    With precision = L L^T the draw is mean + L^-T z for standard normal z.
    A precomputed factor may be passed in place of the precision.
    """
    mean = np.asarray(mean, dtype=np.float64)
    if mean.size == 0:
        return np.zeros(0)
    factor = precision if isinstance(precision, CholeskyFactor) else cholesky(precision)
    if factor.size != mean.shape[0]:
        raise errors.NumericalError(
            f"mean has length {mean.shape[0]} but precision is {factor.size}x{factor.size}"
        )
    z = rng.standard_normal(mean.shape[0])
    return mean + scipy.linalg.solve_triangular(factor.lower, z, lower=True, trans="T")


def quantile_type1(values: npt.ArrayLike, prob: float) -> float:
    """Inverse empirical CDF: the order statistic x_(k) with k = ceil(prob * n)."""
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise errors.DataError("quantile of an empty sample")
    if not 0.0 < prob <= 1.0:
        raise errors.ConfigError(f"quantile probability must lie in (0, 1], got {prob}")
    return float(np.quantile(values, prob, method="inverted_cdf"))


@attrs.frozen
class SymEigen:
    """Eigenpairs in descending eigenvalue order; `vectors[:, k]` pairs with `values[k]`."""

    values: npt.NDArray[np.float64]
    vectors: npt.NDArray[np.float64]


def sym_eigen(a: npt.ArrayLike, top: int | None = None) -> SymEigen:
    """Symmetric eigendecomposition, optionally only the `top` leading pairs."""
    a = as_dense(a)
    _check_symmetric(a, "matrix")
    n = a.shape[0]
    subset = None
    if top is not None:
        if not 1 <= top <= n:
            raise errors.ConfigError(f"top must lie in [1, {n}], got {top}")
        subset = (n - top, n - 1)
    try:
        values, vectors = scipy.linalg.eigh(a, subset_by_index=subset)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise errors.NumericalError(f"eigendecomposition failed: {e}") from e
    return SymEigen(values[::-1].copy(), vectors[:, ::-1].copy())


def pairwise_distances(points: npt.ArrayLike) -> npt.NDArray[np.float64]:
    """Condensed Euclidean distances over unordered pairs, in `pdist` order."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    if points.shape[0] < 2:
        raise errors.DataError("pairwise distances need at least two points")
    return scipy.spatial.distance.pdist(points)
