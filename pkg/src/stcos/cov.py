"""CAR precision on the fine-level graph and the basis-coefficient covariance K.

K is the r x r matrix closest in Frobenius norm to a target fine-level
covariance once that covariance is projected onto the basis: for a target Sigma
on the rows of S, X = (S'S)^-1 S' Sigma S (S'S)^-1. The targets are a vector
random walk (cov(Y_s, Y_t) = min(s, t) Q^-1), independence across years, or K = I.
"""

import enum
import logging

import attrs
import numpy as np
import numpy.typing as npt
import scipy.linalg
import scipy.sparse

import stcos.util
from stcos import errors, linalg

DEFAULT_TAU = 0.9
PD_JITTER_SCALE = 1e-10


@attrs.frozen
class CarPrecision:
    """CAR precision: I - tau D^-1 W when `scaled`, else D - tau W."""

    q: scipy.sparse.csr_matrix
    tau: float
    scaled: bool

    @property
    def n(self) -> int:
        return self.q.shape[0]

    def covariance(self) -> npt.NDArray[np.float64]:
        """Q^-1, symmetrized as (Q^-1 + Q^-T) / 2."""
        try:
            inv = scipy.linalg.solve(self.q.toarray(), np.eye(self.n))
        except (np.linalg.LinAlgError, ValueError) as e:
            raise errors.NumericalError(f"CAR precision is singular: {e}") from e
        return (inv + inv.T) / 2.0


def car_precision(
    w: linalg.Matrix, tau: float = DEFAULT_TAU, scale: bool = True
) -> CarPrecision:
    if not 0.0 < tau < 1.0:
        raise errors.ConfigError(f"tau must lie in (0, 1), got {tau}")
    w = scipy.sparse.csr_matrix(w, dtype=np.float64)
    if w.shape[0] != w.shape[1]:
        raise errors.DataError(f"adjacency matrix must be square, got {w.shape}")
    if (w != w.T).nnz or w.diagonal().any():
        raise errors.DataError("adjacency matrix must be symmetric with zero diagonal")
    degree = np.asarray(w.sum(axis=1)).ravel()
    if scale:
        isolated = np.flatnonzero(degree == 0.0)
        if isolated.size:
            raise errors.SingularDegreeError(
                f"{isolated.size} isolated areas (first index {isolated[0]}) leave D singular"
            )
        q = scipy.sparse.identity(w.shape[0], format="csr") - tau * scipy.sparse.diags(
            1.0 / degree
        ) @ w
    else:
        q = scipy.sparse.diags(degree) - tau * w
    return CarPrecision(scipy.sparse.csr_matrix(q), tau=tau, scaled=scale)


class FineLevelStructure(stcos.util.AutoNameEnum):
    """Target covariance of the fine-level process across years.

    random_walk: Y_t = Y_{t-1} + noise, so cov(Y_s, Y_t) = min(s, t) Q^-1.
    independent: years independent, cov(Y_t, Y_t) = Q^-1.
    identity: K = I with no spatial or temporal structure.
    """

    random_walk = enum.auto()
    independent = enum.auto()
    identity = enum.auto()


@attrs.frozen
class KMatrix:
    k: npt.NDArray[np.float64]
    structure: FineLevelStructure

    @property
    def r(self) -> int:
        return self.k.shape[0]


def _projector(s: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    """(S'S)^-1 S'."""
    r = s.shape[1]
    if s.shape[0] < r or np.linalg.matrix_rank(s) < r:
        raise errors.RankDeficientError(f"basis matrix of shape {s.shape} lacks full column rank")
    try:
        gram = scipy.linalg.cho_factor(s.T @ s, lower=True)
    except np.linalg.LinAlgError as e:
        raise errors.RankDeficientError(f"S'S is not positive definite: {e}") from e
    return scipy.linalg.cho_solve(gram, s.T)


def best_positive_approximant(
    s: linalg.Matrix, sigma: linalg.Matrix
) -> npt.NDArray[np.float64]:
    """argmin_X |Sigma - S X S'|_F, which is (S'S)^-1 S' Sigma S (S'S)^-1."""
    s, sigma = linalg.as_dense(s), linalg.as_dense(sigma)
    if sigma.shape != (s.shape[0], s.shape[0]):
        raise errors.DataError(
            f"sigma has shape {sigma.shape}, expected {(s.shape[0], s.shape[0])}"
        )
    p = _projector(s)
    x = p @ sigma @ p.T
    return (x + x.T) / 2.0


def _enforce_pd(k: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    k = (k + k.T) / 2.0
    smallest = scipy.linalg.eigvalsh(k, subset_by_index=(0, 0))[0]
    if smallest <= 0.0:
        jitter = PD_JITTER_SCALE * np.trace(k) / k.shape[0] - smallest
        logging.warning("K has eigenvalue %.3g; adding %.3g to the diagonal", smallest, jitter)
        k = k + jitter * np.eye(k.shape[0])
    return k


def _year_blocks(q_inv, s_fine):
    q_inv, s_fine = linalg.as_dense(q_inv), linalg.as_dense(s_fine)
    n_b = q_inv.shape[0]
    if q_inv.shape != (n_b, n_b) or s_fine.shape[0] % n_b:
        raise errors.DataError(
            f"fine-level basis with {s_fine.shape[0]} rows does not split into "
            f"blocks of {n_b} areas"
        )
    n_years = s_fine.shape[0] // n_b
    return q_inv, s_fine, [s_fine[t * n_b : (t + 1) * n_b] for t in range(n_years)]


def cov_approx_randwalk(q_inv: linalg.Matrix, s_fine: linalg.Matrix) -> KMatrix:
    """K for the random-walk target, accumulated block by block (s outer, t inner)."""
    q_inv, s_fine, blocks = _year_blocks(q_inv, s_fine)
    p = _projector(s_fine)
    propagated = [q_inv @ block for block in blocks]
    middle = np.zeros((s_fine.shape[1], s_fine.shape[1]))
    for s, block_s in enumerate(blocks, start=1):
        for t, prop_t in enumerate(propagated, start=1):
            middle += min(s, t) * (block_s.T @ prop_t)
    g_inv = p @ p.T
    return KMatrix(_enforce_pd(g_inv @ middle @ g_inv), FineLevelStructure.random_walk)


def cov_approx_blockdiag(q_inv: linalg.Matrix, s_fine: linalg.Matrix) -> KMatrix:
    """K for years that are independent, each with covariance Q^-1."""
    q_inv, s_fine, blocks = _year_blocks(q_inv, s_fine)
    p = _projector(s_fine)
    middle = sum(block.T @ q_inv @ block for block in blocks)
    g_inv = p @ p.T
    return KMatrix(_enforce_pd(g_inv @ middle @ g_inv), FineLevelStructure.independent)


def identity_k(r: int) -> KMatrix:
    if r < 1:
        raise errors.ConfigError(f"r must be positive, got {r}")
    return KMatrix(np.eye(r), FineLevelStructure.identity)


def build_k(
    structure: FineLevelStructure,
    q_inv: linalg.Matrix,
    s_fine: linalg.Matrix,
) -> KMatrix:
    match FineLevelStructure(structure):
        case FineLevelStructure.random_walk:
            k = cov_approx_randwalk(q_inv, s_fine)
        case FineLevelStructure.independent:
            k = cov_approx_blockdiag(q_inv, s_fine)
        case FineLevelStructure.identity:
            k = identity_k(s_fine.shape[1])
    logging.info("Built %s K of size %d", k.structure, k.r)
    return k
