"""Bayesian fit of the change-of-support model, its marginal likelihood and MLE.

The data model for the standardized direct estimates is

    Z = H mu_B + S eta + xi + eps,   eps ~ N(0, V),  V = diag(v) known,
    mu_B ~ N(0, sig2mu I),  eta ~ N(0, sig2K K),  xi ~ N(0, sig2xi I),

with inverse-gamma priors on the three variances. Every full conditional is
conjugate, so the sampler cycles exact Normal and inverse-gamma draws. With
mu_B profiled out, Z ~ N(H mu_B, Delta), Delta = sig2xi I + V + sig2K S K S', is
evaluated in O(N r^2) with the Woodbury identity.
"""

import logging
import math
import time
import typing as tp

import attrs
import numpy as np
import numpy.typing as npt
import pandas as pd
import scipy.linalg
import scipy.optimize
import scipy.sparse
import scipy.stats

from stcos import cov, errors, linalg

LOG_2PI = math.log(2.0 * math.pi)
SUMMARY_PERCENTILES = (2.5, 25.0, 50.0, 75.0, 97.5)
# Bounds on log-variances during likelihood maximization.
LOG_VARIANCE_BOUND = 50.0


def _as_k(k: cov.KMatrix | npt.ArrayLike) -> npt.NDArray[np.float64]:
    if isinstance(k, cov.KMatrix):
        return k.k
    return np.atleast_2d(np.asarray(k, dtype=np.float64))


def _as_h(h: linalg.Matrix) -> linalg.Matrix:
    if scipy.sparse.issparse(h):
        return scipy.sparse.csr_matrix(h, dtype=np.float64)
    return np.atleast_2d(np.asarray(h, dtype=np.float64))


def _as_vector(x) -> npt.NDArray[np.float64]:
    return np.asarray(x, dtype=np.float64).ravel()


@attrs.frozen
class ModelData:
    """Observed quantities of one fit.

    Attributes:
        z: Standardized direct estimates, shape (N,).
        v: Their variances (diagonal of V), shape (N,), all positive.
        h: Overlap proportions onto the fine support, (N, n_B), dense or sparse.
        s: Basis matrix, (N, r).
        k: Covariance structure of eta, (r, r), symmetric positive definite.
    """

    z: npt.NDArray[np.float64] = attrs.field(converter=_as_vector)
    v: npt.NDArray[np.float64] = attrs.field(converter=_as_vector)
    h: linalg.Matrix = attrs.field(converter=_as_h)
    s: npt.NDArray[np.float64] = attrs.field(
        converter=lambda s: np.atleast_2d(linalg.as_dense(s))
    )
    k: npt.NDArray[np.float64] = attrs.field(converter=_as_k)

    def __attrs_post_init__(self):
        n = self.z.shape[0]
        if self.v.shape[0] != n or self.h.shape[0] != n or self.s.shape[0] != n:
            raise errors.DataError(
                f"row counts disagree: z {n}, v {self.v.shape[0]}, "
                f"H {self.h.shape[0]}, S {self.s.shape[0]}"
            )
        if self.k.shape != (self.r, self.r):
            raise errors.DataError(f"K has shape {self.k.shape}, expected r = {self.r}")
        if not (np.all(np.isfinite(self.z)) and np.all(np.isfinite(self.v))):
            raise errors.DataError("z and v must be free of missing values")
        if not np.all(self.v > 0.0):
            raise errors.DataError("direct variances must be positive")

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def n_b(self) -> int:
        return self.h.shape[1]

    @property
    def r(self) -> int:
        return self.s.shape[1]


def _positive(instance, attribute, value):
    if not value > 0.0:
        raise errors.ConfigError(f"{attribute.name} must be positive, got {value}")


@attrs.frozen
class Hyperparams:
    """Inverse-gamma shape (a) and scale (b) for each variance component."""

    a_mu: float = attrs.field(default=1.0, validator=_positive)
    b_mu: float = attrs.field(default=2.0, validator=_positive)
    a_K: float = attrs.field(default=1.0, validator=_positive)
    b_K: float = attrs.field(default=2.0, validator=_positive)
    a_xi: float = attrs.field(default=1.0, validator=_positive)
    b_xi: float = attrs.field(default=2.0, validator=_positive)


@attrs.define
class GibbsState:
    mu_b: npt.NDArray[np.float64]
    eta: npt.NDArray[np.float64]
    xi: npt.NDArray[np.float64]
    sig2mu: float = 1.0
    sig2K: float = 1.0
    sig2xi: float = 1.0

    @classmethod
    def zeros(cls, data: ModelData) -> "GibbsState":
        return cls(np.zeros(data.n_b), np.zeros(data.r), np.zeros(data.n))


@attrs.frozen
class GibbsInit:
    """Starting values; anything left unset starts at zero (vectors) or one (variances)."""

    mu_b: npt.NDArray[np.float64] | None = None
    eta: npt.NDArray[np.float64] | None = None
    xi: npt.NDArray[np.float64] | None = None
    sig2mu: float = 1.0
    sig2K: float = 1.0
    sig2xi: float = 1.0

    @classmethod
    def from_mle(cls, result: "MleResult") -> "GibbsInit":
        return cls(
            mu_b=result.mu_hat, sig2K=result.sig2K_hat, sig2xi=result.sig2xi_hat
        )

    def state(self, data: ModelData) -> GibbsState:
        state = GibbsState.zeros(data)
        for name in ("mu_b", "eta", "xi"):
            value = getattr(self, name)
            if value is not None:
                value = _as_vector(value)
                if value.shape != getattr(state, name).shape:
                    raise errors.ConfigError(
                        f"initial {name} has length {value.size}, "
                        f"expected {getattr(state, name).size}"
                    )
                setattr(state, name, value.copy())
        state.sig2mu, state.sig2K, state.sig2xi = self.sig2mu, self.sig2K, self.sig2xi
        return state


@attrs.frozen
class GibbsConfig:
    """Chain length and storage.

    Attributes:
        R: Total iterations.
        burn: Leading iterations discarded.
        thin: Keep every `thin`-th iteration after burn-in.
        report_period: Log progress every this many iterations.
        seed: Seed of the chain's random stream.
        init: Starting values.
        save_xi: Store xi draws; the running posterior mean of xi is kept regardless.
    """

    R: int = 10000
    burn: int = 1000
    thin: int = 10
    report_period: int = 1000
    seed: int = 0
    init: GibbsInit = attrs.field(factory=GibbsInit)
    save_xi: bool = True

    def __attrs_post_init__(self):
        if not 0 <= self.burn < self.R:
            raise errors.ConfigError(f"need 0 <= burn < R, got burn={self.burn}, R={self.R}")
        if self.thin < 1 or self.report_period < 1:
            raise errors.ConfigError("thin and report_period must be at least 1")

    @property
    def n_saved(self) -> int:
        return (self.R - self.burn) // self.thin


def data_loglik(
    data: ModelData,
    mu_b: npt.NDArray[np.float64],
    eta: npt.NDArray[np.float64],
    xi: npt.NDArray[np.float64],
) -> float:
    """log N(z | H mu_B + S eta + xi, V)."""
    resid = data.z - data.h @ mu_b - data.s @ eta - xi
    return -0.5 * float(np.sum(LOG_2PI + np.log(data.v) + resid**2 / data.v))


class GibbsSampler:
    """Full-conditional draws for one data set.

    V^-1-weighted cross products and K^-1 are computed once. Each `draw_*`
    method samples its block given the others in `state`; `sweep` runs all six
    in order and updates `state` in place.
    """

    def __init__(self, data: ModelData, hyper: Hyperparams = Hyperparams()):
        self.data = data
        self.hyper = hyper
        self.v_inv = 1.0 / data.v
        self.hvh = linalg.as_dense(data.h.T @ (scipy.sparse.diags(self.v_inv) @ data.h))
        self.svs = data.s.T @ (self.v_inv[:, None] * data.s)
        self.k_inv = linalg.cholesky_with_jitter(data.k).inverse()

    def mu_b_conditional(self, state: GibbsState):
        """Mean and precision of mu_B given the rest."""
        resid = self.data.z - self.data.s @ state.eta - state.xi
        omega = self.hvh + np.eye(self.data.n_b) / state.sig2mu
        factor = linalg.cholesky_with_jitter(omega)
        return factor.solve(self.data.h.T @ (self.v_inv * resid)), factor

    def eta_conditional(self, state: GibbsState):
        resid = self.data.z - self.data.h @ state.mu_b - state.xi
        omega = self.svs + self.k_inv / state.sig2K
        factor = linalg.cholesky_with_jitter(omega)
        return factor.solve(self.data.s.T @ (self.v_inv * resid)), factor

    def xi_conditional(self, state: GibbsState):
        """Mean and diagonal precision of xi given the rest."""
        resid = self.data.z - self.data.h @ state.mu_b - self.data.s @ state.eta
        precision = self.v_inv + 1.0 / state.sig2xi
        return self.v_inv * resid / precision, precision

    def sig2mu_conditional(self, state: GibbsState) -> tuple[float, float]:
        """Inverse-gamma (shape, scale)."""
        mu = state.mu_b
        return self.hyper.a_mu + mu.size / 2.0, self.hyper.b_mu + float(mu @ mu) / 2.0

    def sig2K_conditional(self, state: GibbsState) -> tuple[float, float]:
        eta = state.eta
        return (
            self.hyper.a_K + eta.size / 2.0,
            self.hyper.b_K + float(eta @ self.k_inv @ eta) / 2.0,
        )

    def sig2xi_conditional(self, state: GibbsState) -> tuple[float, float]:
        xi = state.xi
        return self.hyper.a_xi + xi.size / 2.0, self.hyper.b_xi + float(xi @ xi) / 2.0

    @staticmethod
    def _inverse_gamma(shape: float, scale: float, rng: np.random.Generator) -> float:
        return scale / rng.gamma(shape)

    def draw_mu_b(self, state: GibbsState, rng: np.random.Generator):
        mean, factor = self.mu_b_conditional(state)
        return linalg.mvn_sample(mean, factor, rng)

    def draw_eta(self, state: GibbsState, rng: np.random.Generator):
        mean, factor = self.eta_conditional(state)
        return linalg.mvn_sample(mean, factor, rng)

    def draw_xi(self, state: GibbsState, rng: np.random.Generator):
        mean, precision = self.xi_conditional(state)
        return mean + rng.standard_normal(mean.size) / np.sqrt(precision)

    def draw_sig2mu(self, state: GibbsState, rng: np.random.Generator) -> float:
        return self._inverse_gamma(*self.sig2mu_conditional(state), rng)

    def draw_sig2K(self, state: GibbsState, rng: np.random.Generator) -> float:
        return self._inverse_gamma(*self.sig2K_conditional(state), rng)

    def draw_sig2xi(self, state: GibbsState, rng: np.random.Generator) -> float:
        return self._inverse_gamma(*self.sig2xi_conditional(state), rng)

    def sweep(self, state: GibbsState, rng: np.random.Generator) -> GibbsState:
        state.mu_b = self.draw_mu_b(state, rng)
        state.eta = self.draw_eta(state, rng)
        state.xi = self.draw_xi(state, rng)
        state.sig2mu = self.draw_sig2mu(state, rng)
        state.sig2K = self.draw_sig2K(state, rng)
        state.sig2xi = self.draw_sig2xi(state, rng)
        return state


@attrs.frozen
class GibbsOutput:
    """Saved draws, one row per kept iteration.

    Attributes:
        mu_b_hist: (n_saved, n_B).
        eta_hist: (n_saved, r).
        xi_hist: (n_saved, N), or None when xi draws were not stored.
        sig2mu_hist, sig2K_hist, sig2xi_hist: (n_saved,).
        loglik: Data-model log-likelihood of each saved draw.
        xi_mean: Posterior mean of xi over saved draws.
        elapsed: Sampling wall time in seconds.
        iterations: Sweeps run to produce the draws, burn-in included.
    """

    mu_b_hist: npt.NDArray[np.float64]
    eta_hist: npt.NDArray[np.float64]
    xi_hist: npt.NDArray[np.float64] | None
    sig2mu_hist: npt.NDArray[np.float64]
    sig2K_hist: npt.NDArray[np.float64]
    sig2xi_hist: npt.NDArray[np.float64]
    loglik: npt.NDArray[np.float64]
    xi_mean: npt.NDArray[np.float64]
    elapsed: float = 0.0
    iterations: int = 0

    @property
    def n_saved(self) -> int:
        return self.mu_b_hist.shape[0]

    @property
    def iterations_per_second(self) -> float:
        return self.iterations / self.elapsed if self.elapsed > 0.0 else float("nan")

    def variances(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "sig2mu": self.sig2mu_hist,
                "sig2K": self.sig2K_hist,
                "sig2xi": self.sig2xi_hist,
            }
        )

    def summary(self) -> pd.DataFrame:
        """Mean, SD and percentiles of the variance components."""
        draws = self.variances()
        table = pd.DataFrame({"mean": draws.mean(), "sd": draws.std(ddof=1)})
        for p in SUMMARY_PERCENTILES:
            table[f"{p:g}%"] = np.percentile(draws.to_numpy(), p, axis=0)
        return table

    @classmethod
    def concatenate(cls, outputs: tp.Sequence["GibbsOutput"]) -> "GibbsOutput":
        """Pools chains; xi draws survive only if every chain stored them."""
        if not outputs:
            raise errors.DataError("no chains to concatenate")
        counts = np.array([o.n_saved for o in outputs], dtype=np.float64)
        weights = counts / counts.sum()
        xi_hists = [o.xi_hist for o in outputs]
        return cls(
            mu_b_hist=np.vstack([o.mu_b_hist for o in outputs]),
            eta_hist=np.vstack([o.eta_hist for o in outputs]),
            xi_hist=None if any(x is None for x in xi_hists) else np.vstack(xi_hists),
            sig2mu_hist=np.concatenate([o.sig2mu_hist for o in outputs]),
            sig2K_hist=np.concatenate([o.sig2K_hist for o in outputs]),
            sig2xi_hist=np.concatenate([o.sig2xi_hist for o in outputs]),
            loglik=np.concatenate([o.loglik for o in outputs]),
            xi_mean=sum(w * o.xi_mean for w, o in zip(weights, outputs)),
            elapsed=sum(o.elapsed for o in outputs),
            iterations=sum(o.iterations for o in outputs),
        )


def gibbs_stcos(
    data: ModelData,
    hyper: Hyperparams = Hyperparams(),
    cfg: GibbsConfig = GibbsConfig(),
) -> GibbsOutput:
    """Runs one chain; draws are saved when iteration > burn and (iteration - burn) % thin == 0."""
    rng = np.random.default_rng(cfg.seed)
    sampler = GibbsSampler(data, hyper)
    state = cfg.init.state(data)
    n_saved = cfg.n_saved

    mu_b_hist = np.empty((n_saved, data.n_b))
    eta_hist = np.empty((n_saved, data.r))
    xi_hist = np.empty((n_saved, data.n)) if cfg.save_xi else None
    sig2_hist = np.empty((n_saved, 3))
    loglik = np.empty(n_saved)
    xi_sum = np.zeros(data.n)

    logging.info("Begin Gibbs sampler")
    start = time.perf_counter()
    saved = 0
    for iteration in range(1, cfg.R + 1):
        if iteration % cfg.report_period == 0:
            logging.info("Begin iteration %d", iteration)
        try:
            sampler.sweep(state, rng)
        except errors.NumericalError as e:
            raise type(e)(f"iteration {iteration}: {e}") from e
        if iteration > cfg.burn and (iteration - cfg.burn) % cfg.thin == 0:
            mu_b_hist[saved] = state.mu_b
            eta_hist[saved] = state.eta
            if xi_hist is not None:
                xi_hist[saved] = state.xi
            sig2_hist[saved] = (state.sig2mu, state.sig2K, state.sig2xi)
            loglik[saved] = data_loglik(data, state.mu_b, state.eta, state.xi)
            xi_sum += state.xi
            saved += 1
    out = GibbsOutput(
        mu_b_hist=mu_b_hist,
        eta_hist=eta_hist,
        xi_hist=xi_hist,
        sig2mu_hist=sig2_hist[:, 0].copy(),
        sig2K_hist=sig2_hist[:, 1].copy(),
        sig2xi_hist=sig2_hist[:, 2].copy(),
        loglik=loglik,
        xi_mean=xi_sum / max(saved, 1),
        elapsed=time.perf_counter() - start,
        iterations=cfg.R,
    )
    logging.info("Finished Gibbs sampler at %.1f iterations/s", out.iterations_per_second)
    return out


def _check_new_design(out: GibbsOutput, h_new, s_new):
    if h_new.shape[1] != out.mu_b_hist.shape[1] or s_new.shape[1] != out.eta_hist.shape[1]:
        raise errors.DataError(
            f"H_new has {h_new.shape[1]} columns and S_new {s_new.shape[1]}; the fit has "
            f"n_B = {out.mu_b_hist.shape[1]} and r = {out.eta_hist.shape[1]}"
        )
    if h_new.shape[0] != s_new.shape[0]:
        raise errors.DataError("H_new and S_new have different row counts")


def fitted(
    out: GibbsOutput, h_new: linalg.Matrix, s_new: npt.ArrayLike
) -> npt.NDArray[np.float64]:
    """Draws of H_new mu_B + S_new eta, shape (n_saved, rows of H_new)."""
    h_new = _as_h(h_new)
    s_new = np.atleast_2d(linalg.as_dense(s_new))
    _check_new_design(out, h_new, s_new)
    return np.asarray((h_new @ out.mu_b_hist.T).T) + out.eta_hist @ s_new.T


def predict(
    out: GibbsOutput,
    h_new: linalg.Matrix,
    s_new: npt.ArrayLike,
    rng: np.random.Generator,
) -> npt.NDArray[np.float64]:
    """Fitted draws plus N(0, sig2xi) noise of each draw."""
    mean = fitted(out, h_new, s_new)
    return mean + rng.standard_normal(mean.shape) * np.sqrt(out.sig2xi_hist)[:, None]


def log_lik(out: GibbsOutput, data: ModelData) -> npt.NDArray[np.float64]:
    """Data-model log-likelihood of each saved draw, recomputed from the histories."""
    if out.xi_hist is None:
        return out.loglik.copy()
    return np.array(
        [
            data_loglik(data, mu, eta, xi)
            for mu, eta, xi in zip(out.mu_b_hist, out.eta_hist, out.xi_hist)
        ]
    )


def dic_from_loglik(loglik: npt.ArrayLike, loglik_at_mean: float) -> float:
    """2 mean(D) - D(posterior mean), with D = -2 loglik."""
    return 2.0 * float(np.mean(-2.0 * np.asarray(loglik))) + 2.0 * loglik_at_mean


def dic(out: GibbsOutput, data: ModelData) -> float:
    if out.n_saved < 1:
        raise errors.DataError("DIC needs at least one saved draw")
    at_mean = data_loglik(
        data, out.mu_b_hist.mean(axis=0), out.eta_hist.mean(axis=0), out.xi_mean
    )
    return dic_from_loglik(out.loglik, at_mean)


class _MarginalCovariance:
    """Delta = U + sig2K B B' with U = sig2xi + v diagonal and B = S chol(K)."""

    def __init__(self, data: ModelData, sig2K: float, sig2xi: float):
        self.u = sig2xi + data.v
        if not np.all(self.u > 0.0):
            raise errors.NumericalError("sig2xi + v must be positive")
        self.sig2K = sig2K
        self.b = data.s @ linalg.cholesky_with_jitter(data.k).lower
        self.ub = self.b / self.u[:, None]
        # I + sig2K B' U^-1 B stays well conditioned as sig2K -> 0.
        self.inner = linalg.cholesky(np.eye(data.r) + sig2K * (self.b.T @ self.ub))

    def solve(self, x: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
        ux = x / (self.u[:, None] if x.ndim == 2 else self.u)
        return ux - self.sig2K * self.ub @ self.inner.solve(self.b.T @ ux)

    def logdet(self) -> float:
        return float(np.log(self.u).sum()) + self.inner.logdet()


def loglik_smw(
    data: ModelData, mu: npt.ArrayLike, sig2K: float, sig2xi: float
) -> float:
    """log N(z | H mu, Delta) without forming the N x N Delta."""
    delta = _MarginalCovariance(data, sig2K, sig2xi)
    resid = data.z - data.h @ _as_vector(mu)
    quad = float(resid @ delta.solve(resid))
    return -0.5 * (data.n * LOG_2PI + delta.logdet() + quad)


def loglik_dense(
    data: ModelData, mu: npt.ArrayLike, sig2K: float, sig2xi: float
) -> float:
    """Reference evaluation of `loglik_smw` through the dense Delta."""
    delta = np.diag(sig2xi + data.v) + sig2K * data.s @ data.k @ data.s.T
    mean = np.asarray(data.h @ _as_vector(mu)).ravel()
    return float(scipy.stats.multivariate_normal(mean=mean, cov=delta).logpdf(data.z))


def gls_mu(data: ModelData, sig2K: float, sig2xi: float) -> npt.NDArray[np.float64]:
    """(H' Delta^-1 H)^-1 H' Delta^-1 z; the minimum-norm solution when singular."""
    delta = _MarginalCovariance(data, sig2K, sig2xi)
    h = linalg.as_dense(data.h)
    dh = delta.solve(h)
    mu, *_ = scipy.linalg.lstsq(h.T @ dh, dh.T @ data.z)
    return mu


def profile_loglik(data: ModelData, theta: npt.ArrayLike) -> float:
    """Log-likelihood at (sig2K, sig2xi) = exp(theta) with mu_B at its GLS value."""
    theta = np.clip(_as_vector(theta), -LOG_VARIANCE_BOUND, LOG_VARIANCE_BOUND)
    sig2K, sig2xi = np.exp(theta)
    try:
        return loglik_smw(data, gls_mu(data, sig2K, sig2xi), sig2K, sig2xi)
    except errors.NumericalError:
        return -np.inf


@attrs.frozen
class MleResult:
    sig2K_hat: float
    sig2xi_hat: float
    mu_hat: npt.NDArray[np.float64]
    loglik: float
    converged: bool
    n_iter: int = 0

    @property
    def theta(self) -> npt.NDArray[np.float64]:
        return np.log([self.sig2K_hat, self.sig2xi_hat])


def mle_stcos(
    data: ModelData,
    init: tuple[float, float] = (1.0, 1.0),
    maxiter: int = 500,
    tol: float = 1e-8,
) -> MleResult:
    """Maximizes the profile likelihood over log-variances with Nelder-Mead."""
    if min(init) <= 0.0:
        raise errors.ConfigError(f"initial variances must be positive, got {init}")
    result = scipy.optimize.minimize(
        lambda theta: -profile_loglik(data, theta),
        np.log(init),
        method="Nelder-Mead",
        options={"xatol": tol, "fatol": tol, "maxiter": maxiter},
    )
    theta = np.clip(result.x, -LOG_VARIANCE_BOUND, LOG_VARIANCE_BOUND)
    sig2K, sig2xi = (float(x) for x in np.exp(theta))
    if not result.success:
        logging.warning("MLE did not converge: %s", result.message)
    logging.info("MLE sig2K = %.6g, sig2xi = %.6g after %d iterations", sig2K, sig2xi, result.nit)
    return MleResult(
        sig2K_hat=sig2K,
        sig2xi_hat=sig2xi,
        mu_hat=gls_mu(data, sig2K, sig2xi),
        loglik=float(-result.fun),
        converged=bool(result.success),
        n_iter=int(result.nit),
    )


def mle_standard_errors(
    data: ModelData, result: MleResult, step: float = 1e-4
) -> npt.NDArray[np.float64]:
    """Standard errors of (sig2K, sig2xi) from the curvature of the profile likelihood.

    The Hessian in theta = log(sig2) is taken by finite differences and mapped
    back with the delta method, se(sig2) = sig2 * se(theta).
    """

    def gradient(theta):
        return scipy.optimize.approx_fprime(theta, lambda t: profile_loglik(data, t), step)

    hessian = scipy.optimize.approx_fprime(result.theta, gradient, step)
    hessian = (hessian + hessian.T) / 2.0
    try:
        theta_cov = linalg.cholesky(-hessian).inverse()
    except errors.NotPositiveDefiniteError as e:
        raise errors.NumericalError(
            "profile likelihood is not concave at the estimate"
        ) from e
    return np.exp(result.theta) * np.sqrt(np.diag(theta_cov))


@attrs.frozen
class Standardizer:
    """Affine map between the original and standardized scale."""

    center: float
    scale: float

    def standardize(self, x: npt.ArrayLike) -> npt.NDArray[np.float64]:
        return (np.asarray(x, dtype=np.float64) - self.center) / self.scale

    def unstandardize(self, x: npt.ArrayLike) -> npt.NDArray[np.float64]:
        return self.scale * np.asarray(x, dtype=np.float64) + self.center


def standardize(
    z_raw: npt.ArrayLike, v_raw: npt.ArrayLike
) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64], Standardizer]:
    """Centers and scales z by its sample mean and SD; divides v by the sample variance."""
    z_raw, v_raw = _as_vector(z_raw), _as_vector(v_raw)
    if z_raw.size < 2:
        raise errors.DataError("standardizing needs at least two estimates")
    sd = float(np.std(z_raw, ddof=1))
    if not sd > 0.0:
        raise errors.DataError("direct estimates have zero variance")
    standardizer = Standardizer(center=float(np.mean(z_raw)), scale=sd)
    return standardizer.standardize(z_raw), v_raw / sd**2, standardizer
