"""Synthetic direct estimates drawn from the model itself.

Z = H mu_B + S eta + xi + eps on the rows of a source layout, with
eta ~ N(0, sig2K K), xi ~ N(0, sig2xi I) and eps ~ N(0, V). Every latent
draw is recorded so fits can be checked against the truth.
"""

import json
import logging
import pathlib

import attrs
import numpy as np
import numpy.typing as npt
import pandas as pd
import scipy.sparse
import scipy.stats

from stcos import basis, cov, errors, geom, linalg
from stcos.pipeline import ingest


@attrs.frozen
class Truth:
    """Parameters of the simulated process; mu_b has one entry per fine unit."""

    mu_b: npt.NDArray[np.float64] = attrs.field(converter=lambda x: np.asarray(x, np.float64))
    sig2K: float
    sig2xi: float

    def __attrs_post_init__(self):
        if self.sig2K < 0.0 or self.sig2xi < 0.0:
            raise errors.ConfigError("simulated variances must be nonnegative")


@attrs.frozen
class SourceLayout:
    """A source geography and period without estimates."""

    name: str
    domain: geom.Domain
    period: basis.Period


@attrs.frozen
class SimulatedDraw:
    z: npt.NDArray[np.float64]
    eta: npt.NDArray[np.float64]
    xi: npt.NDArray[np.float64]
    eps: npt.NDArray[np.float64]


def simulate_z(
    h: linalg.Matrix,
    s: npt.ArrayLike,
    k: cov.KMatrix | npt.ArrayLike,
    truth: Truth,
    v: npt.ArrayLike,
    rng: np.random.Generator,
) -> SimulatedDraw:
    """One draw of Z = H mu_B + S eta + xi + eps."""
    s = np.atleast_2d(linalg.as_dense(s))
    k = k.k if isinstance(k, cov.KMatrix) else np.atleast_2d(np.asarray(k, np.float64))
    v = np.broadcast_to(np.asarray(v, dtype=np.float64), (s.shape[0],))
    if np.any(v < 0.0):
        raise errors.ConfigError("simulated sampling variances must be nonnegative")
    if h.shape != (s.shape[0], truth.mu_b.shape[0]):
        raise errors.DataError(
            f"H has shape {h.shape}; expected ({s.shape[0]}, {truth.mu_b.shape[0]})"
        )

    n, r = s.shape
    eta = np.sqrt(truth.sig2K) * (linalg.cholesky(k).lower @ rng.standard_normal(r))
    xi = np.sqrt(truth.sig2xi) * rng.standard_normal(n)
    eps = np.sqrt(v) * rng.standard_normal(n)
    mean = np.asarray(h @ truth.mu_b).ravel()
    return SimulatedDraw(z=mean + s @ eta + xi + eps, eta=eta, xi=xi, eps=eps)


@attrs.frozen
class SimulationRecord:
    """Truth, latent draws and the full-basis design behind a simulated dataset."""

    truth: Truth
    fine_ids: list[str]
    draw: SimulatedDraw
    rows: pd.DataFrame
    h: scipy.sparse.csr_matrix
    s: npt.NDArray[np.float64]

    def to_json(self, path: pathlib.Path) -> None:
        record = {
            "sig2K": self.truth.sig2K,
            "sig2xi": self.truth.sig2xi,
            "mu_b": dict(zip(self.fine_ids, self.truth.mu_b.tolist())),
            "eta": self.draw.eta.tolist(),
            "rows": [
                {
                    "source": source,
                    "geoid": geoid,
                    "z": z,
                    "xi": xi,
                    "eps": eps,
                }
                for source, geoid, z, xi, eps in zip(
                    self.rows["source"],
                    self.rows["geoid"],
                    self.draw.z.tolist(),
                    self.draw.xi.tolist(),
                    self.draw.eps.tolist(),
                )
            ],
        }
        path = pathlib.Path(path)
        path.parent.mkdir(exist_ok=True, parents=True)
        with path.open("w") as f:
            json.dump(record, f, indent=2, separators=(",", ": "))
        logging.info("Wrote %s", path)


def simulate(
    fine: geom.Domain,
    truth: Truth,
    knots: basis.SpaceTimeKnots,
    layout: list[SourceLayout],
    rng: np.random.Generator,
    direct_sd: float | npt.ArrayLike = 1.0,
    k: cov.KMatrix | None = None,
    basis_cfg: basis.BasisConfig = basis.BasisConfig(),
    alpha: float = ingest.DEFAULT_ALPHA,
) -> tuple[list[ingest.SourceSupport], SimulationRecord]:
    """Simulates direct estimates on every source of `layout`.

    Args:
        fine: Fine-level support; `truth.mu_b` follows its order.
        truth: mu_B, sig2K and sig2xi.
        knots: Knots of the full basis used to generate the data.
        layout: Source geographies and periods.
        rng: Source of every draw: basis points first, then the latent draws.
        direct_sd: Sampling SD of the estimates, a scalar or one per row.
        k: Covariance structure of eta; the identity when not given.
        basis_cfg: Areal basis settings.
        alpha: The margins of error written are those of 1 - alpha intervals.

    Returns:
        Sources with est = Z and moe matching the sampling variance, and the
        record of all latent draws.
    """
    if truth.mu_b.shape != (len(fine),):
        raise errors.ConfigError(
            f"mu_b has {truth.mu_b.size} entries for {len(fine)} fine units"
        )
    if not layout:
        raise errors.ConfigError("simulation needs at least one source")
    k = k if k is not None else cov.identity_k(knots.r)
    h = scipy.sparse.vstack(
        [geom.overlap_matrix(source.domain, fine, proportion=True) for source in layout],
        format="csr",
    )
    s = np.vstack(
        [
            basis.areal_spacetime_bisquare(source.domain, source.period, knots, basis_cfg, rng)
            for source in layout
        ]
    )
    v = np.broadcast_to(np.asarray(direct_sd, dtype=np.float64) ** 2, (s.shape[0],))
    draw = simulate_z(h, s, k, truth, v, rng)

    moe = np.sqrt(v) * scipy.stats.norm.ppf(1.0 - alpha / 2.0)
    sources, start = [], 0
    for source in layout:
        stop = start + len(source.domain)
        sources.append(
            ingest.SourceSupport(
                name=source.name,
                domain=source.domain,
                period=source.period,
                est=draw.z[start:stop],
                moe=moe[start:stop],
                var=v[start:stop],
            )
        )
        start = stop
    rows = pd.concat([source.table() for source in sources], ignore_index=True)
    logging.info(
        "Simulated %d estimates on %d sources from %d fine units", len(rows), len(sources), len(fine)
    )
    return sources, SimulationRecord(
        truth=truth, fine_ids=fine.ids, draw=draw, rows=rows, h=h, s=s
    )


def write_estimates(sources: list[ingest.SourceSupport], path: pathlib.Path) -> None:
    """Writes sources as a geoid,year,lookback,est,moe table."""
    table = pd.concat([source.table() for source in sources], ignore_index=True)
    path = pathlib.Path(path)
    path.parent.mkdir(exist_ok=True, parents=True)
    table[list(ingest.ESTIMATE_COLUMNS)].to_csv(path, index=False)
    logging.info("Wrote %d estimates to %s", len(table), path)
