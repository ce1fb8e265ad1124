"""From supports and direct estimates to the matrices of one fit.

Every random quantity of the pipeline draws from its own stream of the run
seed, keyed by `Stream`, so adding a source does not shift the knots and
refitting does not change the basis.
"""

import enum
import logging
import pathlib

import attrs
import numpy as np
import numpy.typing as npt
import pandas as pd
import scipy.sparse

import stcos.util
from stcos import basis, cov, errors, geom, inference, linalg
from stcos.pipeline import config, ingest

# Eigenvalues below this fraction of the largest count as zero.
RANK_TOLERANCE = 1e-12
ROW_COLUMNS = ("source", "geoid", "year", "lookback", "est", "moe", "var")
TEXT_COLUMNS = ("source", "geoid")


class Stream(enum.IntEnum):
    knots = 0
    sources = 1
    fine = 2
    gibbs = 3
    targets = 4
    simulate = 5


@attrs.frozen
class PcaProjection:
    """Leading eigenvectors of S'S of the full basis.

    Attributes:
        matrix: (r_full, r) projection applied to every basis matrix.
        eigenvalues: All eigenvalues of S'S, descending.
    """

    matrix: npt.NDArray[np.float64]
    eigenvalues: npt.NDArray[np.float64]

    @property
    def r(self) -> int:
        return self.matrix.shape[1]

    @property
    def r_full(self) -> int:
        return self.matrix.shape[0]

    @property
    def explained(self) -> float:
        values = np.clip(self.eigenvalues, 0.0, None)
        return float(values[: self.r].sum() / values.sum())

    def apply(self, s: linalg.Matrix) -> npt.NDArray[np.float64]:
        s = linalg.as_dense(s)
        if s.shape[1] != self.r_full:
            raise errors.DataError(
                f"basis has {s.shape[1]} columns, the projection expects {self.r_full}"
            )
        return s @ self.matrix


def pca_reduce(s_full: linalg.Matrix, threshold: float = 0.65) -> PcaProjection:
    """Keeps the fewest leading components whose eigenvalues reach `threshold` of the total.

    At least one component is kept, and never more than the rank of S'S.
    """
    if not 0.0 < threshold <= 1.0:
        raise errors.ConfigError(f"pca_threshold must lie in (0, 1], got {threshold}")
    s_full = linalg.as_dense(s_full)
    if not np.any(s_full):
        raise errors.DataError("basis matrix is identically zero")
    gram = s_full.T @ s_full
    eigen = linalg.sym_eigen((gram + gram.T) / 2.0)
    values = eigen.values
    rank = int(np.count_nonzero(values > RANK_TOLERANCE * values[0]))
    fraction = np.cumsum(values[:rank]) / values[:rank].sum()
    r = min(int(np.searchsorted(fraction, threshold * (1.0 - RANK_TOLERANCE))) + 1, rank)
    logging.info(
        "PCA keeps %d of %d components (%.1f%% of variability)",
        r,
        s_full.shape[1],
        100.0 * fraction[r - 1],
    )
    return PcaProjection(eigen.vectors[:, :r].copy(), values)


def filter_fine_support(
    fine: geom.Domain,
    sources: list[ingest.SourceSupport],
    min_overlap_m2: float = 10.0,
    show_progress: bool = False,
) -> geom.Domain:
    """Drops fine units whose overlap with all source areas totals less than `min_overlap_m2`."""
    if min_overlap_m2 < 0.0:
        raise errors.ConfigError(f"min_overlap_m2 must be nonnegative, got {min_overlap_m2}")
    total = np.zeros(len(fine))
    for source in sources:
        overlap = geom.overlap_matrix(
            source.domain, fine, proportion=False, show_progress=show_progress
        )
        total += np.asarray(overlap.sum(axis=0)).ravel()
    keep = total >= min_overlap_m2
    if not keep.any():
        raise errors.ConfigError(
            f"no fine unit overlaps the sources by {min_overlap_m2} square meters"
        )
    if not keep.all():
        logging.info(
            "Dropped %d of %d fine units overlapping the sources by less than %g m^2",
            int((~keep).sum()),
            len(fine),
            min_overlap_m2,
        )
    return fine.subset(keep)


def place_knots(
    fine: geom.Domain, cfg: config.PipelineConfig
) -> basis.SpaceTimeKnots:
    """Spatial knots over the fine support crossed with the temporal knot grid."""
    knots_cfg = cfg.knots
    match knots_cfg.design:
        case config.KnotDesign.space_filling:
            spatial = basis.knots_space_filling(
                fine,
                knots_cfg.n_candidates,
                knots_cfg.n_spatial,
                stcos.util.seeded_rng(cfg.seed, Stream.knots),
            )
        case config.KnotDesign.hexagonal:
            spatial = basis.knots_hexagonal(fine, knots_cfg.n_spatial)
    w_s = basis.radius_from_quantile(spatial, knots_cfg.ws_tilde, knots_cfg.prob)
    start, end = cfg.time_grid
    temporal = np.arange(start, end + knots_cfg.t_step / 2.0, knots_cfg.t_step)
    knots = basis.cartesian_knots(spatial, temporal, w_s, knots_cfg.w_t)
    logging.info(
        "Placed %d spatial x %d temporal knots, w_s = %.6g, w_t = %g",
        len(spatial),
        len(temporal),
        w_s,
        knots_cfg.w_t,
    )
    return knots


def fine_years(sources: list[ingest.SourceSupport]) -> list[int]:
    """Every year covered by some source period."""
    first = min(source.period.years[0] for source in sources)
    last = max(source.period.end for source in sources)
    return list(range(first, last + 1))


def fine_basis(
    fine: geom.Domain,
    years: list[int],
    knots: basis.SpaceTimeKnots,
    cfg: config.PipelineConfig,
    show_progress: bool = False,
) -> npt.NDArray[np.float64]:
    """Areal basis of the fine support for each single year, stacked year by year.

    Each year starts from the same stream, so an area keeps its Monte Carlo points
    across years.
    """
    return np.vstack(
        [
            basis.areal_spacetime_bisquare(
                fine,
                basis.Period([year]),
                knots,
                cfg.basis_config(show_progress),
                stcos.util.seeded_rng(cfg.seed, Stream.fine),
            )
            for year in years
        ]
    )


@attrs.frozen
class Assembled:
    """Everything fitting and summarizing needs from the prepare stage.

    Attributes:
        data: Standardized ModelData with the reduced basis.
        fine_ids: Ids of the retained fine units, the column order of H.
        knots: Space-time knots of the full basis.
        projection: PCA projection shared by every basis matrix.
        standardizer: Map between the original and standardized scales.
        rows: One row per observation: source, geoid, year, lookback, est, moe, var.
        years: Years of the fine-level basis blocks.
        structure: How K was built.
    """

    data: inference.ModelData
    fine_ids: list[str]
    knots: basis.SpaceTimeKnots
    projection: PcaProjection
    standardizer: inference.Standardizer
    rows: pd.DataFrame
    years: list[int]
    structure: cov.FineLevelStructure

    def fine_support(self, fine: geom.Domain) -> geom.Domain:
        """The retained units of `fine`, in the column order of H."""
        position = {unit_id: i for i, unit_id in enumerate(fine.ids)}
        missing = [i for i in self.fine_ids if i not in position]
        if missing:
            raise errors.DataError(
                f"fine support lacks {len(missing)} prepared units, first {missing[0]!r}"
            )
        return geom.Domain([fine.units[position[i]] for i in self.fine_ids], label=fine.label)

    def save(self, path: pathlib.Path) -> None:
        h = scipy.sparse.csr_matrix(self.data.h)
        path = pathlib.Path(path)
        path.parent.mkdir(exist_ok=True, parents=True)
        np.savez(
            path,
            z=self.data.z,
            v=self.data.v,
            h_data=h.data,
            h_indices=h.indices,
            h_indptr=h.indptr,
            h_shape=np.array(h.shape),
            s=self.data.s,
            k=self.data.k,
            fine_ids=np.array(self.fine_ids, dtype=str),
            knot_centers=self.knots.centers,
            knot_times=self.knots.times,
            knot_radii=np.array([self.knots.w_s, self.knots.w_t]),
            projection=self.projection.matrix,
            eigenvalues=self.projection.eigenvalues,
            standardizer=np.array([self.standardizer.center, self.standardizer.scale]),
            years=np.array(self.years),
            structure=np.array(str(self.structure)),
            **{
                f"rows_{c}": self.rows[c].to_numpy(dtype=str if c in TEXT_COLUMNS else None)
                for c in ROW_COLUMNS
            },
        )
        logging.info("Wrote %s", path)

    @classmethod
    def load(cls, path: pathlib.Path) -> "Assembled":
        try:
            archive = np.load(path, allow_pickle=False)
        except FileNotFoundError as e:
            raise errors.ConfigError(f"{path} does not exist; run `prepare` first") from e
        with archive:
            h = scipy.sparse.csr_matrix(
                (archive["h_data"], archive["h_indices"], archive["h_indptr"]),
                shape=tuple(archive["h_shape"]),
            )
            w_s, w_t = archive["knot_radii"]
            center, scale = archive["standardizer"]
            structure = cov.FineLevelStructure(str(archive["structure"]))
            return cls(
                data=inference.ModelData(archive["z"], archive["v"], h, archive["s"], archive["k"]),
                fine_ids=archive["fine_ids"].tolist(),
                knots=basis.SpaceTimeKnots(
                    archive["knot_centers"], archive["knot_times"], w_s=float(w_s), w_t=float(w_t)
                ),
                projection=PcaProjection(archive["projection"], archive["eigenvalues"]),
                standardizer=inference.Standardizer(float(center), float(scale)),
                rows=pd.DataFrame({c: archive[f"rows_{c}"] for c in ROW_COLUMNS}),
                years=archive["years"].tolist(),
                structure=structure,
            )


def assemble(
    fine: geom.Domain,
    sources: list[ingest.SourceSupport],
    knots: basis.SpaceTimeKnots,
    cfg: config.PipelineConfig,
    show_progress: bool = False,
) -> Assembled:
    """Builds H, the reduced basis S, K and the standardized estimates.

    Sources must be free of missing estimates (see `ingest.drop_missing`) and
    `fine` already filtered. The rows of the model are the source areas in
    source order.
    """
    if not sources:
        raise errors.ConfigError("no source supports")
    for source in sources:
        if source.missing.any():
            raise errors.DataError(f"source {source.name} still has missing estimates")

    h = scipy.sparse.vstack(
        [
            geom.overlap_matrix(source.domain, fine, proportion=True, show_progress=show_progress)
            for source in sources
        ],
        format="csr",
    )
    s_full = np.vstack(
        [
            basis.areal_spacetime_bisquare(
                source.domain,
                source.period,
                knots,
                cfg.basis_config(show_progress),
                stcos.util.seeded_rng(cfg.seed, Stream.sources, i),
            )
            for i, source in enumerate(sources)
        ]
    )
    years = fine_years(sources)
    s_star_full = fine_basis(fine, years, knots, cfg, show_progress)

    projection = pca_reduce(s_full, cfg.model.pca_threshold)
    adjacency = geom.adjacency_matrix(fine, cfg.model.adjacency)
    q_inv = cov.car_precision(adjacency, cfg.model.tau, cfg.model.scale_car).covariance()
    k = cov.build_k(cfg.model.structure, q_inv, projection.apply(s_star_full))

    rows = pd.concat([source.table() for source in sources], ignore_index=True)
    z, v, standardizer = inference.standardize(rows["est"], rows["var"])
    data = inference.ModelData(z, v, h, projection.apply(s_full), k)
    logging.info("Assembled N = %d, n_B = %d, r = %d", data.n, data.n_b, data.r)
    return Assembled(
        data=data,
        fine_ids=fine.ids,
        knots=knots,
        projection=projection,
        standardizer=standardizer,
        rows=rows[list(ROW_COLUMNS)],
        years=years,
        structure=k.structure,
    )
