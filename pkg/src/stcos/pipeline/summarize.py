"""Posterior summaries on target supports and on the source areas themselves."""

import logging
import pathlib

import attrs
import numpy as np
import numpy.typing as npt
import pandas as pd
import scipy.sparse
import scipy.stats

from stcos import basis, errors, geom, inference
from stcos.pipeline import assemble

SUMMARY_COLUMNS = ("E_mean", "E_sd", "E_lo", "E_hi", "E_median", "E_moe")


def _check_summary(instance, attribute, table):
    missing = [c for c in SUMMARY_COLUMNS if c not in table.columns]
    if missing:
        raise errors.DataError(f"summary table lacks columns {missing}")
    ordered = (table["E_lo"] <= table["E_median"]) & (table["E_median"] <= table["E_hi"])
    if not ordered[table["E_median"].notna()].all():
        raise errors.NumericalError("summary intervals do not bracket the median")


@attrs.frozen
class TargetSummary:
    """Posterior summaries of the mean on each target area, on the original scale.

    Attributes:
        table: Indexed by geoid with columns E_mean, E_sd, E_lo, E_hi, E_median
            and E_moe = E_sd * z_{1 - alpha/2}.
        alpha: The intervals [E_lo, E_hi] are equal-tailed 1 - alpha intervals.
    """

    table: pd.DataFrame = attrs.field(validator=_check_summary)
    alpha: float

    def __len__(self) -> int:
        return len(self.table)

    def to_csv(self, path: pathlib.Path) -> None:
        path = pathlib.Path(path)
        path.parent.mkdir(exist_ok=True, parents=True)
        self.table.to_csv(path, index_label="geoid")
        logging.info("Wrote %s", path)

    def records(self) -> list[dict[str, float]]:
        return [
            {column: float(row[column]) for column in SUMMARY_COLUMNS}
            for _, row in self.table.iterrows()
        ]


def summarize_draws(
    draws: npt.ArrayLike, alpha: float = 0.10, index: list[str] | None = None
) -> pd.DataFrame:
    """Column-wise summaries of a (draws, areas) matrix."""
    if not 0.0 < alpha < 1.0:
        raise errors.ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    draws = np.atleast_2d(np.asarray(draws, dtype=np.float64))
    if draws.shape[0] < 1:
        raise errors.DataError("no draws to summarize")
    lo, median, hi = np.quantile(draws, [alpha / 2.0, 0.5, 1.0 - alpha / 2.0], axis=0)
    sd = draws.std(axis=0, ddof=1) if draws.shape[0] > 1 else np.full(draws.shape[1], np.nan)
    return pd.DataFrame(
        {
            "E_mean": draws.mean(axis=0),
            "E_sd": sd,
            "E_lo": lo,
            "E_hi": hi,
            "E_median": median,
            "E_moe": sd * scipy.stats.norm.ppf(1.0 - alpha / 2.0),
        },
        index=pd.Index(index, name="geoid") if index is not None else None,
    )


@attrs.frozen
class TargetDesign:
    """H and the reduced basis of a target support."""

    h: scipy.sparse.csr_matrix
    s: npt.NDArray[np.float64]
    ids: list[str]


def target_design(
    targets: geom.Domain,
    fine: geom.Domain,
    knots: basis.SpaceTimeKnots,
    projection: assemble.PcaProjection,
    period: basis.Period,
    basis_cfg: basis.BasisConfig = basis.BasisConfig(),
    rng: np.random.Generator | None = None,
) -> TargetDesign:
    """Overlap proportions onto the fine support and the projected areal basis over `period`."""
    h = geom.overlap_matrix(targets, fine, proportion=True, show_progress=basis_cfg.show_progress)
    s_full = basis.areal_spacetime_bisquare(targets, period, knots, basis_cfg, rng)
    return TargetDesign(h=h, s=projection.apply(s_full), ids=targets.ids)


def summarize_design(
    out: inference.GibbsOutput,
    design: TargetDesign,
    standardizer: inference.Standardizer,
    alpha: float = 0.10,
) -> TargetSummary:
    """Summaries of the draws of H mu_B + S eta on the target rows, unstandardized."""
    draws = standardizer.unstandardize(inference.fitted(out, design.h, design.s))
    return TargetSummary(summarize_draws(draws, alpha, index=design.ids), alpha)


def summarize_targets(
    out: inference.GibbsOutput,
    targets: geom.Domain,
    fine: geom.Domain,
    knots: basis.SpaceTimeKnots,
    projection: assemble.PcaProjection,
    standardizer: inference.Standardizer,
    period: basis.Period,
    alpha: float = 0.10,
    basis_cfg: basis.BasisConfig = basis.BasisConfig(),
    rng: np.random.Generator | None = None,
) -> TargetSummary:
    design = target_design(targets, fine, knots, projection, period, basis_cfg, rng)
    return summarize_design(out, design, standardizer, alpha)


def summarize_sources(
    out: inference.GibbsOutput, prepared: assemble.Assembled, alpha: float = 0.10
) -> pd.DataFrame:
    """Direct estimates beside the model-based estimates on the same source areas."""
    draws = prepared.standardizer.unstandardize(
        inference.fitted(out, prepared.data.h, prepared.data.s)
    )
    fitted = summarize_draws(draws, alpha)
    rows = prepared.rows
    table = pd.DataFrame(
        {
            "source": rows["source"].to_numpy(),
            "geoid": rows["geoid"].to_numpy(),
            "year": rows["year"].to_numpy(),
            "lookback": rows["lookback"].to_numpy(),
            "direct_est": rows["est"].to_numpy(),
            "direct_moe": rows["moe"].to_numpy(),
        }
    )
    for column in ("E_mean", "E_lo", "E_hi", "E_moe"):
        table[column] = fitted[column].to_numpy()
    return table


def summarize_mle(
    result: inference.MleResult,
    design: TargetDesign,
    standardizer: inference.Standardizer,
) -> pd.DataFrame:
    """Plug-in estimates H mu_hat on the target rows, original scale."""
    mean = np.asarray(design.h @ result.mu_hat).ravel()
    return pd.DataFrame(
        {"E_mle": standardizer.unstandardize(mean)},
        index=pd.Index(design.ids, name="geoid"),
    )


def merge_properties(summary: TargetSummary) -> list[dict[str, float]]:
    """Per-target records for GeoJSON output, NaN written as null."""
    return [
        {key: (None if np.isnan(value) else value) for key, value in record.items()}
        for record in summary.records()
    ]

