"""Direct estimates: margins of error, Census API responses and estimate tables."""

import json
import logging
import pathlib

import attrs
import numpy as np
import numpy.typing as npt
import pandas as pd
import scipy.stats

from stcos import basis, errors, geom
from stcos.pipeline import config

# Geography columns of a Census API response, in GEOID order.
CENSUS_GEO_KEYS = ("state", "county", "tract", "block group")
CENSUS_LABEL_COLUMNS = ("NAME", "GEO_ID")
ESTIMATE_COLUMNS = ("geoid", "year", "lookback", "est", "moe")
DEFAULT_ALPHA = 0.10


def moe_to_var(moe: npt.ArrayLike, alpha: float = DEFAULT_ALPHA):
    """Variance behind a margin of error of a 1 - alpha interval, (moe / z)^2.

    Missing (NaN) margins stay missing.
    """
    if not 0.0 < alpha < 1.0:
        raise errors.ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    moe = np.asarray(moe, dtype=np.float64)
    if np.any(moe < 0.0):
        raise errors.DataError("margins of error must be nonnegative")
    var = (moe / scipy.stats.norm.ppf(1.0 - alpha / 2.0)) ** 2
    return float(var) if var.ndim == 0 else var


def _parse_numbers(values: pd.Series, column: str, first_row: int = 1) -> pd.Series:
    """Numeric column; empty or null fields become NaN, anything else unparseable is an error."""
    text = values.where(values.notna(), "").astype(str).str.strip()
    numbers = pd.to_numeric(text.where(text != ""), errors="coerce")
    bad = np.flatnonzero(numbers.isna().to_numpy() & (text != "").to_numpy())
    if bad.size:
        raise errors.IngestError(
            int(bad[0]) + first_row,
            f"cannot parse {text.iloc[bad[0]]!r} in column {column!r} as a number",
        )
    return numbers.astype(np.float64)


def _read_census_table(path: pathlib.Path) -> tuple[pd.DataFrame, list[str], str]:
    try:
        with pathlib.Path(path).open() as f:
            rows = json.load(f)
    except OSError as e:
        raise errors.IngestError(0, f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise errors.IngestError(0, f"{path} is not JSON: {e}") from e
    if not isinstance(rows, list) or not rows or not all(isinstance(r, list) for r in rows):
        raise errors.IngestError(0, f"{path} is not an array of arrays")

    header, records = [str(c) for c in rows[0]], rows[1:]
    keys = [k for k in CENSUS_GEO_KEYS if k in header]
    variables = [c for c in header if c not in CENSUS_GEO_KEYS and c not in CENSUS_LABEL_COLUMNS]
    if not keys:
        raise errors.IngestError(0, f"{path}: header has no geography columns")
    if len(variables) != 1:
        raise errors.IngestError(0, f"{path}: expected one variable column, found {variables}")
    for i, record in enumerate(records, start=1):
        if len(record) != len(header):
            raise errors.IngestError(i, f"{len(record)} fields for {len(header)} columns")

    frame = pd.DataFrame(records, columns=header, dtype=object)
    table = pd.DataFrame(
        {
            "geoid": frame[keys].astype(str).agg("".join, axis=1),
            "value": _parse_numbers(frame[variables[0]], variables[0]),
        }
    )
    duplicated = np.flatnonzero(table["geoid"].duplicated().to_numpy())
    if duplicated.size:
        raise errors.IngestError(
            int(duplicated[0]) + 1, f"duplicate geography {table['geoid'].iloc[duplicated[0]]}"
        )
    return table, keys, variables[0]


def ingest_census_json(est_path: pathlib.Path, moe_path: pathlib.Path) -> pd.DataFrame:
    """Joins Census API responses for an estimate and its margin of error.

    Each file is an array of arrays whose first array is the header. The GEOID
    concatenates the state, county, tract and block group codes present.
    Negative values are the API's sentinels for unavailable figures and become
    missing.

    Returns:
        Table with columns geoid, est, moe in the order of `est_path`.
    """
    est, est_keys, est_var = _read_census_table(est_path)
    moe, moe_keys, moe_var = _read_census_table(moe_path)
    if est_keys != moe_keys:
        raise errors.IngestError(
            0, f"geography columns differ: {est_keys} in {est_path}, {moe_keys} in {moe_path}"
        )
    unmatched = np.flatnonzero(~est["geoid"].isin(moe["geoid"]).to_numpy())
    if unmatched.size:
        raise errors.IngestError(
            int(unmatched[0]) + 1,
            f"geography {est['geoid'].iloc[unmatched[0]]} has no margin of error in {moe_path}",
        )
    joined = est.merge(moe, on="geoid", how="left", suffixes=("_est", "_moe"))
    joined = joined.rename(columns={"value_est": "est", "value_moe": "moe"})
    for column in ("est", "moe"):
        joined[column] = joined[column].where(joined[column] >= 0.0)
    logging.info(
        "Joined %d records of %s and %s from %s", len(joined), est_var, moe_var, est_path
    )
    return joined[["geoid", "est", "moe"]]


def read_estimates_csv(path: pathlib.Path) -> pd.DataFrame:
    """Reads a geoid,year,lookback,est,moe table; empty est/moe fields are missing."""
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    except OSError as e:
        raise errors.IngestError(0, f"cannot read {path}: {e}") from e
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise errors.IngestError(0, f"{path}: {e}") from e
    missing = [c for c in ESTIMATE_COLUMNS if c not in raw.columns]
    if missing:
        raise errors.IngestError(0, f"{path}: header lacks columns {missing}")

    table = pd.DataFrame({"geoid": raw["geoid"].str.strip()})
    for column in ("year", "lookback"):
        values = _parse_numbers(raw[column], column)
        incomplete = np.flatnonzero(values.isna().to_numpy() | (values % 1 != 0).to_numpy())
        if incomplete.size:
            raise errors.IngestError(
                int(incomplete[0]) + 1, f"{column} must be a whole number"
            )
        table[column] = values.astype(np.int64)
    for column in ("est", "moe"):
        table[column] = _parse_numbers(raw[column], column)
    return table


@attrs.frozen
class SourceSupport:
    """Direct estimates of one source geography and period.

    Attributes:
        name: Label of the source in logs and tables.
        domain: The source areas.
        period: Years pooled in each estimate.
        est, moe, var: Per area, aligned with `domain`; NaN where missing.
    """

    name: str
    domain: geom.Domain
    period: basis.Period
    est: npt.NDArray[np.float64] = attrs.field(converter=lambda x: np.asarray(x, np.float64))
    moe: npt.NDArray[np.float64] = attrs.field(converter=lambda x: np.asarray(x, np.float64))
    var: npt.NDArray[np.float64] = attrs.field(converter=lambda x: np.asarray(x, np.float64))

    def __attrs_post_init__(self):
        n = len(self.domain)
        if not self.est.shape == self.moe.shape == self.var.shape == (n,):
            raise errors.DataError(f"source {self.name}: estimates do not align with {n} areas")

    def __len__(self) -> int:
        return len(self.domain)

    @property
    def year(self) -> int:
        return self.period.end

    @property
    def lookback(self) -> int:
        return self.period.lookback

    @property
    def missing(self) -> npt.NDArray[np.bool_]:
        return ~(np.isfinite(self.est) & np.isfinite(self.var) & (self.var > 0.0))

    def table(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "source": self.name,
                "geoid": self.domain.ids,
                "year": self.year,
                "lookback": self.lookback,
                "est": self.est,
                "moe": self.moe,
                "var": self.var,
            }
        )


def source_from_table(
    name: str,
    domain: geom.Domain,
    period: basis.Period,
    table: pd.DataFrame,
    alpha: float = DEFAULT_ALPHA,
) -> SourceSupport:
    """Aligns a geoid/est/moe table with `domain`; areas without a row are missing."""
    duplicated = table["geoid"].duplicated()
    if duplicated.any():
        index = int(np.flatnonzero(duplicated.to_numpy())[0]) + 1
        raise errors.IngestError(index, f"duplicate estimate for {table['geoid'][duplicated].iloc[0]}")
    unused = ~table["geoid"].isin(domain.ids)
    if unused.any():
        logging.warning(
            "%d estimates of %s match no area in its geography", int(unused.sum()), name
        )
    aligned = table.set_index("geoid").reindex(domain.ids)
    moe = aligned["moe"].to_numpy(np.float64)
    return SourceSupport(
        name=name,
        domain=domain,
        period=period,
        est=aligned["est"].to_numpy(np.float64),
        moe=moe,
        var=moe_to_var(np.where(moe >= 0.0, moe, np.nan), alpha),
    )


def drop_missing(source: SourceSupport) -> SourceSupport:
    """Keeps the areas with a finite estimate and a positive variance."""
    keep = ~source.missing
    if not keep.any():
        raise errors.DataError(f"source {source.name} has no usable estimates")
    if keep.all():
        return source
    logging.info(
        "Dropped %d of %d areas of %s with missing estimates",
        int((~keep).sum()),
        len(source),
        source.name,
    )
    return SourceSupport(
        name=source.name,
        domain=source.domain.subset(keep),
        period=source.period,
        est=source.est[keep],
        moe=source.moe[keep],
        var=source.var[keep],
    )


def load_source(
    source: config.SourceConfig, id_key: str = "geoid", alpha: float = DEFAULT_ALPHA
) -> SourceSupport:
    domain = geom.read_geojson(source.geojson, id_key=id_key, label=source.name)
    match source.format:
        case config.EstimateFormat.csv:
            table = read_estimates_csv(source.estimates)
            table = table[(table["year"] == source.year) & (table["lookback"] == source.lookback)]
            table = table.reset_index(drop=True)
        case config.EstimateFormat.census_json:
            table = ingest_census_json(source.census_est, source.census_moe)
    support = source_from_table(source.name, domain, source.period, table, alpha)
    logging.info(
        "Source %s: %d areas, %d with estimates",
        support.name,
        len(support),
        int((~support.missing).sum()),
    )
    return support
