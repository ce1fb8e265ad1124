"""Pipeline configuration, read from a TOML file.

A minimal file names the supports and leaves everything else at its default:

    seed = 42

    [paths]
    fine = "fine.geojson"
    target = "targets.geojson"
    output_dir = "out"

    [[sources]]
    geojson = "acs5_2015.geojson"
    year = 2015
    lookback = 5
    estimates = "estimates.csv"

Relative paths are resolved against the directory of the config file.
"""

import enum
import pathlib
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import typing as tp

import attrs
import cattrs
import cattrs.v

import stcos.util
from stcos import basis, cov, errors, geom, inference


class KnotDesign(stcos.util.AutoNameEnum):
    space_filling = enum.auto()
    hexagonal = enum.auto()


class EstimateFormat(stcos.util.AutoNameEnum):
    csv = enum.auto()
    census_json = enum.auto()


def _at_least(minimum):
    def check(instance, attribute, value):
        if value < minimum:
            raise errors.ConfigError(f"{attribute.name} must be at least {minimum}, got {value}")

    return check


def _positive(instance, attribute, value):
    if not value > 0.0:
        raise errors.ConfigError(f"{attribute.name} must be positive, got {value}")


def _open_unit_interval(instance, attribute, value):
    if not 0.0 < value < 1.0:
        raise errors.ConfigError(f"{attribute.name} must lie in (0, 1), got {value}")


@attrs.frozen
class PathsConfig:
    """Input and output locations.

    Attributes:
        fine: GeoJSON of the fine-level support.
        target: GeoJSON of the target support.
        output_dir: Where every stage reads and writes its artifacts.
        id_key: Feature property holding the area id in every GeoJSON file.
    """

    fine: pathlib.Path
    target: pathlib.Path
    output_dir: pathlib.Path = pathlib.Path("out")
    id_key: str = "geoid"


@attrs.frozen
class SourceConfig:
    """One source support: a geography, its period and its direct estimates.

    Attributes:
        geojson: Areas of the source.
        year: Last year of the period.
        lookback: Number of years pooled in each estimate.
        estimates: CSV with columns geoid, year, lookback, est, moe; rows are
            matched on (year, lookback).
        census_est, census_moe: Census API JSON responses for the estimate and
            its margin of error, used when `estimates` is not given.
        label: Name in logs and output tables, defaults to the GeoJSON stem.
    """

    geojson: pathlib.Path
    year: int
    lookback: int = attrs.field(default=1, validator=_at_least(1))
    estimates: pathlib.Path | None = None
    census_est: pathlib.Path | None = None
    census_moe: pathlib.Path | None = None
    label: str | None = None

    def __attrs_post_init__(self):
        census = (self.census_est is not None, self.census_moe is not None)
        if self.estimates is None and census != (True, True):
            raise errors.ConfigError(
                f"source {self.geojson}: give `estimates` or both `census_est` and `census_moe`"
            )
        if self.estimates is not None and any(census):
            raise errors.ConfigError(
                f"source {self.geojson}: `estimates` excludes the Census JSON pair"
            )

    @property
    def format(self) -> EstimateFormat:
        return EstimateFormat.csv if self.estimates is not None else EstimateFormat.census_json

    @property
    def period(self) -> basis.Period:
        return basis.Period.ending(self.year, self.lookback)

    @property
    def name(self) -> str:
        return self.label if self.label is not None else self.geojson.stem


@attrs.frozen
class KnotsConfig:
    """Space-time knot placement.

    Attributes:
        design: How spatial knots are placed.
        n_spatial: Number of spatial knots (target count for the hexagonal design).
        n_candidates: Candidate points sampled for the space-filling design.
        ws_tilde: Spatial radius as a multiple of the `prob` distance quantile.
        prob: Quantile of pairwise knot distances that sets the spatial radius.
        t_start, t_end, t_step: Temporal knot grid; the ends default to the first
            and last year covered by the sources.
        w_t: Temporal radius in years.
    """

    design: KnotDesign = KnotDesign.space_filling
    n_spatial: int = attrs.field(default=200, validator=_at_least(1))
    n_candidates: int = attrs.field(default=2000, validator=_at_least(1))
    ws_tilde: float = attrs.field(default=1.0, validator=_at_least(0.0))
    prob: float = attrs.field(default=0.05, validator=_open_unit_interval)
    t_start: float | None = None
    t_end: float | None = None
    t_step: float = attrs.field(default=0.5, validator=_positive)
    w_t: float = attrs.field(default=1.0, validator=_positive)


def _check_threshold(instance, attribute, value):
    if not 0.0 < value <= 1.0:
        raise errors.ConfigError(f"pca_threshold must lie in (0, 1], got {value}")


@attrs.frozen
class ModelConfig:
    """Model structure and basis evaluation.

    Attributes:
        tau: CAR dependence parameter.
        scale_car: Use I - tau D^-1 W rather than D - tau W.
        adjacency: Neighbour rule of the fine-level graph.
        structure: Target covariance used to build K.
        pca_threshold: Fraction of the basis variability kept by the PCA reduction.
        mc_reps: Monte Carlo points per area for the areal basis.
        min_overlap_m2: Fine units overlapping the sources by less are dropped.
        alpha: Target summaries report 1 - alpha intervals.
        workers: Threads used for areal basis rows.
        chains: Independent Gibbs chains, pooled for the summaries.
        mle: Also fit by maximum likelihood and report its target estimates.
        target_year, target_lookback: Period of the target support; defaults to
            the most recent window of the longest-lookback source.
    """

    tau: float = attrs.field(default=cov.DEFAULT_TAU, validator=_open_unit_interval)
    scale_car: bool = True
    adjacency: geom.AdjacencyRule = geom.AdjacencyRule.queen
    structure: cov.FineLevelStructure = cov.FineLevelStructure.random_walk
    pca_threshold: float = attrs.field(default=0.65, validator=_check_threshold)
    mc_reps: int = attrs.field(default=basis.DEFAULT_MC_REPS, validator=_at_least(1))
    min_overlap_m2: float = attrs.field(default=10.0, validator=_at_least(0.0))
    alpha: float = attrs.field(default=0.10, validator=_open_unit_interval)
    workers: int = attrs.field(default=1, validator=_at_least(1))
    chains: int = attrs.field(default=1, validator=_at_least(1))
    mle: bool = True
    target_year: int | None = None
    target_lookback: int | None = None


@attrs.frozen
class GibbsSection:
    """Chain settings; the seed of each chain derives from the top-level seed."""

    R: int = 10000
    burn: int = 2000
    thin: int = 10
    report_period: int = 1000
    save_xi: bool = False
    init_from_mle: bool = False

    def __attrs_post_init__(self):
        # Fails early with the same checks the sampler applies.
        self.sampler_config(seed=0)

    def sampler_config(
        self, seed: int, init: inference.GibbsInit | None = None
    ) -> inference.GibbsConfig:
        return inference.GibbsConfig(
            R=self.R,
            burn=self.burn,
            thin=self.thin,
            report_period=self.report_period,
            seed=seed,
            init=init if init is not None else inference.GibbsInit(),
            save_xi=self.save_xi,
        )


@attrs.frozen
class SimulationSection:
    """Truth used by the `simulate` subcommand, on the scale of the estimates.

    Attributes:
        mu_level, mu_sd: mu_B is drawn once as N(mu_level, mu_sd^2) per fine unit.
        sig2K, sig2xi: Variance components of the simulated process.
        direct_sd: Sampling SD of every simulated direct estimate.
    """

    mu_level: float = 50000.0
    mu_sd: float = 5000.0
    sig2K: float = attrs.field(default=4.0e6, validator=_at_least(0.0))
    sig2xi: float = attrs.field(default=1.0e6, validator=_at_least(0.0))
    direct_sd: float = attrs.field(default=1500.0, validator=_positive)


@attrs.frozen
class PipelineConfig:
    paths: PathsConfig
    sources: list[SourceConfig] = attrs.field(validator=attrs.validators.min_len(1))
    knots: KnotsConfig = attrs.field(factory=KnotsConfig)
    model: ModelConfig = attrs.field(factory=ModelConfig)
    gibbs: GibbsSection = attrs.field(factory=GibbsSection)
    hyper: inference.Hyperparams = attrs.field(factory=inference.Hyperparams)
    simulate: SimulationSection = attrs.field(factory=SimulationSection)
    seed: int = 0

    def __attrs_post_init__(self):
        names = [source.name for source in self.sources]
        if len(set(names)) != len(names):
            raise errors.ConfigError(f"source labels are not unique: {names}")

    @property
    def target_period(self) -> basis.Period:
        latest = max(self.sources, key=lambda s: (s.lookback, s.year))
        year = self.model.target_year
        lookback = self.model.target_lookback
        return basis.Period.ending(
            latest.year if year is None else year,
            latest.lookback if lookback is None else lookback,
        )

    @property
    def time_grid(self) -> tuple[float, float]:
        first = min(source.period.years[0] for source in self.sources)
        last = max(source.period.end for source in self.sources)
        start = self.knots.t_start if self.knots.t_start is not None else float(first)
        end = self.knots.t_end if self.knots.t_end is not None else float(last)
        if end < start:
            raise errors.ConfigError(f"temporal knot grid ends ({end}) before it starts ({start})")
        return start, end

    def basis_config(self, show_progress: bool = False) -> basis.BasisConfig:
        return basis.BasisConfig(
            mc_reps=self.model.mc_reps,
            workers=self.model.workers,
            show_progress=show_progress,
        )

    def with_seed(self, seed: int | None) -> "PipelineConfig":
        return self if seed is None else attrs.evolve(self, seed=seed)


def _converter() -> cattrs.Converter:
    converter = cattrs.Converter(forbid_extra_keys=True)
    converter.register_structure_hook(pathlib.Path, lambda value, _: pathlib.Path(value))
    converter.register_unstructure_hook(pathlib.Path, str)
    return converter


CONVERTER = _converter()


def _resolve(path: pathlib.Path | None, root: pathlib.Path) -> pathlib.Path | None:
    if path is None or path.is_absolute():
        return path
    return root / path


def resolve_paths(cfg: PipelineConfig, root: pathlib.Path) -> PipelineConfig:
    paths = attrs.evolve(
        cfg.paths,
        fine=_resolve(cfg.paths.fine, root),
        target=_resolve(cfg.paths.target, root),
        output_dir=_resolve(cfg.paths.output_dir, root),
    )
    sources = [
        attrs.evolve(
            source,
            geojson=_resolve(source.geojson, root),
            estimates=_resolve(source.estimates, root),
            census_est=_resolve(source.census_est, root),
            census_moe=_resolve(source.census_moe, root),
        )
        for source in cfg.sources
    ]
    return attrs.evolve(cfg, paths=paths, sources=sources)


def _format_exception(exc: BaseException, type_: tp.Any) -> str:
    if isinstance(exc, errors.StcosError):
        return str(exc)
    return cattrs.v.format_exception(exc, type_)


def structure_config(raw: dict[str, tp.Any]) -> PipelineConfig:
    try:
        return CONVERTER.structure(raw, PipelineConfig)
    except cattrs.BaseValidationError as e:
        messages = cattrs.transform_error(e, format_exception=_format_exception)
        raise errors.ConfigError("; ".join(messages)) from e
    except errors.StcosError:
        raise
    except (ValueError, TypeError) as e:
        raise errors.ConfigError(str(e)) from e


def load_config(path: pathlib.Path) -> PipelineConfig:
    path = pathlib.Path(path)
    try:
        with path.open("rb") as f:
            raw = tomllib.load(f)
    except FileNotFoundError as e:
        raise errors.ConfigError(f"config file {path} does not exist") from e
    except tomllib.TOMLDecodeError as e:
        raise errors.ConfigError(f"{path}: {e}") from e
    return resolve_paths(structure_config(raw), path.resolve().parent)


def echo(cfg: PipelineConfig) -> dict[str, tp.Any]:
    """The settings of a run without file locations, for run metadata."""
    raw = CONVERTER.unstructure(cfg)
    del raw["paths"]
    raw["sources"] = [
        {"name": source.name, "year": source.year, "lookback": source.lookback}
        for source in cfg.sources
    ]
    return raw
