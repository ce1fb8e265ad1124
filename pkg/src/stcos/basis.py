"""Bisquare basis functions at point and areal level, and knot selection.

The space-time bisquare centered at knot (c, g) with radii (w_s, w_t) is

    psi(u, v) = [2 - |u - c|^2 / w_s^2 - |v - g|^2 / w_t^2]^2

inside the support |u - c| <= w_s, |v - g| <= w_t and zero outside; the spatial
bisquare is [1 - |u - c|^2 / w^2]^2 on |u - c| <= w. Areal versions average the
point function over an area (and over the years of a period) by Monte Carlo.
"""

import collections.abc
import enum
import logging

import attrs
import numpy as np
import numpy.typing as npt
import scipy.spatial.distance
import shapely
import tqdm.auto
import tqdm.contrib.concurrent

import stcos.util
from stcos import errors, geom, linalg

DEFAULT_MC_REPS = 500
# Fractional lattice shifts tried by `knots_hexagonal`.
HEXAGONAL_PHASES = np.linspace(0.0, 1.0, 4, endpoint=False)


def _as_points(points: npt.ArrayLike) -> npt.NDArray[np.float64]:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points.reshape(-1, 2)
    return points


def _positive(instance, attribute, value):
    if not value > 0.0:
        raise errors.ConfigError(f"{attribute.name} must be positive, got {value}")


@attrs.frozen
class SpatialKnots:
    """Knot centers (r, 2) sharing one radius `w`."""

    centers: npt.NDArray[np.float64] = attrs.field(converter=_as_points)
    w: float = attrs.field(converter=float, validator=_positive)

    @property
    def r(self) -> int:
        return self.centers.shape[0]


@attrs.frozen
class SpaceTimeKnots:
    """Combined knots: `centers[j]` and `times[j]` form the j-th knot.

    Attributes:
        centers: (r, 2) spatial centers in meters.
        times: (r,) temporal centers, in the same units as periods (years).
        w_s: Spatial radius.
        w_t: Temporal radius.
    """

    centers: npt.NDArray[np.float64] = attrs.field(converter=_as_points)
    times: npt.NDArray[np.float64] = attrs.field(
        converter=lambda t: np.asarray(t, dtype=np.float64).ravel()
    )
    w_s: float = attrs.field(converter=float, validator=_positive)
    w_t: float = attrs.field(converter=float, validator=_positive)

    def __attrs_post_init__(self):
        if self.centers.shape[0] < 1:
            raise errors.ConfigError("at least one knot is required")
        if self.centers.shape[0] != self.times.shape[0]:
            raise errors.ConfigError(
                f"{self.centers.shape[0]} spatial centers but {self.times.shape[0]} times"
            )

    @property
    def r(self) -> int:
        return self.centers.shape[0]


@attrs.frozen
class BasisConfig:
    """Monte Carlo controls for the areal basis.

    Attributes:
        mc_reps: Points sampled per area.
        workers: Threads used to evaluate areas; 1 evaluates serially.
        show_progress: Display a progress bar over areas.
    """

    mc_reps: int = attrs.field(default=DEFAULT_MC_REPS)
    workers: int = 1
    show_progress: bool = False

    @mc_reps.validator
    def _check_mc_reps(self, attribute, value):
        if value < 1:
            raise errors.ConfigError(f"mc_reps must be at least 1, got {value}")


def _check_consecutive(instance, attribute, years):
    if len(years) < 1:
        raise errors.ConfigError("a period needs at least one year")
    if any(b - a != 1 for a, b in zip(years, years[1:])):
        raise errors.ConfigError(f"period years must be consecutive: {list(years)}")


@attrs.frozen
class Period:
    """Consecutive years pooled by one estimate, oldest first."""

    years: tuple[int, ...] = attrs.field(
        converter=lambda ys: tuple(int(y) for y in ys), validator=_check_consecutive
    )

    @classmethod
    def ending(cls, year: int, lookback: int) -> "Period":
        """The `lookback` years up to and including `year`."""
        if lookback < 1:
            raise errors.ConfigError(f"lookback must be at least 1, got {lookback}")
        return cls(range(year - lookback + 1, year + 1))

    @property
    def lookback(self) -> int:
        return len(self.years)

    @property
    def end(self) -> int:
        return self.years[-1]


def spacetime_bisquare(
    points: npt.ArrayLike, times: npt.ArrayLike, knots: SpaceTimeKnots
) -> npt.NDArray[np.float64]:
    """Point-level space-time bisquare, (n, r) with values in [0, 4]."""
    points = _as_points(points)
    times = np.broadcast_to(np.asarray(times, dtype=np.float64), (points.shape[0],))
    d2 = scipy.spatial.distance.cdist(points, knots.centers, "sqeuclidean") / knots.w_s**2
    t2 = (times[:, None] - knots.times[None, :]) ** 2 / knots.w_t**2
    inside = (d2 <= 1.0) & (t2 <= 1.0)
    return np.where(inside, (2.0 - d2 - t2) ** 2, 0.0)


def spatial_bisquare(points: npt.ArrayLike, knots: SpatialKnots) -> npt.NDArray[np.float64]:
    """Point-level spatial bisquare, (n, r) with values in [0, 1]."""
    d2 = scipy.spatial.distance.cdist(_as_points(points), knots.centers, "sqeuclidean")
    d2 /= knots.w**2
    return np.where(d2 <= 1.0, (1.0 - d2) ** 2, 0.0)


def _areal_rows(
    dom: geom.Domain,
    row: collections.abc.Callable[[npt.NDArray[np.float64]], npt.NDArray[np.float64]],
    r: int,
    cfg: BasisConfig,
    rng: np.random.Generator,
    desc: str,
) -> npt.NDArray[np.float64]:
    # One stream per area keeps rows independent of evaluation order.
    streams = stcos.util.child_rngs(rng, len(dom))

    def evaluate(i: int) -> npt.NDArray[np.float64]:
        points = geom.sample_uniform(dom.units[i], cfg.mc_reps, streams[i])
        return row(points)

    if len(dom) == 0:
        return np.zeros((0, r))
    if cfg.workers > 1:
        rows = tqdm.contrib.concurrent.thread_map(
            evaluate,
            range(len(dom)),
            max_workers=cfg.workers,
            desc=desc,
            disable=not cfg.show_progress,
        )
    else:
        rows = [
            evaluate(i)
            for i in tqdm.auto.trange(len(dom), desc=desc, disable=not cfg.show_progress)
        ]
    return np.vstack(rows)


def areal_spacetime_bisquare(
    dom: geom.Domain,
    period: Period,
    knots: SpaceTimeKnots,
    cfg: BasisConfig = BasisConfig(),
    rng: np.random.Generator | None = None,
) -> npt.NDArray[np.float64]:
    """Averages the space-time bisquare over each area and the years of `period`.

    Points drawn for an area are shared by all knots and years.
    """
    rng = rng if rng is not None else np.random.default_rng()
    years = np.asarray(period.years, dtype=np.float64)

    def row(points):
        d2 = scipy.spatial.distance.cdist(points, knots.centers, "sqeuclidean")
        d2 /= knots.w_s**2
        total = np.zeros(knots.r)
        for year in years:
            t2 = (year - knots.times) ** 2 / knots.w_t**2
            inside = (d2 <= 1.0) & (t2 <= 1.0)[None, :]
            total += np.where(inside, (2.0 - d2 - t2[None, :]) ** 2, 0.0).mean(axis=0)
        return total / len(years)

    return _areal_rows(dom, row, knots.r, cfg, rng, desc=f"basis {dom.label}")


def areal_spatial_bisquare(
    dom: geom.Domain,
    knots: SpatialKnots,
    cfg: BasisConfig = BasisConfig(),
    rng: np.random.Generator | None = None,
) -> npt.NDArray[np.float64]:
    rng = rng if rng is not None else np.random.default_rng()
    return _areal_rows(
        dom,
        lambda points: spatial_bisquare(points, knots).mean(axis=0),
        knots.r,
        cfg,
        rng,
        desc=f"basis {dom.label}",
    )


class DesignInit(stcos.util.AutoNameEnum):
    farthest = enum.auto()
    random = enum.auto()


def sample_candidates(
    dom: geom.Domain, n_candidates: int, rng: np.random.Generator
) -> npt.NDArray[np.float64]:
    """Draws `n_candidates` points uniformly over the union of `dom`."""
    if n_candidates < 1:
        raise errors.ConfigError(f"n_candidates must be positive, got {n_candidates}")
    areas = dom.areas
    counts = rng.multinomial(n_candidates, areas / areas.sum())
    return np.vstack(
        [
            geom.sample_uniform(unit, int(count), rng)
            for unit, count in zip(dom.units, counts)
            if count > 0
        ]
    )


def coverage_criterion(
    candidates: npt.ArrayLike, design: npt.ArrayLike
) -> float:
    """Sum over candidates of the distance to the nearest design point."""
    distances = scipy.spatial.distance.cdist(_as_points(candidates), _as_points(design))
    return float(distances.min(axis=1).sum())


def _nearest_two(distances):
    """Nearest design slot, its distance and the runner-up distance per candidate."""
    nearest = distances.argmin(axis=1)
    first = distances[np.arange(distances.shape[0]), nearest]
    if distances.shape[1] == 1:
        return nearest, first, np.full_like(first, np.inf)
    second = np.partition(distances, 1, axis=1)[:, 1]
    return nearest, first, second


def select_space_filling(
    candidates: npt.ArrayLike,
    n_design: int,
    rng: np.random.Generator,
    init: DesignInit = DesignInit.farthest,
    max_passes: int = 50,
) -> npt.NDArray[np.int64]:
    """Chooses `n_design` candidate indices minimizing `coverage_criterion`.

    Starts from a farthest-point (or random) design, then sweeps the design
    slots, each time swapping in the candidate that most lowers the criterion,
    until a full pass makes no swap.
    """
    candidates = _as_points(candidates)
    n = candidates.shape[0]
    if not 1 <= n_design <= n:
        raise errors.ConfigError(
            f"n_design must lie in [1, {n}] (the candidate count), got {n_design}"
        )
    if n_design == n:
        return np.arange(n)
    distances = scipy.spatial.distance.cdist(candidates, candidates)

    if init == DesignInit.random:
        design = rng.choice(n, size=n_design, replace=False)
    else:
        design = [int(distances.sum(axis=1).argmin())]
        nearest = distances[:, design[0]].copy()
        for _ in range(n_design - 1):
            pick = int(nearest.argmax())
            design.append(pick)
            np.minimum(nearest, distances[:, pick], out=nearest)
        design = np.array(design)

    criterion = float(distances[:, design].min(axis=1).sum())
    passes = 0
    for passes in range(1, max_passes + 1):
        swapped = False
        for slot in range(n_design):
            nearest, first, second = _nearest_two(distances[:, design])
            without = np.where(nearest == slot, second, first)
            trial = np.minimum(without[:, None], distances).sum(axis=0)
            trial[design] = np.inf
            best = int(trial.argmin())
            if trial[best] < criterion * (1.0 - 1e-12):
                design[slot] = best
                criterion = float(trial[best])
                swapped = True
        if not swapped:
            break
    logging.info(
        "Space-filling design of %d points: criterion %.6g after %d passes",
        n_design,
        criterion,
        passes,
    )
    return design


def knots_space_filling(
    dom: geom.Domain,
    n_candidates: int,
    n_design: int,
    rng: np.random.Generator,
    init: DesignInit = DesignInit.farthest,
) -> npt.NDArray[np.float64]:
    """Space-filling spatial knots chosen from a uniform candidate sample."""
    if n_design > n_candidates:
        raise errors.ConfigError(
            f"n_design ({n_design}) exceeds n_candidates ({n_candidates})"
        )
    candidates = sample_candidates(dom, n_candidates, rng)
    return candidates[select_space_filling(candidates, n_design, rng, init=init)]


def knots_hexagonal(dom: geom.Domain, n_target: int) -> npt.NDArray[np.float64]:
    """Hexagonal lattice points inside `dom`, roughly `n_target` of them.

    The pitch p = sqrt(2 |dom| / (sqrt(3) n_target)) gives one lattice point per
    n_target-th of the area. Among a few fixed lattice shifts, the one whose
    count lands closest to `n_target` is kept.
    """
    if len(dom) == 0:
        raise errors.ConfigError("hexagonal knots need a nonempty domain")
    if n_target < 1:
        raise errors.ConfigError(f"n_target must be positive, got {n_target}")
    region = dom.union()
    box = dom.bounds
    pitch = np.sqrt(2.0 * region.area / (np.sqrt(3.0) * n_target))
    row_step = pitch * np.sqrt(3.0) / 2.0
    cx, cy = (box.xmin + box.xmax) / 2.0, (box.ymin + box.ymax) / 2.0
    n_rows = int(np.ceil(box.height / 2.0 / row_step)) + 2
    n_cols = int(np.ceil(box.width / 2.0 / pitch)) + 2
    rows = np.arange(-n_rows, n_rows + 1)
    cols = np.arange(-n_cols, n_cols + 1)

    best = None
    for sx in HEXAGONAL_PHASES:
        for sy in HEXAGONAL_PHASES:
            jj, kk = np.meshgrid(cols, rows)
            x = cx + (jj + sx + 0.5 * (kk % 2)) * pitch
            y = cy + (kk + sy) * row_step
            inside = shapely.contains_xy(region, x.ravel(), y.ravel())
            points = np.column_stack([x.ravel()[inside], y.ravel()[inside]])
            if best is None or abs(len(points) - n_target) < abs(len(best) - n_target):
                best = points
    if len(best) == 0:
        best = np.array(shapely.get_coordinates(shapely.point_on_surface(region)))
    return best


def radius_from_quantile(
    points: npt.ArrayLike, scale: float = 1.0, prob: float = 0.05
) -> float:
    """`scale` times the type-1 `prob` quantile of nonzero pairwise distances."""
    if scale < 0.0:
        raise errors.ConfigError(f"radius scale must be nonnegative, got {scale}")
    distances = linalg.pairwise_distances(points)
    distances = distances[distances > 0.0]
    if distances.size == 0:
        raise errors.DataError("all knot points coincide; no nonzero distances")
    return scale * linalg.quantile_type1(distances, prob)


def cartesian_knots(
    spatial: npt.ArrayLike, temporal: npt.ArrayLike, w_s: float, w_t: float
) -> SpaceTimeKnots:
    """Pairs every spatial center with every time, temporal-major."""
    spatial = _as_points(spatial)
    temporal = np.asarray(temporal, dtype=np.float64).ravel()
    if spatial.shape[0] == 0 or temporal.size == 0:
        raise errors.ConfigError("cartesian knots need spatial and temporal points")
    return SpaceTimeKnots(
        centers=np.tile(spatial, (temporal.size, 1)),
        times=np.repeat(temporal, spatial.shape[0]),
        w_s=w_s,
        w_t=w_t,
    )
