"""Planar areal units: areas, overlaps, adjacency, point sampling and GeoJSON I/O.

Coordinates are planar meters. Polygon clipping, areas and point-in-polygon
tests are carried out by shapely (GEOS); this module owns the semantics built on
top of them: overlap proportions, the queen/rook neighbor rules and uniform
sampling with an exact fallback for polygons that defeat rejection sampling.
"""

import collections
import collections.abc
import enum
import json
import logging
import pathlib
import typing as tp

import attrs
import numpy as np
import numpy.typing as npt
import scipy.sparse
import shapely
import shapely.geometry
import shapely.geometry.polygon
import tqdm.auto

import stcos.util
from stcos import errors

Ring = collections.abc.Sequence[collections.abc.Sequence[float]]
Polygonal = shapely.Polygon | shapely.MultiPolygon

# Boundaries closer than this (meters) count as touching.
TOUCH_TOLERANCE = 1e-6
# Rejection sampling gives up after this many draws per requested point.
REJECTION_ATTEMPT_FACTOR = 100


class AdjacencyRule(stcos.util.AutoNameEnum):
    """Neighbor rule for `adjacency_matrix`.

    queen: boundaries share at least one point.
    rook: boundaries share a segment of positive length.
    """

    queen = enum.auto()
    rook = enum.auto()


def _normalize(geometry: Polygonal) -> Polygonal:
    """Orients shells counter-clockwise and holes clockwise."""
    if isinstance(geometry, shapely.Polygon):
        return shapely.geometry.polygon.orient(geometry, sign=1.0)
    if not isinstance(geometry, shapely.MultiPolygon):
        return geometry
    return shapely.MultiPolygon(
        [shapely.geometry.polygon.orient(p, sign=1.0) for p in geometry.geoms]
    )


def _check_geometry(instance, attribute, geometry):
    if not isinstance(geometry, (shapely.Polygon, shapely.MultiPolygon)):
        raise errors.InvalidGeometryError(
            f"area {instance.id!r}: expected a polygon, got {geometry.geom_type}"
        )
    if not shapely.is_valid(geometry):
        raise errors.InvalidGeometryError(
            f"area {instance.id!r}: {shapely.is_valid_reason(geometry)}"
        )
    if not geometry.area > 0.0:
        raise errors.InvalidGeometryError(f"area {instance.id!r}: zero area")


def _check_ring(ring: Ring) -> str | None:
    if len(ring) < 4:
        return f"ring has {len(ring)} vertices, at least 4 are required"
    if tuple(ring[0]) != tuple(ring[-1]):
        return "ring is not closed"
    return None


@attrs.frozen
class AreaUnit:
    """An identified polygon or multipolygon.

    Attributes:
        id: Identifier such as a FIPS geoid.
        geometry: Shells counter-clockwise, holes clockwise; normalized on
            construction.
    """

    id: str
    geometry: Polygonal = attrs.field(
        converter=_normalize, validator=_check_geometry
    )

    @classmethod
    def from_rings(
        cls,
        id: str,
        shells: collections.abc.Sequence[Ring],
        holes: collections.abc.Sequence[collections.abc.Sequence[Ring]] = (),
    ) -> "AreaUnit":
        """Builds a unit from closed rings; `holes[i]` are the holes of `shells[i]`."""
        holes = list(holes) + [()] * (len(shells) - len(holes))
        for ring in [*shells, *(h for hs in holes for h in hs)]:
            reason = _check_ring(ring)
            if reason is not None:
                raise errors.InvalidGeometryError(f"area {id!r}: {reason}")
        polygons = [shapely.Polygon(s, list(h)) for s, h in zip(shells, holes)]
        if len(polygons) == 1:
            return cls(id, polygons[0])
        return cls(id, shapely.MultiPolygon(polygons))

    @property
    def shells(self) -> list[npt.NDArray[np.float64]]:
        return [np.asarray(p.exterior.coords) for p in shapely.get_parts(self.geometry)]

    @property
    def holes(self) -> list[list[npt.NDArray[np.float64]]]:
        return [
            [np.asarray(r.coords) for r in p.interiors]
            for p in shapely.get_parts(self.geometry)
        ]


@attrs.frozen
class BoundingBox:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __attrs_post_init__(self):
        if self.xmin > self.xmax or self.ymin > self.ymax:
            raise errors.InvalidGeometryError(f"inverted bounding box {self}")

    @classmethod
    def of(cls, geometry: shapely.Geometry) -> "BoundingBox":
        return cls(*(float(v) for v in shapely.bounds(geometry)))

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin


def _check_unique_ids(instance, attribute, units):
    counts = collections.Counter(u.id for u in units)
    duplicates = sorted(i for i, c in counts.items() if c > 1)
    if duplicates:
        raise errors.DataError(
            f"domain {instance.label!r} has duplicate ids: {duplicates[:5]}"
        )


@attrs.frozen
class Domain:
    """An ordered collection of areal units.

    The order of `units` is the row/column order of every matrix derived from
    the domain.
    """

    units: tuple[AreaUnit, ...] = attrs.field(
        converter=tuple, validator=_check_unique_ids
    )
    label: str = ""

    def __len__(self) -> int:
        return len(self.units)

    def __iter__(self) -> tp.Iterator[AreaUnit]:
        return iter(self.units)

    @property
    def ids(self) -> list[str]:
        return [u.id for u in self.units]

    @property
    def geometries(self) -> npt.NDArray[np.object_]:
        return np.array([u.geometry for u in self.units], dtype=object)

    @property
    def areas(self) -> npt.NDArray[np.float64]:
        return shapely.area(self.geometries)

    @property
    def bounds(self) -> BoundingBox:
        return BoundingBox.of(shapely.GeometryCollection(list(self.geometries)))

    def union(self) -> shapely.Geometry:
        return shapely.union_all(self.geometries)

    def subset(self, keep: collections.abc.Sequence[bool] | npt.NDArray[np.bool_]):
        keep = np.asarray(keep, dtype=bool)
        return attrs.evolve(
            self, units=[u for u, k in zip(self.units, keep) if k]
        )


def area(a: AreaUnit) -> float:
    """Area of shells minus holes, in square meters."""
    result = float(a.geometry.area)
    if not result > 0.0:
        raise errors.InvalidGeometryError(f"area {a.id!r}: zero area")
    return result


def intersection_area(a: AreaUnit, b: AreaUnit) -> float:
    return float(shapely.intersection(a.geometry, b.geometry).area)


def overlap_matrix(
    dom1: Domain,
    dom2: Domain,
    proportion: bool = True,
    show_progress: bool = False,
) -> scipy.sparse.csr_matrix:
    """Computes the |dom1| x |dom2| matrix of overlap areas.

    Args:
        dom1: Row domain.
        dom2: Column domain.
        proportion: If set, entry (i, j) is |A_i n B_j| / |A_i|; otherwise the raw
            intersection area.
        show_progress: Display a progress bar over rows.

    Returns:
        A CSR matrix. Proportion rows sum to the covered fraction of A_i.

    Raises:
        ZeroOverlapError: `proportion` is set and some A_i misses dom2 entirely.
    """
    geoms2 = dom2.geometries
    tree = shapely.STRtree(geoms2)
    rows, cols, vals = [], [], []
    for i, unit in enumerate(
        tqdm.auto.tqdm(dom1.units, desc="overlap", disable=not show_progress)
    ):
        candidates = tree.query(unit.geometry, predicate="intersects")
        overlaps = shapely.area(shapely.intersection(unit.geometry, geoms2[candidates]))
        positive = overlaps > 0.0
        candidates, overlaps = candidates[positive], overlaps[positive]
        if proportion:
            if overlaps.sum() <= 0.0:
                raise errors.ZeroOverlapError(unit.id, f"domain {dom2.label!r}")
            overlaps = overlaps / area(unit)
        rows.extend([i] * len(candidates))
        cols.extend(candidates.tolist())
        vals.extend(overlaps.tolist())
    return scipy.sparse.csr_matrix(
        (vals, (rows, cols)), shape=(len(dom1), len(dom2)), dtype=np.float64
    )


def adjacency_matrix(
    dom: Domain,
    rule: AdjacencyRule = AdjacencyRule.queen,
    tolerance: float = TOUCH_TOLERANCE,
) -> scipy.sparse.csr_matrix:
    """Binary symmetric neighbor matrix with zero diagonal.

    Isolated units produce zero rows; connectivity is checked downstream.
    """
    geoms = dom.geometries
    tree = shapely.STRtree(geoms)
    left, right = tree.query(shapely.buffer(geoms, tolerance), predicate="intersects")
    upper = left < right
    left, right = left[upper], right[upper]
    touching = shapely.distance(geoms[left], geoms[right]) <= tolerance
    left, right = left[touching], right[touching]
    if rule == AdjacencyRule.rook:
        shared = shapely.length(
            shapely.intersection(
                shapely.boundary(geoms[left]), shapely.buffer(geoms[right], tolerance)
            )
        )
        # A corner contact leaves two slivers of length ~tolerance each.
        edge = shared > 4.0 * tolerance
        left, right = left[edge], right[edge]
    n = len(dom)
    ones = np.ones(2 * len(left))
    return scipy.sparse.csr_matrix(
        (ones, (np.concatenate([left, right]), np.concatenate([right, left]))),
        shape=(n, n),
    )


def contains(a: AreaUnit, points: npt.ArrayLike) -> npt.NDArray[np.bool_]:
    """Point-in-polygon test for an (n, 2) array; holes are excluded."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    return shapely.contains_xy(a.geometry, points[:, 0], points[:, 1])


def _sample_rejection(
    geometry: Polygonal, q: int, rng: np.random.Generator, max_attempts: int
) -> npt.NDArray[np.float64] | None:
    xmin, ymin, xmax, ymax = shapely.bounds(geometry)
    accepted = []
    n_accepted = 0
    attempts = 0
    while n_accepted < q and attempts < max_attempts:
        batch = min(q, max_attempts - attempts)
        x = rng.uniform(xmin, xmax, size=batch)
        y = rng.uniform(ymin, ymax, size=batch)
        inside = shapely.contains_xy(geometry, x, y)
        accepted.append(np.column_stack([x[inside], y[inside]]))
        n_accepted += int(inside.sum())
        attempts += batch
    if n_accepted < q:
        return None
    return np.concatenate(accepted)[:q]


def _sample_triangulated(
    geometry: Polygonal, q: int, rng: np.random.Generator
) -> npt.NDArray[np.float64]:
    triangles = shapely.get_parts(shapely.constrained_delaunay_triangles(geometry))
    corners = np.stack([shapely.get_coordinates(t)[:3] for t in triangles])
    weights = shapely.area(triangles)
    chosen = rng.choice(len(triangles), size=q, p=weights / weights.sum())
    r1, r2 = rng.random((2, q))
    flip = r1 + r2 > 1.0
    r1[flip], r2[flip] = 1.0 - r1[flip], 1.0 - r2[flip]
    a, b, c = corners[chosen, 0], corners[chosen, 1], corners[chosen, 2]
    return a + r1[:, None] * (b - a) + r2[:, None] * (c - a)


def sample_uniform(
    a: AreaUnit,
    q: int,
    rng: np.random.Generator,
    attempt_factor: int = REJECTION_ATTEMPT_FACTOR,
) -> npt.NDArray[np.float64]:
    """Draws `q` points uniformly on `a` as a (q, 2) array.

    Points are drawn from the bounding box and kept when they fall inside `a`.
    When fewer than `q` are accepted within `attempt_factor * q` draws (thin or
    sparse shapes), sampling restarts on a triangulation of `a`: a triangle is
    chosen with probability proportional to its area and a point is drawn
    uniformly inside it.
    """
    if q < 1:
        raise errors.ConfigError(f"sample size must be positive, got {q}")
    points = _sample_rejection(a.geometry, q, rng, attempt_factor * q)
    if points is None:
        logging.debug("Rejection sampling stalled on %s; triangulating", a.id)
        points = _sample_triangulated(a.geometry, q, rng)
    return points


def read_geojson(
    path: pathlib.Path, id_key: str = "geoid", label: str | None = None
) -> Domain:
    """Reads a FeatureCollection of Polygon/MultiPolygon features in file order."""
    try:
        with pathlib.Path(path).open() as f:
            collection = json.load(f)
    except OSError as e:
        raise errors.GeoJSONParseError(-1, f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise errors.GeoJSONParseError(-1, f"{path} is not JSON: {e}") from e
    if not isinstance(collection, dict) or collection.get("type") != "FeatureCollection":
        raise errors.GeoJSONParseError(-1, "top-level object is not a FeatureCollection")

    units = []
    for index, feature in enumerate(collection.get("features", [])):
        properties = feature.get("properties") or {}
        if id_key not in properties or properties[id_key] is None:
            raise errors.GeoJSONParseError(index, f"missing id property {id_key!r}")
        geometry = feature.get("geometry") or {}
        if geometry.get("type") == "Polygon":
            polygons = [geometry.get("coordinates", [])]
        elif geometry.get("type") == "MultiPolygon":
            polygons = geometry.get("coordinates", [])
        else:
            raise errors.GeoJSONParseError(
                index, f"unsupported geometry type {geometry.get('type')!r}"
            )
        for rings in polygons:
            if not rings:
                raise errors.GeoJSONParseError(index, "polygon without rings")
            for ring in rings:
                reason = _check_ring(ring)
                if reason is not None:
                    raise errors.GeoJSONParseError(index, reason)
        try:
            units.append(
                AreaUnit(str(properties[id_key]), shapely.geometry.shape(geometry))
            )
        except errors.InvalidGeometryError as e:
            raise errors.GeoJSONParseError(index, str(e)) from e

    domain = Domain(units, label=label if label is not None else pathlib.Path(path).stem)
    logging.info("Loaded %d areas from %s", len(domain), path)
    return domain


def write_geojson(
    domain: Domain,
    path: pathlib.Path,
    properties: collections.abc.Sequence[dict[str, tp.Any]] | None = None,
    id_key: str = "geoid",
) -> None:
    """Writes `domain` as a FeatureCollection, merging per-unit `properties`."""
    if properties is None:
        properties = [{} for _ in domain.units]
    if len(properties) != len(domain):
        raise errors.DataError(
            f"{len(properties)} property records for {len(domain)} areas"
        )
    features = [
        {
            "type": "Feature",
            "properties": {id_key: unit.id, **props},
            "geometry": shapely.geometry.mapping(unit.geometry),
        }
        for unit, props in zip(domain.units, properties)
    ]
    path = pathlib.Path(path)
    path.parent.mkdir(exist_ok=True, parents=True)
    with path.open("w") as f:
        json.dump(
            {"type": "FeatureCollection", "features": features},
            f,
            indent=2,
            separators=(",", ": "),
        )
    logging.info("Wrote %s", path)
