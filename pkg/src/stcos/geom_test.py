import json

import numpy as np
import pytest
import scipy.stats
import shapely
import shapely.affinity

from stcos import errors, geom

SQUARE = [(0, 0), (10, 0), (10, 10), (0, 10), (0, 0)]
HOLE = [(4, 4), (4, 6), (6, 6), (6, 4), (4, 4)]
L_SHAPE = [(0, 0), (2, 0), (2, 1), (1, 1), (1, 2), (0, 2), (0, 0)]


def test_area_subtracts_holes():
    unit = geom.AreaUnit.from_rings("a", [SQUARE], [[HOLE]])
    assert geom.area(unit) == pytest.approx(96.0)
    assert len(unit.holes[0]) == 1


def test_orientation_is_normalized():
    clockwise = geom.AreaUnit.from_rings("a", [SQUARE[::-1]])
    assert clockwise.geometry.exterior.is_ccw
    assert geom.area(clockwise) == pytest.approx(100.0)


def test_multipolygon_area():
    shifted = [(x + 20, y) for x, y in SQUARE]
    unit = geom.AreaUnit.from_rings("a", [SQUARE, shifted], [[HOLE]])
    assert geom.area(unit) == pytest.approx(196.0)
    assert len(unit.shells) == 2


@pytest.mark.parametrize(
    "ring",
    [
        [(0, 0), (1, 0), (1, 1), (0, 1)],
        [(0, 0), (1, 0), (0, 0)],
        [(0, 0), (2, 2), (2, 0), (0, 2), (0, 0)],
        [(0, 0), (1, 0), (2, 0), (0, 0)],
    ],
    ids=["unclosed", "too_few_vertices", "self_intersecting", "degenerate"],
)
def test_invalid_rings_are_rejected(ring):
    with pytest.raises(errors.InvalidGeometryError):
        geom.AreaUnit.from_rings("bad", [ring])


def test_duplicate_ids_are_rejected():
    unit = geom.AreaUnit.from_rings("a", [SQUARE])
    with pytest.raises(errors.DataError, match="duplicate"):
        geom.Domain([unit, unit])


def test_intersection_area_is_symmetric_and_idempotent():
    a = geom.AreaUnit.from_rings("a", [L_SHAPE])
    b = geom.AreaUnit.from_rings("b", [[(0.5, 0.5), (3, 0.5), (3, 3), (0.5, 3), (0.5, 0.5)]])
    assert geom.intersection_area(a, a) == pytest.approx(geom.area(a))
    assert geom.intersection_area(a, b) == pytest.approx(geom.intersection_area(b, a))
    # Both arms of the L, clipped below and left at 0.5.
    assert geom.intersection_area(a, b) == pytest.approx(1.25)


def test_overlap_matrix_nested_grids(make_grid):
    coarse = make_grid(2, size=2.0, label="coarse")
    fine = make_grid(4, size=1.0, label="fine")

    proportions = geom.overlap_matrix(coarse, fine)
    assert proportions.shape == (4, 16)
    np.testing.assert_allclose(proportions.sum(axis=1).A1, 1.0)
    assert proportions.nnz == 16
    np.testing.assert_allclose(proportions.data, 0.25)

    raw = geom.overlap_matrix(fine, coarse, proportion=False)
    np.testing.assert_allclose(raw.sum(axis=1).A1, 1.0)
    np.testing.assert_allclose(raw.sum(axis=0).A1, 4.0)


def test_overlap_matrix_partial_cover(make_grid):
    fine = make_grid(2, size=1.0, label="fine")
    wide = geom.Domain(
        [geom.AreaUnit.from_rings("w", [[(0, 0), (4, 0), (4, 2), (0, 2), (0, 0)]])]
    )
    proportions = geom.overlap_matrix(wide, fine)
    assert proportions.sum() == pytest.approx(0.5)


def test_overlap_matrix_zero_row_raises(make_grid):
    fine = make_grid(2, size=1.0, label="fine")
    far = geom.Domain(
        [geom.AreaUnit.from_rings("far", [[(9, 9), (10, 9), (10, 10), (9, 10), (9, 9)]])]
    )
    with pytest.raises(errors.ZeroOverlapError, match="far"):
        geom.overlap_matrix(far, fine)
    assert geom.overlap_matrix(far, fine, proportion=False).nnz == 0


@pytest.mark.parametrize(
    "rule, center_degree, corner_degree",
    [
        (geom.AdjacencyRule.queen, 8, 3),
        (geom.AdjacencyRule.rook, 4, 2),
    ],
    ids=["queen", "rook"],
)
def test_adjacency_on_grid(make_grid, rule, center_degree, corner_degree):
    w = geom.adjacency_matrix(make_grid(3), rule=rule).toarray()
    np.testing.assert_array_equal(w, w.T)
    np.testing.assert_array_equal(np.diag(w), 0.0)
    degrees = w.sum(axis=1)
    assert degrees[4] == center_degree
    assert degrees[0] == corner_degree
    assert set(np.unique(w)) <= {0.0, 1.0}


def test_adjacency_two_by_two(make_grid):
    grid = make_grid(2)
    queen = geom.adjacency_matrix(grid, rule=geom.AdjacencyRule.queen).toarray()
    rook = geom.adjacency_matrix(grid, rule=geom.AdjacencyRule.rook).toarray()
    np.testing.assert_array_equal(queen, np.ones((4, 4)) - np.eye(4))
    np.testing.assert_array_equal(
        rook,
        [[0, 1, 1, 0], [1, 0, 0, 1], [1, 0, 0, 1], [0, 1, 1, 0]],
    )


def _unit(id, x0, y0):
    return geom.AreaUnit.from_rings(
        id, [[(x0, y0), (x0 + 1, y0), (x0 + 1, y0 + 1), (x0, y0 + 1), (x0, y0)]]
    )


@pytest.mark.parametrize(
    "gap, queen_row, rook_row",
    [
        (0.0, [0, 1, 1], [0, 1, 0]),
        (5e-7, [0, 1, 1], [0, 1, 0]),
        (1e-5, [0, 0, 0], [0, 0, 0]),
    ],
    ids=["shared", "within_tolerance", "beyond_tolerance"],
)
def test_adjacency_touch_tolerance(gap, queen_row, rook_row):
    domain = geom.Domain(
        [_unit("a", 0.0, 0.0), _unit("edge", 1.0 + gap, 0.0), _unit("corner", 1.0 + gap, 1.0 + gap)]
    )
    queen = geom.adjacency_matrix(domain, rule=geom.AdjacencyRule.queen).toarray()
    rook = geom.adjacency_matrix(domain, rule=geom.AdjacencyRule.rook).toarray()
    np.testing.assert_array_equal(queen[0], queen_row)
    np.testing.assert_array_equal(rook[0], rook_row)


def test_adjacency_isolated_unit_has_zero_row(make_grid):
    grid = make_grid(2)
    island = geom.AreaUnit.from_rings("island", [[(5, 5), (6, 5), (6, 6), (5, 6), (5, 5)]])
    w = geom.adjacency_matrix(geom.Domain([*grid.units, island])).toarray()
    assert w[-1].sum() == 0.0
    assert w[:4, :4].sum() == 12.0


def test_sample_uniform_stays_inside_and_is_reproducible():
    unit = geom.AreaUnit.from_rings("a", [SQUARE], [[HOLE]])
    points = geom.sample_uniform(unit, 500, np.random.default_rng(3))
    assert points.shape == (500, 2)
    assert geom.contains(unit, points).all()
    np.testing.assert_array_equal(
        points, geom.sample_uniform(unit, 500, np.random.default_rng(3))
    )


def test_sample_uniform_is_area_proportional(rng):
    unit = geom.AreaUnit.from_rings("l", [L_SHAPE])
    points = geom.sample_uniform(unit, 6000, rng)
    upper_arm = (points[:, 1] > 1.0).mean()
    # The upper arm is one of the three unit squares.
    assert upper_arm == pytest.approx(1.0 / 3.0, abs=0.03)


def test_sample_uniform_thin_polygon_falls_back_to_triangulation(rng):
    rectangle = shapely.affinity.rotate(shapely.box(0.0, 0.0, 1000.0, 0.001), 45.0)
    unit = geom.AreaUnit("thin", rectangle)
    points = geom.sample_uniform(unit, 50, rng)
    assert points.shape == (50, 2)
    assert shapely.intersects_xy(
        shapely.buffer(unit.geometry, 1e-9), points[:, 0], points[:, 1]
    ).all()


def test_sample_uniform_rejects_empty_request(rng):
    unit = geom.AreaUnit.from_rings("a", [SQUARE])
    with pytest.raises(errors.ConfigError):
        geom.sample_uniform(unit, 0, rng)


def test_geojson_round_trip(make_grid, tmp_path):
    grid = make_grid(2, size=1000.0)
    path = tmp_path / "grid.geojson"
    geom.write_geojson(grid, path, properties=[{"value": i} for i in range(4)])

    with path.open() as f:
        features = json.load(f)["features"]
    assert [f["properties"]["value"] for f in features] == [0, 1, 2, 3]

    loaded = geom.read_geojson(path)
    assert loaded.ids == grid.ids
    np.testing.assert_allclose(loaded.areas, grid.areas)


def test_read_geojson_reports_feature_index(tmp_path):
    features = [
        {
            "type": "Feature",
            "properties": {"geoid": "ok"},
            "geometry": {"type": "Polygon", "coordinates": [SQUARE]},
        },
        {
            "type": "Feature",
            "properties": {"geoid": "open"},
            "geometry": {"type": "Polygon", "coordinates": [SQUARE[:-1]]},
        },
    ]
    path = tmp_path / "bad.geojson"
    path.write_text(json.dumps({"type": "FeatureCollection", "features": features}))

    with pytest.raises(errors.GeoJSONParseError) as excinfo:
        geom.read_geojson(path)
    assert excinfo.value.feature_index == 1


def test_read_geojson_requires_id(tmp_path):
    feature = {
        "type": "Feature",
        "properties": {"name": "x"},
        "geometry": {"type": "Polygon", "coordinates": [SQUARE]},
    }
    path = tmp_path / "noid.geojson"
    path.write_text(json.dumps({"type": "FeatureCollection", "features": [feature]}))
    with pytest.raises(errors.GeoJSONParseError, match="geoid"):
        geom.read_geojson(path)


def test_sample_uniform_matches_uniform_cdf(rng):
    unit = geom.AreaUnit.from_rings("r", [[(0, 0), (2, 0), (2, 1), (0, 1), (0, 0)]])
    points = geom.sample_uniform(unit, 10_000, rng)
    np.testing.assert_allclose(points.mean(axis=0), [1.0, 0.5], atol=0.02)
    assert scipy.stats.kstest(points[:, 0], scipy.stats.uniform(0, 2).cdf).statistic < 0.03
    assert scipy.stats.kstest(points[:, 1], scipy.stats.uniform(0, 1).cdf).statistic < 0.03


def test_read_geojson_unreadable_file(tmp_path):
    with pytest.raises(errors.GeoJSONParseError, match="cannot read"):
        geom.read_geojson(tmp_path / "absent.geojson")
    path = tmp_path / "broken.geojson"
    path.write_text('{"type": "FeatureCollection", "features": [')
    with pytest.raises(errors.GeoJSONParseError, match="not JSON"):
        geom.read_geojson(path)
    path.write_text("[]")
    with pytest.raises(errors.GeoJSONParseError, match="FeatureCollection"):
        geom.read_geojson(path)


def test_domain_bounds(make_grid):
    box = make_grid(3, size=2.0, x0=1.0, y0=-1.0).bounds
    assert (box.xmin, box.ymin, box.xmax, box.ymax) == (1.0, -1.0, 7.0, 5.0)
    assert box.width == box.height == 6.0
