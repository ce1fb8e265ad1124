import pathlib

import attrs
import numpy as np
import pytest

from stcos import basis, cov, errors, geom
from stcos.pipeline import assemble, config, ingest


@pytest.mark.parametrize(
    "s, threshold, expected_r",
    [
        (np.diag([np.sqrt(3.0), 1.0]), 0.65, 1),
        (np.eye(4), 0.65, 3),
        (np.eye(4), 0.75, 3),
        (np.eye(4), 0.5, 2),
        (np.array([[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 0.0]]), 1.0, 2),
        (np.diag([10.0, 1.0]), 0.01, 1),
    ],
    ids=["dominant", "flat", "exact_boundary", "half", "full_rank_only", "floor_at_one"],
)
def test_pca_reduce_dimension(s, threshold, expected_r):
    projection = assemble.pca_reduce(s, threshold)
    assert projection.r == expected_r
    assert projection.r_full == s.shape[1]
    np.testing.assert_allclose(projection.matrix.T @ projection.matrix, np.eye(expected_r), atol=1e-12)


def test_pca_projection_spans_leading_directions(rng):
    # Columns with very different scales: the first component is the loud one.
    s = rng.standard_normal((50, 3)) * [100.0, 1.0, 0.1]
    projection = assemble.pca_reduce(s, 0.65)
    assert projection.r == 1
    assert abs(projection.matrix[0, 0]) == pytest.approx(1.0, abs=1e-3)
    assert projection.explained >= 0.65
    assert projection.apply(s).shape == (50, 1)
    with pytest.raises(errors.DataError):
        projection.apply(np.ones((2, 4)))


def test_pca_reduce_errors():
    with pytest.raises(errors.DataError):
        assemble.pca_reduce(np.zeros((3, 2)))
    with pytest.raises(errors.ConfigError):
        assemble.pca_reduce(np.eye(2), 0.0)


def _support(domain, year, lookback=1, est=None):
    n = len(domain)
    est = np.arange(n, dtype=float) if est is None else est
    return ingest.SourceSupport(
        name=domain.label,
        domain=domain,
        period=basis.Period.ending(year, lookback),
        est=est,
        moe=np.ones(n),
        var=np.full(n, ingest.moe_to_var(1.0)),
    )


def test_filter_fine_support_drops_orphan(make_grid):
    fine = make_grid(4, size=1000.0, label="f")
    source = make_grid(4, size=1000.0, label="s")
    covered = source.subset([i != 5 for i in range(16)])
    kept = assemble.filter_fine_support(fine, [_support(covered, 2015)])
    assert len(kept) == 15
    assert "f5" not in kept.ids

    everything = assemble.filter_fine_support(fine, [_support(covered, 2015)], min_overlap_m2=0.0)
    assert everything.ids == fine.ids


def _strip(id, y0):
    return geom.Domain(
        [geom.AreaUnit.from_rings(id, [[(0, y0), (3, y0), (3, y0 + 1), (0, y0 + 1), (0, y0)]])],
        label=id,
    )


def test_filter_fine_support_sums_over_sources(make_grid):
    fine = make_grid(2, size=10.0, label="f")
    # Each strip covers 3 m^2 of f0.
    first, second = _strip("a0", 1.0), _strip("b0", 4.0)
    kept = assemble.filter_fine_support(fine, [_support(first, 2015), _support(second, 2016)], 5.0)
    assert kept.ids == ["f0"]
    with pytest.raises(errors.ConfigError):
        assemble.filter_fine_support(fine, [_support(first, 2015)], 5.0)


def test_filter_fine_support_disjoint_sources(make_grid):
    fine = make_grid(2, label="f")
    far = make_grid(1, label="x", x0=100.0, y0=100.0)
    with pytest.raises(errors.ConfigError):
        assemble.filter_fine_support(fine, [_support(far, 2015)])


def _toy_config(**model):
    return config.PipelineConfig(
        paths=config.PathsConfig(fine=pathlib.Path("fine.geojson"), target=pathlib.Path("t.geojson")),
        sources=[
            config.SourceConfig(
                geojson=pathlib.Path("a.geojson"),
                year=2015,
                lookback=5,
                estimates=pathlib.Path("e.csv"),
            ),
            config.SourceConfig(
                geojson=pathlib.Path("b.geojson"), year=2016, estimates=pathlib.Path("e.csv")
            ),
        ],
        knots=config.KnotsConfig(n_spatial=4, n_candidates=100, ws_tilde=1.5),
        model=config.ModelConfig(mc_reps=50, **model),
        seed=3,
    )


@pytest.fixture
def toy(make_grid, rng):
    fine = make_grid(4, size=1000.0, label="f")
    sources = [
        _support(make_grid(2, size=2000.0, label="a"), 2015, 5, rng.normal(50000, 5000, 4)),
        _support(make_grid(4, size=1000.0, label="b"), 2016, 1, rng.normal(50000, 5000, 16)),
    ]
    return fine, sources


def test_place_knots(toy):
    fine, _ = toy
    cfg = _toy_config()
    knots = assemble.place_knots(fine, cfg)
    # 2011..2016 by half years.
    assert knots.r == 4 * 11
    np.testing.assert_array_equal(np.unique(knots.times), np.arange(2011.0, 2016.5, 0.5))
    assert knots.w_t == 1.0
    np.testing.assert_array_equal(knots.centers, assemble.place_knots(fine, cfg).centers)

    hexagonal = attrs.evolve(cfg, knots=attrs.evolve(cfg.knots, design=config.KnotDesign.hexagonal))
    hex_knots = assemble.place_knots(fine, hexagonal)
    assert hex_knots.r % 11 == 0


def test_fine_years(toy):
    _, sources = toy
    assert assemble.fine_years(sources) == [2011, 2012, 2013, 2014, 2015, 2016]


def test_assemble_toy(toy):
    fine, sources = toy
    cfg = _toy_config()
    knots = assemble.place_knots(fine, cfg)
    prepared = assemble.assemble(fine, sources, knots, cfg)
    data = prepared.data

    assert data.n == 20
    assert data.n_b == 16
    np.testing.assert_allclose(np.asarray(data.h.sum(axis=1)).ravel(), 1.0, atol=1e-9)
    assert data.s.shape == (20, prepared.projection.r)
    assert data.k.shape == (data.r, data.r)
    assert np.linalg.eigvalsh(data.k).min() > 0.0
    assert prepared.structure == cov.FineLevelStructure.random_walk
    assert prepared.years == [2011, 2012, 2013, 2014, 2015, 2016]
    assert prepared.fine_ids == fine.ids

    est = np.concatenate([s.est for s in sources])
    np.testing.assert_allclose(prepared.standardizer.unstandardize(data.z), est)
    assert data.z.mean() == pytest.approx(0.0, abs=1e-12)
    assert data.z.std(ddof=1) == pytest.approx(1.0)
    np.testing.assert_allclose(data.v, prepared.rows["var"] / est.var(ddof=1))
    assert prepared.rows["source"].tolist() == ["a"] * 4 + ["b"] * 16

    again = assemble.assemble(fine, sources, knots, cfg)
    np.testing.assert_array_equal(again.data.s, data.s)
    np.testing.assert_array_equal(again.data.k, data.k)


def test_assemble_is_independent_of_estimates(toy):
    fine, sources = toy
    cfg = _toy_config()
    knots = assemble.place_knots(fine, cfg)
    first = assemble.assemble(fine, sources, knots, cfg)
    scaled = [
        ingest.SourceSupport(s.name, s.domain, s.period, 100.0 * s.est, 100.0 * s.moe, 1e4 * s.var)
        for s in sources
    ]
    second = assemble.assemble(fine, scaled, knots, cfg)
    np.testing.assert_array_equal(first.data.s, second.data.s)
    np.testing.assert_allclose(first.data.z, second.data.z, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(first.data.v, second.data.v, rtol=1e-12)


@pytest.mark.parametrize(
    "structure", list(cov.FineLevelStructure), ids=[s.value for s in cov.FineLevelStructure]
)
def test_assemble_structures(toy, structure):
    fine, sources = toy
    cfg = _toy_config(structure=structure)
    prepared = assemble.assemble(fine, sources, assemble.place_knots(fine, cfg), cfg)
    assert prepared.structure == structure
    if structure == cov.FineLevelStructure.identity:
        np.testing.assert_array_equal(prepared.data.k, np.eye(prepared.data.r))


def test_assemble_rejects_missing(toy):
    fine, sources = toy
    cfg = _toy_config()
    est = sources[0].est.copy()
    est[1] = np.nan
    broken = [_support(sources[0].domain, 2015, 5, est), sources[1]]
    with pytest.raises(errors.DataError, match="missing"):
        assemble.assemble(fine, broken, assemble.place_knots(fine, cfg), cfg)


def test_assembled_save_and_load(toy, tmp_path):
    fine, sources = toy
    cfg = _toy_config()
    prepared = assemble.assemble(fine, sources, assemble.place_knots(fine, cfg), cfg)
    path = tmp_path / "out" / "model.npz"
    prepared.save(path)
    loaded = assemble.Assembled.load(path)

    np.testing.assert_array_equal(loaded.data.h.toarray(), prepared.data.h.toarray())
    for name in ("z", "v", "s", "k"):
        np.testing.assert_array_equal(getattr(loaded.data, name), getattr(prepared.data, name))
    np.testing.assert_array_equal(loaded.knots.centers, prepared.knots.centers)
    assert (loaded.knots.w_s, loaded.knots.w_t) == (prepared.knots.w_s, prepared.knots.w_t)
    np.testing.assert_array_equal(loaded.projection.matrix, prepared.projection.matrix)
    assert loaded.standardizer == prepared.standardizer
    assert loaded.fine_ids == prepared.fine_ids
    assert loaded.years == prepared.years
    assert loaded.structure == prepared.structure
    assert loaded.rows["geoid"].tolist() == prepared.rows["geoid"].tolist()
    np.testing.assert_array_equal(loaded.rows["est"], prepared.rows["est"])

    with pytest.raises(errors.ConfigError):
        assemble.Assembled.load(tmp_path / "absent.npz")


def test_fine_support_follows_prepared_order(toy):
    fine, sources = toy
    cfg = _toy_config()
    prepared = assemble.assemble(fine, sources, assemble.place_knots(fine, cfg), cfg)
    shuffled = geom.Domain(list(reversed(fine.units)), label="fine")
    assert prepared.fine_support(shuffled).ids == fine.ids
    with pytest.raises(errors.DataError):
        prepared.fine_support(fine.subset([i != 3 for i in range(16)]))
