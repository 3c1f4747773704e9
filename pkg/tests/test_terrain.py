import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lfmc.terrain import Terrain, TerrainBatch, TerrainError, generate_terrain, terrain_height


def test_flat_is_zero():
    t = generate_terrain("flat", 5)
    assert terrain_height(t, 3.2) == 0.0
    assert np.all(t.heights == 0)


def test_perlin_within_extrusion_and_deterministic():
    a = generate_terrain("perlin", 7, {"max_extrusion": 0.15})
    b = generate_terrain("perlin", 7, {"max_extrusion": 0.15})
    assert np.array_equal(a.heights, b.heights)
    assert a.heights.min() >= 0 and a.heights.max() <= 0.15
    assert a.heights.max() - a.heights.min() > 0.05
    assert not np.array_equal(a.heights, generate_terrain("perlin", 8).heights)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 0.5))
def test_perlin_range_property(seed, ext):
    t = generate_terrain("perlin", seed, {"max_extrusion": ext})
    assert t.heights.min() >= 0 and t.heights.max() <= ext + 1e-15


def test_interpolation_and_extension():
    t = Terrain("flat", np.array([0.0, 0.1, 0.3]), x0=0.0, spacing=0.1)
    assert terrain_height(t, 0.05) == pytest.approx(0.05)
    assert terrain_height(t, 5.0) == 0.3
    assert terrain_height(t, -5.0) == 0.0


@given(st.floats(-20, 25), st.floats(1e-7, 1e-3))
def test_height_continuous(x, eps):
    t = generate_terrain("perlin", 1)
    # slope of the sampled field is bounded, so heights move by at most slope * eps
    slope = np.max(np.abs(np.diff(t.heights))) / t.spacing
    assert abs(terrain_height(t, x + eps) - terrain_height(t, x)) <= slope * eps + 1e-12


def test_invalid_params():
    with pytest.raises(TerrainError):
        generate_terrain("perlin", 0, {"max_extrusion": 0.0})
    with pytest.raises(TerrainError):
        generate_terrain("flat", 0, {"spacing": 0.0})
    with pytest.raises(TerrainError):
        generate_terrain("lava", 0)
    with pytest.raises(TerrainError):
        generate_terrain("flat", 0, {"bogus": 1})


def test_stairs_and_bricks_shapes():
    s = generate_terrain("stairs", 0)
    assert s.heights.max() == pytest.approx(0.08 * 5)
    assert terrain_height(s, 0.0) == 0.0
    b = generate_terrain("bricks", 3)
    assert 0.02 <= b.heights[b.heights > 0].min() and b.heights.max() <= 0.10
    assert terrain_height(b, 0.0) == 0.0


def test_csv_roundtrip(tmp_path):
    t = generate_terrain("perlin", 2)
    t.to_csv(tmp_path / "t.csv")
    back = Terrain.from_csv(tmp_path / "t.csv", kind="perlin", seed=2)
    assert np.array_equal(back.heights, t.heights)
    assert back.x0 == t.x0 and back.spacing == pytest.approx(t.spacing)


def test_batch_matches_single_queries():
    ts = [generate_terrain("perlin", s) for s in range(3)]
    batch = TerrainBatch(ts)
    xs = np.array([[-1.0, 0.3, 7.7], [2.0, 2.01, -30.0], [40.0, 0.0, 1.234]])
    want = np.array([[terrain_height(t, x) for x in row] for t, row in zip(ts, xs)])
    np.testing.assert_allclose(batch.height(xs), want, rtol=0, atol=1e-15)
