import numpy as np
import pytest
from PIL import Image

from meshtex.atlas import (
    TextureAtlas,
    TexelScatter,
    aggregate,
    atlas_for_mesh,
    backproject,
    chart_mask_from_mesh,
    dilate_chart_mask,
    export_debug_pngs,
    export_png,
    load_png,
    voronoi_fill,
)
from meshtex.camera import CameraPose, stock_schedule
from meshtex.exceptions import (
    ChannelMismatchError,
    NoSeedsError,
    ShapeMismatchError,
    UnfilledAtlasError,
)
from meshtex.fixtures import atlas_from_values
from meshtex.raster import rasterize, sample_atlas
from oracles import brute_force_fill, grow_mask_by_sets
from test_raster import synthetic_frame


def seeded_atlas(width, height, seeds, channels=3):
    """Atlas with unit-weight seed texels at the given (iy, ix) -> value map."""
    atlas = TextureAtlas(width, height, channels)
    for (iy, ix), value in seeds.items():
        atlas.value_sum[iy, ix] = value
        atlas.weight[iy, ix] = 1.0
        atlas.valid[iy, ix] = True
    return atlas


class TestTexelScatter:
    def test_length_mismatch_rejected(self):
        with pytest.raises(ShapeMismatchError):
            TexelScatter(4, 4, [0, 1], np.ones((3, 3)), [1.0, 1.0])

    def test_out_of_range_index_rejected(self):
        with pytest.raises(ShapeMismatchError):
            TexelScatter(4, 4, [16], np.ones((1, 3)), [1.0])
        with pytest.raises(ShapeMismatchError):
            TexelScatter(4, 4, [-1], np.ones((1, 3)), [1.0])

    def test_negative_weight_rejected(self):
        with pytest.raises(ShapeMismatchError):
            TexelScatter(4, 4, [0], np.ones((1, 3)), [-0.5])


class TestBackproject:
    def test_single_pixel_lands_on_single_texel(self):
        frame = synthetic_frame(8, {(3, 5): (0.5, 0.5)})
        frame.cosine[3, 5] = 0.7
        grid = np.zeros((8, 8, 3))
        grid[3, 5] = (0.2, 0.4, 0.6)
        scatter = backproject(frame, grid, 2.0, 64, 64)
        assert scatter.indices.shape == (1,)
        assert scatter.indices[0] == 32 * 64 + 32
        np.testing.assert_array_equal(scatter.values[0], [0.2, 0.4, 0.6])
        assert scatter.weights[0] == pytest.approx(0.49, abs=1e-12)

    def test_grid_shape_must_match_frame(self):
        frame = synthetic_frame(8, {(0, 0): (0.5, 0.5)})
        with pytest.raises(ShapeMismatchError):
            backproject(frame, np.zeros((16, 16, 3)), 2.0, 64, 64)

    def test_grazing_pixels_contribute_nothing(self):
        frame = synthetic_frame(8, {(0, 0): (0.25, 0.25)})
        frame.cosine[0, 0] = 0.0
        scatter = backproject(frame, np.ones((8, 8, 3)), 2.0, 16, 16)
        assert scatter.weights[0] == 0.0
        out = aggregate(TextureAtlas(16, 16, 3), [scatter])
        assert not out.valid.any()

    def test_zero_exponent_means_unit_weights(self):
        frame = synthetic_frame(8, {(0, 0): (0.1, 0.1), (1, 1): (0.9, 0.9)})
        frame.cosine[0, 0] = 0.3
        scatter = backproject(frame, np.ones((8, 8, 3)), 0.0, 16, 16)
        np.testing.assert_array_equal(scatter.weights, [1.0, 1.0])


class TestAggregate:
    def test_single_contribution_reads_back_unchanged(self):
        scatter = TexelScatter(8, 8, [10], [[1.5, 0.5, 2.5]], [2.0])
        out = aggregate(TextureAtlas(8, 8, 3), [scatter])
        np.testing.assert_allclose(out.values[1, 2], [1.5, 0.5, 2.5])
        assert out.valid[1, 2]
        assert out.weight[1, 2] == 2.0

    def test_weighted_mean_of_two_contributions(self):
        scatters = [
            TexelScatter(8, 8, [0], [[1.0]], [1.0]),
            TexelScatter(8, 8, [0], [[3.0]], [3.0]),
        ]
        out = aggregate(TextureAtlas(8, 8, 1), scatters)
        assert out.values[0, 0, 0] == pytest.approx(2.5, abs=1e-12)
        assert out.weight[0, 0] == pytest.approx(4.0, abs=1e-12)

    def test_scatter_order_barely_matters(self):
        rng = np.random.default_rng(11)
        scatters = [
            TexelScatter(
                16,
                16,
                rng.integers(0, 256, size=40),
                rng.uniform(0.0, 1.0, size=(40, 3)),
                rng.uniform(0.1, 1.0, size=40),
            )
            for _ in range(4)
        ]
        a = aggregate(TextureAtlas(16, 16, 3), scatters)
        b = aggregate(TextureAtlas(16, 16, 3), scatters[::-1])
        np.testing.assert_allclose(a.values, b.values, atol=1e-6)
        np.testing.assert_array_equal(a.valid, b.valid)

    def test_untouched_texels_stay_empty(self):
        scatter = TexelScatter(8, 8, [5], [[1.0, 1.0, 1.0]], [1.0])
        out = aggregate(TextureAtlas(8, 8, 3), [scatter])
        untouched = np.ones((8, 8), dtype=bool)
        untouched[0, 5] = False
        assert not out.valid[untouched].any()
        assert np.all(out.value_sum[untouched] == 0.0)

    def test_validity_tracks_positive_weight(self):
        scatter = TexelScatter(8, 8, [0, 1], [[1.0], [1.0]], [0.0, 0.5])
        out = aggregate(TextureAtlas(8, 8, 1), [scatter])
        np.testing.assert_array_equal(out.valid, out.weight > 0.0)
        assert not out.valid[0, 0] and out.valid[0, 1]

    def test_input_atlas_not_mutated(self):
        base = TextureAtlas(8, 8, 3)
        aggregate(base, [TexelScatter(8, 8, [0], [[1.0, 1.0, 1.0]], [1.0])])
        assert not base.valid.any()

    def test_wrong_dimensions_rejected(self):
        scatter = TexelScatter(4, 4, [0], [[1.0, 1.0, 1.0]], [1.0])
        with pytest.raises(ShapeMismatchError):
            aggregate(TextureAtlas(8, 8, 3), [scatter])


class TestVoronoiFill:
    def test_two_seed_atlas_splits_by_distance(self):
        atlas = seeded_atlas(
            64, 64, {(0, 0): (1.0, 0.0, 0.0), (63, 63): (0.0, 1.0, 0.0)}
        )
        filled = voronoi_fill(atlas)
        np.testing.assert_array_equal(filled.values[10, 10], [1.0, 0.0, 0.0])
        np.testing.assert_array_equal(filled.values[60, 60], [0.0, 1.0, 0.0])
        assert filled.valid.all()

    def test_tie_resolves_to_smaller_row_major_index(self):
        atlas = seeded_atlas(8, 8, {(0, 1): (1.0,), (1, 0): (2.0,)}, channels=1)
        filled = voronoi_fill(atlas)
        # (0,0) and (1,1) are exactly one texel from both seeds; flat index
        # of (0,1) is 1, of (1,0) is 8, so the first must win both
        assert filled.values[0, 0, 0] == 1.0
        assert filled.values[1, 1, 0] == 1.0

    def test_single_seed_floods_the_chart(self):
        atlas = seeded_atlas(16, 16, {(5, 9): (0.3, 0.6, 0.9)})
        filled = voronoi_fill(atlas)
        assert filled.valid.all()
        assert np.all(filled.values == np.array([0.3, 0.6, 0.9]))

    def test_seed_texels_preserved_bitwise(self):
        rng = np.random.default_rng(0)
        atlas = TextureAtlas(32, 32, 3)
        mask = rng.random((32, 32)) < 0.1
        atlas.valid = mask
        atlas.weight = np.where(mask, rng.uniform(0.5, 2.0, (32, 32)), 0.0)
        atlas.value_sum = rng.standard_normal((32, 32, 3)) * mask[:, :, None]
        before_sum = atlas.value_sum.copy()
        before_weight = atlas.weight.copy()
        filled = voronoi_fill(atlas)
        assert np.array_equal(filled.value_sum[mask], before_sum[mask])
        assert np.array_equal(filled.weight[mask], before_weight[mask])

    def test_idempotent(self):
        atlas = seeded_atlas(16, 16, {(2, 2): (0.5, 0.5, 0.5), (12, 3): (0.9, 0.1, 0.2)})
        once = voronoi_fill(atlas)
        twice = voronoi_fill(once)
        assert np.array_equal(once.value_sum, twice.value_sum)
        assert np.array_equal(once.weight, twice.weight)
        assert np.array_equal(once.valid, twice.valid)

    def test_fill_respects_chart_mask(self):
        chart = np.zeros((16, 16), dtype=bool)
        chart[:8, :] = True
        atlas = TextureAtlas(16, 16, 1, chart_mask=chart)
        atlas.valid[0, 0] = True
        atlas.weight[0, 0] = 1.0
        atlas.value_sum[0, 0] = 1.0
        filled = voronoi_fill(atlas)
        assert filled.valid[:8].all()
        assert not filled.valid[8:].any()

    def test_no_seeds_is_an_error(self):
        with pytest.raises(NoSeedsError):
            voronoi_fill(TextureAtlas(8, 8, 3))

    def test_matches_brute_force_scan(self):
        rng = np.random.default_rng(21)
        for trial in range(10):
            atlas = TextureAtlas(32, 32, 2)
            density = rng.uniform(0.005, 0.2)
            atlas.valid = rng.random((32, 32)) < density
            if not atlas.valid.any():
                atlas.valid[rng.integers(32), rng.integers(32)] = True
            if trial % 3 == 0:
                atlas.chart_mask = rng.random((32, 32)) < 0.7
                atlas.valid &= atlas.chart_mask
                if not atlas.valid.any():
                    continue
            atlas.weight = np.where(atlas.valid, rng.uniform(0.1, 2.0, (32, 32)), 0.0)
            atlas.value_sum = (
                rng.standard_normal((32, 32, 2)) * atlas.valid[:, :, None]
            )
            filled = voronoi_fill(atlas)
            ref_sum, ref_w, ref_valid = brute_force_fill(
                atlas.valid, atlas.value_sum, atlas.weight, atlas.chart_mask
            )
            assert np.array_equal(filled.value_sum, ref_sum)
            assert np.array_equal(filled.weight, ref_w)
            assert np.array_equal(filled.valid, ref_valid)


class TestDilateChartMask:
    def test_zero_margin_is_identity(self):
        chart = np.zeros((8, 8), dtype=bool)
        chart[4, 4] = True
        atlas = TextureAtlas(8, 8, 3, chart_mask=chart)
        out = dilate_chart_mask(atlas, 0)
        np.testing.assert_array_equal(out.chart_mask, chart)

    @pytest.mark.parametrize("margin,side", [(1, 3), (2, 5)])
    def test_point_grows_to_square(self, margin, side):
        chart = np.zeros((16, 16), dtype=bool)
        chart[8, 8] = True
        atlas = TextureAtlas(16, 16, 3, chart_mask=chart)
        out = dilate_chart_mask(atlas, margin)
        assert out.chart_mask.sum() == side * side
        assert out.chart_mask[8 - margin : 8 + margin + 1, 8 - margin : 8 + margin + 1].all()

    def test_matches_set_expansion(self):
        rng = np.random.default_rng(5)
        chart = rng.random((24, 24)) < 0.08
        atlas = TextureAtlas(24, 24, 3, chart_mask=chart)
        for margin in (1, 2, 3):
            out = dilate_chart_mask(atlas, margin)
            np.testing.assert_array_equal(
                out.chart_mask, grow_mask_by_sets(chart, margin)
            )

    def test_never_shrinks(self):
        rng = np.random.default_rng(6)
        chart = rng.random((16, 16)) < 0.2
        atlas = TextureAtlas(16, 16, 3, chart_mask=chart)
        out = dilate_chart_mask(atlas, 2)
        assert (out.chart_mask | chart).sum() == out.chart_mask.sum()


class TestExportPng:
    def test_quantization_rounds_half_up(self, tmp_path):
        values = np.zeros((2, 2, 3))
        values[0, 0] = 0.5
        values[0, 1] = 1.0
        values[1, 0] = -0.2  # clamps to 0
        values[1, 1] = 1.7  # clamps to 255
        path = tmp_path / "t.png"
        export_png(atlas_from_values(values), path)
        img = np.asarray(Image.open(path))
        # the file is written with v=1 at the top, so rows swap
        np.testing.assert_array_equal(img[1, 0], [128, 128, 128])
        np.testing.assert_array_equal(img[1, 1], [255, 255, 255])
        np.testing.assert_array_equal(img[0, 0], [0, 0, 0])
        np.testing.assert_array_equal(img[0, 1], [255, 255, 255])

    def test_round_trip_error_bounded_by_quantization(self, tmp_path):
        rng = np.random.default_rng(9)
        values = rng.uniform(0.0, 1.0, size=(16, 16, 3))
        path = tmp_path / "t.png"
        export_png(atlas_from_values(values), path)
        back = load_png(path)
        assert np.abs(back - values).max() <= 0.5 / 255.0 + 1e-12

    def test_non_rgb_atlas_rejected(self, tmp_path):
        atlas = TextureAtlas(4, 4, 1)
        atlas.valid[:] = True
        with pytest.raises(ChannelMismatchError):
            export_png(atlas, tmp_path / "t.png")

    def test_chart_holes_block_export(self, tmp_path):
        atlas = TextureAtlas(4, 4, 3)
        atlas.valid[:] = True
        atlas.valid[2, 2] = False
        with pytest.raises(UnfilledAtlasError):
            export_png(atlas, tmp_path / "t.png")

    def test_fill_then_export_succeeds(self, tmp_path):
        atlas = seeded_atlas(8, 8, {(1, 1): (0.2, 0.4, 0.8)})
        export_png(voronoi_fill(atlas), tmp_path / "t.png")
        img = np.asarray(Image.open(tmp_path / "t.png"))
        assert img.shape == (8, 8, 3)
        np.testing.assert_array_equal(img.reshape(-1, 3)[0], [51, 102, 204])

    def test_debug_artifacts_written(self, tmp_path):
        atlas = seeded_atlas(8, 8, {(1, 1): (1.0, 1.0, 1.0)})
        export_debug_pngs(atlas, tmp_path / "debug")
        assert (tmp_path / "debug" / "validity.png").exists()
        assert (tmp_path / "debug" / "weight.png").exists()


class TestChartMask:
    def test_full_uv_quad_covers_everything(self, norm_quad):
        mask = chart_mask_from_mesh(norm_quad, 32, 32)
        assert mask.all()

    def test_cube_charts_leave_gutters(self, norm_cube):
        mask = chart_mask_from_mesh(norm_cube, 96, 96)
        fraction = mask.mean()
        assert 0.4 < fraction < 0.95
        # probe the center of the first face's square and the gutter between
        # the first and second columns of the 3x2 layout
        assert mask[int(0.25 * 96), int(1 / 6 * 96)]
        assert not mask[int(0.25 * 96), int(1 / 3 * 96)]

    def test_margin_expands_chart(self, norm_cube):
        tight = atlas_for_mesh(norm_cube, 64, 64, 3, margin=0)
        wide = atlas_for_mesh(norm_cube, 64, 64, 3, margin=2)
        assert wide.chart_mask.sum() > tight.chart_mask.sum()
        assert (wide.chart_mask | tight.chart_mask).sum() == wide.chart_mask.sum()


class TestViewCoverage:
    def test_stock_framing_coverage_is_stable(self, sphere_mesh):
        """At the stock distance the sphere overfills the frustum, so eight
        views see eight small caps; the union lands just above 30% of the
        chart. The bound is frozen from measurement to catch regressions."""
        frames = [rasterize(sphere_mesh, p, 256) for p in stock_schedule()]
        template = atlas_for_mesh(sphere_mesh, 256, 256, 3)
        scatters = [
            backproject(fr, np.ones((256, 256, 3)), 2.0, 256, 256) for fr in frames
        ]
        agg = aggregate(template.fresh(), scatters)
        chart = template.chart_mask
        fraction = (agg.valid & chart).sum() / chart.sum()
        assert fraction >= 0.29

    def test_full_object_framing_covers_nearly_everything(self, sphere_mesh):
        frames = [rasterize(sphere_mesh, p, 512) for p in stock_schedule(distance=4.0)]
        template = atlas_for_mesh(sphere_mesh, 256, 256, 3)
        scatters = [
            backproject(fr, np.ones((512, 512, 3)), 2.0, 256, 256) for fr in frames
        ]
        agg = aggregate(template.fresh(), scatters)
        chart = template.chart_mask
        fraction = (agg.valid & chart).sum() / chart.sum()
        assert fraction >= 0.95


class TestSingleViewConsistency:
    def test_sample_returns_what_one_view_wrote(self, norm_quad):
        # with unit weights the stored sum is exactly the written value, so
        # texels hit by a single pixel must read back bitwise
        frame = rasterize(norm_quad, CameraPose(0.0, 0.0, 2.0), 64)
        rng = np.random.default_rng(17)
        grid = rng.uniform(0.0, 1.0, size=(64, 64, 3))
        scatter = backproject(frame, grid, 0.0, 64, 64)
        atlas = aggregate(TextureAtlas(64, 64, 3), [scatter])
        sampled = sample_atlas(voronoi_fill(atlas), frame, "nearest")
        counts = np.bincount(scatter.indices, minlength=64 * 64)
        single = counts[scatter.indices] == 1
        ys, xs = np.nonzero(frame.mask)
        assert single.any()
        lone_px = (ys[single], xs[single])
        assert np.array_equal(sampled[lone_px], grid[lone_px])
