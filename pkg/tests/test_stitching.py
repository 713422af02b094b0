"""Window, canvas, and streaming-writer tests."""

import numpy as np
import pytest

from virtstain.errors import ContractError, CoverageError
from virtstain.stitching import (
    StitchCanvas,
    StreamingStitcher,
    grid_tiles_row_major,
    hamming_1d,
    hamming_2d,
    seam_energy,
    stitch_tiles,
)
from virtstain.wsi import WsiImage, build_tile_grid, extract_tile


def oracle_window(mh, mw):
    # direct double loop straight from the closed form
    out = np.empty((mh, mw))
    for yy in range(mh):
        wy = 0.54 - 0.46 * np.cos(2.0 * np.pi * yy / (mh - 1)) if mh > 1 else 1.0
        for xx in range(mw):
            wx = 0.54 - 0.46 * np.cos(2.0 * np.pi * xx / (mw - 1)) if mw > 1 else 1.0
            out[yy, xx] = wy * wx
    return out


class TestWindow:
    @pytest.mark.parametrize("shape", [(4, 4), (7, 7), (64, 64), (5, 12), (1, 9)])
    def test_matches_double_loop_oracle(self, shape):
        np.testing.assert_allclose(hamming_2d(shape), oracle_window(*shape), atol=1e-12)

    def test_corner_weight(self):
        w = hamming_2d((64, 64))
        assert abs(w[0, 0] - 0.0064) < 1e-12
        assert abs(w[0, -1] - 0.0064) < 1e-12
        assert abs(w[-1, -1] - 0.0064) < 1e-12

    def test_center_of_odd_window_is_one(self):
        w = hamming_1d(65)
        assert w[32] == pytest.approx(1.0, abs=1e-12)

    def test_everywhere_positive(self):
        assert hamming_2d((512, 512)).min() > 0.0


def gradient_slide(h=300, w=220):
    yy, xx = np.mgrid[0:h, 0:w]
    r = xx / max(w - 1, 1)
    g = yy / max(h - 1, 1)
    b = (r + g) / 2.0
    return np.stack([r, g, b], axis=-1)


class TestReconstruction:
    @pytest.mark.parametrize("overlap", [0.0, 0.3, 0.6])
    def test_cut_and_restitch_recovers_the_slide(self, overlap):
        plane = gradient_slide()
        image = WsiImage(levels=[plane])
        grid = build_tile_grid(image, tile_size=64, overlap_fraction=overlap)
        tiles = [
            (x, y, extract_tile(image, grid, ix, iy).pixels)
            for ix, iy, x, y in grid_tiles_row_major(grid)
        ]
        out = stitch_tiles(tiles, plane.shape[:2], overlap)
        assert np.max(np.abs(out - plane)) <= 1e-6

    def test_zero_overlap_is_bit_exact(self):
        plane = gradient_slide(256, 256)
        image = WsiImage(levels=[plane])
        grid = build_tile_grid(image, tile_size=64, overlap_fraction=0.0)
        tiles = [
            (x, y, extract_tile(image, grid, ix, iy).pixels)
            for ix, iy, x, y in grid_tiles_row_major(grid)
        ]
        np.testing.assert_array_equal(stitch_tiles(tiles, (256, 256), 0.0), plane)


class TestCoverage:
    def test_missing_tile_is_reported_with_coordinates(self):
        canvas = StitchCanvas((8, 8), overlap_fraction=0.0)
        canvas.add(0, 0, np.ones((8, 4, 3)))
        with pytest.raises(CoverageError) as ei:
            canvas.finalize()
        assert ei.value.coords == (4, 0)

    def test_out_of_canvas_tile_rejected(self):
        canvas = StitchCanvas((8, 8), overlap_fraction=0.0)
        with pytest.raises(ContractError):
            canvas.add(4, 4, np.ones((8, 8, 3)))

    def test_streaming_rejects_backwards_feed(self):
        s = StreamingStitcher((16, 8), tile_size=4, overlap_fraction=0.0)
        s.feed(0, 0, np.ones((4, 8, 3)))
        s.feed(0, 4, np.ones((4, 8, 3)))
        s.feed(0, 8, np.ones((4, 8, 3)))  # finalizes rows < 8
        with pytest.raises(ContractError):
            s.feed(0, 4, np.ones((4, 8, 3)))

    def test_streaming_coverage_gap(self):
        s = StreamingStitcher((16, 8), tile_size=4, overlap_fraction=0.0)
        s.feed(0, 0, np.ones((4, 8, 3)))
        with pytest.raises(CoverageError):
            s.feed(0, 12, np.ones((4, 8, 3)))  # rows 4..11 never covered


class TestStreamingEquivalence:
    @pytest.mark.parametrize("overlap", [0.0, 0.3, 0.6])
    def test_streaming_matches_whole_image_bit_for_bit(self, overlap):
        rng = np.random.default_rng(99)
        plane = rng.uniform(size=(200, 170, 3))
        image = WsiImage(levels=[plane])
        grid = build_tile_grid(image, tile_size=48, overlap_fraction=overlap)
        # contents deliberately differ per tile so blending really happens
        tiles = [
            (x, y, extract_tile(image, grid, ix, iy).pixels + 0.01 * ((ix + iy) % 3))
            for ix, iy, x, y in grid_tiles_row_major(grid)
        ]
        tiles = [(x, y, np.clip(px, 0.0, 1.0)) for x, y, px in tiles]
        whole = stitch_tiles(tiles, plane.shape[:2], overlap)
        stream = StreamingStitcher(plane.shape[:2], 48, overlap)
        for x, y, px in tiles:
            stream.feed(x, y, px)
        np.testing.assert_array_equal(stream.close(), whole)


class TestSeams:
    def test_overlap_blending_cuts_seam_energy(self):
        base = gradient_slide(256, 256)
        image = WsiImage(levels=[base])

        def stitched_with_tile_bias(overlap):
            grid = build_tile_grid(image, tile_size=64, overlap_fraction=overlap)
            tiles = []
            for ix, iy, x, y in grid_tiles_row_major(grid):
                biasrng = np.random.default_rng(1000 * ix + iy)
                px = extract_tile(image, grid, ix, iy).pixels + biasrng.uniform(-0.05, 0.05)
                tiles.append((x, y, np.clip(px, 0.0, 1.0)))
            return stitch_tiles(tiles, base.shape[:2], overlap)

        hard = stitched_with_tile_bias(0.0)
        soft = stitched_with_tile_bias(0.6)
        assert seam_energy(soft) <= 0.5 * seam_energy(hard)
