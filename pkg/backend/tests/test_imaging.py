"""
Tests for the stage I raster primitives
"""
from collections import deque

import cv2
import numpy as np
import pytest

from app.core.errors import InspectIOError, InvalidArgumentError
from app.services.imaging import (
    BinaryImage,
    GrayImage,
    connected_regions,
    dilate,
    load_image,
    save_image,
    sobel_magnitude,
    threshold_binary,
)


def dense_sobel(pixels: np.ndarray, ksize: int) -> np.ndarray:
    """Direct 2-D correlation with the full Sobel kernels on an edge-replicated frame."""
    r = ksize // 2
    padded = np.pad(pixels.astype(np.int64), r, mode="edge")
    out = np.zeros(pixels.shape, dtype=np.int64)
    for dx, dy in ((1, 0), (0, 1)):
        kx, ky = cv2.getDerivKernels(dx, dy, ksize)
        kernel = np.outer(ky.ravel(), kx.ravel()).astype(np.int64)
        g = np.zeros(pixels.shape, dtype=np.int64)
        for y in range(pixels.shape[0]):
            for x in range(pixels.shape[1]):
                g[y, x] = int((padded[y : y + ksize, x : x + ksize] * kernel).sum())
        out += np.abs(g)
    return np.clip(out, 0, 255).astype(np.uint8)


def flood_fill_partition(mask: np.ndarray):
    seen = np.zeros_like(mask, dtype=bool)
    parts = set()
    h, w = mask.shape
    for y0, x0 in zip(*np.nonzero(mask)):
        if seen[y0, x0]:
            continue
        comp, queue = set(), deque([(y0, x0)])
        seen[y0, x0] = True
        while queue:
            y, x = queue.popleft()
            comp.add((int(x), int(y)))
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    ny, nx = y + dy, x + dx
                    if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not seen[ny, nx]:
                        seen[ny, nx] = True
                        queue.append((ny, nx))
        parts.add(frozenset(comp))
    return parts


class TestGrayImage:
    def test_from_values_is_row_major(self):
        img = GrayImage.from_values(3, 2, [1, 2, 3, 4, 5, 6])
        assert img.width == 3 and img.height == 2
        assert img.pixels[1, 0] == 4
        assert img.data == bytes([1, 2, 3, 4, 5, 6])

    def test_wrong_length_rejected(self):
        with pytest.raises(InvalidArgumentError):
            GrayImage.from_values(3, 2, [0] * 5)

    def test_empty_dimensions_rejected(self):
        with pytest.raises(InvalidArgumentError):
            GrayImage.from_values(0, 2, [])


class TestSobel:
    def test_constant_image_has_no_gradient(self):
        img = GrayImage(np.full((10, 12), 128, dtype=np.uint8))
        assert not sobel_magnitude(img, 5).pixels.any()

    def test_step_edge_saturates_at_the_step(self):
        pixels = np.zeros((8, 8), dtype=np.uint8)
        pixels[:, 4:] = 255
        out = sobel_magnitude(GrayImage(pixels), 5).pixels
        assert (out[:, 3] == 255).all() and (out[:, 4] == 255).all()
        assert not out[:, [0, 1, 6, 7]].any()
        np.testing.assert_array_equal(out, dense_sobel(pixels, 5))

    def test_single_pixel_response_has_fourfold_symmetry(self):
        pixels = np.zeros((9, 9), dtype=np.uint8)
        pixels[4, 4] = 20
        out = sobel_magnitude(GrayImage(pixels), 5).pixels
        np.testing.assert_array_equal(out, np.rot90(out))

    @pytest.mark.parametrize("ksize", [3, 5, 7])
    def test_matches_dense_convolution(self, ksize):
        rng = np.random.default_rng(ksize)
        for _ in range(35):
            h, w = rng.integers(1, 17, size=2)
            pixels = rng.integers(0, 256, size=(h, w)).astype(np.uint8)
            # sparse bright spots keep many outputs below the clamp
            if rng.random() < 0.5:
                pixels = (pixels * (rng.random((h, w)) < 0.1)).astype(np.uint8) // 16
            np.testing.assert_array_equal(sobel_magnitude(GrayImage(pixels), ksize).pixels, dense_sobel(pixels, ksize))

    def test_unsupported_kernel_names_value(self):
        with pytest.raises(InvalidArgumentError, match="4"):
            sobel_magnitude(GrayImage(np.zeros((4, 4), dtype=np.uint8)), 4)


class TestThreshold:
    def test_threshold_is_strict(self):
        img = GrayImage.from_values(2, 1, [200, 201])
        assert threshold_binary(img, 200).mask.tolist() == [[False, True]]

    def test_extremes(self, rng):
        img = GrayImage(rng.integers(0, 256, size=(16, 16)).astype(np.uint8))
        assert not threshold_binary(img, 255).mask.any()
        np.testing.assert_array_equal(threshold_binary(img, 0).mask, img.pixels > 0)

    def test_out_of_range_threshold(self):
        with pytest.raises(InvalidArgumentError):
            threshold_binary(GrayImage.from_values(1, 1, [0]), 256)


class TestDilate:
    def test_single_pixel_grows_to_block(self):
        mask = np.zeros((11, 11), dtype=bool)
        mask[5, 5] = True
        out = dilate(BinaryImage(mask), (3, 3)).mask
        expected = np.zeros_like(mask)
        expected[4:7, 4:7] = True
        np.testing.assert_array_equal(out, expected)

    def test_corner_is_clipped(self):
        mask = np.zeros((6, 6), dtype=bool)
        mask[0, 0] = True
        out = dilate(BinaryImage(mask), (3, 3)).mask
        assert set(zip(*np.nonzero(out))) == {(0, 0), (0, 1), (1, 0), (1, 1)}

    def test_empty_stays_empty(self):
        assert not dilate(BinaryImage(np.zeros((5, 5), dtype=bool))).mask.any()

    def test_even_kernel_rejected(self):
        with pytest.raises(InvalidArgumentError):
            dilate(BinaryImage(np.zeros((5, 5), dtype=bool)), (2, 3))

    def test_extensive_and_increasing(self, rng):
        for _ in range(20):
            a = rng.random((20, 24)) < 0.1
            b = a | (rng.random((20, 24)) < 0.1)
            da, db = dilate(BinaryImage(a), (3, 5)).mask, dilate(BinaryImage(b), (3, 5)).mask
            assert (da >= a).all()
            assert (db >= da).all()


class TestConnectedRegions:
    def test_two_blocks(self):
        mask = np.zeros((10, 10), dtype=bool)
        mask[1:3, 1:3] = True
        mask[6:8, 6:8] = True
        regions = connected_regions(BinaryImage(mask))
        assert [r.area for r in regions] == [4, 4]
        # equal areas are ordered by (y0, x0)
        assert [r.bbox for r in regions] == [(1, 1, 2, 2), (6, 6, 2, 2)]

    def test_diagonal_neighbours_join(self):
        mask = np.zeros((4, 4), dtype=bool)
        mask[1, 1] = mask[2, 2] = True
        regions = connected_regions(BinaryImage(mask))
        assert len(regions) == 1 and regions[0].bbox == (1, 1, 2, 2)

    def test_empty_mask(self):
        assert connected_regions(BinaryImage(np.zeros((3, 3), dtype=bool))) == []

    def test_matches_flood_fill(self):
        rng = np.random.default_rng(64)
        for _ in range(500):
            mask = rng.random((64, 64)) < rng.uniform(0.05, 0.5)
            regions = connected_regions(BinaryImage(mask))
            assert {frozenset(r.pixels) for r in regions} == flood_fill_partition(mask)
            areas = [r.area for r in regions]
            assert areas == sorted(areas, reverse=True)
            for r in regions:
                x0, y0, w, h = r.bbox
                assert r.xs.min() == x0 and r.xs.max() == x0 + w - 1
                assert r.ys.min() == y0 and r.ys.max() == y0 + h - 1


class TestImageFiles:
    def test_pgm_round_trip(self, tmp_path, rng):
        img = GrayImage(rng.integers(0, 256, size=(7, 9)).astype(np.uint8))
        path = save_image(tmp_path / "a.pgm", img)
        assert path.read_bytes().startswith(b"P5")
        np.testing.assert_array_equal(load_image(path).pixels, img.pixels)

    def test_colour_needs_luma(self, tmp_path):
        bgr = np.zeros((2, 2, 3), dtype=np.uint8)
        bgr[..., 2] = 255
        path = tmp_path / "red.png"
        cv2.imwrite(str(path), bgr)
        with pytest.raises(InvalidArgumentError, match="luma"):
            load_image(path)
        assert (load_image(path, luma=True).pixels == 76).all()

    def test_missing_file(self, tmp_path):
        with pytest.raises(InspectIOError):
            load_image(tmp_path / "nope.png")
