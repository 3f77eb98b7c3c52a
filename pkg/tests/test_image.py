from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from adnexsynth.image import (ClassId, GrayImage, ImageFormatError, LabelMaskSet, Rect, boundary_mask,
                              boundary_pixels, connected_components, load_image, load_masks, quantize,
                              save_class_masks, save_image, save_masks)


def bfs_components(mask):
    """Brute-force 8-connected flood fill."""
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    comps = []
    for r in range(h):
        for c in range(w):
            if not mask[r, c] or seen[r, c]:
                continue
            comp = set()
            queue = deque([(r, c)])
            seen[r, c] = True
            while queue:
                y, x = queue.popleft()
                comp.add((x, y))
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        ny, nx = y + dy, x + dx
                        if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not seen[ny, nx]:
                            seen[ny, nx] = True
                            queue.append((ny, nx))
            comps.append(frozenset(comp))
    return comps


def scan_boundary(mask):
    h, w = mask.shape
    out = set()
    for r in range(h):
        for c in range(w):
            if not mask[r, c]:
                continue
            for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                y, x = r + dr, c + dc
                if not (0 <= y < h and 0 <= x < w) or not mask[y, x]:
                    out.add((c, r))
                    break
    return out


binary_masks = arrays(bool, st.tuples(st.integers(1, 12), st.integers(1, 12)))


class TestGrayImage:
    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            GrayImage(np.array([[1.2]]))
        with pytest.raises(ValueError):
            GrayImage(np.array([[np.nan]]))

    def test_immutable(self):
        img = GrayImage(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            img.data[0, 0] = 1.0

    def test_quantize_rounding(self):
        assert list(quantize(np.array([0.5, 1.0, 0.0, -0.2, 1.7]))) == [128, 255, 0, 0, 255]


class TestFileIO:
    def test_pgm_all_white(self, tmp_path):
        p = tmp_path / "white.pgm"
        Image.fromarray(np.full((4, 4), 255, np.uint8), mode="L").save(p)
        img = load_image(p)
        assert img.shape == (4, 4)
        assert np.all(img.data == 1.0)

    def test_png_single_zero(self, tmp_path):
        p = tmp_path / "z.png"
        Image.fromarray(np.zeros((1, 1), np.uint8), mode="L").save(p)
        assert load_image(p).data.tolist() == [[0.0]]

    def test_round_trip_bytes(self, tmp_path):
        rng = np.random.default_rng(3)
        src = tmp_path / "src.png"
        Image.fromarray(rng.integers(0, 256, (17, 23), dtype=np.uint8), mode="L").save(src)
        dst = tmp_path / "dst.png"
        save_image(load_image(src), dst)
        assert dst.read_bytes() == src.read_bytes()

    def test_save_clamps_and_rounds(self, tmp_path):
        p = tmp_path / "o.png"
        save_image(GrayImage(np.array([[0.5, 1.0, 0.0]])), p)
        assert np.asarray(Image.open(p)).tolist() == [[128, 255, 0]]

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_image(tmp_path / "nope.png")

    @pytest.mark.parametrize("arr", [np.zeros((3, 3, 3), np.uint8), np.zeros((3, 3), np.uint16)],
                             ids=["rgb", "16bit"])
    def test_rejects_other_formats(self, tmp_path, arr):
        p = tmp_path / "bad.png"
        Image.fromarray(arr).save(p)
        with pytest.raises(ImageFormatError):
            load_image(p)


class TestMasks:
    def test_bit_decoding(self):
        ms = LabelMaskSet.from_bits(np.array([[0b1010]], dtype=np.uint8))
        assert ms.classes_present() == {ClassId.LOCULE, ClassId.PAPILLATION}

    def test_all_zero(self, tmp_path):
        p = tmp_path / "l.png"
        Image.fromarray(np.zeros((5, 6), np.uint8), mode="L").save(p)
        ms = load_masks(p)
        assert ms.shape == (5, 6)
        assert not ms.masks.any()

    def test_high_bits_rejected(self):
        with pytest.raises(ImageFormatError):
            LabelMaskSet.from_bits(np.array([[0b10000]], dtype=np.uint8))

    def test_per_class_and_packed_agree(self, tmp_path):
        rng = np.random.default_rng(11)
        ms = LabelMaskSet(rng.random((4, 13, 9)) < 0.4)
        save_masks(ms, tmp_path / "x_labels.png")
        paths = save_class_masks(ms, tmp_path, "x")
        assert set(paths) == {"lesion", "locule", "solid_area", "papillation"}
        assert load_masks(tmp_path / "x_labels.png") == load_masks(paths) == ms

    def test_dimension_mismatch(self, tmp_path):
        a, b = tmp_path / "a.png", tmp_path / "b.png"
        Image.fromarray(np.zeros((4, 4), np.uint8), mode="L").save(a)
        Image.fromarray(np.zeros((4, 5), np.uint8), mode="L").save(b)
        with pytest.raises(ValueError):
            load_masks({"lesion": a, "locule": b})
        with pytest.raises(ValueError):
            load_masks(a, shape=(3, 4))

    def test_overlap_preserved(self):
        m = np.ones((3, 3), bool)
        ms = LabelMaskSet.from_dict({ClassId.SOLID_AREA: m, ClassId.PAPILLATION: m})
        assert ms[ClassId.SOLID_AREA].all() and ms["papillation"].all()


class TestComponents:
    def test_diagonal_pixels_join(self):
        m = np.zeros((3, 3), bool)
        m[0, 0] = m[1, 1] = True
        comps = connected_components(m)
        assert len(comps) == 1
        assert comps[0].area == 2

    def test_empty(self):
        assert connected_components(np.zeros((4, 4), bool)) == []

    def test_geometry(self):
        m = np.zeros((6, 8), bool)
        m[1:4, 2:7] = True
        (comp,) = connected_components(m)
        assert comp.bbox == Rect(2, 1, 5, 3)
        assert comp.centroid == (4.0, 2.0)
        assert comp.area == 15

    def test_ordering(self):
        m = np.zeros((10, 10), bool)
        m[5, 1] = True
        m[1, 7] = True
        m[1, 2] = True
        order = [(c.bbox.y, c.bbox.x) for c in connected_components(m)]
        assert order == [(1, 2), (1, 7), (5, 1)]

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_flood_fill(self, seed):
        m = np.random.default_rng(seed).random((16, 16)) < 0.35
        ours = {frozenset(c.coords()) for c in connected_components(m)}
        assert ours == set(bfs_components(m))

    @settings(max_examples=60, deadline=None)
    @given(binary_masks)
    def test_partition(self, m):
        comps = connected_components(m)
        union = set()
        for c in comps:
            assert not (union & c.coords())
            union |= c.coords()
        assert union == {(int(c), int(r)) for r, c in zip(*np.nonzero(m))}


class TestBoundary:
    def test_square(self):
        m = np.ones((3, 3), bool)
        assert boundary_pixels(m) == {(x, y) for x in range(3) for y in range(3)} - {(1, 1)}

    def test_single_pixel(self):
        m = np.zeros((5, 5), bool)
        m[2, 3] = True
        assert boundary_pixels(m) == {(3, 2)}

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_scan(self, seed):
        m = np.random.default_rng(seed).random((14, 11)) < 0.6
        assert boundary_pixels(m) == scan_boundary(m)

    @settings(max_examples=60, deadline=None)
    @given(binary_masks)
    def test_subset_and_interior(self, m):
        b = boundary_mask(m)
        assert not np.any(b & ~m)
        padded = np.pad(m, 1)
        interior = m & padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
        assert not np.any(b & interior)
