import numpy as np
import pytest

from twinpuzzle import io as pio
from twinpuzzle import puzzle as pz


def quantized_image(h, w, seed=0):
    """Random image whose values sit exactly on the 8-bit grid."""
    rng = np.random.default_rng(seed)
    return (rng.integers(0, 256, (h, w, 3)) / 255.0).astype(np.float32)


class TestImages:
    def test_png_round_trip_exact_on_8bit_grid(self, tmp_path):
        img = quantized_image(20, 12)
        pio.save_image(tmp_path / "x.png", img)
        back = pio.load_image(tmp_path / "x.png")
        assert np.array_equal(back, img.astype(np.float32))

    def test_jpeg_decodes(self, tmp_path):
        from PIL import Image

        arr = (quantized_image(16, 16, seed=1) * 255).astype(np.uint8)
        Image.fromarray(arr).save(tmp_path / "x.jpg", quality=95)
        back = pio.load_image(tmp_path / "x.jpg")
        assert back.shape == (16, 16, 3)
        assert back.dtype == np.float32
        assert back.min() >= 0.0 and back.max() <= 1.0


class TestPuzzleDirectory:
    def test_round_trip(self, tmp_path):
        img = quantized_image(24, 32, seed=2)
        puzzle = pz.scramble(pz.erode_puzzle(pz.tile_image(img, 8, name="t"), 1,
                                             pz.ZERO_FRAME), 5, "type2")
        pio.save_puzzle(puzzle, tmp_path / "p")
        back = pio.load_puzzle(tmp_path / "p")
        assert back.rows == 3 and back.cols == 4
        assert back.variant == "type2"
        assert back.erosion == 1 and back.erosion_mode == pz.ZERO_FRAME
        assert back.seed == 5
        assert back.ground_truth == puzzle.ground_truth
        for a, b in zip(puzzle.pieces, back.pieces):
            assert a.id == b.id
            assert np.array_equal(a.pixels, b.pixels)

    def test_manifest_format(self, tmp_path):
        img = quantized_image(16, 16, seed=3)
        puzzle = pz.erode_puzzle(pz.tile_image(img, 8, name="m"), 1, pz.CROPPED)
        pio.save_puzzle(puzzle, tmp_path / "p")
        text = (tmp_path / "p" / pio.MANIFEST).read_text()
        assert "rows 2" in text and "cols 2" in text
        assert "erosion 1" in text
        # cropped 28->26 analog at piece 8->6: removed fraction recorded
        assert "erosion_area_fraction" in text
        piece_lines = [l for l in text.splitlines() if l.startswith("piece ")]
        assert len(piece_lines) == 4
        assert piece_lines[0].split() == ["piece", "0", "0", "0", "0", "cropped"]

    def test_manifest_area_figure_28(self, tmp_path):
        img = quantized_image(28, 28, seed=4)
        puzzle = pz.erode_puzzle(pz.tile_image(img, 28, name="a"), 1, pz.CROPPED)
        pio.save_puzzle(puzzle, tmp_path / "p")
        text = (tmp_path / "p" / pio.MANIFEST).read_text()
        line = next(l for l in text.splitlines() if "erosion_area_fraction" in l)
        assert abs(float(line.split()[1]) - 0.137755) < 1e-6

    def test_save_is_byte_stable(self, tmp_path):
        img = quantized_image(16, 16, seed=5)
        puzzle = pz.scramble(pz.tile_image(img, 8, name="s"), 9, "type1")
        pio.save_puzzle(puzzle, tmp_path / "a")
        pio.save_puzzle(puzzle, tmp_path / "b")
        for name in sorted(p.name for p in (tmp_path / "a").iterdir()):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_round_trip_preserves_eroded_pixels(self, tmp_path):
        img = quantized_image(24, 24, seed=6)
        puzzle = pz.erode_puzzle(pz.tile_image(img, 8), 1, pz.ZERO_FRAME)
        pio.save_puzzle(puzzle, tmp_path / "p")
        back = pio.load_puzzle(tmp_path / "p")
        for piece in back.pieces:
            assert piece.pixels[0].sum() == 0.0  # frame survives the round trip
