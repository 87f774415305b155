"""Netpbm reader/writer: byte-exact round trips and header parsing."""

import numpy as np
import numpy.testing as npt
import pytest

from retinotopic.ppm import PpmError, read_ppm, write_ppm


class TestRoundTrip:
    def test_p6_color(self, tmp_path, rng):
        img = rng.integers(0, 256, size=(3, 5, 7)).astype(np.uint8)
        path = tmp_path / "c.ppm"
        write_ppm(path, img)
        npt.assert_array_equal(read_ppm(path), img)

    def test_p5_gray(self, tmp_path, rng):
        img = rng.integers(0, 256, size=(1, 4, 6)).astype(np.uint8)
        path = tmp_path / "g.pgm"
        write_ppm(path, img)
        got = read_ppm(path)
        assert got.shape == (1, 4, 6)
        npt.assert_array_equal(got, img)

    def test_two_dim_input_treated_as_gray(self, tmp_path):
        img = np.arange(12, dtype=np.uint8).reshape(3, 4)
        path = tmp_path / "g2.pgm"
        write_ppm(path, img)
        npt.assert_array_equal(read_ppm(path)[0], img)

    def test_float_input_scaled_and_clipped(self, tmp_path):
        img = np.array([[[-0.5, 0.0], [0.5, 2.0]]])
        path = tmp_path / "f.pgm"
        write_ppm(path, img)
        npt.assert_array_equal(read_ppm(path)[0], [[0, 0], [128, 255]])

    def test_whitespace_valued_pixels_survive(self, tmp_path):
        # binary raster bytes that collide with ASCII whitespace (\n, \t, ' ')
        # must pass through untouched; a text-mode parser would eat them
        img = np.array([[[10, 9], [32, 13]]], dtype=np.uint8)
        path = tmp_path / "ws.pgm"
        write_ppm(path, img)
        npt.assert_array_equal(read_ppm(path), img)


class TestHeaderParsing:
    def test_comments_and_whitespace(self, tmp_path):
        raw = b"P5 # format\n# a comment line\n  2 # width\n\t1\n255\n\x07\x08"
        path = tmp_path / "h.pgm"
        path.write_bytes(raw)
        npt.assert_array_equal(read_ppm(path), [[[7, 8]]])

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.ppm"
        path.write_bytes(b"P3\n1 1\n255\n0 0 0\n")
        with pytest.raises(PpmError):
            read_ppm(path)

    def test_wide_maxval_rejected(self, tmp_path):
        path = tmp_path / "m.pgm"
        path.write_bytes(b"P5\n1 1\n65535\n\x00\x00")
        with pytest.raises(PpmError):
            read_ppm(path)

    def test_truncated_raster(self, tmp_path):
        path = tmp_path / "t.ppm"
        path.write_bytes(b"P6\n2 2\n255\n" + b"\x00" * 5)
        with pytest.raises(PpmError):
            read_ppm(path)


class TestWriteValidation:
    def test_bad_channel_count(self, tmp_path):
        with pytest.raises(PpmError):
            write_ppm(tmp_path / "b.ppm", np.zeros((2, 4, 4)))
