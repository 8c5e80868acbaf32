import numpy as np
import pytest

from ldag.errors import FormatError
from ldag.netpbm import read_mask, read_pgm, read_ppm, write_mask, write_pgm, write_ppm

RNG = np.random.default_rng(9)


def test_pgm_round_trip(tmp_path):
    gray = RNG.integers(0, 256, size=(13, 17), dtype=np.uint8)
    path = tmp_path / "g.pgm"
    write_pgm(path, gray)
    assert np.array_equal(read_pgm(path), gray)


def test_ppm_round_trip_exact_on_quantized(tmp_path):
    img = (RNG.integers(0, 256, size=(3, 8, 6)).astype(np.float32)) / 255.0
    path = tmp_path / "img.ppm"
    write_ppm(path, img)
    assert np.array_equal(read_ppm(path), img.astype(np.float32))


def test_mask_round_trip_and_enforcement(tmp_path):
    mask = (RNG.random((10, 10)) > 0.5).astype(np.uint8)
    path = tmp_path / "m.pgm"
    write_mask(path, mask)
    assert np.array_equal(read_mask(path), mask)
    # a gray pixel poisons the mask
    gray = mask * 255
    gray[0, 0] = 128
    write_pgm(path, gray)
    with pytest.raises(FormatError):
        read_mask(path)


def test_reject_maxval_other_than_255(tmp_path):
    path = tmp_path / "bad.pgm"
    path.write_bytes(b"P5\n2 2\n65535\n" + bytes(8))
    with pytest.raises(FormatError) as exc:
        read_pgm(path)
    assert "maxval" in str(exc.value)


def test_malformed_header(tmp_path):
    path = tmp_path / "bad.pgm"
    path.write_bytes(b"P5\nzz 2\n255\n" + bytes(4))
    with pytest.raises(FormatError):
        read_pgm(path)
    path.write_bytes(b"P4\n2 2\n255\n" + bytes(4))
    with pytest.raises(FormatError):
        read_pgm(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "bad.pgm"
    path.write_bytes(b"P5\n4 4\n255\n" + bytes(7))
    with pytest.raises(FormatError) as exc:
        read_pgm(path)
    assert "expected 16" in str(exc.value) and "actual 7" in str(exc.value)


def test_comments_and_whitespace_tolerated(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n# a comment\n 3 2 \n# another\n255\n" + bytes(6))
    assert read_pgm(path).shape == (2, 3)


def test_ppm_shape_validation(tmp_path):
    with pytest.raises(FormatError):
        write_ppm(tmp_path / "x.ppm", np.zeros((1, 4, 4), dtype=np.float32))
    with pytest.raises(FormatError):
        write_pgm(tmp_path / "x.pgm", np.zeros((2, 2, 2), dtype=np.uint8))
