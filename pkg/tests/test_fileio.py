import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mammoreg.fileio import (
    PGMFormatError,
    load_field,
    load_mask,
    load_pgm,
    save_field,
    save_mask,
    save_pgm,
)
from mammoreg.image import DisplacementField, Image, Mask


def write(tmp_path, name, payload: bytes):
    p = tmp_path / name
    p.write_bytes(payload)
    return p


def test_load_8bit(tmp_path):
    p = write(tmp_path, "a.pgm", b"P5\n2 2\n255\n" + bytes([0, 255, 128, 64]))
    img = load_pgm(p)
    np.testing.assert_array_equal(img.data.ravel(), [0.0, 1.0, 128 / 255, 64 / 255])
    assert img.spacing == (0.05, 0.05)


def test_load_16bit_big_endian(tmp_path):
    p = write(tmp_path, "b.pgm", b"P5 1 1 65535\n\xff\xff")
    assert load_pgm(p).data[0, 0] == 1.0
    p = write(tmp_path, "c.pgm", b"P5 1 1 65535\n\x01\x00")
    assert load_pgm(p).data[0, 0] == 256 / 65535


def test_header_comments(tmp_path):
    p = write(tmp_path, "d.pgm", b"P5\n# made by hand\n1 1\n255\n\x80")
    assert load_pgm(p).data[0, 0] == 128 / 255


def test_wrong_magic(tmp_path):
    p = write(tmp_path, "e.pgm", b"P6\n1 1\n255\n\x00\x00\x00")
    with pytest.raises(PGMFormatError):
        load_pgm(p)


def test_bad_maxval(tmp_path):
    p = write(tmp_path, "f.pgm", b"P5\n1 1\n1023\n\x00\x00")
    with pytest.raises(PGMFormatError):
        load_pgm(p)


def test_truncated_payload(tmp_path):
    p = write(tmp_path, "g.pgm", b"P5\n2 2\n255\n\x00\x00")
    with pytest.raises(OSError):
        load_pgm(p)


def test_sidecar_spacing(tmp_path):
    p = tmp_path / "h.pgm"
    save_pgm(Image(np.zeros((2, 3)), (0.4, 0.25)), p)
    assert (tmp_path / "h.meta").read_text().startswith("spacing_x=")
    assert load_pgm(p).spacing == (0.4, 0.25)


def test_save_bytes(tmp_path):
    p = tmp_path / "i.pgm"
    save_pgm(Image(np.array([[0.0]])), p, bit_depth=8)
    assert p.read_bytes().endswith(b"\n\x00")
    save_pgm(Image(np.array([[1.0]])), p, bit_depth=16)
    assert p.read_bytes().endswith(b"\n\xff\xff")
    save_pgm(Image(np.array([[0.5]])), p, bit_depth=8)
    assert p.read_bytes()[-1] == 128  # round(127.5)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.floats(0, 1)),
       st.sampled_from([8, 16]))
def test_round_trip(tmp_path_factory, data, depth):
    p = tmp_path_factory.mktemp("rt") / "x.pgm"
    save_pgm(Image(data, (0.1, 0.2)), p, bit_depth=depth)
    back = load_pgm(p)
    maxval = 255 if depth == 8 else 65535
    assert np.abs(back.data - data).max() <= 0.5 / maxval + 1e-15
    assert back.spacing == (0.1, 0.2)


def test_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        save_pgm(Image(np.zeros((1, 1))), tmp_path / "missing" / "x.pgm")


def test_mask_round_trip(tmp_path):
    m = Mask(np.array([[True, False], [False, True]]))
    save_mask(m, tmp_path / "m.pgm")
    assert (tmp_path / "m.pgm").read_bytes().endswith(bytes([255, 0, 0, 255]))
    assert load_mask(tmp_path / "m.pgm") == m


def test_field_format(tmp_path):
    vec = np.arange(2 * 3 * 4, dtype=float).reshape(2, 3, 4) / 7.0
    fld = DisplacementField(vec, (0.5, 0.25))
    p = tmp_path / "f.mregf"
    save_field(fld, p)
    raw = p.read_bytes()
    assert raw.startswith(b"MREGF1\n")
    header = np.frombuffer(raw, "<f4", count=4, offset=7)
    np.testing.assert_array_equal(header, [4, 3, 0.5, 0.25])
    # dx plane first, then dy
    body = np.frombuffer(raw, "<f4", offset=7 + 16)
    np.testing.assert_allclose(body[:12], vec[0].ravel(), rtol=1e-6)
    back = load_field(p)
    assert back.shape == (3, 4) and back.spacing == (0.5, 0.25)
    np.testing.assert_allclose(back.vectors, vec, rtol=1e-6)


def test_field_bad_magic(tmp_path):
    p = write(tmp_path, "bad.mregf", b"NOPE")
    with pytest.raises(PGMFormatError):
        load_field(p)
