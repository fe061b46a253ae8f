import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from malite.byteplot import (
    WIDTH_RULE,
    ByteImage,
    ByteplotTransformer,
    dump_raw,
    load_raw,
    resize_square,
    save_png,
    to_gray_image,
    to_rgb_image,
    width_for_size,
)
from malite.errors import EmptyInput, FormatError

from oracles import naive_resize

KB = 1024
TABLE_WIDTHS = [32, 64, 128, 256, 384, 512, 768, 1024]


def test_width_examples():
    assert width_for_size(5 * KB) == 32
    assert width_for_size(2048 * KB) == 1024
    assert width_for_size(10 * KB) == 64


@pytest.mark.parametrize(
    "kb, below, at",
    [(10, 32, 64), (30, 64, 128), (60, 128, 256), (100, 256, 384),
     (200, 384, 512), (500, 512, 768), (1000, 768, 1024)],
)
def test_width_boundaries_half_open(kb, below, at):
    assert width_for_size(kb * KB - 1) == below
    assert width_for_size(kb * KB) == at
    assert width_for_size(kb * KB + 1) == at


def test_width_rule_shape():
    assert [w for _, w in WIDTH_RULE] == TABLE_WIDTHS
    bounds = [b for b, _ in WIDTH_RULE if b is not None]
    assert bounds == sorted(bounds)


def test_zero_size_rejected():
    with pytest.raises(EmptyInput):
        width_for_size(0)
    with pytest.raises(EmptyInput):
        to_gray_image(b"")
    with pytest.raises(EmptyInput):
        to_rgb_image(b"")


@given(st.integers(1, 3 * 1024 * KB), st.integers(1, 3 * 1024 * KB))
def test_width_monotone(a, b):
    lo, hi = sorted((a, b))
    assert width_for_size(lo) <= width_for_size(hi)
    assert width_for_size(lo) in TABLE_WIDTHS


def test_gray_64_bytes():
    data = bytes(range(1, 65))
    img = to_gray_image(data)
    assert (img.width, img.height, img.channels) == (32, 32, 1)
    assert img.pixels[:2].ravel().tolist() == list(data)
    assert not img.pixels[2:].any()


def test_gray_malimg_sized_file():
    img = to_gray_image(b"\x01" * 9458)
    assert img.width == 32
    assert img.height == 320  # ceil(9458 / 32) = 296 rows, padded to 320
    assert img.pixels.sum() == 9458


def test_gray_all_ff():
    img = to_gray_image(b"\xff" * 100)
    assert (img.pixels.ravel()[:100] == 255).all()
    assert (img.pixels.ravel()[100:] == 0).all()


def test_rgb_examples():
    img = to_rgb_image(bytes(300))
    assert (img.width, img.height, img.channels) == (32, 32, 3)
    one = to_rgb_image(b"\x41")
    assert tuple(one.pixels[0, 0]) == (65, 0, 0)
    assert one.pixels.sum() == 65
    six = to_rgb_image(bytes([1, 2, 3, 4, 5, 6]))
    assert tuple(six.pixels[0, 0]) == (1, 2, 3)
    assert tuple(six.pixels[0, 1]) == (4, 5, 6)


def test_rgb_sample_layout_matches_stream():
    data = np.random.default_rng(0).integers(0, 256, 1000, dtype=np.uint8).tobytes()
    img = to_rgb_image(data)
    assert img.pixels.tobytes()[:1000] == data
    assert len(img.pixels.tobytes()) == img.width * img.height * 3


@settings(max_examples=40)
@given(st.integers(1, 40), st.sampled_from([32, 64]))
def test_round_trip_without_padding(k, width):
    # lengths that are a multiple of width*32 and still map to this width
    n = width * 32 * k
    if width_for_size(n) != width:
        return
    data = np.random.default_rng(k).integers(0, 256, n, dtype=np.uint8).tobytes()
    img = to_gray_image(data)
    assert img.pixels.tobytes() == data


@given(st.binary(min_size=1, max_size=5000))
def test_gray_invariants(data):
    img = to_gray_image(data)
    assert img.height % 32 == 0
    assert img.pixels.size == img.width * img.height
    assert img == to_gray_image(data)


def test_resize_integer_ratio():
    src = np.random.default_rng(1).integers(0, 256, (32, 32), dtype=np.uint8)
    out = resize_square(ByteImage(src), 256)
    assert out.pixels.shape == (256, 256)
    assert np.array_equal(out.pixels, np.kron(src, np.ones((8, 8), dtype=np.uint8)))


def test_resize_identity():
    src = ByteImage(np.random.default_rng(2).integers(0, 256, (256, 256), dtype=np.uint8))
    out = resize_square(src, 256)
    assert out.pixels.tobytes() == src.pixels.tobytes()
    assert resize_square(out, 256) == out


@pytest.mark.parametrize("shape", [(320, 64), (320, 64, 3), (1024, 1024), (32, 768)])
def test_resize_matches_naive(shape):
    src = np.random.default_rng(3).integers(0, 256, shape, dtype=np.uint8)
    out = resize_square(ByteImage(src), 256)
    assert np.array_equal(out.pixels, naive_resize(src, 256))


def test_raw_dump_round_trip():
    img = to_rgb_image(bytes(range(256)) * 7)
    blob = dump_raw(img)
    assert blob[:4] == b"MLIM"
    assert int.from_bytes(blob[4:6], "little") == img.width
    assert int.from_bytes(blob[6:8], "little") == img.height
    assert blob[8] == 3 and blob[9:16] == bytes(7)
    assert load_raw(blob) == img
    with pytest.raises(FormatError):
        load_raw(b"XXXX" + blob[4:])
    with pytest.raises(FormatError):
        load_raw(blob[:-1])


def test_png_export(tmp_path):
    from PIL import Image

    img = to_gray_image(bytes(range(200)))
    save_png(img, tmp_path / "g.png")
    back = np.asarray(Image.open(tmp_path / "g.png"))
    assert np.array_equal(back, img.pixels)


def test_transformer_stacks_inputs(tmp_path):
    p = tmp_path / "a.bin"
    p.write_bytes(b"\x10" * 500)
    out = ByteplotTransformer(side=64).fit_transform([p, b"\x20" * 900])
    assert out.shape == (2, 64, 64) and out.dtype == np.uint8
    rgb = ByteplotTransformer(rgb=True, side=16).transform([b"abc" * 10])
    assert rgb.shape == (1, 16, 16, 3)
    assert ByteplotTransformer().get_params() == {"rgb": False, "side": 256}
