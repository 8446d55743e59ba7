import numpy as np
import pytest

from uapg.errors import (
    DegeneratePerturbationError,
    FormatError,
    ParameterError,
    ShapeError,
)
from uapg.imaging import (
    ContrastMask,
    ImageTensor,
    Perturbation,
    VideoFrames,
    apply_perturbation,
    clamp_unit,
    contrast_mask,
    mse,
    psnr,
    read_perturbation,
    read_png,
    read_y4m,
    scale_to_amplitude,
    tile_perturbation,
    write_perturbation,
    write_png,
    write_y4m,
)


# ---------------------------------------------------------------------------
# mse / psnr
# ---------------------------------------------------------------------------

def test_mse_identity(random_image):
    assert mse(random_image, random_image) == 0.0


def test_mse_uniform_difference():
    a = ImageTensor(np.zeros((4, 4, 3)))
    b = ImageTensor(np.full((4, 4, 3), 0.1))
    assert mse(a, b) == pytest.approx(0.01, abs=1e-15)


def test_mse_matches_element_loop_oracle(rng):
    a = rng.uniform(0, 1, (8, 8, 3))
    b = rng.uniform(0, 1, (8, 8, 3))
    total = 0.0
    for y in range(8):
        for x in range(8):
            for c in range(3):
                total += (a[y, x, c] - b[y, x, c]) ** 2
    expected = total / a.size
    assert mse(ImageTensor(a), ImageTensor(b)) == pytest.approx(
        expected, abs=1e-12
    )


def test_mse_shape_mismatch():
    with pytest.raises(ShapeError):
        mse(ImageTensor(np.zeros((4, 4, 3))), ImageTensor(np.zeros((4, 5, 3))))


def test_psnr_identity_cap(random_image):
    assert psnr(random_image, random_image) == 99.0
    assert psnr(random_image, random_image, cap=60.0) == 60.0


def test_psnr_uniform_difference():
    a = ImageTensor(np.zeros((4, 4, 3)))
    b = ImageTensor(np.full((4, 4, 3), 0.1))
    assert psnr(a, b) == pytest.approx(20.0, abs=1e-12)


def test_psnr_matches_two_pass_oracle(rng):
    a = ImageTensor(rng.uniform(0, 1, (8, 8, 3)))
    b = ImageTensor(rng.uniform(0, 1, (8, 8, 3)))
    expected = 10.0 * np.log10(1.0 / mse(a, b))
    assert psnr(a, b) == pytest.approx(expected, abs=1e-9)


def test_psnr_symmetry(rng):
    for _ in range(10):
        a = ImageTensor(rng.uniform(0, 1, (6, 5, 3)))
        b = ImageTensor(rng.uniform(0, 1, (6, 5, 3)))
        assert psnr(a, b) == psnr(b, a)


# ---------------------------------------------------------------------------
# clamp_unit
# ---------------------------------------------------------------------------

def test_clamp_unit():
    arr = np.array([[[1.07, -0.02, 0.5]]])
    out = clamp_unit(arr)
    assert out.data[0, 0, 0] == 1.0
    assert out.data[0, 0, 1] == 0.0
    assert out.data[0, 0, 2] == 0.5


def test_clamp_unit_in_range_unchanged(random_image):
    out = clamp_unit(random_image)
    assert np.array_equal(out.data, random_image.data)


# ---------------------------------------------------------------------------
# tiling
# ---------------------------------------------------------------------------

def test_tile_modular_indexing(rng):
    p = Perturbation(rng.uniform(-0.1, 0.1, (256, 256, 3)))
    field = tile_perturbation(p, 1080, 1920)
    assert field.shape == (1080, 1920, 3)
    assert field[10, 300, 0] == p.data[10, 44, 0]


def test_tile_identity(random_perturbation):
    field = tile_perturbation(random_perturbation, 8, 8)
    assert np.array_equal(field, random_perturbation.data)


def test_tile_exhaustive_positions(rng):
    p = Perturbation(rng.uniform(-0.1, 0.1, (8, 8, 3)))
    field = tile_perturbation(p, 16, 16)
    for y in range(16):
        for x in range(16):
            for c in range(3):
                assert field[y, x, c] == p.data[y % 8, x % 8, c]


def test_tile_crops_non_multiples(rng):
    p = Perturbation(rng.uniform(-0.1, 0.1, (8, 8, 3)))
    field = tile_perturbation(p, 13, 19)
    assert field.shape == (13, 19, 3)
    assert field[12, 18, 1] == p.data[12 % 8, 18 % 8, 1]


# ---------------------------------------------------------------------------
# scaling
# ---------------------------------------------------------------------------

def test_scale_ratio(rng):
    data = rng.uniform(-0.1, 0.1, (8, 8, 3))
    data[0, 0, 0] = 0.1  # pin the peak
    p = Perturbation(data)
    scaled = scale_to_amplitude(p, 0.02)
    assert np.allclose(scaled.data, data * 0.2)
    assert np.abs(scaled.data).max() == pytest.approx(0.02, abs=1e-9)


def test_scale_identity(rng):
    data = rng.uniform(-0.1, 0.1, (8, 8, 3))
    p = Perturbation(data)
    peak = np.abs(data).max()
    scaled = scale_to_amplitude(p, peak)
    assert np.allclose(scaled.data, data)


@pytest.mark.parametrize("amplitude", [0.02, 0.04, 0.06, 0.08])
def test_scale_amplitude_grid(rng, amplitude):
    p = Perturbation(rng.uniform(-0.1, 0.1, (8, 8, 3)))
    scaled = scale_to_amplitude(p, amplitude)
    assert np.abs(scaled.data).max() == pytest.approx(amplitude, abs=1e-9)


def test_scale_preserves_sign_and_argmax(rng):
    p = Perturbation(rng.uniform(-0.1, 0.1, (8, 8, 3)))
    scaled = scale_to_amplitude(p, 0.03)
    assert np.array_equal(np.sign(scaled.data), np.sign(p.data))
    assert np.argmax(np.abs(scaled.data)) == np.argmax(np.abs(p.data))


def test_scale_all_zero_degenerate():
    with pytest.raises(DegeneratePerturbationError):
        scale_to_amplitude(Perturbation.zeros(8, 8), 0.02)


# ---------------------------------------------------------------------------
# application
# ---------------------------------------------------------------------------

def test_apply_zero_perturbation_identity(random_image):
    out = apply_perturbation(random_image, Perturbation.zeros(8, 8))
    assert np.array_equal(out.data, random_image.data)


def test_apply_all_ones_mask_matches_unmasked(rng, random_image):
    p = Perturbation(rng.uniform(-0.1, 0.1, (8, 8, 3)))
    ones = ContrastMask(np.ones((16, 16)))
    assert np.array_equal(
        apply_perturbation(random_image, p, ones).data,
        apply_perturbation(random_image, p).data,
    )


def test_apply_zero_mask_identity(rng):
    img = ImageTensor(np.full((16, 16, 3), 0.4))
    p = Perturbation(rng.uniform(-0.1, 0.1, (8, 8, 3)))
    mask = contrast_mask(img)  # constant image -> all-zero mask
    assert np.array_equal(apply_perturbation(img, p, mask).data, img.data)


def test_apply_output_in_range(rng):
    img = ImageTensor(rng.uniform(0, 1, (16, 16, 3)))
    p = Perturbation(rng.uniform(-0.1, 0.1, (8, 8, 3)))
    out = apply_perturbation(img, p)
    assert out.data.min() >= 0.0 and out.data.max() <= 1.0


def test_apply_mask_shape_mismatch(rng, random_image):
    p = Perturbation(rng.uniform(-0.1, 0.1, (8, 8, 3)))
    with pytest.raises(ShapeError):
        apply_perturbation(random_image, p, ContrastMask(np.ones((4, 4))))


# ---------------------------------------------------------------------------
# contrast mask
# ---------------------------------------------------------------------------

def _windowed_std_oracle(luma, window):
    """Naive double-loop windowed population std with edge replication."""
    h, w = luma.shape
    r = window // 2
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            vals = []
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    yy = min(max(y + dy, 0), h - 1)
                    xx = min(max(x + dx, 0), w - 1)
                    vals.append(luma[yy, xx])
            vals = np.array(vals)
            out[y, x] = np.sqrt(np.mean((vals - vals.mean()) ** 2))
    return out


def test_contrast_mask_constant_image():
    img = ImageTensor(np.full((12, 12, 3), 0.7))
    assert np.array_equal(contrast_mask(img).data, np.zeros((12, 12)))


def test_contrast_mask_checkerboard_interior_ones():
    yy, xx = np.mgrid[0:20, 0:20]
    board = ((yy + xx) % 2).astype(np.float64)
    img = ImageTensor(np.repeat(board[:, :, None], 3, axis=2))
    mask = contrast_mask(img, window=7)
    interior = mask.data[3:-3, 3:-3]
    assert np.allclose(interior, 1.0, atol=1e-12)


def test_contrast_mask_matches_windowed_std_oracle(rng):
    from uapg.imaging import luminance

    img = ImageTensor(rng.uniform(0, 1, (14, 14, 3)))
    window = 5
    oracle = _windowed_std_oracle(luminance(img), window)
    mask = contrast_mask(img, window=window)
    assert np.abs(mask.data - oracle / oracle.max()).max() < 1e-9


def test_contrast_mask_shift_invariance(rng):
    base = rng.uniform(0.1, 0.6, (12, 12, 3))
    m1 = contrast_mask(ImageTensor(base))
    m2 = contrast_mask(ImageTensor(base + 0.3))
    assert np.abs(m1.data - m2.data).max() < 1e-9


@pytest.mark.parametrize("window", [2, 4, 1, 99])
def test_contrast_mask_bad_window(random_image, window):
    with pytest.raises(ParameterError):
        contrast_mask(random_image, window=window)


# ---------------------------------------------------------------------------
# I/O
# ---------------------------------------------------------------------------

def test_perturbation_round_trip(tmp_path, random_perturbation):
    path = tmp_path / "p.uapp"
    write_perturbation(path, random_perturbation)
    back = read_perturbation(path)
    assert np.array_equal(back.data, random_perturbation.data)
    assert back.clip_bound == pytest.approx(0.1, abs=1e-7)
    assert back.tile_height == 8 and back.tile_width == 8


def test_perturbation_bad_magic(tmp_path):
    path = tmp_path / "bad.uapp"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(FormatError) as exc:
        read_perturbation(path)
    assert exc.value.offset == 0


def test_perturbation_truncated(tmp_path, random_perturbation):
    path = tmp_path / "p.uapp"
    write_perturbation(path, random_perturbation)
    raw = path.read_bytes()
    path.write_bytes(raw[:-7])
    with pytest.raises(FormatError):
        read_perturbation(path)


def test_png_round_trip_8bit(tmp_path, rng):
    img = ImageTensor(rng.integers(0, 256, (9, 7, 3)) / 255.0)
    path = tmp_path / "img.png"
    write_png(path, img)
    back = read_png(path)
    assert np.array_equal(back.data, img.data)


def test_png_extremes(tmp_path):
    img = ImageTensor(np.array([[[0.0, 1.0, 0.5]]]))
    path = tmp_path / "px.png"
    write_png(path, img)
    back = read_png(path)
    assert back.data[0, 0, 0] == 0.0
    assert back.data[0, 0, 1] == 1.0
    assert back.data[0, 0, 2] == 128 / 255.0  # 127.5 rounds away from zero


def test_png_grayscale(tmp_path, rng):
    img = ImageTensor(rng.integers(0, 256, (5, 5, 1)) / 255.0)
    path = tmp_path / "g.png"
    write_png(path, img)
    back = read_png(path)
    assert back.channels == 1
    assert np.array_equal(back.data, img.data)


def test_y4m_round_trips_count_and_rate(tmp_path, rng):
    frames = tuple(ImageTensor(rng.uniform(0, 1, (16, 16, 3)))
                   for _ in range(3))
    video = VideoFrames(frames, 24, 1)
    path = tmp_path / "v.y4m"
    write_y4m(path, video)
    back = read_y4m(path)
    assert len(back.frames) == 3
    assert back.rate_num == 24 and back.rate_den == 1


def test_y4m_stored_precision_stable(tmp_path, rng):
    """One write->read->write cycle is a fixed point at 8-bit precision."""
    frames = tuple(ImageTensor(rng.uniform(0, 1, (16, 16, 3)))
                   for _ in range(2))
    video = VideoFrames(frames, 30, 1)
    p1 = tmp_path / "a.y4m"
    p2 = tmp_path / "b.y4m"
    write_y4m(p1, video)
    write_y4m(p2, read_y4m(p1))
    assert p1.read_bytes() == p2.read_bytes()


def test_y4m_420_read(tmp_path):
    # hand-built C420: gray frame (Y=128, Cb=Cr=128)
    w, h = 4, 4
    header = f"YUV4MPEG2 W{w} H{h} F25:1 Ip A1:1 C420jpeg\n".encode()
    frame = b"FRAME\n" + bytes([128] * (w * h)) + bytes([128] * (w * h // 2))
    path = tmp_path / "c420.y4m"
    path.write_bytes(header + frame)
    video = read_y4m(path)
    assert len(video.frames) == 1
    assert video.frame_rate == 25.0
    # chroma 128/255 is a hair off neutral 0.5; gray within 8-bit slack
    assert np.allclose(video.frames[0].data, 128 / 255.0, atol=5e-3)


def test_y4m_truncated_frame(tmp_path):
    header = b"YUV4MPEG2 W4 H4 F25:1 Ip A1:1 C444\n"
    path = tmp_path / "trunc.y4m"
    path.write_bytes(header + b"FRAME\n" + b"\x00" * 10)
    with pytest.raises(FormatError):
        read_y4m(path)


def test_y4m_bad_header(tmp_path):
    path = tmp_path / "bad.y4m"
    path.write_bytes(b"NOT A STREAM\n")
    with pytest.raises(FormatError) as exc:
        read_y4m(path)
    assert exc.value.offset == 0


# ---------------------------------------------------------------------------
# type invariants
# ---------------------------------------------------------------------------

def test_image_rejects_out_of_range():
    with pytest.raises(ParameterError):
        ImageTensor(np.full((2, 2, 3), 1.2))


def test_image_rejects_bad_channels():
    with pytest.raises(ShapeError):
        ImageTensor(np.zeros((2, 2, 4)))


def test_perturbation_rejects_exceeding_clip():
    with pytest.raises(ParameterError):
        Perturbation(np.full((2, 2, 3), 0.2), clip_bound=0.1)


def test_video_rejects_mixed_shapes():
    a = ImageTensor(np.zeros((4, 4, 3)))
    b = ImageTensor(np.zeros((4, 5, 3)))
    with pytest.raises(ShapeError):
        VideoFrames((a, b))


def test_video_rejects_empty():
    with pytest.raises(ParameterError):
        VideoFrames(())
