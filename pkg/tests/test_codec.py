import numpy as np
import pytest

from uapg.codec import (
    CodecSpec,
    compress,
    external_encode_decode,
    mock_encode_decode,
)
from uapg.errors import CodecError, ParameterError
from uapg.imaging import ImageTensor, VideoFrames, psnr, write_y4m, read_y4m
from uapg.synthdata import make_video

COPY_CMD = ('python3 -c "import shutil,sys; shutil.copy(sys.argv[1], '
            'sys.argv[2])" {input} {output} {bitrate}')


@pytest.fixture
def video():
    return make_video(6, 64, 64, seed=13)


def _mean_psnr(a: VideoFrames, b: VideoFrames) -> float:
    return float(np.mean([psnr(x, y) for x, y in zip(a.frames, b.frames)]))


def test_mock_near_lossless_at_top_quality(video):
    res = mock_encode_decode(video, 1.0)
    assert _mean_psnr(video, res.video) >= 45.0


def test_mock_rate_and_quality_monotone(video):
    rates, quals = [], []
    for q in (0.2, 0.4, 0.6, 0.8):
        res = mock_encode_decode(video, q)
        rates.append(res.measured_bitrate)
        quals.append(_mean_psnr(video, res.video))
    assert all(b >= a for a, b in zip(rates, rates[1:]))
    assert all(b >= a for a, b in zip(quals, quals[1:]))


def test_mock_constant_mid_gray_exact():
    frames = tuple(ImageTensor(np.full((24, 24, 3), 0.5)) for _ in range(3))
    v = VideoFrames(frames, 30, 1)
    for q in (0.13, 0.5, 0.77, 1.0):
        res = mock_encode_decode(v, q)
        assert psnr(v.frames[0], res.video.frames[0]) == 99.0
        assert res.measured_bitrate > 0


def test_mock_deterministic(video):
    a = mock_encode_decode(video, 0.4)
    b = mock_encode_decode(video, 0.4)
    assert a.measured_bitrate == b.measured_bitrate
    for fa, fb in zip(a.video.frames, b.video.frames):
        assert np.array_equal(fa.data, fb.data)


def test_mock_preserves_geometry():
    v = make_video(3, 30, 52, seed=2)  # not block multiples
    res = mock_encode_decode(v, 0.6)
    assert len(res.video.frames) == 3
    assert res.video.height == 30 and res.video.width == 52
    assert res.video.frame_rate == v.frame_rate


def test_mock_rejects_bad_quality(video):
    for q in (0.0, -0.1, 1.5):
        with pytest.raises(ParameterError):
            mock_encode_decode(video, q)


# ---------------------------------------------------------------------------
# external codec
# ---------------------------------------------------------------------------

def test_external_identity_template(tmp_path, video):
    spec = CodecSpec("external", encode_template=COPY_CMD,
                     decode_template=COPY_CMD, target_bitrate=1_000_000)
    res = external_encode_decode(video, spec, scratch_dir=tmp_path)
    assert len(res.video.frames) == len(video.frames)
    # identity codec: decoded equals what a y4m round trip of the input gives
    ref_path = tmp_path / "ref.y4m"
    write_y4m(ref_path, video)
    ref = read_y4m(ref_path)
    for fa, fb in zip(res.video.frames, ref.frames):
        assert np.array_equal(fa.data, fb.data)
    # measured bitrate is the raw y4m rate
    duration = len(video.frames) / video.frame_rate
    expected = ref_path.stat().st_size * 8.0 / duration
    assert res.measured_bitrate == pytest.approx(expected, rel=1e-12)


def test_external_template_missing_bitrate():
    with pytest.raises(ParameterError):
        CodecSpec("external",
                  encode_template="enc {input} {output}",
                  decode_template=COPY_CMD, target_bitrate=1000)


def test_external_template_missing_output():
    with pytest.raises(ParameterError):
        CodecSpec("external",
                  encode_template="enc {input} {bitrate}",
                  decode_template=COPY_CMD, target_bitrate=1000)


def test_external_failing_command(tmp_path, video):
    spec = CodecSpec(
        "external",
        encode_template='python3 -c "import sys; sys.exit(3)" '
                        '{input} {output} {bitrate}',
        decode_template=COPY_CMD, target_bitrate=1000,
    )
    with pytest.raises(CodecError) as exc:
        external_encode_decode(video, spec, scratch_dir=tmp_path)
    assert exc.value.exit_code == 5


def test_external_undecodable_output(tmp_path, video):
    garbage = ('python3 -c "import sys,pathlib; '
               "pathlib.Path(sys.argv[2]).write_bytes(b'junk')\" "
               "{input} {output} {bitrate}")
    spec = CodecSpec("external", encode_template=COPY_CMD,
                     decode_template=garbage, target_bitrate=1000)
    with pytest.raises(CodecError):
        external_encode_decode(video, spec, scratch_dir=tmp_path)


def test_compress_dispatch(video, tmp_path):
    mock = compress(video, CodecSpec("mock", quality=0.5))
    assert mock.codec_echo.startswith("mock:")
    ext = compress(video, CodecSpec("external", encode_template=COPY_CMD,
                                    decode_template=COPY_CMD,
                                    target_bitrate=500_000),
                   scratch_dir=tmp_path)
    assert ext.codec_echo.startswith("external:")
