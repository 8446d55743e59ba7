"""Compressed video variants at controlled rates.

Two paths: a built-in mock transform codec (8x8 block DCT + uniform
quantization) whose bitrate is the empirical entropy of the quantized
coefficients, and an external encoder driven by command templates for real
codecs.
"""

from __future__ import annotations

import os
import shlex
import subprocess
import tempfile
import uuid
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.fft

from .errors import CodecError, ParameterError
from .imaging import ImageTensor, VideoFrames, read_y4m, write_y4m

DELTA_MIN = 1.0 / 255.0
DELTA_MAX = 0.25
LEVEL_SHIFT = 0.5  # centers pixels before the DCT so mid-gray is all-zero
# floor on bits/symbol so even a constant video reports a positive rate
ENTROPY_FLOOR = 2.0 ** -10

SCRATCH_ENV = "UAPG_SCRATCH"

_PLACEHOLDERS = ("{input}", "{output}", "{bitrate}")


@dataclass(frozen=True)
class CodecSpec:
    """Either a mock quality point or an external encode/decode template
    pair with a target bitrate."""

    kind: str  # "mock" | "external"
    quality: float | None = None
    encode_template: str | None = None
    decode_template: str | None = None
    target_bitrate: float | None = None

    def __post_init__(self):
        if self.kind == "mock":
            if self.quality is None or not 0.0 < self.quality <= 1.0:
                raise ParameterError(
                    f"mock codec quality must be in (0, 1], got {self.quality}"
                )
        elif self.kind == "external":
            for tmpl, label in ((self.encode_template, "encode_template"),
                                (self.decode_template, "decode_template")):
                if not tmpl:
                    raise ParameterError(f"external codec needs {label}")
            for ph in _PLACEHOLDERS:
                if ph not in self.encode_template:
                    raise ParameterError(
                        f"encode_template missing placeholder {ph}"
                    )
            for ph in ("{input}", "{output}"):
                if ph not in self.decode_template:
                    raise ParameterError(
                        f"decode_template missing placeholder {ph}"
                    )
            if self.target_bitrate is None or self.target_bitrate <= 0:
                raise ParameterError(
                    "external codec needs a positive target_bitrate"
                )
        else:
            raise ParameterError(f"unknown codec kind {self.kind!r}")

    def label(self) -> str:
        if self.kind == "mock":
            return f"mock:q={self.quality!r}"
        return f"external:b={self.target_bitrate!r}"

    def cache_token(self) -> str:
        if self.kind == "mock":
            return f"mock|q={self.quality!r}"
        return (f"external|{self.encode_template}|{self.decode_template}"
                f"|b={self.target_bitrate!r}")


@dataclass
class CompressedResult:
    video: VideoFrames
    measured_bitrate: float
    codec_echo: str


def _pad_to_blocks(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    ph, pw = (-h) % 8, (-w) % 8
    if ph or pw:
        plane = np.pad(plane, ((0, ph), (0, pw)), mode="edge")
    return plane


def mock_encode_decode(video: VideoFrames, quality: float) -> CompressedResult:
    """8x8 orthonormal DCT-II, uniform quantization with step
    delta = (1-q)*DELTA_MAX + q*DELTA_MIN, dequantize, inverse DCT, clamp.

    The bitrate is the Shannon entropy (bits/symbol) of the pooled quantized
    coefficient stream times coefficients/frame times frame rate: a monotone,
    content-sensitive rate without a real entropy coder.
    """
    if not 0.0 < quality <= 1.0:
        raise ParameterError(f"quality must be in (0, 1], got {quality}")
    delta = (1.0 - quality) * DELTA_MAX + quality * DELTA_MIN
    decoded = []
    symbol_chunks = []
    symbols_per_frame = None
    for frame in video.frames:
        channels = []
        frame_symbols = 0
        for c in range(frame.channels):
            plane = _pad_to_blocks(frame.data[:, :, c] - LEVEL_SHIFT)
            ph, pw = plane.shape
            blocks = plane.reshape(ph // 8, 8, pw // 8, 8)
            coefs = scipy.fft.dctn(blocks, axes=(1, 3), norm="ortho")
            q = np.round(coefs / delta)
            symbol_chunks.append(q.astype(np.int64).ravel())
            frame_symbols += q.size
            recon = scipy.fft.idctn(q * delta, axes=(1, 3), norm="ortho")
            plane_out = recon.reshape(ph, pw)[:frame.height, :frame.width]
            channels.append(plane_out + LEVEL_SHIFT)
        symbols_per_frame = frame_symbols
        decoded.append(
            ImageTensor(np.clip(np.stack(channels, axis=2), 0.0, 1.0))
        )
    stream = np.concatenate(symbol_chunks)
    _, counts = np.unique(stream, return_counts=True)
    probs = counts / stream.size
    bits_per_symbol = float(-(probs * np.log2(probs)).sum())
    bits_per_symbol = max(bits_per_symbol, ENTROPY_FLOOR)
    bitrate = bits_per_symbol * symbols_per_frame * video.frame_rate
    return CompressedResult(
        VideoFrames(tuple(decoded), video.rate_num, video.rate_den),
        bitrate, f"mock:dct8x8:q={quality!r}:delta={delta!r}",
    )


def _format_argv(template: str, **subs) -> list[str]:
    # split first, substitute per token: paths with spaces stay single args
    return [tok.format(**subs) for tok in shlex.split(template)]


def _run(argv: list[str]) -> subprocess.CompletedProcess:
    try:
        return subprocess.run(argv, capture_output=True, text=True)
    except OSError as e:
        raise CodecError(f"cannot run {argv[0]!r}: {e}") from e


def external_encode_decode(video: VideoFrames, spec: CodecSpec,
                           scratch_dir=None) -> CompressedResult:
    """Round-trip through an external encoder/decoder command pair.

    The measured bitrate comes from the produced file size (encoders miss
    their targets), not from the requested value.
    """
    if spec.kind != "external":
        raise ParameterError("external_encode_decode needs an external spec")
    base = scratch_dir or os.environ.get(SCRATCH_ENV) or tempfile.gettempdir()
    work = Path(base) / f"uapg-codec-{uuid.uuid4().hex}"
    work.mkdir(parents=True)
    try:
        src = work / "input.y4m"
        enc = work / "encoded.bin"
        dec = work / "decoded.y4m"
        # 4:4:4 scratch input keeps chroma lossless; encoders that need
        # 4:2:0 can convert via their template flags
        write_y4m(src, video, subsampling="444")
        bitrate_arg = (str(int(spec.target_bitrate))
                       if float(spec.target_bitrate).is_integer()
                       else str(spec.target_bitrate))
        enc_argv = _format_argv(spec.encode_template, input=str(src),
                                output=str(enc), bitrate=bitrate_arg)
        proc = _run(enc_argv)
        if proc.returncode != 0 or not enc.exists() or enc.stat().st_size == 0:
            raise CodecError(
                f"encoder failed (exit {proc.returncode})",
                diagnostics=f"cmd: {enc_argv}\nstderr: {proc.stderr[-2000:]}",
            )
        duration = len(video.frames) / video.frame_rate
        measured = enc.stat().st_size * 8.0 / duration
        dec_argv = _format_argv(spec.decode_template, input=str(enc),
                                output=str(dec), bitrate=bitrate_arg)
        proc = _run(dec_argv)
        if proc.returncode != 0 or not dec.exists():
            raise CodecError(
                f"decoder failed (exit {proc.returncode})",
                diagnostics=f"cmd: {dec_argv}\nstderr: {proc.stderr[-2000:]}",
            )
        try:
            out = read_y4m(dec)
        except Exception as e:
            raise CodecError(f"decoded output unreadable: {e}") from e
        if (len(out.frames) != len(video.frames)
                or out.height != video.height or out.width != video.width):
            raise CodecError(
                f"decoded geometry {len(out.frames)}x{out.height}x{out.width}"
                f" != input {len(video.frames)}x{video.height}x{video.width}"
            )
        return CompressedResult(out, measured, f"external:{enc_argv[0]}")
    finally:
        for f in sorted(work.glob("*")):
            f.unlink(missing_ok=True)
        work.rmdir()


def compress(video: VideoFrames, spec: CodecSpec,
             scratch_dir=None) -> CompressedResult:
    if spec.kind == "mock":
        return mock_encode_decode(video, spec.quality)
    return external_encode_decode(video, spec, scratch_dir)
