"""WAV file I/O, channel mixdown, and sample-rate conversion.

All processing downstream of this module assumes 16 kHz mono float
samples in [-1, 1]; :func:`to_processing_format` performs that
conversion and remembers the original rate so results can be rendered
back.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.signal import firwin, resample_poly

from .errors import MalformedWavError, UnsupportedCodecError

PROCESSING_RATE = 16000

# Polyphase anti-aliasing filter design: Kaiser-windowed sinc.
KAISER_BETA = 8.6
ZERO_CROSSINGS = 64

_WAVE_FORMAT_PCM = 1
_WAVE_FORMAT_IEEE_FLOAT = 3


@dataclass
class AudioBuffer:
    """Time-domain audio: interleaved float samples plus a sample rate."""

    samples: np.ndarray
    sample_rate: int
    channels: int = 1

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)

    @property
    def num_frames(self) -> int:
        return len(self.samples) // self.channels

    @property
    def duration(self) -> float:
        return self.num_frames / self.sample_rate

    def validate(self):
        if self.sample_rate <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate}")
        if self.channels < 1:
            raise ValueError(f"channel count must be >= 1, got {self.channels}")
        if len(self.samples) % self.channels != 0:
            raise ValueError("sample count not divisible by channel count")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("audio contains non-finite samples")


def _parse_wav_header(raw: bytes, path):
    """Return (format_tag, channels, rate, bits, data_offset, data_size)."""
    if len(raw) < 12:
        raise MalformedWavError(f"{path}: file too short for a RIFF header")
    if raw[0:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise MalformedWavError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        chunk_id = raw[pos : pos + 4]
        (chunk_size,) = struct.unpack_from("<I", raw, pos + 4)
        body = pos + 8
        if chunk_id == b"fmt ":
            if chunk_size < 16 or body + 16 > len(raw):
                raise MalformedWavError(f"{path}: truncated fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", raw, body)
        elif chunk_id == b"data":
            if body + chunk_size > len(raw):
                raise MalformedWavError(f"{path}: data chunk exceeds file size")
            data = (body, chunk_size)
        # unknown chunks (LIST, fact, ...) are skipped
        pos = body + chunk_size + (chunk_size & 1)

    if fmt is None:
        raise MalformedWavError(f"{path}: missing fmt chunk")
    if data is None:
        raise MalformedWavError(f"{path}: missing data chunk")

    tag, channels, rate, _byte_rate, _block_align, bits = fmt
    if channels < 1 or rate <= 0:
        raise MalformedWavError(f"{path}: invalid fmt fields")
    return tag, channels, rate, bits, data[0], data[1]


def read_wav(path) -> AudioBuffer:
    """Read a PCM16 or float32 WAV file into an AudioBuffer.

    16-bit samples are scaled by 1/32768; float samples are taken as-is.
    Raises FileNotFoundError, MalformedWavError, or UnsupportedCodecError.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such audio file: {path}")
    raw = path.read_bytes()
    tag, channels, rate, bits, off, size = _parse_wav_header(raw, path)

    if tag == _WAVE_FORMAT_PCM and bits == 16:
        count = size // 2
        samples = np.frombuffer(raw, dtype="<i2", count=count, offset=off)
        samples = samples.astype(np.float64) / 32768.0
    elif tag == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        count = size // 4
        samples = np.frombuffer(raw, dtype="<f4", count=count, offset=off)
        samples = samples.astype(np.float64)
    else:
        raise UnsupportedCodecError(
            f"{path}: unsupported codec (format tag {tag}, {bits}-bit); "
            "only 16-bit PCM and 32-bit float are readable"
        )

    samples = samples[: (len(samples) // channels) * channels]
    return AudioBuffer(samples, rate, channels)


def wav_duration(path) -> float:
    """Duration in seconds from the header alone (data is not decoded)."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such audio file: {path}")
    raw = path.read_bytes()
    tag, channels, rate, bits, _off, size = _parse_wav_header(raw, path)
    bytes_per_sample = 2 if bits == 16 else 4
    return size / (bytes_per_sample * channels * rate)


def write_wav(path, buffer: AudioBuffer, bit_depth="16") -> None:
    """Write an AudioBuffer as a canonical 44-byte-header WAV file.

    bit_depth "16": clamp to [-1, 1], round half away from zero to int16.
    bit_depth "32f": IEEE float32 payload, samples stored unmodified.
    """
    buffer.validate()
    bit_depth = str(bit_depth)
    if bit_depth == "16":
        x = np.clip(buffer.samples, -1.0, 1.0) * 32768.0
        ints = np.copysign(np.floor(np.abs(x) + 0.5), x)
        payload = np.clip(ints, -32768, 32767).astype("<i2").tobytes()
        tag, bits, width = _WAVE_FORMAT_PCM, 16, 2
    elif bit_depth == "32f":
        payload = buffer.samples.astype("<f4").tobytes()
        tag, bits, width = _WAVE_FORMAT_IEEE_FLOAT, 32, 4
    else:
        raise ValueError(f"bit_depth must be '16' or '32f', got {bit_depth!r}")

    block_align = width * buffer.channels
    header = b"RIFF"
    header += struct.pack("<I", 36 + len(payload))
    header += b"WAVE"
    header += b"fmt " + struct.pack(
        "<IHHIIHH",
        16,
        tag,
        buffer.channels,
        buffer.sample_rate,
        buffer.sample_rate * block_align,
        block_align,
        bits,
    )
    header += b"data" + struct.pack("<I", len(payload))
    Path(path).write_bytes(header + payload)


def to_mono(buffer: AudioBuffer) -> AudioBuffer:
    """Average channels down to mono; mono input is returned unchanged."""
    if buffer.channels == 1:
        return buffer
    frames = buffer.samples.reshape(-1, buffer.channels)
    return AudioBuffer(frames.mean(axis=1), buffer.sample_rate, 1)


def _design_filter(up: int, down: int) -> np.ndarray:
    m = max(up, down)
    taps = 2 * ZERO_CROSSINGS * m + 1
    return firwin(taps, 1.0 / m, window=("kaiser", KAISER_BETA))


def resample(buffer: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Windowed-sinc polyphase resampling to target_rate.

    Output length is round(n * target / source), preserving duration
    within one sample period.
    """
    if target_rate <= 0:
        raise ValueError(f"target rate must be positive, got {target_rate}")
    if target_rate == buffer.sample_rate:
        return buffer

    ratio = Fraction(target_rate, buffer.sample_rate)
    up, down = ratio.numerator, ratio.denominator
    h = _design_filter(up, down)

    frames = buffer.samples.reshape(-1, buffer.channels)
    n = frames.shape[0]
    # round half up, exactly, in integer arithmetic
    n_out = (2 * n * up + down) // (2 * down)
    out = resample_poly(frames, up, down, axis=0, window=h)
    out = out[:n_out]
    if out.shape[0] < n_out:
        out = np.pad(out, ((0, n_out - out.shape[0]), (0, 0)))
    return AudioBuffer(out.reshape(-1), target_rate, buffer.channels)


def to_processing_format(buffer: AudioBuffer, target_rate: int = PROCESSING_RATE):
    """Convert to mono at the processing rate; returns (converted, original_rate)."""
    original_rate = buffer.sample_rate
    return resample(to_mono(buffer), target_rate), original_rate
