"""STFT analysis/synthesis and the filterbank math used by the model and metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .audio_io import AudioBuffer
from .errors import ShapeError

# magnitude floor applied before taking logs; keeps silent frames finite
LOG_EPS = 1e-7


@dataclass(frozen=True)
class StftParams:
    fft_size: int = 512
    hop: int = 128
    sample_rate: int = 16000

    def __post_init__(self):
        if self.fft_size < 2 or self.fft_size & (self.fft_size - 1):
            raise ValueError(f"fft_size must be a power of two, got {self.fft_size}")
        if self.hop <= 0 or self.fft_size % self.hop:
            raise ValueError(f"hop must divide fft_size, got {self.hop}")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    @property
    def bins(self) -> int:
        return self.fft_size // 2 + 1

    def window(self) -> np.ndarray:
        # periodic Hann: exact constant overlap-add at fft_size/4 hops
        n = np.arange(self.fft_size)
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / self.fft_size)


@dataclass
class Spectrogram:
    data: np.ndarray  # (frames, bins) complex
    params: StftParams
    num_samples: int

    @property
    def frames(self) -> int:
        return self.data.shape[0]


def frame_count(num_samples: int, hop: int) -> int:
    return 1 + math.ceil(num_samples / hop)


def stft(buffer: AudioBuffer, params: StftParams | None = None) -> Spectrogram:
    """Centered STFT with reflect padding; frame count = 1 + ceil(n/hop)."""
    params = params or StftParams()
    if buffer.channels != 1:
        raise ShapeError("stft expects mono audio")
    x = np.asarray(buffer.samples, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot take the STFT of an empty buffer")
    original = x.size
    if x.size < params.fft_size:
        # analysis needs one full window; istft trims back to the original
        x = np.pad(x, (0, params.fft_size - x.size))
    n = x.size

    half = params.fft_size // 2
    frames = frame_count(n, params.hop)
    right = (frames - 1) * params.hop + half - n
    padded = np.pad(x, (half, max(right, 0)), mode="reflect")

    window = params.window()
    strided = np.lib.stride_tricks.sliding_window_view(padded, params.fft_size)
    segments = strided[:: params.hop][:frames] * window
    data = np.fft.rfft(segments, n=params.fft_size, axis=1)
    return Spectrogram(data, params, original)


def istft(spec: Spectrogram) -> AudioBuffer:
    """Weighted overlap-add inverse; istft(stft(x)) == x within 1e-6."""
    params = spec.params
    if spec.data.ndim != 2 or spec.data.shape[1] != params.bins:
        raise ShapeError(
            f"spectrogram has {spec.data.shape[1]} bins, params imply {params.bins}"
        )
    window = params.window()
    segments = np.fft.irfft(spec.data, n=params.fft_size, axis=1) * window

    frames = spec.data.shape[0]
    total = (frames - 1) * params.hop + params.fft_size
    out = np.zeros(total)
    norm = np.zeros(total)
    sq = window * window
    for i in range(frames):
        lo = i * params.hop
        out[lo : lo + params.fft_size] += segments[i]
        norm[lo : lo + params.fft_size] += sq
    valid = norm > 1e-12
    out[valid] /= norm[valid]

    half = params.fft_size // 2
    out = out[half : half + spec.num_samples]
    if out.size < spec.num_samples:
        out = np.pad(out, (0, spec.num_samples - out.size))
    return AudioBuffer(out, params.sample_rate, 1)


def log_magnitude(spec: Spectrogram) -> np.ndarray:
    """Natural-log magnitude features, floored at ln(LOG_EPS)."""
    return np.log(np.maximum(np.abs(spec.data), LOG_EPS))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, params: StftParams) -> np.ndarray:
    """Triangular mel filters (n_mels x bins) spanning 0 Hz to Nyquist."""
    if n_mels < 2:
        raise ValueError("need at least 2 mel bands")
    if n_mels > params.bins:
        raise ValueError(f"{n_mels} mel bands exceed {params.bins} FFT bins")

    nyquist = params.sample_rate / 2.0
    mel_points = np.linspace(0.0, hz_to_mel(nyquist), n_mels + 2)
    hz_points = mel_to_hz(mel_points)
    bin_freqs = np.arange(params.bins) * params.sample_rate / params.fft_size

    bank = np.zeros((n_mels, params.bins))
    for i in range(n_mels):
        lo, center, hi = hz_points[i], hz_points[i + 1], hz_points[i + 2]
        up = (bin_freqs - lo) / (center - lo)
        down = (hi - bin_freqs) / (hi - center)
        bank[i] = np.maximum(0.0, np.minimum(up, down))
    return bank


def mel_center_freqs(n_mels: int, params: StftParams) -> np.ndarray:
    nyquist = params.sample_rate / 2.0
    mel_points = np.linspace(0.0, hz_to_mel(nyquist), n_mels + 2)
    return mel_to_hz(mel_points[1:-1])


def dct_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Orthonormal DCT-II basis rows 0..n_out-1."""
    k = np.arange(n_out)[:, None]
    t = np.arange(n_in)[None, :]
    mat = np.cos(np.pi * k * (2 * t + 1) / (2.0 * n_in))
    mat *= np.sqrt(2.0 / n_in)
    mat[0] *= np.sqrt(0.5)
    return mat


def dct_ii(x: np.ndarray, n_out: int) -> np.ndarray:
    """Orthonormal DCT-II of a vector, truncated to n_out coefficients."""
    x = np.asarray(x, dtype=np.float64)
    if n_out > x.shape[-1]:
        raise ValueError("n_out exceeds input length")
    return dct_matrix(x.shape[-1], n_out) @ x


THIRD_OCTAVE_BANDS = 15
THIRD_OCTAVE_LOWEST_HZ = 150.0


def third_octave_bands(params: StftParams):
    """One-third-octave band matrix for 10 kHz analysis.

    Returns (matrix, centers): matrix is (15 x bins) with ones marking the
    bins inside each band, so band energies are matrix @ |X|**2.
    """
    if params.sample_rate != 10000:
        raise ValueError("one-third-octave analysis is defined at 10 kHz")
    k = np.arange(THIRD_OCTAVE_BANDS)
    centers = THIRD_OCTAVE_LOWEST_HZ * 2.0 ** (k / 3.0)
    lo = centers / 2.0 ** (1.0 / 6.0)
    hi = centers * 2.0 ** (1.0 / 6.0)
    bin_freqs = np.arange(params.bins) * params.sample_rate / params.fft_size

    matrix = ((bin_freqs[None, :] >= lo[:, None]) & (bin_freqs[None, :] < hi[:, None]))
    return matrix.astype(np.float64), centers
