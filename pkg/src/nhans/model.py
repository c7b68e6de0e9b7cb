"""Conditioned mask model: two reference encoders driving an enhancer.

A positive and a negative reference recording are each reduced to an
embedding vector; the enhancement network sees the noisy log-magnitude
frames (with temporal context) plus both embeddings in every residual
block and emits a ratio mask. Reconstruction reuses the noisy phase.

Plain denoising is the special case where the positive reference is a
short silent recording, so the same code path serves all three tasks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .audio_io import AudioBuffer, PROCESSING_RATE
from .dsp import Spectrogram, StftParams, istft, log_magnitude, stft
from .errors import ShapeError, TaskMismatchError

MUTE_SECONDS = 0.1

# log-magnitude features span roughly [-16, 4]; scaling them to O(1) keeps
# random-init activations out of sigmoid saturation
FEATURE_SCALE = 1.0 / 16.0

TASK_KINDS = ("denoiser", "selective_denoiser", "separator")

# encoder names are also the checkpoint key prefixes; keep them stable
_POSITIVE = "positive"
_NEGATIVE = "negative"


def mute_recording(sample_rate: int = PROCESSING_RATE) -> AudioBuffer:
    """Silent positive reference standing for "nothing to preserve"."""
    n = int(round(MUTE_SECONDS * sample_rate))
    return AudioBuffer(np.zeros(n), sample_rate)


@dataclass(frozen=True)
class ModelConfig:
    hidden_size: int = 256
    num_blocks: int = 4
    context_frames: int = 5
    embedding_dim: int = 64

    def validate(self):
        for name in ("hidden_size", "num_blocks", "context_frames", "embedding_dim"):
            if getattr(self, name) < 1 and name != "context_frames":
                raise ValueError(f"{name} must be positive")
        if self.context_frames < 0:
            raise ValueError("context_frames must be non-negative")


@dataclass
class EmbeddingVector:
    values: np.ndarray
    polarity: str  # "positive" or "negative"

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 1:
            raise ShapeError(f"embedding must be 1-D, got shape {self.values.shape}")
        if self.polarity not in (_POSITIVE, _NEGATIVE):
            raise ValueError(f"unknown polarity {self.polarity!r}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("embedding contains non-finite values")


class ReferenceEncoder:
    """Per-frame encoder pooled over time into one embedding vector."""

    def __init__(self, polarity, config: ModelConfig, bins, rng, dtype=np.float32):
        self.polarity = polarity
        name = polarity + "_encoder"
        h = config.hidden_size
        self.in_proj = ad.DenseLayer.he_uniform(bins, h, rng, name + ".in_proj", dtype)
        self.blocks = [
            ad.ResidualBlock(h, 0, rng, f"{name}.block{i}", dtype)
            for i in range(config.num_blocks)
        ]
        self.out_proj = ad.DenseLayer.glorot_uniform(
            h, config.embedding_dim, rng, name + ".out_proj", dtype
        )

    def forward(self, frames: ad.Tensor) -> ad.Tensor:
        h = ad.relu(ad.dense_forward(self.in_proj, frames))
        for block in self.blocks:
            h = block.forward(h)
        h = ad.dense_forward(self.out_proj, h)
        return ad.mean_pool_frames(h)

    def parameters(self):
        out = self.in_proj.parameters()
        for block in self.blocks:
            out += block.parameters()
        return out + self.out_proj.parameters()


class EnhancementModel:
    """Reference encoders plus the conditioned mask estimator for one task."""

    def __init__(self, task: str, config: ModelConfig | None = None,
                 stft_params: StftParams | None = None, seed: int = 0,
                 dtype=np.float32):
        if task not in TASK_KINDS:
            raise ValueError(f"unknown task {task!r}, expected one of {TASK_KINDS}")
        self.task = task
        self.config = config or ModelConfig()
        self.config.validate()
        self.stft_params = stft_params or StftParams()
        self.dtype = np.dtype(dtype)

        bins = self.stft_params.bins
        h = self.config.hidden_size
        cond_width = 2 * self.config.embedding_dim
        window = 2 * self.config.context_frames + 1
        rng = np.random.default_rng(seed)

        # construction order is fixed so a seed fully determines every weight
        self.plus_encoder = ReferenceEncoder(_POSITIVE, self.config, bins, rng, dtype)
        self.minus_encoder = ReferenceEncoder(_NEGATIVE, self.config, bins, rng, dtype)
        self.in_proj = ad.DenseLayer.he_uniform(
            window * bins, h, rng, "enhancer.in_proj", dtype
        )
        self.blocks = [
            ad.ResidualBlock(h, cond_width, rng, f"enhancer.block{i}", dtype)
            for i in range(self.config.num_blocks)
        ]
        self.mask_head = ad.DenseLayer.glorot_uniform(
            h, bins, rng, "enhancer.mask_head", dtype
        )

    def parameters(self):
        out = self.plus_encoder.parameters() + self.minus_encoder.parameters()
        out += self.in_proj.parameters()
        for block in self.blocks:
            out += block.parameters()
        return out + self.mask_head.parameters()

    def named_parameters(self):
        return {p.name: p for p in self.parameters()}

    # -- graph builders (shared by inference and training) --

    def _features(self, rec: AudioBuffer) -> np.ndarray:
        # activations run in float64 regardless of parameter dtype; mixed
        # matmuls promote, which keeps forward results independent of how
        # many frames share a batch
        logmag = log_magnitude(stft(rec, self.stft_params))
        return logmag * FEATURE_SCALE

    def _pad_reference(self, rec: AudioBuffer) -> AudioBuffer:
        if rec.num_frames == 0:
            raise ValueError("reference recording is empty")
        min_samples = int(round(MUTE_SECONDS * rec.sample_rate))
        if rec.num_frames >= min_samples:
            return rec
        padded = np.zeros(min_samples)
        padded[: rec.num_frames] = rec.samples
        return AudioBuffer(padded, rec.sample_rate)

    def _check_rate(self, buffer: AudioBuffer, what):
        if buffer.sample_rate != self.stft_params.sample_rate:
            raise ShapeError(
                f"{what} is at {buffer.sample_rate} Hz but the model expects "
                f"{self.stft_params.sample_rate} Hz"
            )
        if buffer.channels != 1:
            raise ShapeError(f"{what} must be mono")

    def embedding_graph(self, rec: AudioBuffer, polarity: str) -> ad.Tensor:
        self._check_rate(rec, f"{polarity} reference")
        encoder = self.plus_encoder if polarity == _POSITIVE else self.minus_encoder
        feats = self._features(self._pad_reference(rec))
        return encoder.forward(ad.constant(feats))

    def mask_graph(self, noisy_logmag: np.ndarray, plus_emb: ad.Tensor,
                   minus_emb: ad.Tensor) -> ad.Tensor:
        bins = self.stft_params.bins
        noisy_logmag = np.asarray(noisy_logmag)
        if noisy_logmag.ndim != 2 or noisy_logmag.shape[1] != bins:
            raise ShapeError(
                f"expected (frames x {bins}) log-magnitude input, got "
                f"{noisy_logmag.shape}"
            )
        frames = noisy_logmag.shape[0]
        c = self.config.context_frames
        scaled = np.asarray(noisy_logmag, dtype=np.float64) * FEATURE_SCALE
        windows = _context_windows(scaled, c)

        cond = ad.concat([plus_emb, minus_emb], axis=0)
        cond_rows = ad.broadcast_rows(cond, frames)
        h = ad.relu(ad.dense_forward(self.in_proj, ad.constant(windows)))
        for block in self.blocks:
            h = block.forward(h, cond_rows)
        return ad.sigmoid(ad.dense_forward(self.mask_head, h))


def _context_windows(frames: np.ndarray, context: int) -> np.ndarray:
    """Stack each frame with its ±context neighbours, edges reflected."""
    if context == 0:
        return frames
    t = frames.shape[0]
    # reflect needs at least context+1 frames; repeat edges for tiny inputs
    mode = "reflect" if t > context else "edge"
    padded = np.pad(frames, ((context, context), (0, 0)), mode=mode)
    width = 2 * context + 1
    view = np.lib.stride_tricks.sliding_window_view(padded, width, axis=0)
    return view.transpose(0, 2, 1).reshape(t, width * frames.shape[1])


def encode_reference(model: EnhancementModel, rec: AudioBuffer,
                     polarity: str) -> EmbeddingVector:
    if polarity not in (_POSITIVE, _NEGATIVE):
        raise ValueError(f"unknown polarity {polarity!r}")
    values = model.embedding_graph(rec, polarity).value
    return EmbeddingVector(values.copy(), polarity)


def estimate_mask(model: EnhancementModel, noisy_logmag: np.ndarray,
                  plus_emb: EmbeddingVector, minus_emb: EmbeddingVector) -> np.ndarray:
    if plus_emb.polarity != _POSITIVE or minus_emb.polarity != _NEGATIVE:
        raise ValueError("embedding polarities do not match their arguments")
    d = model.config.embedding_dim
    if plus_emb.values.shape != (d,) or minus_emb.values.shape != (d,):
        raise ShapeError(f"embeddings must have shape ({d},)")
    plus = ad.constant(np.asarray(plus_emb.values, dtype=np.float64))
    minus = ad.constant(np.asarray(minus_emb.values, dtype=np.float64))
    return model.mask_graph(noisy_logmag, plus, minus).value


def enhance(model: EnhancementModel, noisy: AudioBuffer,
            plus_rec: AudioBuffer | None, minus_rec: AudioBuffer,
            mask_override: np.ndarray | None = None) -> AudioBuffer:
    """Run the full pipeline; mask_override substitutes the network output."""
    if noisy.num_frames == 0:
        raise ValueError("noisy input is empty")
    if minus_rec is None or minus_rec.num_frames == 0:
        raise ValueError("negative reference is empty")
    model._check_rate(noisy, "noisy input")
    if plus_rec is None:
        plus_rec = mute_recording(model.stft_params.sample_rate)

    spec = stft(noisy, model.stft_params)
    if mask_override is not None:
        mask = np.broadcast_to(
            np.asarray(mask_override, dtype=np.float64),
            spec.data.shape,
        )
    else:
        plus_emb = model.embedding_graph(plus_rec, _POSITIVE)
        minus_emb = model.embedding_graph(minus_rec, _NEGATIVE)
        mask = model.mask_graph(log_magnitude(spec), plus_emb, minus_emb).value

    masked = spec.data * mask  # noisy phase kept
    out = istft(Spectrogram(masked, spec.params, spec.num_samples))
    samples = out.samples[: noisy.num_frames]
    peak = np.max(np.abs(samples)) if samples.size else 0.0
    if peak > 1.0:
        samples = samples / peak
    return AudioBuffer(samples, noisy.sample_rate)


def denoise(model: EnhancementModel, noisy: AudioBuffer,
            minus_rec: AudioBuffer) -> AudioBuffer:
    if model.task == "separator":
        raise TaskMismatchError("denoise needs a denoiser model, got a separator")
    return enhance(model, noisy, mute_recording(model.stft_params.sample_rate),
                   minus_rec)


def selective_denoise(model: EnhancementModel, noisy: AudioBuffer,
                      plus_rec: AudioBuffer, minus_rec: AudioBuffer) -> AudioBuffer:
    if model.task == "separator":
        raise TaskMismatchError(
            "selective_denoise needs a denoiser model, got a separator"
        )
    if plus_rec is None or plus_rec.num_frames == 0:
        raise ValueError("positive reference is empty")
    return enhance(model, noisy, plus_rec, minus_rec)


def separate(model: EnhancementModel, mixture: AudioBuffer,
             target_ref: AudioBuffer, interference_ref: AudioBuffer) -> AudioBuffer:
    if model.task != "separator":
        raise TaskMismatchError(f"separate needs a separator model, got {model.task}")
    if target_ref is None or target_ref.num_frames == 0:
        raise ValueError("target reference is empty")
    return enhance(model, mixture, target_ref, interference_ref)
