"""SNR-controlled mixing and corpus manifest management.

Mixing is defined on full-utterance RMS. Noise shorter than the clean
material is looped with a short crossfade; noise longer is truncated.
Reference recordings default to time regions disjoint from the mixed
segment so the model never sees the literal mixed noise as its cue.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio_io import AudioBuffer, wav_duration
from .errors import CorpusError, ShapeError

CROSSFADE_SECONDS = 0.01

# reference clips aim for this many seconds when carved from a noise file
REFERENCE_SECONDS = 1.0

SPLIT_NAMES = ("train", "dev", "test")


def rms(samples: np.ndarray) -> float:
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size == 0:
        return 0.0
    return float(np.sqrt(np.mean(samples * samples)))


def loop_to_length(noise: AudioBuffer, num_samples: int) -> AudioBuffer:
    """Truncate, or repeat with a 10 ms crossfade, to num_samples."""
    x = np.asarray(noise.samples, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot loop an empty buffer")
    if x.size >= num_samples:
        return AudioBuffer(x[:num_samples].copy(), noise.sample_rate)

    cf = int(round(CROSSFADE_SECONDS * noise.sample_rate))
    cf = min(cf, x.size - 1)
    out = x.copy()
    while out.size < num_samples:
        if cf:
            ramp = np.linspace(0.0, 1.0, cf, endpoint=False)
            blended = out[-cf:] * (1.0 - ramp) + x[:cf] * ramp
            out = np.concatenate([out[:-cf], blended, x[cf:]])
        else:
            out = np.concatenate([out, x])
    return AudioBuffer(out[:num_samples], noise.sample_rate)


def mix_at_snr(clean: AudioBuffer, noise: AudioBuffer, snr_db: float):
    """Mix noise into clean at the requested SNR; returns (noisy, gain).

    The gain is computed against the noise after fitting it to clean's
    length, so the achieved SNR matches the request within 1e-6 dB.
    """
    if clean.num_frames == 0 or noise.num_frames == 0:
        raise ValueError("mix_at_snr needs non-empty inputs")
    if clean.sample_rate != noise.sample_rate:
        raise ShapeError(
            f"sample rates differ: {clean.sample_rate} vs {noise.sample_rate}"
        )
    fitted = loop_to_length(noise, clean.num_frames)
    clean_rms = rms(clean.samples)
    noise_rms = rms(fitted.samples)
    if clean_rms == 0.0:
        raise ValueError("clean input has zero RMS")
    if noise_rms == 0.0:
        raise ValueError("noise input has zero RMS")
    gain = clean_rms / (noise_rms * 10.0 ** (snr_db / 20.0))
    noisy = AudioBuffer(
        np.asarray(clean.samples, dtype=np.float64) + gain * fitted.samples,
        clean.sample_rate,
    )
    return noisy, gain


@dataclass
class MixTuple:
    """One training/evaluation item: mixture, references, and the target."""

    noisy: AudioBuffer
    plus_rec: AudioBuffer
    minus_rec: AudioBuffer
    target: AudioBuffer
    minus_snr_db: float
    plus_snr_db: float | None = None  # absent for plain denoising
    plus_gain: float | None = None
    minus_gain: float = 0.0
    tag: str | None = None

    def validate(self):
        rate = self.noisy.sample_rate
        for name in ("plus_rec", "minus_rec", "target"):
            buf = getattr(self, name)
            if buf.sample_rate != rate:
                raise ShapeError(f"{name} rate {buf.sample_rate} != noisy rate {rate}")


def carve_reference(noise: AudioBuffer, mixed_samples: int,
                    reference_mode: str = "disjoint") -> AudioBuffer:
    """Pick the reference clip for a noise that was mixed over [0, mixed).

    "disjoint" uses material after the mixed region when the file is long
    enough; "shared" (and the short-file fallback) reuses the whole clip.
    """
    if reference_mode not in ("disjoint", "shared"):
        raise ValueError(f"unknown reference_mode {reference_mode!r}")
    x = np.asarray(noise.samples, dtype=np.float64)
    ref_len = int(round(REFERENCE_SECONDS * noise.sample_rate))
    if reference_mode == "disjoint" and x.size >= mixed_samples + ref_len:
        start = mixed_samples
        return AudioBuffer(x[start : start + ref_len].copy(), noise.sample_rate)
    return AudioBuffer(x.copy(), noise.sample_rate)


def make_selective_tuple(clean: AudioBuffer, pos_noise: AudioBuffer,
                         neg_noise: AudioBuffer, plus_snr_db: float,
                         minus_snr_db: float,
                         reference_mode: str = "disjoint") -> MixTuple:
    """Mix both noises into clean; the positive one also joins the target.

    A silent pos_noise degenerates to a plain denoising tuple.
    """
    if clean.num_frames == 0 or neg_noise.num_frames == 0:
        raise ValueError("clean and neg_noise must be non-empty")
    n = clean.num_frames
    clean_samples = np.asarray(clean.samples, dtype=np.float64)

    pos_silent = pos_noise.num_frames == 0 or rms(pos_noise.samples) == 0.0
    if pos_silent:
        pos_contrib = np.zeros(n)
        plus_gain = None
        plus_snr_out = None
        plus_rec = AudioBuffer(np.zeros(max(pos_noise.num_frames, 1)),
                               clean.sample_rate)
    else:
        _, plus_gain = mix_at_snr(clean, pos_noise, plus_snr_db)
        pos_fit = loop_to_length(pos_noise, n)
        pos_contrib = plus_gain * pos_fit.samples
        plus_snr_out = plus_snr_db
        plus_rec = carve_reference(pos_noise, n, reference_mode)

    _, minus_gain = mix_at_snr(clean, neg_noise, minus_snr_db)
    neg_fit = loop_to_length(neg_noise, n)
    neg_contrib = minus_gain * neg_fit.samples
    minus_rec = carve_reference(neg_noise, n, reference_mode)

    target = AudioBuffer(clean_samples + pos_contrib, clean.sample_rate)
    noisy = AudioBuffer(target.samples + neg_contrib, clean.sample_rate)
    tup = MixTuple(
        noisy=noisy,
        plus_rec=plus_rec,
        minus_rec=minus_rec,
        target=target,
        minus_snr_db=minus_snr_db,
        plus_snr_db=plus_snr_out,
        plus_gain=plus_gain,
        minus_gain=minus_gain,
    )
    tup.validate()
    return tup


def make_denoising_tuple(clean: AudioBuffer, noise: AudioBuffer, snr_db: float,
                         reference_mode: str = "disjoint") -> MixTuple:
    """Plain denoising item: nothing to preserve, one noise to suppress."""
    silent = AudioBuffer(np.zeros(0), clean.sample_rate)
    return make_selective_tuple(clean, silent, noise, 0.0, snr_db, reference_mode)


def make_separation_tuple(speaker_a: AudioBuffer, speaker_b: AudioBuffer,
                          ref_a: AudioBuffer, ref_b: AudioBuffer,
                          gender_a: str | None = None,
                          gender_b: str | None = None) -> MixTuple:
    """Two-speaker mixture at 0 dB relative level; speaker_a is the target."""
    for name, buf, mixed in (("ref_a", ref_a, speaker_a), ("ref_b", ref_b, speaker_b)):
        if buf.num_frames == 0:
            raise ValueError(f"{name} is empty")
        if buf.num_frames == mixed.num_frames and np.array_equal(
            buf.samples, mixed.samples
        ):
            raise ValueError(f"{name} is the same utterance as its mixture component")

    n = max(speaker_a.num_frames, speaker_b.num_frames)

    def fit(buf):
        x = np.asarray(buf.samples, dtype=np.float64)
        return np.pad(x, (0, n - x.size)) if x.size < n else x[:n]

    a = fit(speaker_a)
    b = fit(speaker_b)
    rms_a, rms_b = rms(a), rms(b)
    # 0 dB relative level; a silent component passes through unscaled
    gain = rms_a / rms_b if rms_a > 0.0 and rms_b > 0.0 else 1.0
    noisy = AudioBuffer(a + gain * b, speaker_a.sample_rate)

    tag = None
    if gender_a and gender_b:
        tag = "f+m" if gender_a != gender_b else f"{gender_a}+{gender_b}"

    tup = MixTuple(
        noisy=noisy,
        plus_rec=ref_a,
        minus_rec=ref_b,
        target=AudioBuffer(a, speaker_a.sample_rate),
        minus_snr_db=0.0,
        plus_snr_db=None,
        plus_gain=None,
        minus_gain=gain,
        tag=tag,
    )
    tup.validate()
    return tup


@dataclass
class ManifestEntry:
    path: str
    duration: float
    role: str


@dataclass
class CorpusManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    split: str = "all"
    seed: int | None = None

    def __len__(self):
        return len(self.entries)

    def paths(self):
        return [e.path for e in self.entries]


def scan_corpus(root, role: str) -> CorpusManifest:
    """Recursively collect WAV files under root into a manifest.

    role "speaker" records each file's parent directory name as its role,
    which is how speaker identities are laid out on disk.
    """
    root = Path(root)
    if not root.is_dir():
        raise CorpusError(f"not a directory: {root}")
    paths = sorted(p for p in root.rglob("*.wav") if p.is_file())
    if not paths:
        raise CorpusError(f"no WAV files under {root}")
    entries = []
    for p in paths:
        entry_role = p.parent.name if role == "speaker" else role
        entries.append(ManifestEntry(str(p), wav_duration(p), entry_role))
    return CorpusManifest(entries)


def split_manifest(manifest: CorpusManifest, ratios=(0.8, 0.1, 0.1),
                   seed: int = 0) -> dict[str, CorpusManifest]:
    """Deterministic train/dev/test partition of a manifest.

    Sizes use largest-remainder rounding, so (0.8, 0.1, 0.1) over 100
    files gives exactly 80/10/10.
    """
    if len(ratios) != len(SPLIT_NAMES):
        raise ValueError(f"need {len(SPLIT_NAMES)} ratios")
    if any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ValueError("ratios must be non-negative and sum to 1")

    entries = sorted(manifest.entries, key=lambda e: e.path)
    n = len(entries)
    order = np.random.default_rng(seed).permutation(n)

    exact = [r * n for r in ratios]
    counts = [int(x) for x in exact]
    while sum(counts) < n:
        fractions = [x - c for x, c in zip(exact, counts)]
        counts[fractions.index(max(fractions))] += 1

    out = {}
    start = 0
    for name, count in zip(SPLIT_NAMES, counts):
        picked = sorted(order[start : start + count])
        out[name] = CorpusManifest(
            [entries[i] for i in picked], split=name, seed=seed
        )
        start += count
    return out


def split_manifest_by_role(manifest: CorpusManifest, ratios=(0.8, 0.1, 0.1),
                           seed: int = 0) -> dict[str, CorpusManifest]:
    """Split each role's files independently, then merge per split name.

    Keeps every role represented in every split when its file count allows,
    which matters for speaker corpora: held-out evaluation needs at least
    two utterances per speaker (one to mix, one to use as the reference).
    """
    by_role: dict[str, list[ManifestEntry]] = {}
    for entry in manifest.entries:
        by_role.setdefault(entry.role, []).append(entry)
    merged: dict[str, CorpusManifest] = {}
    for role in sorted(by_role):
        parts = split_manifest(CorpusManifest(by_role[role]), ratios, seed)
        for split_name, part in parts.items():
            merged.setdefault(
                split_name, CorpusManifest([], split=split_name, seed=seed)
            ).entries.extend(part.entries)
    return merged


def write_manifest(path, manifests: dict[str, CorpusManifest]) -> None:
    lines = []
    for split_name, manifest in manifests.items():
        for e in manifest.entries:
            lines.append(f"{split_name}\t{e.role}\t{e.path}\t{e.duration!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> dict[str, CorpusManifest]:
    out: dict[str, CorpusManifest] = {}
    text = Path(path).read_text()
    for line_no, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise CorpusError(f"{path}:{line_no}: expected 4 tab-separated fields")
        split_name, role, file_path, duration = parts
        out.setdefault(split_name, CorpusManifest([], split=split_name))
        out[split_name].entries.append(
            ManifestEntry(file_path, float(duration), role)
        )
    return out
