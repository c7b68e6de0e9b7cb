"""Deterministic synthetic corpus: voices, tonal and broadband noises.

Everything is generated from a seed so experiments are reproducible
without external downloads. Tonal noises sit exactly on analysis bins
(multiples of 16000/512 Hz), which makes selective suppression
measurable with a plain DFT probe. Speaker ids start with "f" or "m";
the first letter doubles as the gender tag for separation pairings.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .audio_io import AudioBuffer, PROCESSING_RATE, write_wav

# all exact multiples of 31.25 Hz, i.e. aligned to 512-point FFT bins
TONE_FREQS = (500.0, 625.0, 750.0, 875.0, 1000.0, 1125.0,
              1250.0, 1500.0, 1750.0, 2000.0)

SPEAKERS = {
    "f1": 220.0,
    "f2": 250.0,
    "m1": 115.0,
    "m2": 135.0,
}

TARGET_RMS = 0.08
PEAK_LIMIT = 0.97


def speaker_gender(speaker_id: str) -> str:
    return speaker_id[0]


def _normalize(x: np.ndarray) -> np.ndarray:
    level = np.sqrt(np.mean(x * x))
    if level > 0:
        x = x * (TARGET_RMS / level)
    peak = np.max(np.abs(x))
    if peak > PEAK_LIMIT:
        x = x * (PEAK_LIMIT / peak)
    return x


def synth_voice(duration_s: float, f0: float, rng,
                rate: int = PROCESSING_RATE) -> np.ndarray:
    """Harmonic tone complex with vibrato, formant bumps, and syllabic AM."""
    n = int(round(duration_s * rate))
    t = np.arange(n) / rate

    vib_rate = rng.uniform(4.5, 6.5)
    vib_depth = rng.uniform(0.01, 0.025)
    inst_f0 = f0 * (1.0 + vib_depth * np.sin(2 * np.pi * vib_rate * t
                                             + rng.uniform(0, 2 * np.pi)))
    phase = 2 * np.pi * np.cumsum(inst_f0) / rate

    formants = rng.uniform([350, 900, 2200], [850, 1900, 3200])
    bandwidths = rng.uniform([80, 120, 200], [150, 250, 400])

    max_harmonic = int(7000 / (f0 * (1.0 + vib_depth)))
    out = np.zeros(n)
    for k in range(1, max_harmonic + 1):
        freq = k * f0
        envelope = 0.05 + np.sum(
            np.exp(-(((freq - formants) / bandwidths) ** 2))
        )
        out += (envelope / k ** 0.8) * np.sin(k * phase)

    am_rate = rng.uniform(2.5, 4.0)
    syllables = 0.3 + 0.7 * (
        0.5 - 0.5 * np.cos(2 * np.pi * am_rate * t + rng.uniform(0, 2 * np.pi))
    )
    return _normalize(out * syllables)


def synth_tone(duration_s: float, freq: float, rng,
               rate: int = PROCESSING_RATE) -> np.ndarray:
    """Bin-aligned sine with a slow amplitude wobble for instance variety."""
    n = int(round(duration_s * rate))
    t = np.arange(n) / rate
    wobble = 1.0 + 0.1 * np.sin(2 * np.pi * rng.uniform(0.4, 0.9) * t
                                + rng.uniform(0, 2 * np.pi))
    x = np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi)) * wobble
    return _normalize(x)


def synth_white(duration_s: float, rng, rate: int = PROCESSING_RATE) -> np.ndarray:
    n = int(round(duration_s * rate))
    return _normalize(rng.standard_normal(n))


def synth_pink(duration_s: float, rng, rate: int = PROCESSING_RATE) -> np.ndarray:
    n = int(round(duration_s * rate))
    spectrum = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / rate)
    spectrum[1:] /= np.sqrt(freqs[1:] / freqs[1])
    spectrum[0] = 0.0
    return _normalize(np.fft.irfft(spectrum, n=n))


def synth_modulated(duration_s: float, rng,
                    rate: int = PROCESSING_RATE) -> np.ndarray:
    n = int(round(duration_s * rate))
    t = np.arange(n) / rate
    mod_rate = rng.uniform(2.0, 8.0)
    carrier = rng.standard_normal(n)
    depth = 0.5 + 0.5 * np.sin(2 * np.pi * mod_rate * t + rng.uniform(0, 2 * np.pi))
    return _normalize(carrier * depth)


def build_desk_corpus(root, seed: int = 0, clean_count: int = 24,
                      tone_instances: int = 3, broadband_instances: int = 5,
                      speaker_utterances: int = 6,
                      rate: int = PROCESSING_RATE) -> dict:
    """Generate the full corpus layout under root and return file lists.

    Layout: root/clean/*.wav, root/noise/*.wav, root/speakers/<id>/*.wav.
    Noise files are longer than clean ones so disjoint reference segments
    can always be carved from them.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    made: dict = {"clean": [], "noise": [], "speakers": {}}

    clean_dir = root / "clean"
    clean_dir.mkdir(parents=True, exist_ok=True)
    for i in range(clean_count):
        duration = rng.uniform(2.0, 3.0)
        f0 = rng.uniform(140.0, 280.0)
        samples = synth_voice(duration, f0, rng, rate)
        path = clean_dir / f"voice_{i:02d}.wav"
        write_wav(path, AudioBuffer(samples, rate), bit_depth="16")
        made["clean"].append(str(path))

    noise_dir = root / "noise"
    noise_dir.mkdir(parents=True, exist_ok=True)
    for freq in TONE_FREQS:
        for i in range(tone_instances):
            samples = synth_tone(rng.uniform(4.5, 6.0), freq, rng, rate)
            path = noise_dir / f"tone{int(freq):04d}_{i:02d}.wav"
            write_wav(path, AudioBuffer(samples, rate), bit_depth="16")
            made["noise"].append(str(path))
    synths = (("white", synth_white), ("pink", synth_pink),
              ("mod", synth_modulated))
    for name, fn in synths:
        for i in range(broadband_instances):
            samples = fn(rng.uniform(4.5, 6.0), rng, rate)
            path = noise_dir / f"{name}_{i:02d}.wav"
            write_wav(path, AudioBuffer(samples, rate), bit_depth="16")
            made["noise"].append(str(path))

    for speaker_id, base_f0 in SPEAKERS.items():
        speaker_dir = root / "speakers" / speaker_id
        speaker_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for i in range(speaker_utterances):
            f0 = base_f0 * rng.uniform(0.97, 1.03)
            samples = synth_voice(rng.uniform(2.5, 4.0), f0, rng, rate)
            path = speaker_dir / f"utt_{i:02d}.wav"
            write_wav(path, AudioBuffer(samples, rate), bit_depth="16")
            paths.append(str(path))
        made["speakers"][speaker_id] = paths

    return made
