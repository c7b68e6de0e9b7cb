"""Objective evaluation metrics: LSD, SSNR, MCD, STOI, and BSS-eval.

PESQ is deliberately absent; reports carry an explicit "n/a" for it.
All dB ratios are capped at +/-100 so aggregate tables stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import toeplitz
from scipy.signal import correlate, fftconvolve

from .audio_io import AudioBuffer, resample, to_mono
from .dsp import StftParams, dct_matrix, mel_filterbank, stft, third_octave_bands
from .errors import MetricError, ShapeError

DB_CAP = 100.0
POWER_EPS = 1e-10

SSNR_FRAME = 512
SSNR_HOP = 256
SSNR_FLOOR_DB = -10.0
SSNR_CEIL_DB = 35.0
SILENCE_GATE_DB = 40.0

MCD_MELS = 40
MCD_COEFFS = 12

STOI_RATE = 10000
STOI_FRAME = 256
STOI_HOP = 128
STOI_FFT = 512
STOI_SEGMENT = 30
STOI_CLIP_DB = -15.0

BSS_FILTER_LEN = 512


def _pair(ref: AudioBuffer, est: AudioBuffer):
    if ref.sample_rate != est.sample_rate:
        raise ShapeError(
            f"sample rates differ: {ref.sample_rate} vs {est.sample_rate}"
        )
    if ref.num_frames == 0 or est.num_frames == 0:
        raise ValueError("metric inputs must be non-empty")
    n = min(ref.num_frames, est.num_frames)
    r = np.asarray(to_mono(ref).samples, dtype=np.float64)[:n]
    e = np.asarray(to_mono(est).samples, dtype=np.float64)[:n]
    return r, e, ref.sample_rate


def _capped_db(numerator: float, denominator: float) -> float:
    if numerator <= 0.0:
        return -DB_CAP
    if denominator <= 0.0:
        return DB_CAP
    return float(np.clip(10.0 * np.log10(numerator / denominator), -DB_CAP, DB_CAP))


def lsd(ref: AudioBuffer, est: AudioBuffer) -> float:
    """Log-spectral distortion: per-frame RMS of the dB power difference."""
    r, e, rate = _pair(ref, est)
    params = StftParams(sample_rate=rate)
    p_ref = np.abs(stft(AudioBuffer(r, rate), params).data) ** 2
    p_est = np.abs(stft(AudioBuffer(e, rate), params).data) ** 2
    diff = 10.0 * np.log10(p_ref + POWER_EPS) - 10.0 * np.log10(p_est + POWER_EPS)
    per_frame = np.sqrt(np.mean(diff * diff, axis=1))
    return float(np.mean(per_frame))


def _segment_energies(x: np.ndarray, frame: int, hop: int) -> np.ndarray:
    if x.size < frame:
        raise MetricError(f"input shorter than one {frame}-sample frame")
    count = 1 + (x.size - frame) // hop
    idx = np.arange(frame)[None, :] + hop * np.arange(count)[:, None]
    return x[idx]


def ssnr(ref: AudioBuffer, est: AudioBuffer) -> float:
    """Segmental SNR over 512/256 frames, clipped to [-10, 35] dB.

    Frames whose reference energy sits more than 40 dB below the loudest
    frame are excluded from the mean.
    """
    r, e, _ = _pair(ref, est)
    ref_frames = _segment_energies(r, SSNR_FRAME, SSNR_HOP)
    err_frames = ref_frames - _segment_energies(e, SSNR_FRAME, SSNR_HOP)
    sig = np.sum(ref_frames * ref_frames, axis=1)
    err = np.sum(err_frames * err_frames, axis=1)

    keep = sig > np.max(sig) * 10.0 ** (-SILENCE_GATE_DB / 10.0)
    if not np.any(keep):
        raise MetricError("every frame fell below the silence gate")
    with np.errstate(divide="ignore"):
        frame_db = 10.0 * np.log10(sig[keep] / np.maximum(err[keep], 0.0))
    frame_db = np.clip(frame_db, SSNR_FLOOR_DB, SSNR_CEIL_DB)
    return float(np.mean(frame_db))


def mcd(ref: AudioBuffer, est: AudioBuffer) -> float:
    """Mel cepstral distortion over coefficients c1..c12, in dB.

    Uses 40 mel log-energies per frame and the orthonormal DCT-II;
    uniform gain lands entirely in c0 and so does not register.
    """
    r, e, rate = _pair(ref, est)
    params = StftParams(sample_rate=rate)
    bank = mel_filterbank(MCD_MELS, params)
    basis = dct_matrix(MCD_MELS, MCD_COEFFS + 1)

    p_ref = np.abs(stft(AudioBuffer(r, rate), params).data) ** 2
    p_est = np.abs(stft(AudioBuffer(e, rate), params).data) ** 2

    frame_power = np.sum(p_ref, axis=1)
    keep = frame_power > np.max(frame_power) * 10.0 ** (-SILENCE_GATE_DB / 10.0)
    if not np.any(keep):
        raise MetricError("every frame fell below the silence gate")

    tiny = np.finfo(np.float64).tiny
    log_ref = np.log(np.maximum(p_ref[keep] @ bank.T, tiny))
    log_est = np.log(np.maximum(p_est[keep] @ bank.T, tiny))
    c_ref = log_ref @ basis.T
    c_est = log_est @ basis.T
    delta = c_ref[:, 1:] - c_est[:, 1:]  # c0 carries gain; excluded
    per_frame = (10.0 / np.log(10.0)) * np.sqrt(2.0 * np.sum(delta * delta, axis=1))
    return float(np.mean(per_frame))


def _stoi_window() -> np.ndarray:
    # symmetric Hann without the zero endpoints; sums to one at 50% overlap
    return np.hanning(STOI_FRAME + 2)[1:-1]


def _remove_silent_frames(r: np.ndarray, e: np.ndarray):
    w = _stoi_window()
    count = 1 + (r.size - STOI_FRAME) // STOI_HOP
    idx = np.arange(STOI_FRAME)[None, :] + STOI_HOP * np.arange(count)[:, None]
    r_frames = r[idx] * w
    e_frames = e[idx] * w

    energies = 20.0 * np.log10(np.linalg.norm(r_frames, axis=1) + 1e-300)
    keep = energies > np.max(energies) - SILENCE_GATE_DB
    r_frames, e_frames = r_frames[keep], e_frames[keep]
    if len(r_frames) == 0:
        raise MetricError("no frames above the silence gate")

    out_len = STOI_FRAME + (len(r_frames) - 1) * STOI_HOP
    r_out = np.zeros(out_len)
    e_out = np.zeros(out_len)
    for i in range(len(r_frames)):
        lo = i * STOI_HOP
        r_out[lo : lo + STOI_FRAME] += r_frames[i]
        e_out[lo : lo + STOI_FRAME] += e_frames[i]
    return r_out, e_out


def _stoi_band_energies(x: np.ndarray, bands: np.ndarray) -> np.ndarray:
    w = _stoi_window()
    count = 1 + (x.size - STOI_FRAME) // STOI_HOP
    idx = np.arange(STOI_FRAME)[None, :] + STOI_HOP * np.arange(count)[:, None]
    spectra = np.fft.rfft(x[idx] * w, n=STOI_FFT, axis=1)
    power = np.abs(spectra) ** 2
    return np.sqrt(power @ bands.T)  # (frames, 15)


def stoi(ref: AudioBuffer, est: AudioBuffer) -> float:
    """Short-time objective intelligibility in [~0, 1]."""
    r, e, rate = _pair(ref, est)
    ref10 = resample(AudioBuffer(r, rate), STOI_RATE)
    est10 = resample(AudioBuffer(e, rate), STOI_RATE)
    r, e = ref10.samples, est10.samples
    if r.size < STOI_FRAME:
        raise MetricError("input too short for intelligibility analysis")

    r, e = _remove_silent_frames(r, e)
    bands, _ = third_octave_bands(StftParams(STOI_FFT, STOI_HOP, STOI_RATE))
    x = _stoi_band_energies(r, bands)
    y = _stoi_band_energies(e, bands)
    if len(x) < STOI_SEGMENT:
        raise MetricError(
            f"need at least {STOI_SEGMENT} analysis frames after silence removal"
        )

    clip_gain = 1.0 + 10.0 ** (-STOI_CLIP_DB / 20.0)
    correlations = []
    for m in range(STOI_SEGMENT, len(x) + 1):
        xs = x[m - STOI_SEGMENT : m]  # (30, 15)
        ys = y[m - STOI_SEGMENT : m]
        norm_x = np.linalg.norm(xs, axis=0)
        norm_y = np.linalg.norm(ys, axis=0)
        alpha = norm_x / np.maximum(norm_y, 1e-300)
        ys_eq = np.minimum(ys * alpha, xs * clip_gain)

        xc = xs - xs.mean(axis=0)
        yc = ys_eq - ys_eq.mean(axis=0)
        denom = np.linalg.norm(xc, axis=0) * np.linalg.norm(yc, axis=0)
        corr = np.sum(xc * yc, axis=0) / np.maximum(denom, 1e-300)
        correlations.append(corr)
    return float(np.mean(correlations))


def _lagged_correlations(a: np.ndarray, b: np.ndarray, max_lag: int) -> np.ndarray:
    """r(d) = sum_m a[m]*b[m-d] for d in [-max_lag, max_lag]."""
    full = correlate(a, b, mode="full", method="fft")
    center = b.size - 1
    out = np.zeros(2 * max_lag + 1)
    lo = max(0, center - max_lag)
    hi = min(full.size, center + max_lag + 1)
    out[lo - center + max_lag : hi - center + max_lag] = full[lo:hi]
    return out


def _projection_coeffs(sources, est, filter_len, indices):
    """Solve the regularized normal equations for the chosen sources."""
    f = filter_len
    k = len(indices)
    gram = np.zeros((k * f, k * f))
    rhs = np.zeros(k * f)
    for a, i in enumerate(indices):
        for b, j in enumerate(indices):
            r = _lagged_correlations(sources[i], sources[j], f - 1)
            # block[t1, t2] = r(t2 - t1)
            col = r[f - 1 :: -1]
            row = r[f - 1 :]
            gram[a * f : (a + 1) * f, b * f : (b + 1) * f] = toeplitz(col, row)
        cross = _lagged_correlations(est, sources[i], f - 1)
        rhs[a * f : (a + 1) * f] = cross[f - 1 :]
    lam = 1e-9 * np.trace(gram)
    gram[np.diag_indices_from(gram)] += lam
    coeffs = np.linalg.solve(gram, rhs)
    return coeffs.reshape(k, f)


def _apply_filters(sources, coeffs, indices, out_len):
    out = np.zeros(out_len)
    for row, i in zip(coeffs, indices):
        out += fftconvolve(sources[i], row)[:out_len]
    return out


def bss_eval(ref_sources, est: AudioBuffer, est_index: int,
             filter_len: int = BSS_FILTER_LEN):
    """Source-separation scores (SDR, SIR, SAR) in dB.

    The estimate is decomposed against length-filter_len FIR projections
    of the references: the part explained by the target's delays, the
    extra part explained by all sources jointly, and the remainder.
    """
    if not 1 <= len(ref_sources) <= 2:
        raise ValueError("bss_eval supports one or two reference sources")
    if not 0 <= est_index < len(ref_sources):
        raise ValueError(f"est_index {est_index} out of range")
    n = est.num_frames
    sources = []
    for s in ref_sources:
        if s.num_frames != n:
            raise ShapeError("all sources must match the estimate's length")
        x = np.asarray(s.samples, dtype=np.float64)
        if not np.any(x):
            raise ValueError("zero-energy reference source")
        sources.append(x)
    e = np.asarray(est.samples, dtype=np.float64)

    out_len = n + filter_len - 1
    target_coeffs = _projection_coeffs(sources, e, filter_len, [est_index])
    s_target = _apply_filters(sources, target_coeffs, [est_index], out_len)

    everything = list(range(len(sources)))
    all_coeffs = _projection_coeffs(sources, e, filter_len, everything)
    p_all = _apply_filters(sources, all_coeffs, everything, out_len)

    e_interf = p_all - s_target
    e_artif = np.concatenate([e, np.zeros(filter_len - 1)]) - p_all

    target_energy = float(np.sum(s_target**2))
    interf_energy = float(np.sum(e_interf**2))
    artif_energy = float(np.sum(e_artif**2))
    distortion_energy = float(np.sum((e_interf + e_artif) ** 2))

    sdr = _capped_db(target_energy, distortion_energy)
    sir = _capped_db(target_energy, interf_energy)
    sar = _capped_db(float(np.sum((s_target + e_interf) ** 2)), artif_energy)
    return sdr, sir, sar


METRIC_ORDER = ("lsd", "ssnr", "mcd", "stoi", "pesq", "sdr", "sir", "sar")


@dataclass
class MetricReport:
    """Per-group metric means; group keys keep their insertion order."""

    grouping: str
    groups: dict
    counts: dict

    def metric_names(self):
        seen = []
        for values in self.groups.values():
            for name in values:
                if name not in seen:
                    seen.append(name)
        return [m for m in METRIC_ORDER if m in seen] + [
            m for m in seen if m not in METRIC_ORDER
        ]


def aggregate_report(pairs, grouping: str) -> MetricReport:
    """Mean each metric within each group.

    pairs: iterable of (group_key, {metric: value}).
    """
    pairs = list(pairs)
    if not pairs:
        raise MetricError("no metric pairs to aggregate")
    sums: dict = {}
    counts: dict = {}
    for group, values in pairs:
        if not values:
            raise MetricError(f"empty metric set for group {group!r}")
        bucket = sums.setdefault(group, {})
        counts[group] = counts.get(group, 0) + 1
        for name, value in values.items():
            bucket[name] = bucket.get(name, 0.0) + float(value)
    groups = {
        group: {name: total / counts[group] for name, total in bucket.items()}
        for group, bucket in sums.items()
    }
    return MetricReport(grouping, groups, counts)
