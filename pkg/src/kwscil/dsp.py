"""Waveform I/O, MFCC frontend, confidence-probe perturbations, and mixup.

All waveforms are mono float32 arrays of exactly 16000 samples (1 s at
16 kHz) with amplitudes in [-1, 1]. The MFCC chain is pinned for
reproducibility: pre-emphasis 0.97, 25 ms periodic Hann window, 10 ms hop,
512-point magnitude-squared spectrum, 64 triangular mel filters (HTK mel
scale) from 20 Hz to 8 kHz, natural log with floor 1e-10, orthonormal
DCT-II keeping 40 coefficients. A 1 s clip yields 98 frames.
"""

from __future__ import annotations

import hashlib
import wave
from dataclasses import dataclass

import numpy as np
import scipy.fft
from scipy.fftpack import dct
from scipy.signal import resample_poly

from .errors import DataError

SAMPLE_RATE = 16000
CLIP_SAMPLES = 16000

N_MFCC = 40
N_FFT = 512
WINDOW_SAMPLES = 400  # 25 ms
HOP_SAMPLES = 160  # 10 ms
N_MELS = 64
MEL_FMIN = 20.0
MEL_FMAX = 8000.0
PREEMPHASIS = 0.97
LOG_FLOOR = 1e-10
N_FRAMES = 1 + (CLIP_SAMPLES - WINDOW_SAMPLES) // HOP_SAMPLES  # 98

CLIPPING_DISTORTION = "clipping_distortion"
TIME_MASK = "time_mask"
SHIFT = "shift"
PITCH_SHIFT = "pitch_shift"
FREQUENCY_MASK = "frequency_mask"

#: The five confidence-probe strategies, in canonical order.
PERTURBATION_STRATEGIES = (
    CLIPPING_DISTORTION,
    TIME_MASK,
    SHIFT,
    PITCH_SHIFT,
    FREQUENCY_MASK,
)

# Magnitude ranges per strategy (see PerturbationSpec).
CLIP_PERCENTILE_RANGE = (80.0, 99.0)
TIME_MASK_MAX_S = 0.1
SHIFT_MAX_S = 0.1
PITCH_SHIFT_MAX_SEMITONES = 2.0


def normalize_length(samples: np.ndarray, length: int = CLIP_SAMPLES) -> np.ndarray:
    """Zero-pad at the end or truncate the tail to exactly ``length`` samples."""
    samples = np.asarray(samples, dtype=np.float32).reshape(-1)
    if len(samples) >= length:
        return samples[:length].copy()
    out = np.zeros(length, dtype=np.float32)
    out[: len(samples)] = samples
    return out


def load_wav(path) -> np.ndarray:
    """Decode a 16-bit PCM RIFF/WAVE file to a normalized 16000-sample waveform.

    Multi-channel input is averaged to mono and other sample rates are
    resampled to 16 kHz before the pad/trim to 1 s.
    """
    try:
        with wave.open(str(path), "rb") as fh:
            n_channels = fh.getnchannels()
            width = fh.getsampwidth()
            rate = fh.getframerate()
            comp = fh.getcomptype()
            raw = fh.readframes(fh.getnframes())
    except (wave.Error, EOFError, OSError) as exc:
        raise DataError(f"cannot decode {path}: {exc}") from exc
    if comp != "NONE":
        raise DataError(f"{path}: compressed WAV ({comp}) is not supported")
    if width != 2:
        raise DataError(f"{path}: only 16-bit PCM is supported, got {8 * width}-bit")

    samples = np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0
    if n_channels > 1:
        samples = samples.reshape(-1, n_channels).mean(axis=1)
    if rate != SAMPLE_RATE:
        samples = resample_poly(samples, SAMPLE_RATE, rate).astype(np.float32)
    return normalize_length(np.clip(samples, -1.0, 1.0))


def _hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def _mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def _mel_filterbank() -> np.ndarray:
    """Triangular filters (N_MELS x N_FFT//2+1), HTK mel scale, no normalization."""
    mel_edges = np.linspace(_hz_to_mel(MEL_FMIN), _hz_to_mel(MEL_FMAX), N_MELS + 2)
    hz_edges = _mel_to_hz(mel_edges)
    bin_freqs = np.arange(N_FFT // 2 + 1) * (SAMPLE_RATE / N_FFT)
    fb = np.zeros((N_MELS, N_FFT // 2 + 1), dtype=np.float32)
    for m in range(N_MELS):
        lo, center, hi = hz_edges[m], hz_edges[m + 1], hz_edges[m + 2]
        rising = (bin_freqs - lo) / (center - lo)
        falling = (hi - bin_freqs) / (hi - center)
        fb[m] = np.maximum(0.0, np.minimum(rising, falling))
    return fb


_WINDOW = (0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(WINDOW_SAMPLES) / WINDOW_SAMPLES)).astype(
    np.float32
)  # periodic Hann
_FILTERBANK = _mel_filterbank()
_FRAME_INDEX = np.arange(WINDOW_SAMPLES)[None, :] + HOP_SAMPLES * np.arange(N_FRAMES)[:, None]


def compute_mfcc_batch(waveforms: np.ndarray) -> np.ndarray:
    """MFCCs for a batch of waveforms: (B, 16000) -> (B, 40, 98)."""
    w = np.asarray(waveforms, dtype=np.float32)
    if w.ndim != 2 or w.shape[1] != CLIP_SAMPLES:
        raise ValueError(f"expected shape (B, {CLIP_SAMPLES}), got {w.shape}")
    pre = np.concatenate([w[:, :1], w[:, 1:] - PREEMPHASIS * w[:, :-1]], axis=1)
    frames = pre[:, _FRAME_INDEX] * _WINDOW
    spectrum = np.abs(scipy.fft.rfft(frames, N_FFT, axis=-1)).astype(np.float32) ** 2
    mel = np.log(np.maximum(spectrum @ _FILTERBANK.T, LOG_FLOOR))
    coeffs = dct(mel, type=2, axis=-1, norm="ortho")[..., :N_MFCC]
    return np.transpose(coeffs, (0, 2, 1)).astype(np.float32)


def compute_mfcc(waveform: np.ndarray) -> np.ndarray:
    """MFCC matrix (40 coefficients x 98 frames) of one normalized waveform."""
    w = np.asarray(waveform, dtype=np.float32).reshape(-1)
    if len(w) != CLIP_SAMPLES:
        raise ValueError(f"expected {CLIP_SAMPLES} samples, got {len(w)}")
    return compute_mfcc_batch(w[None, :])[0]


@dataclass(frozen=True)
class PerturbationSpec:
    """One perturbation draw.

    ``magnitude`` semantics per strategy (drawn from the documented range
    with the spec's seed when omitted):

    - clipping_distortion: amplitude percentile p in [80, 99]; samples are
      clipped to +/- the p-th percentile of the absolute amplitude.
    - time_mask: mask duration in seconds, (0, 0.1]; ``offset_s`` places the
      mask start (drawn uniformly if omitted).
    - shift: shift in seconds, [-0.1, 0.1]; positive delays the signal,
      vacated samples are zero-filled.
    - pitch_shift: semitones in [-2, 2]; realized by resampling then
      padding/trimming back to 1 s.
    - frequency_mask: band-stop center frequency in Hz, [20, 8000]; the
      stopband spans one mel-band width around the center.
    """

    strategy: str
    magnitude: float | None = None
    offset_s: float | None = None
    seed: int = 0


def _spec_rng(spec: PerturbationSpec) -> np.random.Generator:
    return np.random.default_rng(spec.seed)


def _check_range(value: float, lo: float, hi: float, what: str) -> float:
    if not lo <= value <= hi:
        raise ValueError(f"{what} must be in [{lo}, {hi}], got {value}")
    return float(value)


def perturb(waveform: np.ndarray, spec: PerturbationSpec) -> np.ndarray:
    """Apply one perturbation strategy; pure in (waveform, spec)."""
    w = np.asarray(waveform, dtype=np.float32).reshape(-1)
    if len(w) != CLIP_SAMPLES:
        raise ValueError(f"expected {CLIP_SAMPLES} samples, got {len(w)}")
    rng = _spec_rng(spec)

    if spec.strategy == CLIPPING_DISTORTION:
        lo, hi = CLIP_PERCENTILE_RANGE
        p = rng.uniform(lo, hi) if spec.magnitude is None else spec.magnitude
        p = _check_range(p, lo, hi, "clip percentile")
        threshold = np.percentile(np.abs(w), p)
        return np.clip(w, -threshold, threshold).astype(np.float32)

    if spec.strategy == TIME_MASK:
        dur = rng.uniform(0.01, TIME_MASK_MAX_S) if spec.magnitude is None else spec.magnitude
        if not 0.0 < dur <= TIME_MASK_MAX_S:
            raise ValueError(f"time mask duration must be in (0, {TIME_MASK_MAX_S}], got {dur}")
        n_mask = int(round(dur * SAMPLE_RATE))
        max_start = CLIP_SAMPLES - n_mask
        if spec.offset_s is None:
            start = int(rng.integers(0, max_start + 1))
        else:
            start = int(round(_check_range(spec.offset_s, 0.0, max_start / SAMPLE_RATE, "mask offset") * SAMPLE_RATE))
        out = w.copy()
        out[start : start + n_mask] = 0.0
        return out

    if spec.strategy == SHIFT:
        s = rng.uniform(-SHIFT_MAX_S, SHIFT_MAX_S) if spec.magnitude is None else spec.magnitude
        s = _check_range(s, -SHIFT_MAX_S, SHIFT_MAX_S, "shift seconds")
        n = int(round(s * SAMPLE_RATE))
        out = np.zeros_like(w)
        if n > 0:
            out[n:] = w[:-n]
        elif n < 0:
            out[:n] = w[-n:]
        else:
            out[:] = w
        return out

    if spec.strategy == PITCH_SHIFT:
        lim = PITCH_SHIFT_MAX_SEMITONES
        semi = rng.uniform(-lim, lim) if spec.magnitude is None else spec.magnitude
        semi = _check_range(semi, -lim, lim, "pitch shift semitones")
        factor = 2.0 ** (semi / 12.0)
        positions = np.arange(CLIP_SAMPLES, dtype=np.float64) * factor
        out = np.interp(positions, np.arange(CLIP_SAMPLES), w.astype(np.float64), left=0.0, right=0.0)
        return out.astype(np.float32)

    if spec.strategy == FREQUENCY_MASK:
        if spec.magnitude is None:
            center_mel = rng.uniform(_hz_to_mel(MEL_FMIN), _hz_to_mel(MEL_FMAX))
            center_hz = float(_mel_to_hz(center_mel))
        else:
            center_hz = _check_range(spec.magnitude, MEL_FMIN, MEL_FMAX, "band-stop center Hz")
            center_mel = float(_hz_to_mel(center_hz))
        band_mel = (_hz_to_mel(MEL_FMAX) - _hz_to_mel(MEL_FMIN)) / N_MELS
        lo_hz = float(_mel_to_hz(center_mel - band_mel / 2.0))
        hi_hz = float(_mel_to_hz(center_mel + band_mel / 2.0))
        spectrum = np.fft.rfft(w.astype(np.float64))
        freqs = np.fft.rfftfreq(CLIP_SAMPLES, d=1.0 / SAMPLE_RATE)
        spectrum[(freqs >= lo_hz) & (freqs <= hi_hz)] = 0.0
        out = np.fft.irfft(spectrum, n=CLIP_SAMPLES)
        return np.clip(out, -1.0, 1.0).astype(np.float32)

    raise ValueError(f"unknown perturbation strategy {spec.strategy!r}")


def perturbation_seed(base_seed: int, record_id: str, strategy: str) -> int:
    """Stable per-(record, strategy) seed, independent of evaluation order."""
    digest = hashlib.blake2s(
        f"{base_seed}|{record_id}|{strategy}".encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little")


def perturb_all(waveform: np.ndarray, base_seed: int, record_id: str) -> np.ndarray:
    """Stack of the five perturbed variants of one waveform, shape (5, 16000)."""
    outs = [
        perturb(
            waveform,
            PerturbationSpec(strategy=s, seed=perturbation_seed(base_seed, record_id, s)),
        )
        for s in PERTURBATION_STRATEGIES
    ]
    return np.stack(outs)


def mixup(
    a: np.ndarray,
    b: np.ndarray,
    label_a: np.ndarray,
    label_b: np.ndarray,
    alpha: float,
    seed: int,
    lam: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Convex combination of two waveforms and their soft labels.

    The mixing weight is drawn from Beta(alpha, alpha) seeded by ``seed``
    unless ``lam`` forces it.
    """
    a = np.asarray(a, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    if a.shape != b.shape:
        raise ValueError(f"waveform length mismatch: {a.shape} vs {b.shape}")
    label_a = np.asarray(label_a, dtype=np.float64)
    label_b = np.asarray(label_b, dtype=np.float64)
    if label_a.shape != label_b.shape:
        raise ValueError(f"label shape mismatch: {label_a.shape} vs {label_b.shape}")
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if lam is None:
        lam = float(np.random.default_rng(seed).beta(alpha, alpha))
    wave_out = (lam * a + (1.0 - lam) * b).astype(np.float32)
    label_out = lam * label_a + (1.0 - lam) * label_b
    return wave_out, label_out


def one_hot(class_index: int, num_classes: int) -> np.ndarray:
    label = np.zeros(num_classes, dtype=np.float64)
    label[class_index] = 1.0
    return label
