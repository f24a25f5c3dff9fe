"""Synthetic keyword corpus generator for desk-scale benchmarks and tests.

Each keyword is a harmonic "vowel" with its own fundamental and formant
emphasis; clips vary in fundamental jitter, harmonic weights, amplitude
envelope, onset, duration, and noise floor so classes overlap enough that
uncertainty-aware selection and augmentation have room to matter.
"""

from __future__ import annotations

import wave
from pathlib import Path

import numpy as np

from . import dsp

DEFAULT_KEYWORDS = (
    "alpha",
    "bravo",
    "delta",
    "echo",
    "gulf",
    "hotel",
    "india",
    "kilo",
    "lima",
    "mike",
)


def write_pcm16(path: Path, samples: np.ndarray, rate: int = dsp.SAMPLE_RATE) -> None:
    """Write mono 16-bit PCM WAV."""
    quantized = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    pcm = (quantized * 32767.0).astype("<i2")
    path.parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(rate)
        fh.writeframes(pcm.tobytes())


def synth_clip(keyword_index: int, rng: np.random.Generator, rate: int = dsp.SAMPLE_RATE) -> np.ndarray:
    """One synthetic utterance of the given keyword class."""
    duration = rng.uniform(0.85, 1.1)
    n = int(duration * rate)
    t = np.arange(n) / rate

    f0 = 170.0 + 52.0 * keyword_index
    f0 = f0 * (1.0 + rng.normal(0.0, 0.02))
    # Slow pitch glide, direction varies per clip.
    glide = 1.0 + rng.uniform(-0.04, 0.04) * (t / t[-1])
    phase = 2.0 * np.pi * np.cumsum(f0 * glide) / rate

    tone = np.zeros(n)
    emphasized = 2 + (keyword_index % 3)
    for harmonic in range(1, 6):
        weight = 1.0 / harmonic
        if harmonic == emphasized:
            weight *= 2.5
        weight *= 1.0 + rng.normal(0.0, 0.25)
        tone += weight * np.sin(harmonic * phase + rng.uniform(0, 2 * np.pi))

    # Attack/decay envelope with a random onset.
    onset = rng.uniform(0.0, 0.12)
    attack = 1.0 / (1.0 + np.exp(-(t - onset - 0.05) / 0.012))
    release = 1.0 / (1.0 + np.exp((t - duration + 0.08) / 0.02))
    envelope = attack * release * rng.uniform(0.5, 0.9)

    clip = tone * envelope
    clip = clip / max(1e-9, np.max(np.abs(clip)))
    clip *= rng.uniform(0.35, 0.8)
    clip += rng.normal(0.0, rng.uniform(0.01, 0.05), size=n)
    return np.clip(clip, -1.0, 1.0)


def make_corpus(
    root: str | Path,
    keywords: int | tuple[str, ...] = 10,
    clips_per_keyword: int = 80,
    seed: int = 0,
) -> Path:
    """Generate ``<root>/<keyword>/clip_###.wav`` for each keyword."""
    root = Path(root)
    names = DEFAULT_KEYWORDS[:keywords] if isinstance(keywords, int) else tuple(keywords)
    if isinstance(keywords, int) and keywords > len(DEFAULT_KEYWORDS):
        names = tuple(f"kw{i:02d}" for i in range(keywords))
    for k, name in enumerate(names):
        rng = np.random.default_rng([seed, k])
        for c in range(clips_per_keyword):
            write_pcm16(root / name / f"clip_{c:03d}.wav", synth_clip(k, rng))
    return root
