"""Waveforms to log-mel spectrograms: resampling, segmentation, features,
SpecAugment masking, a synthetic textured-noise corpus and leakage-free splits.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import signal
from scipy.io import wavfile

SAMPLE_RATE = 32000
N_FFT = 1024
HOP = 320
N_MELS = 64
LOG_EPS = 1e-10
CLASS_NAMES = ("am3hz", "am9hz", "tonal", "bursts")


@dataclass
class Waveform:
    samples: np.ndarray
    rate: int
    source_id: str = ""
    label: int = -1

    @property
    def duration(self) -> float:
        return len(self.samples) / self.rate


@dataclass
class Spectrogram:
    values: np.ndarray  # (n_mels, n_frames)
    source_id: str = ""
    segment_index: int = 0
    label: int = -1

    @property
    def n_mels(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


@dataclass
class DatasetSplit:
    """Index lists into the corpus the split was computed from."""
    train: list[int]
    val: list[int]
    test: list[int]
    fractions: tuple[float, float, float] = (0.7, 0.1, 0.2)
    partition_of: dict[str, str] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# resampling and segmentation
# ---------------------------------------------------------------------------

def resample(w: Waveform, target_rate: int = SAMPLE_RATE, taps_per_phase: int = 64,
             beta: float = 8.0) -> Waveform:
    """Polyphase windowed-sinc resampling (Kaiser window)."""
    if len(w.samples) == 0:
        raise ValueError("empty waveform")
    if w.rate <= 0 or target_rate <= 0:
        raise ValueError(f"sample rates must be positive, got {w.rate} -> {target_rate}")
    if w.rate == target_rate:
        return w
    ratio = Fraction(int(target_rate), int(w.rate))
    up, down = ratio.numerator, ratio.denominator
    max_rate = max(up, down)
    h = signal.firwin(taps_per_phase * max_rate + 1, 1.0 / max_rate, window=("kaiser", beta))
    out = signal.resample_poly(np.asarray(w.samples, dtype=np.float64), up, down, window=h,
                               padtype="antireflect")
    return replace(w, samples=out, rate=int(target_rate))


def segment(w: Waveform, seconds: float = 5.0) -> list[Waveform]:
    """Non-overlapping consecutive segments; a short trailing remainder is dropped."""
    if seconds <= 0:
        raise ValueError("segment length must be positive")
    n = int(round(seconds * w.rate))
    count = len(w.samples) // n
    return [replace(w, samples=w.samples[i * n:(i + 1) * n]) for i in range(count)]


# ---------------------------------------------------------------------------
# log-mel features
# ---------------------------------------------------------------------------

def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int = N_MELS, n_fft: int = N_FFT, rate: int = SAMPLE_RATE,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """HTK-scale triangular filters, each scaled so its weights sum to one: (n_mels, n_fft//2+1)."""
    fmax = rate / 2 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs - lo) / (mid - lo)
    down = (hi - freqs) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(up, down))
    area = fb.sum(axis=1, keepdims=True)
    if np.any(area == 0):
        raise ValueError("mel filterbank has empty filters; increase n_fft or reduce n_mels")
    return fb / area


def frame_count(n_samples: int, hop: int = HOP) -> int:
    """Frames of a centred STFT."""
    return n_samples // hop + 1


def stft_power(samples: np.ndarray, n_fft: int = N_FFT, hop: int = HOP) -> np.ndarray:
    """Centred (reflect-padded) Hann STFT power: (n_fft//2+1, n_frames)."""
    x = np.asarray(samples, dtype=np.float64)
    if len(x) < n_fft:
        raise ValueError(f"waveform of {len(x)} samples is shorter than one window ({n_fft})")
    x = np.pad(x, n_fft // 2, mode="reflect")
    frames = np.lib.stride_tricks.sliding_window_view(x, n_fft)[::hop]
    window = signal.get_window("hann", n_fft)
    spec = np.fft.rfft(frames * window, axis=1)
    return (spec.real ** 2 + spec.imag ** 2).T


_FB_CACHE: dict = {}


def log_mel(w: Waveform, n_mels: int = N_MELS, segment_index: int = 0) -> Spectrogram:
    if w.rate != SAMPLE_RATE:
        raise ValueError(f"log_mel expects {SAMPLE_RATE} Hz input, got {w.rate}")
    key = (n_mels, N_FFT, w.rate)
    if key not in _FB_CACHE:
        _FB_CACHE[key] = mel_filterbank(n_mels, N_FFT, w.rate)
    power = stft_power(w.samples)
    values = np.log(_FB_CACHE[key] @ power + LOG_EPS)
    return Spectrogram(values=values, source_id=w.source_id, segment_index=segment_index,
                       label=w.label)


def mask_values(values: np.ndarray, rng_seed, n_time_masks: int = 2, max_time_width: int = 64,
                n_freq_masks: int = 2, max_freq_width: int = 8) -> np.ndarray:
    """Time and frequency masking of a (mels, frames) array; masked cells take its mean."""
    rng = np.random.default_rng(rng_seed)
    v = values.copy()
    fill = values.mean()
    n_mels, n_frames = v.shape
    for _ in range(n_time_masks):
        width = int(rng.integers(0, max_time_width + 1))
        start = int(rng.integers(0, max(1, n_frames - width + 1)))
        v[:, start:start + width] = fill
    for _ in range(n_freq_masks):
        width = int(rng.integers(0, max_freq_width + 1))
        start = int(rng.integers(0, max(1, n_mels - width + 1)))
        v[start:start + width, :] = fill
    return v


def spec_augment(s: Spectrogram, rng_seed, **kwargs) -> Spectrogram:
    """SpecAugment-style masking; see :func:`mask_values` for the knobs."""
    return replace(s, values=mask_values(s.values, rng_seed, **kwargs))


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------

def _unit_rms(x: np.ndarray) -> np.ndarray:
    return x / (np.sqrt(np.mean(x ** 2)) + 1e-12)


def _am_noise(rng, t, rate_hz):
    depth = rng.uniform(0.7, 1.0)
    carrier = rng.standard_normal(len(t))
    return carrier * (1.0 + depth * np.sin(2 * np.pi * rate_hz * t + rng.uniform(0, 2 * np.pi)))


def _tonal(rng, t, rate):
    base = 150.0 * (1.0 + rng.uniform(-0.01, 0.01))
    out = np.zeros_like(t)
    for k in (1, 2, 3):
        out += rng.uniform(0.5, 1.0) * np.sin(2 * np.pi * k * base * t + rng.uniform(0, 2 * np.pi))
    return out


def _bursts(rng, t, rate):
    n = len(t)
    centre = rng.uniform(600.0, 4000.0)
    band = rng.uniform(100.0, 300.0)
    b, a = signal.butter(2, [centre - band / 2, centre + band / 2], btype="bandpass", fs=rate)
    noise = signal.lfilter(b, a, rng.standard_normal(n))
    gate = np.zeros(n)
    pos = rng.exponential(0.3)
    while pos < t[-1]:
        dur = rng.uniform(0.05, 0.3)
        i0, i1 = int(pos * rate), min(n, int((pos + dur) * rate))
        if i1 > i0:
            gate[i0:i1] = np.hanning(i1 - i0)
        pos += dur + rng.exponential(0.4)
    return noise * gate


def synth_waveform(label: int, rng: np.random.Generator, seconds: float = 5.0,
                   rate: int = SAMPLE_RATE, snr_db: float = -3.0) -> np.ndarray:
    """One textured-noise recording of class ``label``.

    0: broadband noise amplitude-modulated at 3 Hz, 1: the same at 9 Hz,
    2: 150/300/450 Hz tonal complex, 3: narrowband noise bursts at irregular
    intervals. Each is mixed into tilted background noise at ``snr_db`` +/- 3 dB.
    """
    n = int(round(seconds * rate))
    t = np.arange(n) / rate
    if label == 0:
        sig = _am_noise(rng, t, 3.0)
    elif label == 1:
        sig = _am_noise(rng, t, 9.0)
    elif label == 2:
        sig = _tonal(rng, t, rate)
    elif label == 3:
        sig = _bursts(rng, t, rate)
    else:
        raise ValueError(f"unknown synthetic class {label}")
    tilt = rng.uniform(0.0, 0.9)
    background = _unit_rms(signal.lfilter([1.0], [1.0, -tilt], rng.standard_normal(n)))
    snr = snr_db + rng.uniform(-3.0, 3.0)
    mix = background + 10.0 ** (snr / 20.0) * _unit_rms(sig)
    gain = 10.0 ** (rng.uniform(-12.0, 0.0) / 20.0)
    return np.clip(0.1 * gain * mix, -1.0, 1.0)


def synth_corpus(n_per_class: int, rng_seed: int = 0, seconds: float = 5.0,
                 snr_db: float = -3.0) -> list[Waveform]:
    """``4 * n_per_class`` synthetic recordings, each with its own source id."""
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    corpus = []
    for label in range(len(CLASS_NAMES)):
        for i in range(n_per_class):
            rng = np.random.default_rng([rng_seed, label, i])
            samples = synth_waveform(label, rng, seconds, SAMPLE_RATE, snr_db)
            corpus.append(Waveform(samples=samples.astype(np.float32), rate=SAMPLE_RATE,
                                   source_id=f"{CLASS_NAMES[label]}_{i:04d}", label=label))
    return corpus


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------

def split_by_source(items, seed: int = 0, fractions=(0.7, 0.1, 0.2)) -> DatasetSplit:
    """Stratified train/val/test split over source ids (not segments).

    ``items`` is any sequence of objects with ``source_id`` and ``label``.
    Sources of each class are shuffled and spread evenly over a global order;
    test takes the first block, val the next, train the rest, so every
    partition holds each class within one source of its proportional share.
    """
    labels_of: dict[str, int] = {}
    for it in items:
        prev = labels_of.setdefault(it.source_id, it.label)
        if prev != it.label:
            raise ValueError(f"source {it.source_id} carries two labels")
    sources = sorted(labels_of)
    n = len(sources)
    if n < 3:
        raise ValueError(f"need at least 3 distinct sources to fill 3 partitions, got {n}")
    rng = np.random.default_rng(seed)
    by_class: dict[int, list[str]] = {}
    for s in sources:
        by_class.setdefault(labels_of[s], []).append(s)
    keyed = []
    for label in sorted(by_class):
        group = by_class[label]
        order = rng.permutation(len(group))
        for rank, j in enumerate(order):
            keyed.append(((rank + 0.5) / len(group), label, group[j]))
    keyed.sort()
    ordered = [s for _, _, s in keyed]

    n_val = max(1, int(math.floor(fractions[1] * n + 0.5)))
    n_test = max(1, int(math.floor(fractions[2] * n + 0.5)))
    if n_val + n_test >= n:
        n_val, n_test = 1, 1
    part = {}
    for i, s in enumerate(ordered):
        part[s] = "test" if i < n_test else ("val" if i < n_test + n_val else "train")
    split = DatasetSplit(train=[], val=[], test=[], fractions=tuple(fractions), partition_of=part)
    for idx, it in enumerate(items):
        getattr(split, part[it.source_id]).append(idx)
    return split


# ---------------------------------------------------------------------------
# WAV input / output
# ---------------------------------------------------------------------------

def read_wav(path, label: int = -1, source_id: str | None = None) -> Waveform:
    """Read 16-bit PCM or 32-bit float WAV as mono floats in [-1, 1]."""
    rate, data = wavfile.read(path)
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(np.float64) / 2147483648.0
    elif data.dtype.kind == "f":
        data = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported WAV sample type {data.dtype}")
    if data.ndim == 2:
        data = data.mean(axis=1)
    return Waveform(samples=data, rate=int(rate), label=label,
                    source_id=source_id or Path(path).stem)


def write_wav(path, w: Waveform, pcm16: bool = False) -> None:
    data = np.asarray(w.samples)
    if pcm16:
        data = np.clip(np.round(data * 32767.0), -32768, 32767).astype(np.int16)
    else:
        data = data.astype(np.float32)
    os.makedirs(os.path.dirname(os.fspath(path)) or ".", exist_ok=True)
    wavfile.write(path, w.rate, data)


def load_wav_tree(root) -> tuple[list[Waveform], list[str]]:
    """Load ``<root>/<class>/<recording>.wav``; labels follow sorted class names."""
    root = Path(root)
    classes = sorted(p.name for p in root.iterdir() if p.is_dir())
    if not classes:
        raise ValueError(f"{root}: no class directories found")
    out = []
    for label, name in enumerate(classes):
        for f in sorted((root / name).glob("*.wav")):
            out.append(read_wav(f, label=label, source_id=f"{name}/{f.stem}"))
    return out, classes


def featurize(waves, target_rate: int = SAMPLE_RATE, seconds: float = 5.0) -> list[Spectrogram]:
    """Resample, segment and transform every waveform."""
    specs = []
    for w in waves:
        w = resample(w, target_rate)
        for k, seg in enumerate(segment(w, seconds)):
            specs.append(log_mel(seg, segment_index=k))
    return specs
