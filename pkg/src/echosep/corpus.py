"""
Audio clips, WAV corpora and synthetic test signals.

A corpus on disk is a directory of speakers, each a directory of WAV
utterances. :func:`synthetic_corpus` builds an in-memory (or on-disk)
corpus of artificial "speakers" whose utterances are strings of syllables:
an optional noise consonant followed by a harmonic nucleus with a drifting
pitch, shaped by a few formant resonances and a syllabic envelope.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

DEFAULT_RATE = 16000


class CorpusError(ValueError):
    pass


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: float
    speaker_id: str = None
    utterance_id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 1:
            raise ValueError("clips are mono")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples must be finite")

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


def read_wav(path):
    """Mono float samples and rate; PCM16 is scaled by 1/32768."""
    rate, data = wavfile.read(str(path))
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(np.float64) / 2**31
    elif data.dtype == np.uint8:
        data = (data.astype(np.float64) - 128.0) / 128.0
    else:
        data = data.astype(np.float64)
    if data.ndim > 1:
        data = data[:, 0]
    return data, rate


def write_wav(path, samples, sample_rate):
    """Write float32 samples."""
    wavfile.write(str(path), int(sample_rate), np.asarray(samples, dtype=np.float32))


def load_corpus(root, expected_rate=DEFAULT_RATE):
    """Read ``root/<speaker>/<utterance>.wav``.

    Returns
    -------
    groups : dict
        speaker id -> list of :class:`AudioClip`, both in lexicographic order.
    rejects : list of (path, reason)
        Files at the wrong rate or that could not be read.

    Raises
    ------
    CorpusError
        If no speaker has a usable file.
    """
    root = Path(root)
    if not root.is_dir():
        raise CorpusError(f"{root}: not a directory")
    groups, rejects = {}, []
    for spk in sorted(p for p in root.iterdir() if p.is_dir()):
        clips = []
        for f in sorted(spk.glob("*.wav")):
            try:
                x, rate = read_wav(f)
            except (ValueError, OSError) as exc:
                rejects.append((str(f), f"unreadable: {exc}"))
                continue
            if rate != expected_rate:
                rejects.append((str(f), f"sample rate {rate} Hz, expected {expected_rate} Hz"))
                continue
            clips.append(AudioClip(x, rate, spk.name, f.stem))
        if clips:
            groups[spk.name] = clips
    if not groups:
        raise CorpusError(f"{root}: no speakers found")
    return groups, rejects


def corpus_manifest(groups):
    """speaker -> [{utterance, samples, duration_s}], plus a content hash."""
    h = hashlib.sha256()
    doc = {}
    for spk in sorted(groups):
        doc[spk] = []
        for c in groups[spk]:
            h.update(np.ascontiguousarray(c.samples, dtype=np.float64).tobytes())
            doc[spk].append({"utterance": c.utterance_id, "samples": len(c.samples), "duration_s": c.duration})
    return {"speakers": doc, "sha256": h.hexdigest()}


def save_corpus(groups, root):
    root = Path(root)
    for spk, clips in groups.items():
        (root / spk).mkdir(parents=True, exist_ok=True)
        for c in clips:
            write_wav(root / spk / f"{c.utterance_id}.wav", c.samples, c.sample_rate)
    (root / "manifest.json").write_text(json.dumps(corpus_manifest(groups), indent=2))


# ---------------------------------------------------------------------------
# synthetic signals


def _fade(x, sample_rate, fade_s=0.01):
    n = min(int(fade_s * sample_rate), len(x) // 2)
    if n > 0:
        ramp = np.sin(0.5 * np.pi * (np.arange(n) + 0.5) / n) ** 2
        x[:n] *= ramp
        x[-n:] *= ramp[::-1]
    return x


def synth_speech_like(kind, duration_s, seed=0, sample_rate=DEFAULT_RATE, band=(0.0, 4000.0), f0=200.0):
    """Deterministic test signal confined to a frequency band.

    Parameters
    ----------
    kind : {"harmonic", "chirp", "filtered-noise"}
        ``harmonic``: multiples of ``f0`` inside ``band`` with random
        amplitudes and phases. ``chirp``: a linear sweep across the inner 90%
        of ``band``. ``filtered-noise``: white noise masked to ``band`` in the
        frequency domain.
    duration_s : float
    seed : int
    band : (lo, hi) in Hz

    Returns
    -------
    AudioClip
        Peak-normalized to 0.5.
    """
    if not duration_s > 0:
        raise ValueError("duration must be positive")
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    lo, hi = band
    if kind == "harmonic":
        k = np.arange(1, int((sample_rate / 2) // f0) + 1)
        freqs = k * f0
        freqs = freqs[(freqs >= lo) & (freqs <= hi) & (freqs < sample_rate / 2)]
        amp = rng.uniform(0.5, 1.0, len(freqs))
        ph = rng.uniform(0, 2 * np.pi, len(freqs))
        x = np.zeros(n)
        for a, f, p in zip(amp, freqs, ph):
            x += a * np.sin(2 * np.pi * f * t + p)
        x = _fade(x, sample_rate, 0.05)
    elif kind == "chirp":
        f_a, f_b = lo + 0.05 * (hi - lo), hi - 0.05 * (hi - lo)
        phase = 2 * np.pi * (f_a * t + 0.5 * (f_b - f_a) / duration_s * t**2)
        x = _fade(np.sin(phase + rng.uniform(0, 2 * np.pi)), sample_rate, 0.05)
    elif kind == "filtered-noise":
        X = np.fft.rfft(rng.standard_normal(n))
        f = np.fft.rfftfreq(n, 1 / sample_rate)
        X[(f < lo) | (f > hi)] = 0
        x = np.fft.irfft(X, n)
    else:
        raise ValueError(f"unknown kind {kind!r}")
    peak = np.max(np.abs(x))
    if peak > 0:
        x = 0.5 * x / peak
    return AudioClip(x, sample_rate, None, f"{kind}-{seed}")


# vowel formants (Hz) for an adult male vocal tract
_VOWELS = np.array(
    [
        [730, 1090, 2440],
        [270, 2290, 3010],
        [300, 870, 2240],
        [530, 1840, 2480],
        [570, 840, 2410],
        [660, 1720, 2410],
        [440, 1020, 2240],
        [490, 1350, 1690],
    ],
    dtype=float,
)
_BANDWIDTHS = np.array([90.0, 110.0, 170.0])


@dataclass
class SpeakerProfile:
    """Parameters of one synthetic speaker."""

    name: str
    sex: str  # "m" or "f"
    f0: float  # mean pitch, Hz
    tract: float  # formant scale factor
    tilt: float  # source spectral slope, dB/octave
    vowels: np.ndarray  # (V, 3) personal formant table
    rate: float  # syllables per second
    noise: float  # aspiration level
    fricative: float = 4500.0  # centre of the speaker's fricative noise band, Hz

    @classmethod
    def random(cls, name, sex, rng):
        if sex == "m":
            f0, tract = rng.uniform(90, 150), rng.uniform(0.92, 1.05)
        else:
            f0, tract = rng.uniform(165, 255), rng.uniform(1.12, 1.25)
        vowels = _VOWELS * tract * rng.uniform(0.93, 1.07, _VOWELS.shape)
        return cls(name, sex, f0, tract, rng.uniform(-14, -9), vowels, rng.uniform(3.0, 4.5),
                   rng.uniform(0.005, 0.02), rng.uniform(3500, 5500) * tract)


def _formant_gain(freqs, formants):
    """Magnitude of a cascade of second-order resonances at ``freqs``."""
    g = np.ones_like(freqs)
    for F, B in zip(formants, _BANDWIDTHS):
        g = g * F**2 / np.sqrt((F**2 - freqs**2) ** 2 + (B * freqs) ** 2)
    return g


def _syllable(profile, n, sample_rate, rng, f0_start, f0_end):
    t = np.arange(n) / sample_rate
    f0 = np.linspace(f0_start, f0_end, n) * (1 + 0.01 * np.sin(2 * np.pi * 5.5 * t + rng.uniform(0, 6.3)))
    phase0 = 2 * np.pi * np.cumsum(f0) / sample_rate
    v1, v2 = profile.vowels[rng.integers(len(profile.vowels), size=2)]
    glide = np.clip((t / t[-1] - 0.3) / 0.4, 0, 1)[:, None] if n > 1 else np.zeros((n, 1))
    formants = (1 - glide) * v1 + glide * v2  # (n, 3)
    n_harm = int(0.45 * sample_rate / f0.min())
    x = np.zeros(n)
    for k in range(1, n_harm + 1):
        fk = k * f0
        live = fk < 0.48 * sample_rate
        if not np.any(live):
            break
        gain = np.ones(n)
        for i in range(3):
            F = formants[:, i]
            gain *= F**2 / np.sqrt((F**2 - fk**2) ** 2 + (_BANDWIDTHS[i] * fk) ** 2)
        amp = gain * k ** (profile.tilt / 6.02)
        x += np.where(live, amp * np.sin(k * phase0 + rng.uniform(0, 2 * np.pi)), 0.0)
    x += profile.noise * np.std(x) * rng.standard_normal(n)
    env = np.sin(np.pi * np.arange(n) / n) ** 0.6
    return x * env


def _consonant(profile, rng, sample_rate, level):
    """Fricative (band noise) or plosive burst (short broadband decay)."""
    if rng.random() < 0.6:
        n = int(rng.uniform(0.04, 0.12) * sample_rate)
        lo, hi = 0.7 * profile.fricative, min(1.6 * profile.fricative, 0.48 * sample_rate)
        env = np.sin(np.pi * np.arange(n) / n)
    else:
        n = int(rng.uniform(0.01, 0.025) * sample_rate)
        lo, hi = 300.0, 0.45 * sample_rate
        env = np.exp(-np.arange(n) / (0.3 * n))
    X = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1 / sample_rate)
    X[(f < lo) | (f > hi)] = 0
    x = np.fft.irfft(X, n) * env
    return level * x / max(np.std(x), 1e-12)


def synth_utterance(profile, duration_s, seed=0, sample_rate=DEFAULT_RATE):
    """Syllables (optional consonant onset + voiced nucleus) and short pauses, peak-normalized to 0.5."""
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate))
    x = np.zeros(n)
    pos = int(rng.uniform(0.02, 0.1) * sample_rate)
    f0 = profile.f0 * rng.uniform(0.95, 1.1)
    while pos < n:
        length = int(rng.uniform(0.6, 1.4) / profile.rate * sample_rate)
        length = min(length, n - pos)
        if length < 0.04 * sample_rate:
            break
        # declining phrase pitch with a reset after pauses
        accent = rng.uniform(0.85, 1.2)
        f0_end = f0 * rng.uniform(0.9, 1.05)
        seg = _syllable(profile, length, sample_rate, rng, f0 * accent, f0_end * accent)
        seg *= rng.uniform(0.4, 1.0)
        if rng.random() < 0.6:
            c = _consonant(profile, rng, sample_rate, rng.uniform(0.1, 0.4) * np.std(seg))
            c = c[: n - pos]
            x[pos:pos + len(c)] += c
            pos += len(c)
            length = min(length, n - pos)
            seg = seg[:length]
        x[pos:pos + length] += seg
        f0 = f0_end
        pos += length
        if rng.random() < 0.3:
            pos += int(rng.uniform(0.05, 0.3) * sample_rate)
            f0 = profile.f0 * rng.uniform(0.95, 1.1)
    x = _fade(x, sample_rate)
    peak = np.max(np.abs(x))
    return 0.5 * x / peak if peak > 0 else x


def synthetic_corpus(n_speakers=12, utterances=4, duration_s=8.0, seed=0, sample_rate=DEFAULT_RATE, root=None):
    """Half female (``f00``, ...), half male (``m00``, ...) synthetic speakers.

    Returns the same ``groups`` mapping as :func:`load_corpus`; with ``root``
    the corpus is also written to disk with its manifest.
    """
    rng = np.random.default_rng(seed)
    groups = {}
    n_f = n_speakers - n_speakers // 2
    names = [f"f{i:02d}" for i in range(n_f)] + [f"m{i:02d}" for i in range(n_speakers - n_f)]
    for name in names:
        profile = SpeakerProfile.random(name, name[0], rng)
        seeds = rng.integers(2**31, size=utterances)
        groups[name] = [
            AudioClip(synth_utterance(profile, duration_s, int(s), sample_rate), sample_rate, name, f"u{u:02d}")
            for u, s in enumerate(seeds)
        ]
    groups = dict(sorted(groups.items()))
    if root is not None:
        save_corpus(groups, root)
    return groups
