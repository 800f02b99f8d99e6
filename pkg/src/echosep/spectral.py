"""STFT analysis / synthesis with a sine ("cosine") window at 50% overlap."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class StftConfigError(ValueError):
    pass


def cosine_window(n):
    """``sin(pi (t + 0.5) / n)``; its square overlap-adds to one at hop ``n / 2``."""
    return np.sin(np.pi * (np.arange(n) + 0.5) / n)


def hann_window(n):
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


_WINDOWS = {"cosine": cosine_window, "hann": hann_window}


@dataclass(frozen=True)
class StftConfig:
    frame_size: int = 2048
    hop: int = 1024
    window: str = "cosine"

    def __post_init__(self):
        if self.frame_size < 2 or self.hop < 1:
            raise StftConfigError("frame_size and hop must be positive")
        if self.hop > self.frame_size:
            raise StftConfigError("hop cannot exceed frame_size")
        if self.window not in _WINDOWS:
            raise StftConfigError(f"unknown window {self.window!r}")
        # analysis * synthesis window (both `w`) must overlap-add to a constant
        w2 = self.analysis_window() ** 2
        ola = np.zeros(self.hop)
        for k in range(0, self.frame_size, self.hop):
            seg = w2[k : k + self.hop]
            ola[: len(seg)] += seg
        if self.frame_size % self.hop or not np.allclose(ola, ola[0], rtol=1e-10):
            raise StftConfigError("window does not satisfy COLA for this hop")

    @property
    def n_freq(self):
        return self.frame_size // 2 + 1

    def analysis_window(self):
        return _WINDOWS[self.window](self.frame_size)

    def synthesis_window(self):
        w = self.analysis_window()
        w2 = w**2
        ola = sum(w2[k : k + self.hop].sum() for k in range(0, self.frame_size, self.hop)) / self.hop
        return w / ola

    def bin_frequencies(self, sample_rate):
        return np.arange(self.n_freq) * sample_rate / self.frame_size


@dataclass
class Spectrogram:
    data: np.ndarray  # complex, (..., F, N)
    config: StftConfig
    sample_rate: float
    length: int | None = None  # number of time samples analysed

    @property
    def shape(self):
        return self.data.shape

    @property
    def n_freq(self):
        return self.data.shape[-2]

    @property
    def n_frames(self):
        return self.data.shape[-1]

    def power(self):
        return power(self)

    def __add__(self, other):
        return Spectrogram(self.data + other.data, self.config, self.sample_rate, self.length)


def n_frames_for(length, config):
    if length <= config.frame_size:
        return 1
    return 1 + int(np.ceil((length - config.frame_size) / config.hop))


def stft(signal, config=StftConfig(), sample_rate=16000.0):
    """One-sided STFT, first frame starting at sample 0.

    ``signal`` may carry leading channel axes; the last axis is time. The
    tail is zero-padded to a whole number of frames.
    """
    x = np.asarray(signal, dtype=float)
    length = x.shape[-1]
    n = n_frames_for(length, config)
    total = config.frame_size + (n - 1) * config.hop
    pad = [(0, 0)] * (x.ndim - 1) + [(0, total - length)]
    x = np.pad(x, pad)
    idx = np.arange(config.frame_size)[None, :] + config.hop * np.arange(n)[:, None]
    frames = x[..., idx] * config.analysis_window()  # (..., N, L)
    spec = np.fft.rfft(frames, axis=-1)
    return Spectrogram(np.swapaxes(spec, -1, -2), config, sample_rate, length)


def istft(spec, length=None):
    """Weighted overlap-add inverse of :func:`stft`.

    Samples only reached by a single frame (the first and last half frame)
    are rescaled by the window envelope, so the round trip is exact wherever
    the envelope is not vanishingly small.
    """
    if isinstance(spec, Spectrogram):
        data, config = spec.data, spec.config
        length = spec.length if length is None else length
    else:
        raise TypeError("istft expects a Spectrogram")
    n = data.shape[-1]
    frames = np.fft.irfft(np.swapaxes(data, -1, -2), n=config.frame_size, axis=-1)
    ws = config.synthesis_window()
    frames = frames * ws
    total = config.frame_size + (n - 1) * config.hop
    out = np.zeros(data.shape[:-2] + (total,))
    env = np.zeros(total)
    wa = config.analysis_window()
    for i in range(n):
        sl = slice(i * config.hop, i * config.hop + config.frame_size)
        out[..., sl] += frames[..., i, :]
        env[sl] += wa * ws
    # the interior envelope is exactly one; fix only the edges
    edge = (env > 1e-9) & (np.abs(env - 1.0) > 1e-12)
    out[..., edge] /= env[edge]
    if length is not None:
        out = out[..., :length]
    return out


def power(spec):
    """Squared modulus, elementwise."""
    data = spec.data if isinstance(spec, Spectrogram) else np.asarray(spec)
    return data.real**2 + data.imag**2
