"""
Approximate transfer functions built from a few early echoes.

Every (source, microphone) channel is a sum of unit-amplitude delayed
impulses: the direct path and the ``K`` echoes from the nearest image
microphones. Only relative timing is kept; see :func:`echo_channels` for how
the global delay is removed.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .acoustics import enumerate_images

MODES = ("learn", "anechoic", "no-echoes")


class EchoModelWarning(UserWarning):
    pass


@dataclass
class EchoChannel:
    """Delays and amplitudes of one (source, mic) channel.

    ``delays_s`` start at 0 (direct path). ``offset_s`` is a pure delay of
    the whole channel relative to the source's reference microphone; it only
    affects the phase of ``H``, never ``Q``.
    """

    delays_s: np.ndarray
    amplitudes: np.ndarray
    offset_s: float = 0.0
    gain: float = 1.0

    def __post_init__(self):
        self.delays_s = np.asarray(self.delays_s, dtype=float)
        self.amplitudes = np.broadcast_to(
            np.asarray(self.amplitudes, dtype=float), self.delays_s.shape
        ).copy()
        if self.delays_s.size == 0 or self.delays_s[0] != 0.0:
            raise ValueError("first delay must be exactly 0 (direct path)")
        if np.any(np.diff(self.delays_s) < 0):
            raise ValueError("delays must be sorted ascending")

    @property
    def n_echoes(self):
        return len(self.delays_s) - 1


@dataclass
class ChannelMatrix:
    H: np.ndarray  # complex (F, M, J)
    provenance: str
    Q: np.ndarray = field(default=None)
    echoes: list = field(default=None, repr=False)  # [j][m] -> EchoChannel

    def __post_init__(self):
        self.H = np.asarray(self.H)
        if self.Q is None:
            self.Q = np.abs(self.H) ** 2
        if not (np.all(np.isfinite(self.H)) and np.all(np.isfinite(self.Q))):
            raise ValueError("channel entries must be finite")

    @property
    def shape(self):
        return self.H.shape

    def swap_sources(self, order):
        order = list(order)
        echoes = None if self.echoes is None else [self.echoes[j] for j in order]
        return ChannelMatrix(self.H[:, :, order], self.provenance, self.Q[:, :, order], echoes)

    def to_json(self):
        doc = {"provenance": self.provenance, "shape": list(self.H.shape)}
        if self.echoes is not None:
            doc["channels"] = [
                [
                    {
                        "delays_s": ch.delays_s.tolist(),
                        "amplitudes": ch.amplitudes.tolist(),
                        "offset_s": ch.offset_s,
                        "gain": ch.gain,
                    }
                    for ch in row
                ]
                for row in self.echoes
            ]
        return json.dumps(doc, indent=2)


def k_nearest_image_mics(room, mics, source, K, tie_tol=1e-9):
    """Pick the ``K`` image microphones nearest to each real microphone.

    Microphones, not the source, are mirrored. Images are ranked by their
    distance to the real microphone, ties by the first reflecting wall, so
    the selection is deterministic.

    Returns
    -------
    list (one per mic) of lists of ``(image_position, relative_delay_s)``;
    the first entry is the microphone itself with delay 0.
    """
    if K < 0:
        raise ValueError("K must be non-negative")
    c = room.speed_of_sound
    source = np.asarray(source, dtype=float)
    out = []
    for mic in np.atleast_2d(mics):
        images = enumerate_images(room, mic, max(K, 1) if K else 0)
        # an order-n image has n distinct, strictly nearer ancestors, so the
        # K nearest never exceed order K
        cand = [im for im in images if im.order > 0]
        if len(cand) < K:
            raise ValueError(f"only {len(cand)} image microphones available, asked for K={K}")
        cand.sort(key=lambda im: (round(np.linalg.norm(im.position - mic) / tie_tol), im.wall_sequence))
        direct = np.linalg.norm(source - mic)
        chosen = [(np.array(mic, dtype=float), 0.0)]
        for im in cand[:K]:
            d = np.linalg.norm(source - im.position)
            chosen.append((im.position, (d - direct) / c))
        out.append(chosen)
    return out


def echo_channels(room, mics, sources, K, alpha=1.0, reference_mic=0):
    """EchoChannel for every (source, mic) pair.

    Echo delays are measured from each pair's own direct path. The direct
    paths of one source to the different microphones keep their relative
    delays (``offset_s``, relative to ``reference_mic``), so the phase of
    ``H`` still carries the inter-microphone time differences.
    """
    c = room.speed_of_sound
    mics = np.atleast_2d(mics)
    out = []
    for s in np.atleast_2d(sources):
        picks = k_nearest_image_mics(room, mics, s, K)
        dist = np.linalg.norm(mics - s, axis=1)
        row = []
        for m, pick in enumerate(picks):
            delays = np.array([d for _, d in pick])
            order = np.argsort(delays, kind="stable")
            delays = delays[order]
            delays[0] = 0.0
            if np.any(delays < -1e-12):
                raise ValueError("image microphone path shorter than the direct path")
            row.append(
                EchoChannel(np.maximum(delays, 0.0), alpha, (dist[m] - dist[reference_mic]) / c)
            )
        out.append(row)
    return out


def anechoic_channels(room, mics, sources, reference_mic=0):
    """Exact direct-path channels relative to the reference microphone.

    Includes the relative spherical-spreading gain, so on anechoic mixtures
    there is no model mismatch.
    """
    c = room.speed_of_sound
    mics = np.atleast_2d(mics)
    out = []
    for s in np.atleast_2d(sources):
        dist = np.linalg.norm(mics - s, axis=1)
        out.append(
            [
                EchoChannel([0.0], 1.0, (dist[m] - dist[reference_mic]) / c, dist[reference_mic] / dist[m])
                for m in range(len(mics))
            ]
        )
    return out


def build_channels(echoes, n_freq, frame_size, sample_rate, provenance=None):
    """Evaluate ``H[f, m, j] = gain * exp(-i w offset) * sum_k a_k exp(-i w t_k)``.

    ``echoes`` is indexed ``[j][m]``. Frequencies are the one-sided STFT bin
    centres ``f * sample_rate / frame_size``.
    """
    J = len(echoes)
    M = len(echoes[0])
    omega = 2 * np.pi * np.arange(n_freq) * sample_rate / frame_size
    frame_dur = frame_size / sample_rate
    H = np.zeros((n_freq, M, J), dtype=complex)
    max_k = 0
    for j, row in enumerate(echoes):
        for m, ch in enumerate(row):
            if ch.delays_s[-1] >= frame_dur:
                warnings.warn(
                    f"echo delay {ch.delays_s[-1]:.4f} s exceeds the frame duration {frame_dur:.4f} s",
                    EchoModelWarning,
                )
            phase = np.exp(-1j * np.outer(omega, ch.delays_s))
            H[:, m, j] = ch.gain * np.exp(-1j * omega * ch.offset_s) * (phase @ ch.amplitudes)
            max_k = max(max_k, ch.n_echoes)
    if provenance is None:
        provenance = "no-echoes" if max_k == 0 else f"echoes({max_k})"
    return ChannelMatrix(H, provenance, echoes=echoes)


def baseline_channels(kind, shape, seed=0):
    """Flat or randomly initialised channels of shape ``(F, M, J)``.

    ``anechoic`` and ``no-echoes`` give ``H = Q = 1``. ``learn`` draws a
    strictly positive magnitude and a uniform random phase from ``seed``.
    """
    if kind not in MODES:
        raise ValueError(f"unknown baseline {kind!r}; expected one of {MODES}")
    F, M, J = shape
    if kind in ("anechoic", "no-echoes"):
        return ChannelMatrix(np.ones(shape, dtype=complex), kind)
    rng = np.random.default_rng(seed)
    mag = 0.5 * (1.9 * np.abs(rng.standard_normal(shape)) + 0.1)
    phase = np.exp(2j * np.pi * rng.random(shape))
    H = mag * phase
    return ChannelMatrix(H, "learn-init")


def channels_for_mode(mode, scenario, pair, n_freq, frame_size, seed=0):
    """Channel matrix for a named channel mode.

    Modes: ``"learn"``, ``"anechoic"``, ``"no-echoes"`` or an integer ``K``
    (also ``"K=3"`` / ``"echoes(3)"``). ``anechoic`` uses the exact direct
    path; ``no-echoes`` is the echo model with ``K = 0``.
    """
    room = scenario.room
    mics = scenario.mic_positions
    sources = scenario.source_positions[list(pair)]
    fs = room.sample_rate
    if mode == "learn":
        return baseline_channels("learn", (n_freq, len(mics), len(sources)), seed)
    if mode == "anechoic":
        return build_channels(anechoic_channels(room, mics, sources), n_freq, frame_size, fs, "anechoic")
    K = 0 if mode == "no-echoes" else parse_k(mode)
    prov = "no-echoes" if K == 0 else f"echoes({K})"
    return build_channels(echo_channels(room, mics, sources, K), n_freq, frame_size, fs, prov)


def parse_k(mode):
    if isinstance(mode, (int, np.integer)):
        return int(mode)
    s = str(mode)
    for prefix in ("K=", "echoes(", "k="):
        if s.startswith(prefix):
            s = s[len(prefix) :].rstrip(")")
    return int(s)
