"""Magnitude-only multichannel NMF separation with multiplicative updates."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nmfcore
from .spectral import Spectrogram, istft


class NumericalFailure(RuntimeError):
    def __init__(self, message, iteration):
        super().__init__(f"{message} at iteration {iteration}")
        self.iteration = iteration


@dataclass
class MuRunConfig:
    channel_mode: object = "no-echoes"  # "learn", "anechoic", "no-echoes" or K
    gamma: float = 0.0
    iterations: int = 200
    dictionary_mode: str = "speaker"
    seed: int = 0
    reference_mic: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")


@dataclass
class SeparationResult:
    estimates: np.ndarray  # (J, T) time-domain images at the reference mic
    cost: np.ndarray  # one value per iteration
    Z: list
    spectra: np.ndarray = field(repr=False, default=None)  # (J, F, N) at the reference mic
    Q: np.ndarray = field(repr=False, default=None)
    H: np.ndarray = field(repr=False, default=None)


def _as_array(mixture):
    if isinstance(mixture, Spectrogram):
        return mixture.data
    return np.asarray(mixture)


def wiener_masks(Q, D, Z):
    """Power-ratio masks ``(J, M, F, N)``; they sum to one over sources."""
    P = nmfcore.source_power(D, Z)
    parts = np.einsum("fmj,jfn->jmfn", Q, P)
    total = parts.sum(axis=0, keepdims=True)
    J = parts.shape[0]
    return np.where(total > 0, parts / np.where(total > 0, total, 1.0), 1.0 / J)


def select_mask_output(masks, mixture, reference_mic=0):
    """Apply masks to the reference microphone; returns ``(J, F, N)`` spectra."""
    Y = _as_array(mixture)
    if not 0 <= reference_mic < Y.shape[0]:
        raise IndexError(f"reference_mic {reference_mic} out of range for {Y.shape[0]} microphones")
    masks = np.asarray(masks)
    if masks.ndim == 4:
        masks = masks[:, reference_mic]
    return masks * Y[reference_mic][None]


def separate_mu(mixture, channels, dictionaries, config=MuRunConfig(), Z0=None):
    """Fit activations (and, in learn mode, ``Q``) to the mixture power.

    Parameters
    ----------
    mixture : Spectrogram or ndarray, shape (M, F, N)
    channels : ChannelMatrix
        Only ``Q`` is used. In learn mode it is the starting point.
    dictionaries : list of ndarray
        One ``(F, A_j)`` dictionary per source (pass the same array twice
        for a universal dictionary).
    config : MuRunConfig
    Z0 : list of ndarray, optional
        Initial activations; seeded uniform draws otherwise.

    Returns
    -------
    SeparationResult
    """
    Y = _as_array(mixture)
    V = Y.real**2 + Y.imag**2
    M, F, N = V.shape
    if not np.any(V > 0):
        raise ValueError("mixture is all zeros")
    D = [np.maximum(np.asarray(getattr(d, "D", d), dtype=float), nmfcore.EPS) for d in dictionaries]
    for d in D:
        if d.shape[0] != F:
            raise ValueError(f"dictionary has {d.shape[0]} rows, mixture has {F} frequencies")
    Q = np.array(channels.Q, dtype=float)
    if Q.shape != (F, M, len(D)):
        raise ValueError(f"channel shape {Q.shape} does not match (F, M, J) = {(F, M, len(D))}")
    learn = config.channel_mode == "learn"
    if Z0 is None:
        scale = nmfcore.activation_scale(V / max(Q.mean(), nmfcore.EPS), D)
        Z = nmfcore.init_activations(D, N, scale, config.seed)
    else:
        Z = [np.array(z, dtype=float) for z in Z0]
    if learn:
        s = Q.mean(axis=(0, 1))
        Q /= s
        Z = [z * sj for z, sj in zip(Z, s)]

    cost = np.empty(config.iterations)
    for it in range(config.iterations):
        Z = nmfcore.mu_update_activations(V, Q, D, Z, config.gamma)
        if learn:
            Q, Z = nmfcore.mu_update_channel(V, Q, D, Z, config.gamma)
        cost[it] = nmfcore.mu_cost(V, Q, D, Z, config.gamma)
        if not np.isfinite(cost[it]):
            raise NumericalFailure("non-finite cost", it)

    masks = wiener_masks(Q, D, Z)
    spectra = select_mask_output(masks, Y, config.reference_mic)
    length = mixture.length if isinstance(mixture, Spectrogram) else None
    estimates = _synthesize(spectra, mixture, length)
    return SeparationResult(estimates, cost, Z, spectra, Q)


def _synthesize(spectra, mixture, length):
    if isinstance(mixture, Spectrogram):
        return istft(Spectrogram(spectra, mixture.config, mixture.sample_rate, length))
    return None
