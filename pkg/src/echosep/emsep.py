"""
Multichannel NMF separation by expectation-maximization.

Each source is a sum of NMF components ``c_k[f, n] ~ CN(0, d_fk z_kn)``
seen through a (fixed, or learned) complex channel ``H[f]``; the observation
noise is ``sigma_b[f] I``. The E-step computes component posteriors, the
M-step re-estimates the activations in closed form (and ``H`` in learn
mode), which is an exact EM so the negative log-likelihood never increases.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nmfcore
from .musep import NumericalFailure, SeparationResult, _as_array, _synthesize
from .spectral import Spectrogram


class CovarianceError(np.linalg.LinAlgError):
    pass


@dataclass
class EmRunConfig:
    channel_mode: object = "no-echoes"
    iterations: int = 300
    noise_floor: float = 1e-5
    seed: int = 0
    reference_mic: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.noise_floor > 0:
            raise ValueError("noise_floor must be positive")


def mixture_covariance(H, S, sigma_b):
    """``Sigma_Y[f, n] = sum_j S_j[f, n] h_j h_j^H + sigma_b[f] I``, shape (F, N, M, M)."""
    F, M, J = H.shape
    outer = np.einsum("fmj,fkj->fjmk", H, H.conj())  # (F, J, M, M)
    cov = np.einsum("jfn,fjmk->fnmk", S, outer)
    cov = cov + np.asarray(sigma_b)[:, None, None, None] * np.eye(M)
    return cov


def _inv_logdet(cov):
    """Batched Hermitian inverse and log-determinant via Cholesky."""
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise CovarianceError("mixture covariance is not positive definite") from exc
    logdet = 2.0 * np.log(np.abs(np.diagonal(L, axis1=-2, axis2=-1))).sum(axis=-1)
    M = cov.shape[-1]
    Linv = np.linalg.solve(L, np.broadcast_to(np.eye(M), cov.shape))
    inv = np.einsum("...km,...kn->...mn", Linv.conj(), Linv)
    return inv, logdet


def em_loglik(Y, H, S, sigma_b):
    """``sum_{f,n} y^H Sigma_Y^{-1} y + log det Sigma_Y``.

    Parameters
    ----------
    Y : ndarray, shape (M, F, N)
    H : ndarray, shape (F, M, J)
    S : ndarray, shape (J, F, N)
        Source variances.
    sigma_b : ndarray, shape (F,)
    """
    return _posterior_stats(_as_array(Y), np.asarray(H), np.asarray(S, dtype=float), sigma_b)[0]


def noise_variance(Y, noise_floor):
    """``noise_floor`` times the mean mixture power of each frequency."""
    V = np.abs(_as_array(Y)) ** 2
    level = V.mean(axis=(0, 2))
    floor = max(float(V.mean()), 1e-30) * 1e-12
    return noise_floor * np.maximum(level, floor)


def _posterior_stats(Y, H, S, sigma_b):
    """Cost, ``a_j = h_j^H Sigma^-1 y`` and ``B_ji = h_j^H Sigma^-1 h_i``.

    With ``G = H^H H`` and ``C = G diag(S) + sigma I`` (J x J), the
    push-through identity gives ``H^H Sigma^-1 = C^-1 H^H``, so only J x J
    systems are solved per bin:

    * ``a = C^-1 H^H y`` and ``B = C^-1 G``
    * ``y^H Sigma^-1 y = |y - H S a|^2 / sigma + sum_j S_j |a_j|^2``
    * ``log det Sigma = (M - J) log sigma + log det C``
    """
    M, F, N = Y.shape
    J = H.shape[2]
    sigma = np.asarray(sigma_b, dtype=float)[:, None]  # (F, 1)
    if np.any(sigma <= 0) or np.any(S < 0):
        raise CovarianceError("mixture covariance is not positive definite")
    G = np.einsum("fmj,fmi->jif", H.conj(), H)  # (J, J, F)
    u = np.einsum("fmj,mfn->jfn", H.conj(), Y)
    C = G[:, :, :, None] * S[None, :, :, :]  # C[j, i] = G[j, i] S_i
    for j in range(J):
        C[j, j] = C[j, j] + sigma
    if J == 1:
        det = C[0, 0]
        Cinv = (1.0 / det)[None, None]
    elif J == 2:
        det = C[0, 0] * C[1, 1] - C[0, 1] * C[1, 0]
        Cinv = np.array([[C[1, 1], -C[0, 1]], [-C[1, 0], C[0, 0]]]) / det
    else:
        Cm = np.moveaxis(C, (0, 1), (-2, -1))
        det = np.linalg.det(Cm)
        Cinv = np.moveaxis(np.linalg.inv(Cm), (-2, -1), (0, 1))
    det = det.real
    if np.any(det <= 0) or not np.all(np.isfinite(det)):
        raise CovarianceError("mixture covariance is not positive definite")
    a = np.einsum("jifn,ifn->jfn", Cinv, u)
    B = np.einsum("jkfn,kif->jifn", Cinv, G)
    # Sigma^-1 y = r / sigma with r = y - H (S a), so the quadratic form
    # splits into two non-negative terms (no cancellation)
    r = Y - np.einsum("fmj,jfn->mfn", H, S * a)
    quad = (r.real**2 + r.imag**2).sum(axis=0) / sigma + np.einsum("jfn,jfn->fn", S, a.real**2 + a.imag**2)
    logdet = (M - J) * np.log(sigma) + np.log(det)
    cost = float(quad.sum() + np.broadcast_to(logdet, (F, N)).sum())
    return cost, a, B


def separate_em(mixture, channels, dictionaries, config=EmRunConfig(), Z0=None):
    """EM-NMF with fixed dictionaries.

    Returns a :class:`~echosep.musep.SeparationResult` whose ``estimates``
    and ``spectra`` are the posterior-mean source images at the reference
    microphone, and whose ``cost`` is the negative log-likelihood evaluated at
    the start of each iteration.
    """
    Y = _as_array(mixture).astype(complex)
    M, F, N = Y.shape
    if not np.any(Y != 0):
        raise ValueError("mixture is all zeros")
    D = [np.maximum(np.asarray(getattr(d, "D", d), dtype=float), nmfcore.EPS) for d in dictionaries]
    H = np.array(channels.H, dtype=complex)
    J = len(D)
    if H.shape != (F, M, J):
        raise ValueError(f"channel shape {H.shape} does not match (F, M, J) = {(F, M, J)}")
    learn = config.channel_mode == "learn"
    sigma_b = noise_variance(Y, config.noise_floor)
    if Z0 is None:
        V = np.abs(Y) ** 2
        gain = max(float(np.mean(np.abs(H) ** 2)), nmfcore.EPS)
        Z = nmfcore.init_activations(D, N, nmfcore.activation_scale(V / gain, D), config.seed)
    else:
        Z = [np.array(z, dtype=float) for z in Z0]

    cost = np.empty(config.iterations)
    for it in range(config.iterations):
        S = nmfcore.source_power(D, Z)
        try:
            c, a, B = _posterior_stats(Y, H, S, sigma_b)
        except CovarianceError as exc:
            raise NumericalFailure(str(exc), it) from exc
        if not np.isfinite(c):
            raise NumericalFailure("non-finite likelihood", it)
        cost[it] = c
        if learn:
            H = _update_channels(Y, S, a, B)
        # component posterior power minus prior, projected on each atom
        Bd = np.real(np.einsum("jjfn->jfn", B))
        Z = [
            np.maximum(z + z * z * (d.T @ (np.abs(a[j]) ** 2 - Bd[j])) / F, 0.0)
            for j, (d, z) in enumerate(zip(D, Z))
        ]

    S = nmfcore.source_power(D, Z)
    _, a, _ = _posterior_stats(Y, H, S, sigma_b)
    x_hat = S * a  # posterior mean of each source
    spectra = H[:, config.reference_mic, :].T[:, :, None] * x_hat
    length = mixture.length if isinstance(mixture, Spectrogram) else None
    estimates = _synthesize(spectra, mixture, length)
    return SeparationResult(estimates, cost, Z, spectra, np.abs(H) ** 2, H)


def posterior_power(Y, H, S, sigma_b):
    """Posterior mean and second moment of every source, each ``(J, F, N)``."""
    _, a, B = _posterior_stats(_as_array(Y), H, S, sigma_b)
    x_hat = S * a
    p_hat = np.abs(x_hat) ** 2 + S - S * S * np.real(np.einsum("jjfn->jfn", B))
    return x_hat, p_hat


def _update_channels(Y, S, a, B):
    """Closed-form channel M-step ``H = R_xs R_ss^{-1}`` per frequency.

    The phase of the first microphone's entry is then removed for every
    (f, j); this does not change the likelihood.
    """
    N = Y.shape[2]
    x_hat = S * a  # (J, F, N)
    R_xs = np.einsum("mfn,jfn->fmj", Y, x_hat.conj()) / N
    # E[x x^H] = x_hat x_hat^H + diag(S) - S_j S_i B_ji
    R_ss = np.einsum("jfn,ifn->fji", x_hat, x_hat.conj())
    R_ss -= np.einsum("jfn,ifn,jifn->fji", S, S, B)
    R_ss += np.einsum("jfn,ji->fji", S, np.eye(S.shape[0]))
    R_ss = 0.5 * (R_ss + np.conj(np.swapaxes(R_ss, -1, -2))) / N
    H = np.swapaxes(np.linalg.solve(np.swapaxes(R_ss, -1, -2), np.swapaxes(R_xs, -1, -2)), -1, -2)
    ref = H[:, 0, :]
    phase = np.where(np.abs(ref) > 0, np.conj(ref) / np.where(np.abs(ref) > 0, np.abs(ref), 1.0), 1.0)
    return H * phase[:, None, :]
