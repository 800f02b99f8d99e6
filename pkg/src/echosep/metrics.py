"""
SDR / SIR by least-squares projection on delayed references.

Each estimate is split into ``s_target`` (its projection on ``filter_len``
delayed copies of the matched reference), ``e_interf`` (what the other
references add to the projection) and ``e_artif`` (the rest).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.signal import fftconvolve

# ratios above this are reported as +inf (the error is at round-off level)
INF_DB = 200.0
RIDGE = 1e-12


@dataclass
class EvalResult:
    sdr: np.ndarray  # per reference source, dB
    sir: np.ndarray
    permutation: np.ndarray  # estimate index matched to each reference
    degenerate: list = field(default_factory=list)  # sources with zero energy


def _db(num, den):
    if num <= 0:
        return -np.inf
    if den <= num * 10 ** (-INF_DB / 10):
        return np.inf
    return 10 * np.log10(num / den)


class _Projector:
    def __init__(self, references, filter_len):
        self.refs = references
        self.L = filter_len
        J, T = references.shape
        self.n_fft = int(2 ** np.ceil(np.log2(T + filter_len - 1)))
        self.R = np.fft.rfft(references, self.n_fft)
        L = filter_len
        G = np.zeros((J * L, J * L))
        for i, k in itertools.product(range(J), repeat=2):
            xc = np.fft.irfft(np.conj(self.R[i]) * self.R[k], self.n_fft)
            # G[(i, tau), (k, sigma)] = xc_ik[tau - sigma]
            lags = np.concatenate([xc[-(L - 1):], xc[:L]]) if L > 1 else xc[:1]
            idx = np.arange(L)[:, None] - np.arange(L)[None, :] + (L - 1)
            G[i * L:(i + 1) * L, k * L:(k + 1) * L] = lags[idx]
        self.G = G + RIDGE * np.mean(np.diag(G)) * np.eye(J * L)
        self.chol_all = scipy.linalg.cho_factor(self.G)
        self.chol_one = [scipy.linalg.cho_factor(self.G[i * L:(i + 1) * L, i * L:(i + 1) * L]) for i in range(J)]

    def correlations(self, estimate):
        E = np.fft.rfft(estimate, self.n_fft)
        return np.fft.irfft(np.conj(self.R) * E[None], self.n_fft)[:, : self.L]  # (J, L)

    def project(self, coeffs, sources):
        T = self.refs.shape[1]
        out = np.zeros(T + self.L - 1)
        for c, i in zip(coeffs, sources):
            out += fftconvolve(self.refs[i], c)[: T + self.L - 1]
        return out

    def decompose(self, estimate, target, d=None):
        if d is None:
            d = self.correlations(estimate)
        J, L = d.shape
        c_all = scipy.linalg.cho_solve(self.chol_all, d.ravel()).reshape(J, L)
        c_one = scipy.linalg.cho_solve(self.chol_one[target], d[target])
        s_target = self.project([c_one], [target])
        p_all = self.project(c_all, range(J))
        est = np.concatenate([estimate, np.zeros(L - 1)])
        return s_target, p_all - s_target, est - p_all


def bss_eval(estimates, references, filter_len=512):
    """SDR and SIR of every reference under the best estimate matching.

    Parameters
    ----------
    estimates, references : ndarray, shape (J, T)
        Truncated to the shorter length.
    filter_len : int
        Number of delays of each reference spanned by the projections.

    Returns
    -------
    EvalResult
        ``sdr[j]`` and ``sir[j]`` for reference ``j`` computed from estimate
        ``permutation[j]``; the permutation maximises the mean SIR.
    """
    estimates = np.atleast_2d(np.asarray(estimates, dtype=float))
    references = np.atleast_2d(np.asarray(references, dtype=float))
    if estimates.shape[0] != references.shape[0]:
        raise ValueError("need as many estimates as references")
    T = min(estimates.shape[1], references.shape[1])
    estimates, references = estimates[:, :T], references[:, :T]
    J = references.shape[0]

    degenerate = [j for j in range(J) if not np.any(references[j]) or not np.any(estimates[j])]
    if degenerate:
        sdr = np.full(J, -np.inf)
        sir = np.full(J, -np.inf)
        return EvalResult(sdr, sir, np.arange(J), degenerate)

    proj = _Projector(references, filter_len)
    sdr_m = np.empty((J, J))  # [estimate, reference]
    sir_m = np.empty((J, J))
    for e in range(J):
        d = proj.correlations(estimates[e])
        for r in range(J):
            s, i, a = proj.decompose(estimates[e], r, d)
            es = float(s @ s)
            sdr_m[e, r] = _db(es, float((i + a) @ (i + a)))
            sir_m[e, r] = _db(es, float(i @ i))

    best, best_score = None, -np.inf
    for perm in itertools.permutations(range(J)):
        score = np.mean([sir_m[perm[r], r] for r in range(J)])
        if best is None or score > best_score:
            best, best_score = perm, score
    perm = np.array(best)
    return EvalResult(sdr_m[perm, np.arange(J)], sir_m[perm, np.arange(J)], perm)
