"""
Itakura-Saito NMF building blocks.

Shapes follow the rest of the package: power spectra are ``(F, N)`` (or
``(M, F, N)`` for several microphones), dictionaries ``(F, A)``, activations
``(A, N)``, squared channel magnitudes ``Q`` are ``(F, M, J)``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

EPS = 1e-12

# regularization per channel mode, universal dictionary
GAMMA_TABLE = {
    "learn": 1e-1,
    "anechoic": 10.0,
    0: 10.0,
    1: 1e-3,
    2: 0.0,
    3: 0.0,
    4: 0.0,
    5: 0.0,
    6: 0.0,
}


def default_gamma(mode):
    """Regularization weight for a channel mode (``"learn"``, ``"anechoic"``, ``"no-echoes"`` or K)."""
    if mode == "no-echoes":
        return GAMMA_TABLE[0]
    if mode in ("learn", "anechoic"):
        return GAMMA_TABLE[mode]
    from .echomodel import parse_k

    k = parse_k(mode)
    return GAMMA_TABLE.get(k, 0.0)


def is_divergence(V, V_hat):
    """Sum of ``v / vh - log(v / vh) - 1`` over all entries.

    Raises ``ValueError`` if any ``V_hat`` entry is not strictly positive.
    Zero entries of ``V`` are floored at :data:`EPS`.
    """
    V = np.asarray(V, dtype=float)
    V_hat = np.asarray(V_hat, dtype=float)
    if np.any(V_hat <= 0):
        raise ValueError("V_hat must be strictly positive")
    if np.any(V < 0):
        raise ValueError("V must be non-negative")
    r = np.maximum(V, EPS) / V_hat
    return float(np.sum(r - np.log(r) - 1.0))


def _is_floored(V, V_hat):
    r = np.maximum(V, EPS) / np.maximum(V_hat, EPS)
    return float(np.sum(r - np.log(r) - 1.0))


@dataclass
class Dictionary:
    D: np.ndarray  # (F, A)
    blocks: dict = field(default_factory=dict)  # speaker -> (start, stop)
    normalization: str = "l1"
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.D = np.asarray(self.D, dtype=float)
        if not self.blocks:
            self.blocks = {"all": (0, self.D.shape[1])}
        spans = sorted(tuple(v) for v in self.blocks.values())
        pos = 0
        for a, b in spans:
            if a != pos or b <= a:
                raise ValueError("dictionary blocks must partition the atoms")
            pos = b
        if pos != self.D.shape[1]:
            raise ValueError("dictionary blocks must partition the atoms")

    @property
    def n_atoms(self):
        return self.D.shape[1]

    def block(self, name):
        a, b = self.blocks[name]
        return self.D[:, a:b]

    def save(self, path):
        """Write ``<path>`` (npz) with the atoms and a JSON metadata string."""
        meta = {
            "blocks": {k: list(v) for k, v in self.blocks.items()},
            "normalization": self.normalization,
            "provenance": self.provenance,
        }
        np.savez(path, D=self.D, meta=json.dumps(meta, sort_keys=True))

    @classmethod
    def load(cls, path):
        with np.load(path) as f:
            meta = json.loads(str(f["meta"]))
            return cls(f["D"], {k: tuple(v) for k, v in meta["blocks"].items()},
                       meta["normalization"], meta["provenance"])

    @classmethod
    def concatenate(cls, dicts, names):
        blocks, pos, mats = {}, 0, []
        for name, d in zip(names, dicts):
            D = d.D if isinstance(d, Dictionary) else np.asarray(d)
            blocks[name] = (pos, pos + D.shape[1])
            pos += D.shape[1]
            mats.append(D)
        return cls(np.concatenate(mats, axis=1), blocks)


def normalize_columns(D, Z=None):
    """Scale dictionary columns to unit sum; push the scale into ``Z``."""
    s = D.sum(axis=0)
    s = np.where(s > 0, s, 1.0)
    D = D / s
    if Z is None:
        return D
    return D, Z * s[:, None]


def is_nmf(V, n_atoms, iters=400, seed=0, D=None, Z=None, update_D=True):
    """Single-channel IS-NMF by multiplicative updates.

    Returns ``(D, Z, cost)`` with unit-sum dictionary columns and the cost
    recorded after every iteration.
    """
    V = np.maximum(np.asarray(V, dtype=float), EPS)
    F, N = V.shape
    rng = np.random.default_rng(seed)
    scale = V.mean()
    if D is None:
        D = rng.uniform(0.5, 1.5, (F, n_atoms))
    if Z is None:
        Z = rng.uniform(0.5, 1.5, (n_atoms, N)) * scale * F / n_atoms
    D, Z = normalize_columns(np.maximum(D, EPS), Z)
    cost = np.empty(iters)
    for it in range(iters):
        Vh = np.maximum(D @ Z, EPS)
        Z *= (D.T @ (V * Vh**-2)) / np.maximum(D.T @ (1.0 / Vh), EPS)
        if update_D:
            Vh = np.maximum(D @ Z, EPS)
            D *= ((V * Vh**-2) @ Z.T) / np.maximum((1.0 / Vh) @ Z.T, EPS)
            D, Z = normalize_columns(np.maximum(D, EPS), Z)
        cost[it] = _is_floored(V, D @ Z)
    return D, Z, cost


def train_dictionary(power_spectra, atoms_per_speaker, iters=400, seed=0, names=None):
    """Learn one IS-NMF dictionary block per speaker and concatenate them.

    Parameters
    ----------
    power_spectra : list of ndarray
        One ``(F, N_i)`` power spectrogram per speaker (concatenate a
        speaker's utterances along time beforehand).
    atoms_per_speaker : int
    iters : int
    seed : int
        Speaker ``i`` is initialised from ``seed + i``.
    names : list of str, optional
        Block names, defaults to ``"spk0"``, ``"spk1"``, ...
    """
    if atoms_per_speaker < 1:
        raise ValueError("atoms_per_speaker must be >= 1")
    power_spectra = list(power_spectra)
    if not power_spectra:
        raise ValueError("no training spectra")
    if names is None:
        names = [f"spk{i}" for i in range(len(power_spectra))]
    blocks, traces = [], {}
    h = hashlib.sha256()
    for i, (name, P) in enumerate(zip(names, power_spectra)):
        P = np.asarray(P, dtype=float)
        if P.size == 0:
            raise ValueError(f"empty spectrum for speaker {name}")
        h.update(np.ascontiguousarray(P, dtype=np.float64).tobytes())
        D, _, cost = is_nmf(P, atoms_per_speaker, iters, seed + i)
        blocks.append(np.maximum(D, EPS))
        traces[name] = [float(cost[0]), float(cost[-1])]
    out = Dictionary.concatenate(blocks, names)
    out.D = np.maximum(out.D, EPS)
    out.provenance = {"corpus_sha256": h.hexdigest(), "seed": seed, "iterations": iters, "cost": traces}
    return out


# ---------------------------------------------------------------------------
# multichannel model  V_hat[m] = sum_j diag(Q[:, m, j]) D_j Z_j


def source_power(D, Z):
    """``[D_j @ Z_j for j]`` as an array ``(J, F, N)``."""
    return np.stack([d @ z for d, z in zip(D, Z)])


def model_power(Q, P):
    """``V_hat[m, f, n] = sum_j Q[f, m, j] P[j, f, n]``."""
    return np.einsum("fmj,jfn->mfn", Q, P)


def mu_cost(V, Q, D, Z, gamma=0.0):
    """Multichannel IS data fit plus ``gamma * sum_j ||Z_j||_1``."""
    Vh = np.maximum(model_power(Q, source_power(D, Z)), EPS)
    return _is_floored(V, Vh) + gamma * float(sum(z.sum() for z in Z))


def mu_update_activations(V, Q, D, Z, gamma=0.0, Vh=None):
    """One regularized multiplicative update of every ``Z_j``.

    ``Z_j <- Z_j * [sum_m (diag(Q_jm) D_j)^T (V_m / Vh_m^2)]
                 / [sum_m (diag(Q_jm) D_j)^T (1 / Vh_m) + gamma]``

    ``V`` is ``(M, F, N)``; ``Q`` is ``(F, M, J)``; ``D`` and ``Z`` are
    per-source lists. Returns the new list of activations.
    """
    V = np.asarray(V)
    if V.ndim == 2:
        V = V[None]
    M, F, N = V.shape
    if Q.shape[:2] != (F, M) or Q.shape[2] != len(D) or len(D) != len(Z):
        raise ValueError(f"shape mismatch: V {V.shape}, Q {Q.shape}, {len(D)} dictionaries, {len(Z)} activations")
    if Vh is None:
        Vh = model_power(Q, source_power(D, Z))
    Vh = np.maximum(Vh, EPS)
    inv = 1.0 / Vh
    ratio = V * inv * inv
    out = []
    for j, (d, z) in enumerate(zip(D, Z)):
        q = Q[:, :, j].T[:, :, None]  # (M, F, 1)
        num = d.T @ (q * ratio).sum(axis=0)
        den = d.T @ (q * inv).sum(axis=0) + gamma
        out.append(z * _safe_ratio(num, den))
    return out


def mu_update_channel(V, Q, D, Z, gamma=0.0, Vh=None, normalize=True):
    """One multiplicative update of the squared channel magnitudes.

    ``q_jm[f] <- q_jm[f] * [sum_n P_j V_m / Vh_m^2] / [sum_n P_j / Vh_m + c_j]``
    with ``P_j = D_j Z_j`` and ``c_j = gamma * ||Z_j||_1 / (F M)``: the
    penalty is charged on the activations of the unit-mean channel, which
    makes the per-source rescaling below cost-neutral.

    With ``normalize``, each ``Q_j`` is rescaled to mean one over (f, m) and
    the inverse scale pushed into ``Z_j``. Returns ``(Q, Z)``.
    """
    V = np.asarray(V)
    if V.ndim == 2:
        V = V[None]
    M, F, N = V.shape
    P = source_power(D, Z)
    if Vh is None:
        Vh = model_power(Q, P)
    Vh = np.maximum(Vh, EPS)
    inv = 1.0 / Vh
    ratio = V * inv * inv
    num = np.einsum("jfn,mfn->fmj", P, ratio)
    den = np.einsum("jfn,mfn->fmj", P, inv)
    zsum = np.array([z.sum() for z in Z])
    den = den + gamma * zsum[None, None, :] / (F * M)
    Q = Q * _safe_ratio(num, den)
    Z = [z.copy() for z in Z]
    if normalize:
        for j in range(Q.shape[2]):
            s = Q[:, :, j].mean()
            if zsum[j] > 0 and s > 0:
                Q[:, :, j] /= s
                Z[j] *= s
    return Q, Z


def _safe_ratio(num, den):
    """``num / den`` with ``0 / 0`` read as 1."""
    both_zero = (num == 0) & (den == 0)
    return np.where(both_zero, 1.0, num / np.where(den == 0, 1.0, den))


def init_activations(D, n_frames, scale=1.0, seed=0):
    """Seeded uniform(0.5, 1.5) activations times ``scale``, one block per dictionary."""
    rng = np.random.default_rng(seed)
    return [rng.uniform(0.5, 1.5, (d.shape[1], n_frames)) * scale for d in D]


def activation_scale(V, D):
    """Activation level at which ``sum_j D_j Z_j`` matches the mean data power."""
    atoms = sum(d.shape[1] for d in D)
    col = np.mean([d.sum(axis=0).mean() for d in D])
    return float(np.mean(V)) * V.shape[-2] / max(col * atoms, EPS)
