import numpy as np
import pytest

from echosep import echomodel as em
from echosep import nmfcore as nc
from echosep.musep import MuRunConfig, separate_mu, select_mask_output, wiener_masks
from echosep.spectral import stft


def flat(F, M, J):
    return em.baseline_channels("no-echoes", (F, M, J))


def toy(rng, F=16, N=30, M=2, A=3):
    D = [rng.uniform(0.1, 1.0, (F, A)) for _ in range(2)]
    Y = rng.standard_normal((M, F, N)) + 1j * rng.standard_normal((M, F, N))
    return Y, D


def test_single_source_recovers_mixture():
    x = np.random.default_rng(0).standard_normal((2, 8000))
    S = stft(x)
    D = [np.random.default_rng(1).uniform(0.1, 1, (1025, 4))]
    res = separate_mu(S, flat(1025, 2, 1), D, MuRunConfig(iterations=5))
    np.testing.assert_allclose(res.estimates[0], x[0], atol=1e-10)


def test_universal_flat_is_symmetric():
    # identical dictionaries and channels give a swap-invariant cost
    rng = np.random.default_rng(2)
    Y, D = toy(rng)
    V = np.abs(Y) ** 2
    Q = flat(16, 2, 2).Q
    Z = [rng.uniform(0.1, 1, (3, 30)) for _ in range(2)]
    DD = [D[0], D[0]]
    assert nc.mu_cost(V, Q, DD, Z, 0.3) == pytest.approx(nc.mu_cost(V, Q, DD, Z[::-1], 0.3), rel=1e-13)


def test_disjoint_supports_separate_well():
    from echosep.metrics import bss_eval

    fs, T = 16000, 32000
    t = np.arange(T) / fs
    rng = np.random.default_rng(3)
    a = sum(np.sin(2 * np.pi * f * t + rng.uniform(0, 6)) for f in (300, 450, 600))
    b = sum(np.sin(2 * np.pi * f * t + rng.uniform(0, 6)) for f in (2500, 3100, 3700))
    a = a * (1 + 0.5 * np.sin(2 * np.pi * 2 * t))
    b = b * (1 + 0.5 * np.cos(2 * np.pi * 3 * t))
    mix = np.stack([a + b, a + 0.5 * b])
    Sa, Sb = np.abs(stft(a).data) ** 2, np.abs(stft(b).data) ** 2
    Da, _, _ = nc.is_nmf(Sa + 1e-6, 3, iters=100, seed=0)
    Db, _, _ = nc.is_nmf(Sb + 1e-6, 3, iters=100, seed=0)
    res = separate_mu(stft(mix), flat(1025, 2, 2), [Da, Db], MuRunConfig(iterations=100))
    ev = bss_eval(res.estimates, np.stack([a, b]))
    assert np.all(ev.sir > 15)


def test_masks_sum_to_one():
    rng = np.random.default_rng(4)
    Q = rng.uniform(0.1, 2, (16, 2, 3))
    D = [rng.uniform(0.1, 1, (16, 2)) for _ in range(3)]
    Z = [rng.uniform(0.0, 1, (2, 10)) for _ in range(3)]
    Z[2][:, :4] = 0
    m = wiener_masks(Q, D, Z)
    assert m.shape == (3, 2, 16, 10)
    np.testing.assert_allclose(m.sum(axis=0), 1.0, atol=1e-12)
    assert np.all((m >= 0) & (m <= 1))


def test_estimates_sum_to_reference_mic():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((3, 6000))
    S = stft(x)
    D = [rng.uniform(0.1, 1, (1025, 3)) for _ in range(2)]
    res = separate_mu(S, flat(1025, 3, 2), D, MuRunConfig(iterations=10))
    np.testing.assert_allclose(res.estimates.sum(axis=0), x[0], atol=1e-9)


def test_swapping_sources_swaps_outputs():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((2, 6000))
    S = stft(x)
    D = [rng.uniform(0.1, 1, (1025, 3)) for _ in range(2)]
    ch = em.baseline_channels("learn", (1025, 2, 2), seed=1)
    Z0 = [rng.uniform(0.1, 1, (3, S.n_frames)) for _ in range(2)]
    cfg = MuRunConfig(channel_mode="learn", gamma=0.1, iterations=15)
    a = separate_mu(S, ch, D, cfg, Z0=Z0)
    b = separate_mu(S, ch.swap_sources([1, 0]), D[::-1], cfg, Z0=Z0[::-1])
    np.testing.assert_allclose(a.estimates, b.estimates[::-1], atol=1e-10)
    np.testing.assert_allclose(a.cost, b.cost, rtol=1e-12)


def test_cost_nonincreasing_in_learn_mode():
    rng = np.random.default_rng(7)
    Y, D = toy(rng)
    ch = em.baseline_channels("learn", (16, 2, 2), seed=2)
    res = separate_mu(Y, ch, D, MuRunConfig(channel_mode="learn", gamma=0.1, iterations=80))
    assert np.all(np.diff(res.cost) <= 1e-9 * np.abs(res.cost[:-1]))
    assert res.estimates is None and res.spectra.shape == (2, 16, 30)


def test_errors():
    rng = np.random.default_rng(8)
    Y, D = toy(rng)
    with pytest.raises(ValueError):
        separate_mu(np.zeros_like(Y), flat(16, 2, 2), D)
    with pytest.raises(ValueError):
        separate_mu(Y, flat(16, 3, 2), D)
    with pytest.raises(ValueError):
        separate_mu(Y, flat(16, 2, 2), [d[:8] for d in D])
    with pytest.raises(ValueError):
        MuRunConfig(iterations=0)
    with pytest.raises(ValueError):
        MuRunConfig(gamma=-1)
    with pytest.raises(IndexError):
        select_mask_output(np.ones((2, 2, 16, 30)), Y, reference_mic=5)
