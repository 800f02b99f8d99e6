import warnings

import numpy as np
import pytest

from echosep import acoustics as ac
from echosep import echomodel as em


@pytest.fixture(scope="module")
def scene():
    room = ac.default_room()
    mics = ac.default_array()
    sources = np.array([[3.2, 3.0, 1.6], [3.6, 1.2, 1.4]])
    return room, mics, sources


def test_k0_is_flat_in_magnitude(scene):
    room, mics, sources = scene
    ch = em.build_channels(em.echo_channels(room, mics, sources, 0), 1025, 2048, 16000)
    np.testing.assert_allclose(ch.Q, 1.0)
    assert ch.provenance == "no-echoes"


def test_single_echo_closed_form():
    tau = 0.002
    ch = em.build_channels([[em.EchoChannel([0.0, tau], 1.0)]], 1025, 2048, 16000)
    w = 2 * np.pi * np.arange(1025) * 16000 / 2048
    np.testing.assert_allclose(ch.Q[:, 0, 0], 2 + 2 * np.cos(w * tau), atol=1e-12)


def test_perfect_notch():
    # w tau = pi at bin 64: f = 500 Hz, tau = 1 ms
    ch = em.build_channels([[em.EchoChannel([0.0, 1e-3], 1.0)]], 1025, 2048, 16000)
    assert ch.Q[64, 0, 0] == pytest.approx(0.0, abs=1e-20)


def test_q_is_squared_modulus(scene):
    room, mics, sources = scene
    ch = em.build_channels(em.echo_channels(room, mics, sources, 3), 257, 512, 16000)
    np.testing.assert_allclose(ch.Q, np.abs(ch.H) ** 2)
    assert ch.H.shape == (257, 3, 2)


def test_echo_channel_invariants():
    with pytest.raises(ValueError):
        em.EchoChannel([0.001, 0.002], 1.0)
    with pytest.raises(ValueError):
        em.EchoChannel([0.0, 0.003, 0.002], 1.0)


def test_k_nearest_delays(scene):
    room, mics, sources = scene
    picks = em.k_nearest_image_mics(room, mics, sources[0], 6)
    for mic, pick in zip(mics, picks):
        assert len(pick) == 7
        np.testing.assert_array_equal(pick[0][0], mic)
        dist = [np.linalg.norm(p - mic) for p, _ in pick[1:]]
        assert dist == sorted(dist)
        assert all(d >= 0 for _, d in pick)


def test_k_nearest_single_wall_far_field():
    # mic 0.5 m from the wall y = 0, source far away broadside -> echo at 2d/c
    room = ac.shoebox([40.0, 40.0, 40.0])
    mic = np.array([20.0, 0.5, 20.0])
    src = np.array([20.0, 39.0, 20.0])
    pick = em.k_nearest_image_mics(room, mic[None], src, 1)[0]
    assert pick[1][1] == pytest.approx(2 * 0.5 / ac.SPEED_OF_SOUND, rel=1e-3)


def test_echo_delays_match_rir_peaks(scene):
    room, mics, sources = scene
    fs = room.sample_rate
    ch = em.echo_channels(room, mics, sources[:1], 6)[0][0]
    rir = ac.synthesize_rir(room, sources[0], mics[0], 3).taps
    direct = np.linalg.norm(sources[0] - mics[0]) / ac.SPEED_OF_SOUND
    for t in ch.delays_s:
        n = (direct + t) * fs
        i = int(round(n))
        window = np.abs(rir[i - 2 : i + 3])
        assert window.max() > 0.2 * np.abs(rir).max() * 0.36 / 2


def test_negative_k_rejected():
    room = ac.shoebox([4.0, 3.0, 2.5])
    with pytest.raises(ValueError):
        em.k_nearest_image_mics(room, [[1.0, 1.0, 1.0]], [3.0, 2.0, 1.0], -1)


def test_long_delay_warns():
    with pytest.warns(em.EchoModelWarning):
        em.build_channels([[em.EchoChannel([0.0, 0.2], 1.0)]], 1025, 2048, 16000)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        em.build_channels([[em.EchoChannel([0.0, 0.01], 1.0)]], 1025, 2048, 16000)


def test_baselines():
    a = em.baseline_channels("anechoic", (9, 3, 2))
    assert np.var(a.Q) == 0 and np.all(a.H == 1)
    b = em.baseline_channels("no-echoes", (9, 3, 2))
    np.testing.assert_array_equal(b.Q, 1.0)
    l1 = em.baseline_channels("learn", (9, 3, 2), seed=4)
    l2 = em.baseline_channels("learn", (9, 3, 2), seed=4)
    np.testing.assert_array_equal(l1.H, l2.H)
    assert np.all(l1.Q > 0) and l1.provenance == "learn-init"
    with pytest.raises(ValueError):
        em.baseline_channels("bogus", (9, 3, 2))


def test_no_echoes_equals_k0(scene):
    room, mics, sources = scene
    sc = ac.Scenario(room, mics, sources)
    a = em.channels_for_mode("no-echoes", sc, (0, 1), 65, 128)
    b = em.channels_for_mode(0, sc, (0, 1), 65, 128)
    np.testing.assert_array_equal(a.H, b.H)
    np.testing.assert_array_equal(a.Q, b.Q)


def test_anechoic_mode_is_exact_direct_path(scene):
    room, mics, sources = scene
    sc = ac.Scenario(room, mics, sources)
    ch = em.channels_for_mode("anechoic", sc, (0, 1), 1025, 2048)
    d = np.linalg.norm(mics - sources[0], axis=1)
    w = 2 * np.pi * np.arange(1025) * 16000 / 2048
    expected = d[0] / d[1] * np.exp(-1j * w * (d[1] - d[0]) / ac.SPEED_OF_SOUND)
    np.testing.assert_allclose(ch.H[:, 1, 0], expected, atol=1e-12)
    np.testing.assert_allclose(ch.H[:, 0, :], 1.0)


def test_spatial_diversity_grows_with_k(scene):
    room, mics, sources = scene
    var = []
    for K in (0, 2):
        ch = em.build_channels(em.echo_channels(room, mics, sources, K), 1025, 2048, 16000)
        var.append(np.var(ch.Q, axis=1).mean())
    assert var[0] < 1e-28 and var[1] > 1e-3


def test_swap_sources_and_json(scene):
    room, mics, sources = scene
    ch = em.build_channels(em.echo_channels(room, mics, sources, 1), 33, 64, 16000)
    sw = ch.swap_sources([1, 0])
    np.testing.assert_array_equal(sw.H[:, :, 0], ch.H[:, :, 1])
    doc = ch.to_json()
    assert '"delays_s"' in doc and '"provenance": "echoes(1)"' in doc


def test_parse_k():
    assert em.parse_k(3) == 3
    assert em.parse_k("K=4") == 4
    assert em.parse_k("echoes(2)") == 2
