import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from echosep import acoustics as ac


def brute_images(room, point, max_order):
    """Independent mirror enumeration: every wall word of length <= max_order.

    A word is kept when every reflection is taken from the interior side of
    its wall plane (computed here from the raw plane equations). Positions
    are compared after rounding.
    """
    planes = [(w.normal, w.offset) for w in room.walls]
    found = {}
    for n in range(max_order + 1):
        for word in itertools.product(range(len(planes)), repeat=n):
            if any(a == b for a, b in zip(word, word[1:])):
                continue
            p = np.array(point, dtype=float)
            ok = True
            for w in word:
                nrm, off = planes[w]
                d = p @ nrm - off
                if d >= -1e-9:
                    ok = False
                    break
                p = p - 2 * d * nrm
            if ok:
                key = tuple(np.round(p, 6))
                found.setdefault(key, n)
    return found


def as_set(images):
    out = {}
    for im in images:
        out.setdefault(tuple(np.round(im.position, 6)), im.order)
    return out


ROOMS = {
    "shoebox": lambda: ac.shoebox([4.0, 3.0, 2.5], absorption=0.2),
    "prism": lambda: ac.default_room(),
    "pentagon": lambda: ac.Room([[0, 0], [4, 0], [5, 2], [2, 4], [-1, 2]], 3.0, 0.3),
}


@pytest.mark.parametrize("name", sorted(ROOMS))
@pytest.mark.parametrize("order", [0, 1, 2])
def test_images_match_brute_force(name, order):
    room = ROOMS[name]()
    src = np.array([1.1, 1.3, 1.2])
    assert as_set(ac.enumerate_images(room, src, order)) == brute_images(room, src, order)


def test_generic_matches_factorized_order3():
    room = ac.default_room()
    src = [2.0, 1.5, 1.0]
    a = ac.enumerate_images(room, src, 3)
    b = ac.enumerate_images_generic(room, src, 3)
    assert as_set(a) == as_set(b)


def test_shoebox_first_order_positions():
    room = ac.shoebox([4.0, 3.0, 2.5])
    s = np.array([1.0, 1.0, 1.0])
    first = {tuple(np.round(im.position, 9)) for im in ac.enumerate_images(room, s, 1) if im.order == 1}
    expected = {(1, -1, 1), (7, 1, 1), (1, 5, 1), (-1, 1, 1), (1, 1, -1), (1, 1, 4)}
    assert first == {tuple(float(v) for v in e) for e in expected}


def test_unfold_recovers_source():
    room = ac.default_room()
    s = np.array([2.0, 2.0, 1.4])
    for im in ac.enumerate_images(room, s, 3):
        np.testing.assert_allclose(im.unfold(room), s, atol=1e-9)


def test_attenuation_is_product_of_reflection_gains():
    room = ac.default_room(absorption=0.4)
    for im in ac.enumerate_images(room, [2.0, 2.0, 1.4], 3):
        assert im.attenuation == pytest.approx(0.6**im.order)


def test_room_validation():
    with pytest.raises(ac.GeometryError):
        ac.Room([[0, 0], [1, 1], [2, 0], [1, -1], [1, 0.5]], 2.0, 0.0)  # not convex
    with pytest.raises(ac.GeometryError):
        ac.Room([[0, 0], [1, 0], [0, 1]], -1.0, 0.0)
    with pytest.raises((ac.GeometryError, ValueError)):
        ac.shoebox([4, 3, 2.5], absorption=1.5)


def test_point_outside_room_rejected():
    room = ac.shoebox([4.0, 3.0, 2.5])
    with pytest.raises(ac.GeometryError):
        ac.enumerate_images(room, [5.0, 1.0, 1.0], 1)


def test_room_dict_round_trip():
    room = ac.default_room()
    again = ac.Room.from_dict(room.to_dict())
    assert again.to_dict() == room.to_dict()
    assert again.n_walls == 7


def test_direct_path_rir_peak():
    room = ac.shoebox([6.0, 5.0, 3.0], absorption=1.0)
    src, mic = np.array([1.0, 1.0, 1.5]), np.array([4.0, 3.0, 1.5])
    rir = ac.synthesize_rir(room, src, mic, 0)
    d = np.linalg.norm(src - mic)
    peak = np.argmax(np.abs(rir.taps))
    assert abs(peak - d / ac.SPEED_OF_SOUND * room.sample_rate) <= 0.5
    # fractional delay keeps the 1/(4 pi d) amplitude within the kernel's ripple
    assert rir.taps.sum() == pytest.approx(1 / (4 * np.pi * d), rel=1e-2)


def test_fractional_delay_kernel_integer_is_impulse():
    k = ac.fractional_delay_kernel(0.0)[0]
    centre = (ac.KERNEL_TAPS - 1) // 2
    assert k[centre] == pytest.approx(1.0)
    assert np.allclose(np.delete(k, centre), 0.0, atol=1e-12)


def test_t60_of_default_room():
    room = ac.default_room(absorption=0.4)
    mics = ac.default_array()
    rir = ac.synthesize_rir(room, [3.5, 2.5, 1.6], mics[0], 10)
    t60 = ac.schroeder_t60(rir.taps, room.sample_rate)
    assert 0.06 <= t60 <= 0.16


def test_t60_grows_as_absorption_falls():
    mics = ac.default_array()
    t = [
        ac.schroeder_t60(ac.synthesize_rir(ac.default_room(a), [3.5, 2.5, 1.6], mics[0], 12).taps, 16000)
        for a in (0.6, 0.4, 0.25)
    ]
    assert t[0] < t[1] < t[2]


def test_triangle_array_geometry():
    mics = ac.triangle_array([1, 1, 1.5], edge=0.3)
    for a, b in itertools.combinations(mics, 2):
        assert np.linalg.norm(a - b) == pytest.approx(0.3)
    np.testing.assert_allclose(mics.mean(axis=0), [1, 1, 1.5], atol=1e-12)


def test_sample_scenarios_constraints():
    room = ac.default_room()
    sc, pairs = ac.sample_scenarios(room, 40, seed=3)
    centre = sc.mic_positions.mean(axis=0)
    d = np.linalg.norm(sc.source_positions - centre, axis=1)
    assert np.all((d >= 2.5 - 1e-9) & (d <= 4.0 + 1e-9))
    assert all(room.is_inside(p) for p in sc.source_positions)
    for i, j in pairs:
        assert np.linalg.norm(sc.source_positions[i] - sc.source_positions[j]) >= 1.0
    again, pairs2 = ac.sample_scenarios(room, 40, seed=3)
    np.testing.assert_array_equal(sc.source_positions, again.source_positions)
    assert pairs == pairs2


def test_infeasible_scenario():
    room = ac.shoebox([2.0, 2.0, 2.0])
    with pytest.raises(ac.InfeasibleScenario):
        ac.sample_scenarios(room, 2, dist_range=(2.5, 4.0), mic_positions=[[1, 1, 1]], max_tries=50)


def test_scenario_json_round_trip(tmp_path):
    sc, _ = ac.sample_scenarios(ac.default_room(), 4, seed=1)
    sc.save(tmp_path / "s.json")
    again = ac.Scenario.load(tmp_path / "s.json")
    np.testing.assert_array_equal(again.source_positions, sc.source_positions)


def test_render_mixture_is_sum_of_images():
    sc, pairs = ac.sample_scenarios(ac.default_room(), 4, seed=0)
    rng = np.random.default_rng(0)
    x = [rng.standard_normal(4000), rng.standard_normal(4000)]
    mix, images = ac.render_mixture(sc, x, max_order=3, source_ids=pairs[0])
    assert images.shape[:2] == (2, 3)
    np.testing.assert_allclose(mix, images.sum(axis=0))


@settings(max_examples=25, deadline=None)
@given(
    x=st.floats(0.3, 3.7), y=st.floats(0.3, 2.7), z=st.floats(0.3, 2.2),
)
def test_image_distances_never_below_direct(x, y, z):
    room = ac.shoebox([4.0, 3.0, 2.5])
    p = np.array([x, y, z])
    mic = np.array([2.0, 1.5, 1.2])
    images = ac.enumerate_images(room, p, 2)
    direct = np.linalg.norm(p - mic)
    assert all(np.linalg.norm(im.position - mic) >= direct - 1e-9 for im in images)
    assert images[0].order == 0
