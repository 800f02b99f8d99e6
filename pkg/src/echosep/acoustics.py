"""
Image-source room simulation.

Rooms are convex prisms: a convex floor polygon extruded to a given height
(axis-aligned shoeboxes are the rectangular special case). Walls are indexed
with the side walls first (wall ``i`` joins floor vertices ``i`` and
``i + 1``), followed by the floor and the ceiling.

Wall absorption ``a`` is an *amplitude* absorption: every reflection scales
the image by ``1 - a``.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

SPEED_OF_SOUND = 343.0
KERNEL_TAPS = 81
_GEOM_TOL = 1e-9


class GeometryError(ValueError):
    """Point outside the room, or malformed room geometry."""


class InfeasibleScenario(RuntimeError):
    """Rejection sampling could not place the requested sources."""


@dataclass(frozen=True)
class Wall:
    vertices: np.ndarray  # (n, 3), counter-clockwise seen from inside
    normal: np.ndarray  # outward unit normal
    offset: float  # plane is normal @ x == offset
    absorption: float

    def signed_distance(self, p):
        """Positive outside the room, negative inside."""
        return np.asarray(p) @ self.normal - self.offset

    def reflect(self, p):
        p = np.asarray(p, dtype=float)
        d = self.signed_distance(p)
        return p - 2.0 * np.multiply.outer(d, self.normal)

    def contains(self, x, tol=1e-7):
        """True if ``x`` (on the wall plane) lies inside the wall polygon."""
        v = self.vertices
        edges = np.roll(v, -1, axis=0) - v
        side = np.einsum("ij,ij->i", np.asarray(x) - v, np.cross(self.normal, edges))
        return bool(np.all(side >= -tol) or np.all(side <= tol))


@dataclass
class Room:
    floor: np.ndarray  # (S, 2) convex polygon, counter-clockwise
    height: float
    absorption: np.ndarray  # (S + 2,) one per wall
    sample_rate: float = 16000.0
    speed_of_sound: float = SPEED_OF_SOUND
    walls: list = field(init=False, repr=False)

    def __post_init__(self):
        self.floor = np.asarray(self.floor, dtype=float)
        n_side = len(self.floor)
        absorption = np.broadcast_to(
            np.asarray(self.absorption, dtype=float), (n_side + 2,)
        ).copy()
        self.absorption = absorption
        if self.sample_rate <= 0:
            raise GeometryError("sample_rate must be positive")
        if np.any((absorption < 0) | (absorption > 1)):
            raise GeometryError("absorption must lie in [0, 1]")
        if self.height <= 0 or n_side < 3:
            raise GeometryError("degenerate room")
        edges = np.roll(self.floor, -1, axis=0) - self.floor
        cross = edges[:, 0] * np.roll(edges, -1, axis=0)[:, 1] - edges[:, 1] * np.roll(edges, -1, axis=0)[:, 0]
        if np.any(cross <= 0):
            raise GeometryError("floor polygon must be convex and counter-clockwise")
        self.walls = self._build_walls()

    def _build_walls(self):
        walls = []
        h = self.height
        for i in range(self.n_side):
            a, b = self.floor[i], self.floor[(i + 1) % self.n_side]
            e = b - a
            normal = np.array([e[1], -e[0], 0.0]) / np.hypot(*e)
            verts = np.array([[a[0], a[1], 0.0], [b[0], b[1], 0.0], [b[0], b[1], h], [a[0], a[1], h]])
            walls.append(Wall(verts, normal, float(normal @ verts[0]), float(self.absorption[i])))
        base = np.column_stack([self.floor, np.zeros(self.n_side)])
        walls.append(Wall(base[::-1].copy(), np.array([0.0, 0.0, -1.0]), 0.0, float(self.absorption[-2])))
        top = base + np.array([0.0, 0.0, h])
        walls.append(Wall(top, np.array([0.0, 0.0, 1.0]), float(h), float(self.absorption[-1])))
        return walls

    @property
    def n_side(self):
        return len(self.floor)

    @property
    def n_walls(self):
        return self.n_side + 2

    def is_inside(self, p, margin=0.0):
        p = np.asarray(p, dtype=float)
        return all(w.signed_distance(p) < -margin for w in self.walls)

    def check_inside(self, p):
        if not self.is_inside(p):
            raise GeometryError(f"point {np.asarray(p).tolist()} is not strictly inside the room")

    def to_dict(self):
        return {
            "floor": self.floor.tolist(),
            "height": self.height,
            "absorption": self.absorption.tolist(),
            "sample_rate": self.sample_rate,
            "speed_of_sound": self.speed_of_sound,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            floor=d["floor"],
            height=d["height"],
            absorption=d["absorption"],
            sample_rate=d.get("sample_rate", 16000.0),
            speed_of_sound=d.get("speed_of_sound", SPEED_OF_SOUND),
        )


def shoebox(dims, absorption=0.0, sample_rate=16000.0, speed_of_sound=SPEED_OF_SOUND):
    """Axis-aligned box ``[0, Lx] x [0, Ly] x [0, Lz]``.

    Walls are ordered y=0, x=Lx, y=Ly, x=0, floor, ceiling.
    """
    lx, ly, lz = dims
    floor = [[0.0, 0.0], [lx, 0.0], [lx, ly], [0.0, ly]]
    return Room(floor, lz, absorption, sample_rate, speed_of_sound)


def default_room(absorption=0.4, sample_rate=16000.0):
    """Seven-wall room: a 5 m x 4.5 m floor with one corner cut, 2.7 m high."""
    floor = [[0.0, 0.0], [5.0, 0.0], [5.0, 3.0], [3.5, 4.5], [0.0, 4.5]]
    return Room(floor, 2.7, absorption, sample_rate)


def triangle_array(center, edge=0.3, rotation=0.0):
    """Three microphones on an equilateral triangle in the horizontal plane."""
    r = edge / np.sqrt(3.0)
    angles = rotation + np.array([0.0, 2.0, 4.0]) * np.pi / 3.0
    c = np.asarray(center, dtype=float)
    return c + r * np.column_stack([np.cos(angles), np.sin(angles), np.zeros(3)])


# --------------------------------------------------------------------------
# image sources


@dataclass(frozen=True)
class ImageSource:
    position: np.ndarray
    order: int
    wall_sequence: tuple  # walls in the order the sound hits them
    attenuation: float

    def delay(self, receiver, c=SPEED_OF_SOUND):
        return float(np.linalg.norm(self.position - np.asarray(receiver)) / c)

    def unfold(self, room):
        """Reflect back through the wall sequence; recovers the original point."""
        p = np.array(self.position, dtype=float)
        for w in reversed(self.wall_sequence):
            p = room.walls[w].reflect(p)
        return p


def _path_walls(room, receiver, position, sequence):
    """Check that the straight path receiver -> image hits ``sequence`` in reverse order.

    Returns False as soon as an intersection falls outside its wall polygon or
    behind the current point.
    """
    start = np.asarray(receiver, dtype=float)
    target = np.asarray(position, dtype=float)
    for w in reversed(sequence):
        wall = room.walls[w]
        d0 = wall.signed_distance(start)
        d1 = wall.signed_distance(target)
        if not (d0 < _GEOM_TOL and d1 > -_GEOM_TOL) or d1 - d0 <= 0:
            return False
        t = -d0 / (d1 - d0)
        if t < -_GEOM_TOL or t > 1 + _GEOM_TOL:
            return False
        hit = start + t * (target - start)
        if not wall.contains(hit):
            return False
        start = hit
        target = wall.reflect(target)
    return True


def _tree_images(walls, point, max_order):
    """Breadth-first image tree with the receiver-independent validity rule.

    A reflection across wall ``w`` is only expanded when the parent image lies
    on the interior side of ``w``'s plane.
    """
    level = [(np.asarray(point, dtype=float), (), 1.0)]
    out = list(level)
    for _ in range(max_order):
        nxt = []
        for pos, seq, gain in level:
            for w, wall in enumerate(walls):
                if seq and seq[-1] == w:
                    continue
                if wall.signed_distance(pos) < -_GEOM_TOL:
                    nxt.append((wall.reflect(pos), seq + (w,), gain * (1.0 - wall.absorption)))
        out.extend(nxt)
        level = nxt
    return out


def _dedup(images):
    seen = set()
    out = []
    for pos, seq, gain in images:
        key = tuple(np.round(pos, 7))
        if key in seen:
            continue
        seen.add(key)
        out.append((pos, seq, gain))
    return out


def _side_images(room, point, max_order, receiver=None):
    """Vectorized 2D image tree of the vertical walls.

    Returns ``(positions, sequences, gains, hit_lengths)`` per order, where
    ``hit_lengths[i, k]`` is the horizontal distance travelled from the
    receiver to the k-th wall hit (receiver side first). Only filled when a
    receiver is given.
    """
    n_side = room.n_side
    a = room.floor
    e = np.roll(a, -1, axis=0) - a
    normals = np.column_stack([e[:, 1], -e[:, 0]]) / np.hypot(e[:, 0], e[:, 1])[:, None]
    offsets = np.einsum("ij,ij->i", normals, a)
    refl = 1.0 - room.absorption[:n_side]

    pos = np.asarray(point, dtype=float)[None, :2]
    seq = np.zeros((1, 0), dtype=int)
    gain = np.ones(1)
    levels = []
    for order in range(max_order + 1):
        if order > 0:
            children = []
            for w in range(n_side):
                d = pos @ normals[w] - offsets[w]
                mask = d < -_GEOM_TOL
                if order > 1:
                    mask &= seq[:, -1] != w
                if not mask.any():
                    continue
                children.append((
                    pos[mask] - 2.0 * d[mask, None] * normals[w],
                    np.column_stack([seq[mask], np.full(mask.sum(), w)]),
                    gain[mask] * refl[w],
                ))
            if not children:
                break
            pos = np.concatenate([c[0] for c in children])
            seq = np.concatenate([c[1] for c in children])
            gain = np.concatenate([c[2] for c in children])
            idx = np.lexsort(seq.T[::-1])
            pos, seq, gain = pos[idx], seq[idx], gain[idx]
        if receiver is None:
            levels.append((pos, seq, gain, None))
            continue
        ok, lengths = _side_visibility(receiver[:2], pos, seq, a, e, normals, offsets)
        levels.append((pos[ok], seq[ok], gain[ok], lengths[ok]))
    return levels


def _side_visibility(r, pos, seq, a, e, normals, offsets):
    n, k = seq.shape
    ok = np.ones(n, dtype=bool)
    lengths = np.zeros((n, k))
    start = np.broadcast_to(np.asarray(r, dtype=float), (n, 2)).copy()
    target = pos.copy()
    travelled = np.zeros(n)
    for i in range(k):
        w = seq[:, k - 1 - i]
        nw, ow = normals[w], offsets[w]
        d0 = np.einsum("ij,ij->i", start, nw) - ow
        d1 = np.einsum("ij,ij->i", target, nw) - ow
        denom = d1 - d0
        ok &= (d0 < _GEOM_TOL) & (d1 > -_GEOM_TOL) & (denom > 0)
        t = np.where(ok, -d0 / np.where(denom > 0, denom, 1.0), 0.0)
        ok &= (t >= -_GEOM_TOL) & (t <= 1 + _GEOM_TOL)
        hit = start + t[:, None] * (target - start)
        ew = e[w]
        s = np.einsum("ij,ij->i", hit - a[w], ew) / np.einsum("ij,ij->i", ew, ew)
        ok &= (s >= -1e-9) & (s <= 1 + 1e-9)
        travelled = travelled + np.linalg.norm(hit - start, axis=1)
        lengths[:, i] = travelled
        start = hit
        target = target - 2.0 * d1[:, None] * nw
    return ok, lengths


def _prism_images(room, point, max_order, receiver):
    """Factorized enumeration: side-wall images (2D) times floor/ceiling images (1D)."""
    floor_w, ceil_w = room.n_side, room.n_side + 1
    h = room.height
    pz = float(point[2])

    # 1D images: alternate floor / ceiling, starting with either
    z_imgs = [(pz, (), 1.0)]
    for n in range(1, max_order + 1):
        for first, other in ((floor_w, ceil_w), (ceil_w, floor_w)):
            zseq = tuple(first if i % 2 == 0 else other for i in range(n))
            z = pz
            for w in zseq:
                z = -z if w == floor_w else 2 * h - z
            zgain = np.prod([1.0 - room.walls[w].absorption for w in zseq])
            z_imgs.append((z, zseq, zgain))

    out = []
    seen = set()
    for spos, sseq, sgain, slen in _side_images(room, point, max_order, receiver):
        for i in range(len(spos)):
            key = tuple(np.round(spos[i], 7))
            if key in seen:
                continue
            seen.add(key)
            side_seq = tuple(int(w) for w in sseq[i])
            for z, zseq, zgain in z_imgs:
                if len(side_seq) + len(zseq) > max_order:
                    continue
                p = np.array([spos[i, 0], spos[i, 1], z])
                seq = side_seq + zseq
                if receiver is not None and zseq and side_seq:
                    seq = _hit_order(receiver, p, h, side_seq, slen[i], zseq)
                out.append((p, seq, sgain[i] * zgain))
    return out


def _hit_order(receiver, pos, h, side_seq, side_lengths, zseq):
    """Interleave side and floor/ceiling hits in the order the path meets them.

    Horizontal distance travelled over the unfolded horizontal distance is the
    same parameter as along the unfolded 3D line.
    """
    total = np.hypot(pos[0] - receiver[0], pos[1] - receiver[1])
    times = [(side_lengths[i] / total, w) for i, w in enumerate(reversed(side_seq))]
    z0, z1 = receiver[2], pos[2]
    step = 1 if z1 > z0 else -1
    for i, w in enumerate(reversed(zseq)):
        plane = (np.floor(z0 / h) + (1 if step > 0 else 0) + step * i) * h
        times.append(((plane - z0) / (z1 - z0), w))
    times.sort()
    return tuple(w for _, w in reversed(times))


def enumerate_images(room, point, max_order, receiver=None):
    """All image sources of ``point`` up to ``max_order`` reflections.

    Without a receiver, an image is kept when every reflection in its chain
    was taken from the interior side of the wall plane. With a receiver, the
    path from the receiver to the image must also cross every wall of the
    sequence inside the wall polygon. Coincident images are merged, keeping
    the lowest order.

    Parameters
    ----------
    room : Room
    point : array_like, shape (3,)
    max_order : int
    receiver : array_like, optional

    Returns
    -------
    list of ImageSource, sorted by (order, wall_sequence)
    """
    point = np.asarray(point, dtype=float)
    room.check_inside(point)
    if receiver is not None:
        room.check_inside(receiver)
    if max_order < 0:
        raise ValueError("max_order must be non-negative")
    if receiver is not None:
        receiver = np.asarray(receiver, dtype=float)
    raw = _prism_images(room, point, max_order, receiver)
    raw.sort(key=lambda t: (len(t[1]), t[1]))
    return [ImageSource(pos, len(seq), seq, float(gain)) for pos, seq, gain in _dedup(raw)]


def enumerate_images_generic(room, point, max_order, receiver=None):
    """Same contract as :func:`enumerate_images` without the prism factorization.

    Cost grows as ``n_walls ** max_order``; intended for low orders and tests.
    """
    point = np.asarray(point, dtype=float)
    room.check_inside(point)
    raw = _tree_images(room.walls, point, max_order)
    if receiver is not None:
        raw = [t for t in raw if _path_walls(room, receiver, t[0], t[1])]
    raw.sort(key=lambda t: (len(t[1]), t[1]))
    return [ImageSource(pos, len(seq), seq, float(gain)) for pos, seq, gain in _dedup(raw)]


# --------------------------------------------------------------------------
# RIR synthesis


@dataclass
class Rir:
    taps: np.ndarray
    sample_rate: float
    reference: tuple = (None, None)


def fractional_delay_kernel(frac, taps=KERNEL_TAPS):
    """Hann-windowed sinc centered at ``(taps - 1) / 2 + frac`` samples."""
    frac = np.atleast_1d(frac)
    n = np.arange(taps) - (taps - 1) / 2
    x = n[None, :] - frac[:, None]
    window = 0.5 * (1 + np.cos(2 * np.pi * x / taps))
    window[np.abs(x) > taps / 2] = 0.0
    return np.sinc(x) * window


def synthesize_rir(room, source, mic, max_order, taps=KERNEL_TAPS):
    """Room impulse response from ``source`` to ``mic``.

    Each image contributes ``attenuation / (4 pi d)`` times a windowed-sinc
    fractional delay centered at ``d / c`` seconds. Tap 0 is time zero.
    """
    images = enumerate_images(room, source, max_order, receiver=mic)
    return rir_from_images(images, mic, room.sample_rate, room.speed_of_sound, taps)


def rir_from_images(images, mic, sample_rate, c=SPEED_OF_SOUND, taps=KERNEL_TAPS):
    images = [im for im in images if im.attenuation > 0]
    pos = np.array([im.position for im in images])
    gains = np.array([im.attenuation for im in images])
    dist = np.linalg.norm(pos - np.asarray(mic)[None, :], axis=1)
    delay = dist / c * sample_rate
    half = (taps - 1) // 2
    integer = np.floor(delay).astype(int)
    frac = delay - integer
    length = int(integer.max()) + half + 2
    out = np.zeros(length + half)
    kern = fractional_delay_kernel(frac, taps) * (gains / (4 * np.pi * dist))[:, None]
    idx = integer[:, None] + np.arange(taps)[None, :]  # offset by `half` samples
    np.add.at(out, idx.ravel(), kern.ravel())
    return Rir(out[half:], sample_rate)


def schroeder_t60(rir, sample_rate, decay_range=(-5.0, -25.0)):
    """T60 extrapolated from a linear fit of the Schroeder energy decay curve."""
    energy = np.asarray(rir, dtype=float) ** 2
    edc = np.cumsum(energy[::-1])[::-1]
    edc_db = 10 * np.log10(edc / edc[0] + 1e-300)
    hi, lo = decay_range
    i0 = np.argmax(edc_db <= hi)
    i1 = np.argmax(edc_db <= lo)
    if i1 <= i0:
        raise ValueError("decay curve does not reach the requested range")
    t = np.arange(i0, i1) / sample_rate
    slope, _ = np.polyfit(t, edc_db[i0:i1], 1)
    return -60.0 / slope


# --------------------------------------------------------------------------
# scenarios


@dataclass
class Scenario:
    room: Room
    mic_positions: np.ndarray
    source_positions: np.ndarray
    seed: int = 0

    def __post_init__(self):
        self.mic_positions = np.atleast_2d(np.asarray(self.mic_positions, dtype=float))
        self.source_positions = np.atleast_2d(np.asarray(self.source_positions, dtype=float))
        for p in itertools.chain(self.mic_positions, self.source_positions):
            self.room.check_inside(p)

    def to_dict(self):
        return {
            "room": self.room.to_dict(),
            "mic_positions": self.mic_positions.tolist(),
            "source_positions": self.source_positions.tolist(),
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(Room.from_dict(d["room"]), d["mic_positions"], d["source_positions"], d.get("seed", 0))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def default_array(room=None):
    """Triangle array close to the corner at the origin, 1.5 m high."""
    return triangle_array([0.6, 0.6, 1.5], edge=0.3, rotation=np.pi / 4)


def valid_pairs(positions, min_pair_dist):
    """All unordered index pairs at least ``min_pair_dist`` apart."""
    positions = np.asarray(positions)
    return [
        (i, j)
        for i, j in itertools.combinations(range(len(positions)), 2)
        if np.linalg.norm(positions[i] - positions[j]) >= min_pair_dist
    ]


def sample_scenarios(
    room,
    n_sources,
    dist_range=(2.5, 4.0),
    min_pair_dist=1.0,
    seed=0,
    mic_positions=None,
    height_range=(1.2, 1.9),
    wall_margin=0.3,
    max_tries=10_000,
):
    """Draw source positions around the array and list usable pairs.

    Sources are uniform in azimuth and distance from the array centroid,
    with heights in ``height_range``; candidates closer than ``wall_margin``
    to a wall are rejected.
    """
    if n_sources < 2:
        raise ValueError("need at least two sources")
    mics = default_array(room) if mic_positions is None else np.asarray(mic_positions, dtype=float)
    center = mics.mean(axis=0)
    rng = np.random.default_rng(seed)
    sources = []
    for _ in range(n_sources):
        for _ in range(max_tries):
            r = rng.uniform(*dist_range)
            az = rng.uniform(0, 2 * np.pi)
            z = rng.uniform(*height_range)
            dz = z - center[2]
            if abs(dz) >= r:
                continue
            rho = np.sqrt(r**2 - dz**2)
            p = np.array([center[0] + rho * np.cos(az), center[1] + rho * np.sin(az), z])
            if room.is_inside(p, margin=wall_margin):
                sources.append(p)
                break
        else:
            raise InfeasibleScenario(f"could not place source {len(sources)} after {max_tries} draws")
    scenario = Scenario(room, mics, np.array(sources), seed)
    return scenario, valid_pairs(scenario.source_positions, min_pair_dist)


def render_mixture(scenario, source_signals, max_order=10, source_ids=None, sample_rate=None):
    """Convolve each source with its RIRs and sum at every microphone.

    Returns
    -------
    mixture : ndarray, shape (M, T)
    images : ndarray, shape (J, M, T)
        Spatial image of every source at every microphone.
    """
    room = scenario.room
    if sample_rate is not None and sample_rate != room.sample_rate:
        raise ValueError(f"signal rate {sample_rate} differs from room rate {room.sample_rate}")
    if source_ids is None:
        source_ids = range(len(source_signals))
    source_ids = list(source_ids)
    mics = scenario.mic_positions
    rirs = [
        [synthesize_rir(room, scenario.source_positions[s], m, max_order).taps for m in mics]
        for s in source_ids
    ]
    length = max(len(x) + len(h) - 1 for x, row in zip(source_signals, rirs) for h in row)
    images = np.zeros((len(source_ids), len(mics), length))
    for j, (x, row) in enumerate(zip(source_signals, rirs)):
        for m, h in enumerate(row):
            c = fftconvolve(np.asarray(x, dtype=float), h)
            images[j, m, : len(c)] = c
    return images.sum(axis=0), images


def write_rir_wav(path, rir):
    from scipy.io import wavfile

    wavfile.write(str(path), int(rir.sample_rate), np.asarray(rir.taps, dtype=np.float32))
