"""
Echoes in a small convex room
=============================

Build the default seven-wall room, render a room impulse response and see
where the first echoes land. Then turn those echoes into a channel model and
look at the spectral notches they carve.
"""

import numpy as np

from echosep import acoustics as ac
from echosep import echomodel as em

room = ac.default_room(absorption=0.4)
mics = ac.default_array()
print(f"{room.n_walls} walls, height {room.height} m")

# one source 3 m away from the array
scenario, pairs = ac.sample_scenarios(room, 2, seed=1)
src = scenario.source_positions[0]
rir = ac.synthesize_rir(room, src, mics[0], max_order=10)
print(f"T60 (Schroeder) = {ac.schroeder_t60(rir.taps, room.sample_rate) * 1e3:.0f} ms")

# The echo model mirrors the microphone; delays are relative to the direct path.
ch = em.echo_channels(room, mics, [src], K=6)[0][0]
direct = np.linalg.norm(src - mics[0]) / room.speed_of_sound
fs = room.sample_rate
for k, tau in enumerate(ch.delays_s):
    n = int(round((direct + tau) * fs))
    print(f"  path {k}: +{tau * 1e3:5.2f} ms, rir magnitude near it {np.abs(rir.taps[n - 2:n + 3]).max():.4f}")

# |H|^2 = |sum_k exp(-i w tau_k)|^2: the notches move with every echo
H = em.build_channels([[ch]], 1025, 2048, fs)
Q = H.Q[:, 0, 0]
f = np.arange(1025) * fs / 2048
print(f"|H|^2 ranges from {Q.min():.3f} to {Q.max():.1f} (K+1)^2 = {(len(ch.delays_s)) ** 2}")
print("deepest notches (Hz):", np.sort(f[np.argsort(Q)[:5]]).round())

# without echoes every microphone sees the same flat magnitude
flat = em.build_channels(em.echo_channels(room, mics, [src], 0), 1025, 2048, fs)
print("spread of |H|^2 over mics, K=0:", float(np.ptp(flat.Q, axis=1).max()), " K=6:",
      float(np.ptp(em.build_channels(em.echo_channels(room, mics, [src], 6), 1025, 2048, fs).Q, axis=1).max()))
