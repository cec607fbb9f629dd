"""
A stiff string, mode by mode
============================

Build the modal model of the default string, listen to its first partials,
and watch the pitch drop as a loud pluck rings down.
"""

# %%
# The string parameters default to a steel B3 string. At 4 kHz only the modes
# below the anti-aliasing limit are kept.
import numpy as np

from stringkoop.dataset import DatasetManifest, IcSpec, simulate
from stringkoop.metrics import peak_frequency, probe_index
from stringkoop.physics import StringParams, build_modal_system, tension_increment

params = StringParams()
system = build_modal_system(params, sample_rate=4000)
print(f"{system.num_modes} modes at 4 kHz")
print("partials (Hz):", np.round(system.frequencies, 2))
print("decay rates (1/s):", np.round(system.sigma, 3))

# %%
# Stiffness makes the partials slightly sharp: compare with integer multiples of f1.
f1 = system.frequencies[0]
print("inharmonicity:", np.round(system.frequencies / (f1 * np.arange(1, system.num_modes + 1)), 5))

# %%
# The extra tension from a 1 cm first-mode displacement.
coeffs = np.zeros(system.num_modes)
coeffs[0] = 0.01
print(f"T1 = {float(tension_increment(coeffs, params)):.4f} N on top of T0 = {params.tension0} N")

# %%
# Simulate a loud noise-like pluck at 16 kHz and track the fundamental.
manifest = DatasetManifest(sample_rate=16000, num_steps=4000, num_trajectories=1,
                           model_kind="tension_modulated", ic_kind="uniform_noise")
traj = simulate(manifest, IcSpec("uniform_noise", 0.01, seed=0))
y = traj.data[:, probe_index(manifest.grid, 0.24)]
for start in range(0, 4000 - 1600 + 1, 800):
    f = peak_frequency(y[start:start + 1600], 16000, (200, 300))
    print(f"{start / 16000:5.2f} s  fundamental {f:7.2f} Hz")
