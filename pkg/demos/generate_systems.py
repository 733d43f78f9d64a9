"""Simulate the three benchmark systems and add measurement noise.

Run: python3 demos/generate_systems.py
"""

import numpy as np

from wpnode.dynamics import SystemSpec, add_noise, generate_dataset

for spec, duration in (
    (SystemSpec.lorenz63(), 20.0),
    (SystemSpec.lorenz96(), 5.0),
    (SystemSpec.kuramoto_sivashinsky(), 200.0),
):
    traj = generate_dataset(spec, duration, seed=0)
    x = traj.states
    print(f"{spec.kind}: {x.shape[0]} rows of dimension {x.shape[1]}, dt={spec.dt}, "
          f"range [{x.min():.2f}, {x.max():.2f}], one Lyapunov time = {1 / spec.lyapunov_exponent:.1f} time units")

# Noise has per-dimension std equal to the given fraction of the clean RMS.
clean = generate_dataset(SystemSpec.lorenz63(), 50.0, seed=1)
rms = np.sqrt(np.mean(clean.states**2, axis=0))
for level in (0.01, 0.05, 0.2):
    noisy = add_noise(clean, level, seed=2)
    measured = (noisy.states - clean.states).std(axis=0) / rms
    print(f"noise {level:.2f}: measured std / RMS per dimension = {np.round(measured, 3).tolist()}")

# Files written by `wpnode generate` use the same raw float64 layout plus a JSON sidecar.
noisy.save("/tmp/l63_demo.f64")
print("saved /tmp/l63_demo.f64 and /tmp/l63_demo.json")
