"""Train weak-form + penalty and strong-form models on noisy Lorenz-63 data.

The presets train for thousands of epochs; this demo uses a few hundred so it
finishes in minutes. Pass --epochs to train longer.

Run: python3 demos/train_and_compare.py --noise 0.05 --epochs 300
"""

import argparse
import time

from wpnode.dynamics import SystemSpec, Trajectory, add_noise, continue_reference, generate_dataset
from wpnode.evaluation import evaluate_model
from wpnode.presets import preset
from wpnode.training import prepare_data, train

parser = argparse.ArgumentParser()
parser.add_argument("--noise", type=float, default=0.05)
parser.add_argument("--epochs", type=int, default=300)
parser.add_argument("--strong-epochs", type=int, default=30)
args = parser.parse_args()

spec = SystemSpec.lorenz63()
clean = generate_dataset(spec, 100.0, seed=0)
reference = continue_reference(spec, clean.states[-1], 20_001)[1:]
data: Trajectory = add_noise(clean, args.noise, seed=1)
pct = int(round(args.noise * 100))

for method, epochs in (("wp", args.epochs), ("strong", args.strong_epochs)):
    exp = preset(f"l63-noise{pct}-{method}").scaled(max_epochs=epochs)
    prepared = prepare_data(data, exp.train)
    t0 = time.perf_counter()
    params, report = train(exp.train, prepared)
    took = time.perf_counter() - t0
    rep = evaluate_model(params.vector_field(), spec, reference, prepared.scaler, n_starts=20, kl_duration=100.0)
    print(f"{exp.name}: {epochs} epochs in {took:.0f}s, best validation loss {report.best_val:.2e} "
          f"at epoch {report.best_epoch}")
    print(f"    VPT {rep.vpt_mean:.2f} +- {rep.vpt_std:.2f} Lyapunov times, mean KL {rep.kl_mean:.4f}, "
          f"{sum(rep.blowups)} of {len(rep.blowups)} free runs blew up")
