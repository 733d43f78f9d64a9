"""Reverse-mode gradients against 30-digit central differences."""

import numpy as np

from wpnode.autodiff import grad

from oracles import central_difference_gradient, to_mp_layers_exact


def worst_relative_error(loss_fn, mp_loss_fn, params) -> float:
    """Largest elementwise relative gradient error over all parameter arrays.

    ``loss_fn`` takes a tracked ParamSet; ``mp_loss_fn`` takes mpmath layers.
    """
    tracked = params.track()
    ours = grad(loss_fn(tracked), tracked).arrays()
    ref = central_difference_gradient(lambda arrs: mp_loss_fn(to_mp_layers_exact(arrs)), params.arrays())
    worst = 0.0
    for g, r in zip(ours, ref):
        scale = np.maximum(np.abs(r), 1e-12)
        worst = max(worst, float(np.max(np.abs(g - r) / scale)))
    return worst
