"""Shared test utilities: parameter finite differences and weight randomisation."""

import numpy as np

from osmamba.tensor import no_grad


def param_grad_error(module, name, loss_fn, h=1e-5, max_coords=12, seed=0, floor=1e-8):
    """Relative error between the analytic gradient of one named parameter and central differences.

    ``floor`` bounds the denominator from below; raise it when the loss is large
    enough that cancellation noise (|loss| * 1e-16 / h) swamps tiny gradients.
    """
    p = dict(module.named_parameters())[name]
    module.zero_grad()
    loss_fn().backward()
    ana = p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
    flat = p.data.reshape(-1)
    rng = np.random.default_rng(seed)
    coords = rng.choice(flat.size, size=min(max_coords, flat.size), replace=False)
    worst = 0.0
    with no_grad():
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            fp = loss_fn().item()
            flat[i] = orig - h
            fm = loss_fn().item()
            flat[i] = orig
            num = (fp - fm) / (2 * h)
            a = ana.reshape(-1)[i]
            worst = max(worst, abs(a - num) / max(abs(a), abs(num), floor))
    return worst


def liven(module, seed=0, scale=0.5):
    """Randomise zero-initialised gammas, output convs and step sizes so every path carries gradient."""
    rng = np.random.default_rng(seed)
    for name, p in module.named_parameters():
        if name.endswith("delta_b"):
            # longer steps make the state decay visible to finite differences
            dt = rng.uniform(0.2, 1.0, size=p.shape)
            p.data = dt + np.log(-np.expm1(-dt))
        if name.endswith("mamba.norm.gamma"):
            # spectral branches start at zero; near-unit gains on raw phase are badly conditioned
            p.data = scale * rng.normal(size=p.shape)
        elif name.endswith("gamma"):
            p.data = 1.0 + scale * rng.normal(size=p.shape)
        elif name.startswith("conv_out") or ".conv_out." in name:
            p.data = scale * rng.normal(size=p.shape)
    return module
