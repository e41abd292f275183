"""Shared helpers for the test suite."""

import numpy as np
import torch


def central_difference_worst_error(
    loss_fn,
    named_parameters,
    rng: np.random.Generator,
    samples_per_tensor: int = 6,
    h: float = 1e-5,
    floor: float = 1e-5,
):
    """Worst relative error between analytic gradients and central
    differences, probing random components of every parameter tensor.

    ``floor`` keeps components whose true gradient sits at the
    finite-difference noise level (~1e-10 for float64) from dominating
    the relative error.
    """
    loss = loss_fn()
    for _, p in named_parameters:
        if p.grad is not None:
            p.grad = None
    loss.backward()
    worst = 0.0
    for _, param in named_parameters:
        grad = param.grad
        if grad is None:
            continue
        flat = param.data.view(-1)
        size = min(samples_per_tensor, flat.numel())
        for idx in rng.choice(flat.numel(), size=size, replace=False):
            original = float(flat[idx])
            flat[idx] = original + h
            up = float(loss_fn().detach())
            flat[idx] = original - h
            down = float(loss_fn().detach())
            flat[idx] = original
            numeric = (up - down) / (2 * h)
            analytic = float(grad.view(-1)[idx])
            scale = max(abs(numeric), abs(analytic), floor)
            worst = max(worst, abs(numeric - analytic) / scale)
    return worst
