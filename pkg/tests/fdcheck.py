"""Central finite-difference gradient checking at 64-bit precision."""
from __future__ import annotations

import torch


def max_relative_error(
    loss_fn,
    tensors: list[torch.Tensor],
    step: float = 1e-5,
    floor: float = 1e-6,
) -> float:
    """Compare autograd gradients of ``loss_fn()`` against central differences.

    ``tensors`` are float64 leaves the loss reads from; every element of every
    tensor is perturbed.  Returns the worst relative error across elements.
    """
    loss = loss_fn()
    grads = torch.autograd.grad(loss, tensors, allow_unused=True)
    worst = 0.0
    for tensor, grad in zip(tensors, grads):
        grad = torch.zeros_like(tensor) if grad is None else grad
        flat = tensor.data.view(-1)
        grad_flat = grad.reshape(-1)
        for i in range(flat.numel()):
            original = flat[i].item()
            with torch.no_grad():
                flat[i] = original + step
                hi = float(loss_fn())
                flat[i] = original - step
                lo = float(loss_fn())
                flat[i] = original
            numeric = (hi - lo) / (2.0 * step)
            analytic = float(grad_flat[i])
            scale = max(abs(numeric), abs(analytic), floor)
            worst = max(worst, abs(numeric - analytic) / scale)
    return worst
