"""Central finite differences against autograd, a few entries per tensor."""
import numpy as np
import torch

FLOOR = 1e-5  # gradients below this are compared on an absolute scale


def rel_error(analytic, numeric):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), FLOOR)


def check_gradients(loss_fn, tensors, entries=5, eps=1e-5, seed=0):
    """Return ``{name: worst relative error}`` for each ``(name, tensor)``.

    ``loss_fn()`` must rebuild the scalar loss from the current tensor values.
    """
    g = np.random.default_rng(seed)
    for _, t in tensors:
        t.grad = None
    loss_fn().backward()
    analytic = {name: t.grad.detach().clone() for name, t in tensors}
    worst = {}
    with torch.no_grad():
        for name, t in tensors:
            flat = t.view(-1)
            picks = g.choice(flat.numel(), size=min(entries, flat.numel()), replace=False)
            errs = []
            for i in picks:
                orig = flat[i].item()
                flat[i] = orig + eps
                up = loss_fn().item()
                flat[i] = orig - eps
                down = loss_fn().item()
                flat[i] = orig
                errs.append(rel_error(analytic[name].view(-1)[i].item(), (up - down) / (2 * eps)))
            worst[name] = max(errs)
    return worst
