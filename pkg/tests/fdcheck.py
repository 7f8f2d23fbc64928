"""Central finite-difference gradient checking shared by the loss tests.

Works on float64 copies of the tiny (<100 parameter) networks so FD error
stays far below the 1e-4 relative tolerance. Parameter nudges happen under
no_grad, but the loss itself is evaluated with autograd enabled because
some losses (the gradient penalty) take derivatives internally.
"""

import torch


def central_diff_grads(loss_fn, params, h=1e-6):
    grads = []
    for p in params:
        g = torch.zeros_like(p)
        flat, gf = p.reshape(-1), g.reshape(-1)
        for i in range(flat.numel()):
            with torch.no_grad():
                orig = float(flat[i])
                flat[i] = orig + h
            lp = float(loss_fn().detach())
            with torch.no_grad():
                flat[i] = orig - h
            lm = float(loss_fn().detach())
            with torch.no_grad():
                flat[i] = orig
            gf[i] = (lp - lm) / (2.0 * h)
        grads.append(g)
    return grads


def assert_grads_match(loss_fn, params, rtol=1e-4, h=1e-6):
    """Compare autograd gradients of loss_fn() against central differences."""
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = [
        p.grad.clone() if p.grad is not None else torch.zeros_like(p) for p in params
    ]
    numeric = central_diff_grads(loss_fn, params, h=h)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        scale = torch.maximum(a.abs(), n.abs()).clamp(min=1e-4)
        worst = max(worst, float(((a - n).abs() / scale).max()))
    assert worst < rtol, f"max relative gradient error {worst:.3e} >= {rtol}"
    return worst
