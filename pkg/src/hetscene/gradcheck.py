"""Central finite-difference verification of recorded gradients."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad


def finite_difference_grad(loss_fn, param, step=1e-5):
    """d loss_fn() / d param by central differences, elementwise."""
    g = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = float(loss_fn())
        flat[i] = orig - step
        down = float(loss_fn())
        flat[i] = orig
        gflat[i] = (up - down) / (2 * step)
    return g


def check_gradients(build_loss, params, step=1e-5):
    """Compare recorded gradients of ``build_loss()`` against central differences.

    ``build_loss`` must construct the loss from ``params`` (dict name->Tensor)
    from scratch on every call.  Returns (max_rel_error, per_param dict).
    Parameters should be float64 for meaningful comparisons.
    """
    ad.zero_grads(params.values())
    with ad.Tape() as tape:
        loss = build_loss()
    ad.backward(tape, loss)

    def eval_loss():
        with ad.Tape():
            return build_loss().data

    report = {}
    worst = 0.0
    for name, p in params.items():
        numeric = finite_difference_grad(eval_loss, p, step=step)
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        denom = np.maximum(np.abs(numeric) + np.abs(analytic), 1e-8)
        rel = float(np.max(np.abs(analytic - numeric) / denom))
        report[name] = rel
        worst = max(worst, rel)
    return worst, report
