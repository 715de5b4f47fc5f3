"""Full-objective gradient check against central finite differences."""

import numpy as np

from dsrh.loss import LossConfig, balance_gradient, balance_penalty, list_loss
from dsrh.model import DropoutMask, backward, forward_relaxed, init_weights

from oracles import central_differences

KINK_TOL = 1e-4


def random_problem(rng, bits, max_params=1000, dropout=False):
    """A small model with nonzero biases plus a batch of 3-item ranking lists."""
    while True:
        d, h1, h2 = (int(v) for v in rng.integers(3, 9, size=3))
        model = init_weights([d, h1, h2], bits, rng)
        if sum(t.size for t in model.tensors()) <= max_params:
            break
    for b in model.feature_net.biases:
        b[:] = rng.uniform(-0.3, 0.3, size=b.shape)
    # larger hash weights keep the relaxed codes away from zero so triplets are mixed active/inactive
    model.hash_weight *= 3.0
    b = int(rng.integers(2, 5))
    x = rng.standard_normal((b * 4, d))
    levels = np.array([sorted(rng.choice(4, size=3, replace=False), reverse=True) for _ in range(b)])
    mask = DropoutMask.sample(model, len(x), 0.5, rng) if dropout else None
    cfg = LossConfig(margin=float(rng.uniform(0.5, 2.0)), alpha=float(rng.uniform(0.5, 2.0)), beta=0.0)
    return model, x, levels, mask, cfg


def objective_and_grads(model, x, levels, mask, cfg):
    b = len(levels)
    codes, trace = forward_relaxed(model, x, mask)
    h_q, h_items = codes[:b], codes[b:].reshape(b, 3, -1)
    res = list_loss(h_q, h_items, levels, cfg)
    g = np.empty_like(codes)
    g[:b] = res.grad_query + balance_gradient(h_q, cfg.alpha)
    g[b:] = res.grad_items.reshape(3 * b, -1)
    value = res.loss + balance_penalty(h_q, cfg.alpha)
    return value, backward(model, trace, g), trace, codes


def near_kink(model, x, levels, mask, cfg):
    """True if a hinge argument or ReLU pre-activation lies within KINK_TOL of its kink."""
    b = len(levels)
    codes, trace = forward_relaxed(model, x, mask)
    h_q, h_items = codes[:b], codes[b:].reshape(b, 3, -1)
    sims = np.einsum("bk,bmk->bm", h_q, h_items)
    arg = 0.5 * (sims[:, None, :] - sims[:, :, None]) + cfg.margin
    valid = levels[:, None, :] < levels[:, :, None]
    if np.any(np.abs(arg[valid]) < KINK_TOL):
        return True
    return any(np.any(np.abs(p) < KINK_TOL) for p in trace.pre)


def fd_resolution(value, eps=1e-6, ulps=16):
    """Smallest gradient difference a central difference can resolve at this objective value."""
    return ulps * np.spacing(abs(value)) / (2 * eps)


def relative_errors(model, x, levels, mask, cfg, eps=1e-6, rtol=1e-5):
    """(worst guarded relative error, worst raw relative error) over every parameter.

    The guarded error divides by max(|a|, |n|, resolution / rtol): a coordinate too
    small for the difference quotient to resolve is judged on that resolution scale.
    """
    value, grads, _, _ = objective_and_grads(model, x, levels, mask, cfg)
    numeric = central_differences(lambda: objective_and_grads(model, x, levels, mask, cfg)[0], model.tensors(), eps)
    floor = fd_resolution(value, eps) / rtol
    guarded = raw = 0.0
    for analytic, num in zip(grads, numeric):
        a = analytic.reshape(-1)
        n = np.asarray(num)
        diff = np.abs(a - n)
        scale = np.maximum(np.abs(a), np.abs(n))
        raw = max(raw, float(np.max(np.where(scale > 0, diff / np.where(scale > 0, scale, 1.0), 0.0))))
        guarded = max(guarded, float(np.max(diff / np.maximum(scale, floor))))
    return guarded, raw
