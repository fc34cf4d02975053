"""Central-finite-difference gradient checks shared by unit and acceptance tests."""

import zlib

import numpy as np
import torch

from convvrnn.objectives import prediction_loss, total_objective


def step_objective(model, frames, target, loss_cfg, beta=1.0):
    """Full training objective for one clip in eval-mean mode."""
    res = model.rollout(frames)
    pred_loss = prediction_loss(res.prediction, target, loss_cfg)
    return total_objective([s.kl for s in res.steps], pred_loss, beta)


def check_parameter_gradients(model, loss_fn, n_probe=2, h=1e-5, rel_tol=1e-3,
                              abs_floor=1e-8):
    """Compare autograd parameter gradients against central differences.

    ``loss_fn(model)`` must return a scalar tensor. For every named parameter
    tensor, ``n_probe`` coordinates (chosen deterministically from the name)
    are perturbed by +-h and the numeric slope is compared to the analytic
    gradient at relative tolerance ``rel_tol`` (absolute floor for gradients
    near zero). Returns the worst relative error seen.
    """
    model.zero_grad()
    loss_fn(model).backward()
    grads = {n: p.grad.detach().clone() for n, p in model.named_parameters()}
    worst = 0.0
    for name, param in sorted(model.named_parameters()):
        rng = np.random.default_rng(zlib.crc32(name.encode()))
        flat = param.data.reshape(-1)
        count = min(n_probe, flat.numel())
        idx = rng.choice(flat.numel(), size=count, replace=False)
        for k in idx:
            orig = flat[k].item()
            with torch.no_grad():
                flat[k] = orig + h
            up = loss_fn(model).item()
            with torch.no_grad():
                flat[k] = orig - h
            down = loss_fn(model).item()
            with torch.no_grad():
                flat[k] = orig
            numeric = (up - down) / (2 * h)
            analytic = grads[name].reshape(-1)[k].item()
            err = abs(numeric - analytic)
            if err <= abs_floor:
                continue
            rel = err / max(abs(numeric), abs(analytic), abs_floor)
            worst = max(worst, rel)
            assert rel < rel_tol, (
                f"{name}[{k}]: analytic {analytic:.6e} vs numeric {numeric:.6e} "
                f"(rel {rel:.2e})"
            )
    return worst


def check_input_gradients(loss_fn, a, b, n_probe=6, h=1e-6, rel_tol=1e-3,
                          seed=0):
    """Compare autograd input gradients of loss_fn(a, b) to central differences."""
    a = a.clone().requires_grad_(True)
    loss_fn(a, b).backward()
    grad = a.grad
    rng = np.random.default_rng(seed)
    flat = a.detach().reshape(-1)
    worst = 0.0
    for k in rng.choice(flat.numel(), size=n_probe, replace=False):
        orig = flat[k].item()
        flat[k] = orig + h
        up = loss_fn(a.detach(), b).item()
        flat[k] = orig - h
        down = loss_fn(a.detach(), b).item()
        flat[k] = orig
        numeric = (up - down) / (2 * h)
        analytic = grad.reshape(-1)[k].item()
        rel = abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-8)
        worst = max(worst, rel)
        assert rel < rel_tol, (
            f"input[{k}]: analytic {analytic:.6e} vs numeric {numeric:.6e}"
        )
    return worst
