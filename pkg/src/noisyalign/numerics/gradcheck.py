"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from ..exceptions import DimensionError, DomainError, InstabilityError
from .tensor import Tensor


def grad_check(fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5) -> float:
    """Return the worst relative error between backprop and central differences.

    ``fn`` must rebuild the scalar loss from ``params`` on every call. Every
    coordinate of every parameter is perturbed by +-h; the relative error of a
    coordinate is ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    if not 1e-6 <= h <= 1e-4:
        raise DomainError(f"step h={h:g} outside [1e-6, 1e-4]")
    params = list(params)
    for p in params:
        p.grad = None
        p.requires_grad = True
    loss = fn()
    if loss.size != 1:
        raise DimensionError(f"grad_check needs a scalar loss, got shape {loss.shape}")
    if not math.isfinite(loss.item()):
        raise InstabilityError("loss is not finite at the unperturbed point")
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p in params:
        p.requires_grad = False
    try:
        for p, grad in zip(params, analytic):
            if not p.data.flags.c_contiguous:
                p.data = np.ascontiguousarray(p.data)
            flat = p.data.reshape(-1)
            for i, a in enumerate(grad.reshape(-1)):
                origin = flat[i]
                flat[i] = origin + h
                up = fn().item()
                flat[i] = origin - h
                down = fn().item()
                flat[i] = origin
                if not (math.isfinite(up) and math.isfinite(down)):
                    raise InstabilityError(f"non-finite loss when perturbing coordinate {i}")
                numeric = (up - down) / (2.0 * h)
                err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
                worst = max(worst, err)
    finally:
        for p in params:
            p.requires_grad = True
    return worst
