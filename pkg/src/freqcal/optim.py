"""Deterministic Adam over named parameter dicts.

Parameters live in ``dict[str, np.ndarray]`` trees; complex arrays are
updated through their (re, im) real views so the optimizer never needs to
know about the complex parameterization. Moment buffers mirror parameter
shapes exactly and are created on first use.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["AdamParams", "AdamState", "adam_step", "real_view"]


@dataclass(frozen=True)
class AdamParams:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def real_view(arr: np.ndarray) -> np.ndarray:
    """Float view of an array, expanding complex entries to (re, im) pairs."""
    if np.iscomplexobj(arr):
        return arr.view(np.float64)
    return arr


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    hyper: AdamParams,
) -> bool:
    """One in-place bias-corrected Adam update.

    Returns False (and leaves params and state untouched, including the step
    counter) when any gradient entry is non-finite; callers flag the skip.
    """
    views = {}
    for name, param in params.items():
        grad = grads[name]
        if grad.shape != param.shape:
            raise ValueError(
                f"gradient shape {grad.shape} does not match parameter "
                f"{name!r} shape {param.shape}"
            )
        g = real_view(np.ascontiguousarray(grad))
        if not np.all(np.isfinite(g)):
            return False
        views[name] = (real_view(param), g)

    state.step += 1
    correction1 = 1.0 - hyper.beta1**state.step
    correction2 = 1.0 - hyper.beta2**state.step
    for name, (p, g) in views.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        if m.shape != p.shape:
            raise ValueError(f"optimizer slot for {name!r} does not mirror the parameter shape")
        m *= hyper.beta1
        m += (1.0 - hyper.beta1) * g
        v *= hyper.beta2
        v += (1.0 - hyper.beta2) * g * g
        p -= hyper.lr * (m / correction1) / (np.sqrt(v / correction2) + hyper.eps)
    return True
