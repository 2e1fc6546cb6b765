"""Adam with bias correction, operating on numpy arrays in place."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """Apply one Adam update to every array in ``params`` (a name -> array dict).

    Parameters whose gradient is ``None`` are skipped but still count toward
    the shared step counter. Arrays are updated in place and ``state`` is
    returned for convenience.
    """
    for name, g in grads.items():
        if g is not None and np.shape(g) != np.shape(params[name]):
            raise ShapeError(f"gradient for {name!r} has shape {np.shape(g)}, parameter has {np.shape(params[name])}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        if m.shape != p.shape:
            raise ShapeError(f"optimizer state for {name!r} has shape {m.shape}, parameter has {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= (state.lr / bc1) * m / (np.sqrt(v / bc2) + state.eps)
    return params, state


class Adam:
    """Optimizer over a dict of :class:`~pnfrec.tensor.Tensor` parameters."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        arrays = {k: p.data for k, p in self.params.items()}
        grads = {k: p.grad for k, p in self.params.items()}
        adam_step(arrays, grads, self.state)
