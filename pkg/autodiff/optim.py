"""
Optimizer, learning-rate schedule and gradient clipping.

The update is the usual adaptive-moment rule with bias correction:

    m = b1*m + (1-b1)*g          v = b2*v + (1-b2)*g^2
    m_hat = m / (1 - b1^t)       v_hat = v / (1 - b2^t)
    p = p - lr * m_hat / (sqrt(v_hat) + eps)

The learning rate starts at 0.001 and is multiplied by 0.95 every two epochs.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from utils.errors import NumericalError, ShapeError

# ---------------------------------------------------------------------------
# CONFIGURATION
# ---------------------------------------------------------------------------
BASE_LR = 0.001
LR_DECAY = 0.05          # fraction removed at each decay step
LR_DECAY_EVERY = 2       # epochs per decay step


@dataclass
class OptimizerState:
    lr: float = BASE_LR
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


def init_optimizer(params, lr=BASE_LR, beta1=0.9, beta2=0.999, eps=1e-8):
    """Zero moments shaped like every parameter."""
    return OptimizerState(
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
        first_moment={name: np.zeros_like(p.data) for name, p in params.items()},
        second_moment={name: np.zeros_like(p.data) for name, p in params.items()},
    )


def optimizer_step(params, grads, state, lr=None):
    """
    Applies one update to `params` (name -> Tensor) in place and returns `state`.

    All gradients are checked before anything is touched: a NaN/Inf gradient
    raises NumericalError naming the parameter and leaves params and state as
    they were.
    """
    lr = state.lr if lr is None else lr
    for name, p in params.items():
        if name not in grads or name not in state.first_moment:
            raise ShapeError(f"optimizer: no gradient or moment for parameter {name!r}")
        g = grads[name]
        if g.shape != p.data.shape or state.first_moment[name].shape != p.data.shape:
            raise ShapeError(
                f"optimizer: shapes disagree for {name!r}: param {p.data.shape}, grad {g.shape}"
            )
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in parameter {name!r}; step refused")

    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = grads[name]
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return state


def lr_at_epoch(base_lr, epoch):
    """base_lr * 0.95 ** floor(epoch / 2)."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return base_lr * (1.0 - LR_DECAY) ** (epoch // LR_DECAY_EVERY)


def clip_grad_norm(grads, max_norm):
    """
    Rescales all gradients together so their global L2 norm is <= max_norm.

    Returns the norm measured before clipping.
    """
    total = math.sqrt(float(np.sum([np.sum(g * g) for g in grads.values()])))
    if max_norm is not None and total > max_norm > 0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total
