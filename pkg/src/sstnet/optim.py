"""Adam, Xavier-uniform initialisation and the step learning-rate schedule."""

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import ParameterError, ShapeError
from .rng import stream


@dataclass
class AdamState:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **kwargs):
        st = cls(**kwargs)
        st.first_moment = [np.zeros_like(p.data) for p in params]
        st.second_moment = [np.zeros_like(p.data) for p in params]
        return st


def adam_step(params, grads, state):
    """Apply one bias-corrected Adam update in place.

    ``grads`` may be ``None`` entries (treated as zero). Returns
    ``(params, state)`` for convenience; both are mutated.
    """
    if len(params) != len(grads):
        raise ShapeError(f"adam_step: {len(params)} params but {len(grads)} grads")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p.data) for p in params]
        state.second_moment = [np.zeros_like(p.data) for p in params]
    if len(state.first_moment) != len(params):
        raise ShapeError(f"adam_step: state tracks {len(state.first_moment)} params, got {len(params)}")

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape or m.shape != p.shape:
            raise ShapeError(f"adam_step: param {p.shape}, grad {g.shape}, moment {m.shape}")
        g = g.astype(p.dtype, copy=False)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        p.data -= (state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype, copy=False)
    return params, state


def fans(shape):
    """(fan_in, fan_out) for a weight laid out as ``(*receptive, in, out)``."""
    if len(shape) < 2:
        raise ParameterError(f"xavier_init needs rank >= 2, got shape {tuple(shape)}")
    receptive = int(np.prod(shape[:-2])) if len(shape) > 2 else 1
    return shape[-2] * receptive, shape[-1] * receptive


def xavier_init(shape, seed, dtype=np.float32, name=None):
    """Xavier/Glorot uniform weights on ``+-sqrt(6 / (fan_in + fan_out))``."""
    shape = tuple(int(s) for s in shape)
    fan_in, fan_out = fans(shape)
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    data = stream(seed, "xavier").uniform(-bound, bound, size=shape).astype(dtype)
    return Tensor(data, requires_grad=True, name=name)


def step_lr(epoch, base_lr=1e-4, drop_epoch=60, divisor=10.0):
    """Learning rate for 1-based ``epoch``: ``base_lr`` up to ``drop_epoch``, then divided."""
    return base_lr if epoch <= drop_epoch else base_lr / divisor
