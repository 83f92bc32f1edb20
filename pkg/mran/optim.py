"""
Adam optimizer over a named parameter set.

Each network component owns its own AdamState, so the discriminator can be
stepped on a different schedule than the extractors and the classifier.
"""
from typing import Dict, Mapping, Optional

import numpy as np

from mran.autodiff import Tensor
from mran.errors import ConfigError, UsageError


class AdamState:
    """First/second moment buffers and step counter for one parameter set"""

    def __init__(
        self,
        learning_rate: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
        weight_decay: float = 0.0,
        grad_clip: Optional[float] = None,
    ):
        if learning_rate <= 0.0:
            raise ConfigError(f"learning rate must be positive, got {learning_rate}")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ConfigError(f"Adam betas must lie in [0, 1), got {beta1}, {beta2}")
        if grad_clip is not None and grad_clip <= 0.0:
            raise ConfigError(f"grad_clip must be positive when set, got {grad_clip}")
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.weight_decay = weight_decay
        self.grad_clip = grad_clip
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: Mapping[str, Tensor]):
        adam_step(self, params)


def _clip_scale(params: Mapping[str, Tensor], max_norm: Optional[float]) -> float:
    if max_norm is None:
        return 1.0
    norm = float(np.sqrt(sum(float((p.grad * p.grad).sum()) for p in params.values())))
    return min(1.0, max_norm / norm) if norm > 0.0 else 1.0


def adam_step(state: AdamState, params: Mapping[str, Tensor]):
    """
    One bias-corrected Adam update, in place.

    Gradients are left untouched; the caller zeroes them before the next step.
    """
    for name, param in params.items():
        if param.grad is None:
            raise UsageError(f"parameter '{name}' has no gradient buffer")
        if param.grad.shape != param.shape:
            raise UsageError(f"gradient of '{name}' has shape {param.grad.shape}, expected {param.shape}")

    state.t += 1
    bias1 = 1.0 - state.beta1 ** state.t
    bias2 = 1.0 - state.beta2 ** state.t
    clip = _clip_scale(params, state.grad_clip)

    for name, param in params.items():
        g = param.grad * clip
        if name not in state.m:
            state.m[name] = np.zeros_like(param.values)
            state.v[name] = np.zeros_like(param.values)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)

        update = (m / bias1) / (np.sqrt(v / bias2) + state.epsilon)
        if state.weight_decay:
            update = update + state.weight_decay * param.values
        param.values -= state.learning_rate * update
