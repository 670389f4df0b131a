"""First-order optimizers over flat parameter vectors."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor

from ehm_tools.body.params import ParamLayout
from ehm_tools.models import OptimizerConfig, OptimizerKind

MIN_HEAD_SCALE = 1e-3


@dataclass
class AdamState:
    m: Tensor
    v: Tensor
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Tensor) -> AdamState:
        return cls(m=torch.zeros_like(params), v=torch.zeros_like(params))


def _clamp(params: Tensor, lower: Tensor | None) -> Tensor:
    return params if lower is None else torch.maximum(params, lower)


def step_adam(
    params: Tensor,
    gradient: Tensor,
    state: AdamState,
    lr: float | Tensor,
    config: OptimizerConfig | None = None,
    lower: Tensor | None = None,
) -> tuple[Tensor, AdamState]:
    """One bias-corrected Adam step; ``lr`` may be a per-entry tensor.

    Entries are clamped to ``lower`` afterwards when it is given.
    """
    config = config or OptimizerConfig()
    t = state.t + 1
    m = config.beta1 * state.m + (1.0 - config.beta1) * gradient
    v = config.beta2 * state.v + (1.0 - config.beta2) * gradient * gradient
    m_hat = m / (1.0 - config.beta1**t)
    v_hat = v / (1.0 - config.beta2**t)
    updated = params - lr * m_hat / (torch.sqrt(v_hat) + config.eps)
    return _clamp(updated, lower), AdamState(m=m, v=v, t=t)


def step_gradient_descent(
    params: Tensor, gradient: Tensor, lr: float | Tensor, lower: Tensor | None = None
) -> Tensor:
    return _clamp(params - lr * gradient, lower)


class Optimizer:
    """Stateful wrapper applying per-block step scales and parameter bounds."""

    def __init__(
        self,
        layout: ParamLayout,
        config: OptimizerConfig,
        lr_scale: dict[str, float] | None = None,
        dtype: torch.dtype = torch.float64,
    ) -> None:
        self.config = config
        self.scale = torch.ones(layout.size, dtype=dtype)
        for name, factor in (lr_scale or {}).items():
            if name in layout.slices:
                self.scale[layout.slices[name]] = factor
        self.lower: Tensor | None = None
        if "head_scale" in layout.slices:
            self.lower = torch.full((layout.size,), -torch.inf, dtype=dtype)
            self.lower[layout.slices["head_scale"]] = MIN_HEAD_SCALE
        self.state = AdamState.zeros_like(self.scale)

    def step(self, params: Tensor, gradient: Tensor, lr: float) -> Tensor:
        if self.config.kind is OptimizerKind.GRADIENT_DESCENT:
            return step_gradient_descent(params, gradient, lr * self.scale, self.lower)
        params, self.state = step_adam(
            params, gradient, self.state, lr * self.scale, self.config, self.lower
        )
        return params
