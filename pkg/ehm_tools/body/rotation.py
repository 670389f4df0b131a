"""Axis-angle rotations."""

import torch
from torch import Tensor

SMALL_ANGLE = 1e-8


def skew(v: Tensor) -> Tensor:
    """Cross-product matrix of ``v`` (... x 3 -> ... x 3 x 3)."""
    x, y, z = v.unbind(-1)
    zero = torch.zeros_like(x)
    return torch.stack(
        [
            torch.stack([zero, -z, y], dim=-1),
            torch.stack([z, zero, -x], dim=-1),
            torch.stack([-y, x, zero], dim=-1),
        ],
        dim=-2,
    )


def rodrigues(axis_angle: Tensor) -> Tensor:
    """Convert axis-angle vectors (... x 3) to rotation matrices (... x 3 x 3).

    Below an angle of ``SMALL_ANGLE`` the sin/cos coefficients switch to their
    second-order Taylor expansions, which keeps value and gradient smooth at
    the origin.
    """
    theta2 = (axis_angle * axis_angle).sum(-1)
    small = theta2 < SMALL_ANGLE**2
    safe2 = torch.where(small, torch.ones_like(theta2), theta2)
    theta = torch.sqrt(safe2)
    a = torch.where(small, 1.0 - theta2 / 6.0, torch.sin(theta) / theta)
    b = torch.where(small, 0.5 - theta2 / 24.0, (1.0 - torch.cos(theta)) / safe2)

    k = skew(axis_angle)
    eye = torch.eye(3, dtype=axis_angle.dtype, device=axis_angle.device)
    return eye + a[..., None, None] * k + b[..., None, None] * (k @ k)
