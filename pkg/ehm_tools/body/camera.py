"""Pinhole and weak-perspective cameras."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import torch
from torch import Tensor

from ehm_tools.models import CameraDocument, CameraModel

MIN_DEPTH = 1e-6


def _scalar(value: float, dtype: torch.dtype) -> Tensor:
    return torch.tensor(float(value), dtype=dtype)


@dataclass
class Camera:
    """Camera with tensor-valued parameters so fitting can differentiate them.

    The fitted block is ``(scale, tx, ty)`` for a weak-perspective camera and
    the extrinsic ``translation`` for a perspective one.
    """

    model: CameraModel
    rotation: Tensor
    translation: Tensor
    f: Tensor = field(default_factory=lambda: torch.tensor(1000.0, dtype=torch.float64))
    cx: Tensor = field(default_factory=lambda: torch.tensor(0.0, dtype=torch.float64))
    cy: Tensor = field(default_factory=lambda: torch.tensor(0.0, dtype=torch.float64))
    scale: Tensor = field(default_factory=lambda: torch.tensor(100.0, dtype=torch.float64))
    tx: Tensor = field(default_factory=lambda: torch.tensor(0.0, dtype=torch.float64))
    ty: Tensor = field(default_factory=lambda: torch.tensor(0.0, dtype=torch.float64))

    @classmethod
    def from_document(cls, doc: CameraDocument, dtype: torch.dtype = torch.float64) -> Camera:
        return cls(
            model=doc.model,
            rotation=torch.tensor(doc.rotation, dtype=dtype),
            translation=torch.tensor(doc.translation, dtype=dtype),
            f=_scalar(doc.f, dtype),
            cx=_scalar(doc.cx, dtype),
            cy=_scalar(doc.cy, dtype),
            scale=_scalar(doc.scale, dtype),
            tx=_scalar(doc.tx, dtype),
            ty=_scalar(doc.ty, dtype),
        )

    def to_document(self) -> CameraDocument:
        return CameraDocument(
            model=self.model,
            f=float(self.f),
            cx=float(self.cx),
            cy=float(self.cy),
            scale=float(self.scale),
            tx=float(self.tx),
            ty=float(self.ty),
            rotation=self.rotation.detach().tolist(),
            translation=self.translation.detach().tolist(),
        )

    def block(self) -> Tensor:
        """The camera's fitted parameter block as a flat 3-vector."""
        if self.model is CameraModel.WEAK_PERSPECTIVE:
            return torch.stack([self.scale, self.tx, self.ty])
        return self.translation

    def with_block(self, values: Tensor) -> Camera:
        """Copy of this camera with the fitted block replaced."""
        if self.model is CameraModel.WEAK_PERSPECTIVE:
            return replace(self, scale=values[0], tx=values[1], ty=values[2])
        return replace(self, translation=values)

    def detach(self) -> Camera:
        return replace(
            self,
            **{
                name: getattr(self, name).detach()
                for name in ("rotation", "translation", "f", "cx", "cy", "scale", "tx", "ty")
            },
        )


def project(camera: Camera, points: Tensor) -> tuple[Tensor, Tensor]:
    """Project N x 3 world points to N x 2 pixels.

    Returns:
        Pixel coordinates and a boolean validity mask. Perspective points at
        depth <= ``MIN_DEPTH`` are marked invalid and their coordinates are
        zero, so they feed no gradient.
    """
    cam = points @ camera.rotation.T + camera.translation
    if camera.model is CameraModel.WEAK_PERSPECTIVE:
        uv = camera.scale * cam[:, :2] + torch.stack([camera.tx, camera.ty])
        return uv, torch.ones(points.shape[0], dtype=torch.bool, device=points.device)

    z = cam[:, 2]
    valid = z > MIN_DEPTH
    safe_z = torch.where(valid, z, torch.ones_like(z))
    uv = camera.f * cam[:, :2] / safe_z[:, None] + torch.stack([camera.cx, camera.cy])
    return torch.where(valid[:, None], uv, torch.zeros_like(uv)), valid
