"""Attach a scaled head mesh to a posed body."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor

from ehm_tools.assets.asset import ModelAsset
from ehm_tools.exceptions import CompositionUnsupported


@dataclass(frozen=True)
class CompositionTables:
    """Index tables that tie a head mesh to the body it attaches to."""

    head_vertex_ids: Tensor  # long, V_h
    seam_weights: Tensor  # V_h, 0 = body, 1 = head
    attach_joint: int

    @classmethod
    def from_asset(cls, asset: ModelAsset, dtype: torch.dtype = torch.float64) -> CompositionTables:
        if asset.head_vertex_ids is None or asset.seam_weights is None or asset.head is None:
            raise CompositionUnsupported(
                "Asset carries no head composition metadata",
                context={"kind": asset.kind.value},
            )
        return cls(
            head_vertex_ids=torch.as_tensor(asset.head_vertex_ids.astype("int64")),
            seam_weights=torch.as_tensor(asset.seam_weights.astype("float64"), dtype=dtype),
            attach_joint=asset.head_attach_joint,
        )


def place_head(head_mesh: Tensor, scale: Tensor, attach_transform: Tensor) -> Tensor:
    """Scale head-space vertices about the pivot, then move them rigidly into the world."""
    scaled = head_mesh * scale
    return scaled @ attach_transform[:3, :3].T + attach_transform[:3, 3]


def compose_head(
    body_mesh: Tensor,
    head_mesh: Tensor,
    scale: Tensor,
    tables: CompositionTables | None,
    transforms: Tensor,
) -> tuple[Tensor, Tensor]:
    """Blend the head into the body mesh.

    ``head_mesh`` is expressed in head space, whose origin is the rest
    position of the attach joint. Seam vertices interpolate linearly between
    the body and head positions.

    Returns:
        The composed mesh (V x 3) and the placed head vertices (V_h x 3).

    Raises:
        CompositionUnsupported: If ``tables`` is missing
    """
    if tables is None:
        raise CompositionUnsupported("Body model has no head to compose")
    head_world = place_head(head_mesh, scale, transforms[tables.attach_joint])
    ids = tables.head_vertex_ids
    w = tables.seam_weights[:, None]
    blended = (1.0 - w) * body_mesh[ids] + w * head_world
    return body_mesh.index_copy(0, ids, blended), head_world
