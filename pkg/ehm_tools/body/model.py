"""The differentiable body-and-head forward model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import torch
from torch import Tensor, nn

from ehm_tools.assets.asset import ModelAsset
from ehm_tools.body.composition import CompositionTables, compose_head
from ehm_tools.body.kinematics import forward_kinematics
from ehm_tools.body.params import FullParams, ModelDims
from ehm_tools.body.rotation import rodrigues
from ehm_tools.body.skinning import (
    apply_blendshapes,
    apply_pose_correctives,
    linear_blend_skinning,
    regress_keypoints,
)
from ehm_tools.exceptions import CompositionUnsupported, DimensionError
from ehm_tools.logger import StructuredLogger
from ehm_tools.models import AssetKind

logger = StructuredLogger(__name__)


@dataclass
class MeshState:
    """Output of one forward pass; all lengths in meters."""

    vertices: Tensor  # V x 3, posed and composed
    joint_transforms: Tensor  # J x 4 x 4
    body_keypoints: Tensor  # K_b x 3
    face_keypoints: Tensor  # K_h x 3
    head_vertices: Tensor | None = None  # V_h x 3 in world space
    head_transforms: Tensor | None = None

    @property
    def keypoints3d(self) -> Tensor:
        return torch.cat([self.body_keypoints, self.face_keypoints])

    @property
    def joints(self) -> Tensor:
        return self.joint_transforms[:, :3, 3]


def _dense(matrix: sp.csr_matrix, dtype: torch.dtype) -> Tensor:
    return torch.as_tensor(np.asarray(matrix.toarray(), dtype=np.float64), dtype=dtype)


def _tensor(array: np.ndarray, dtype: torch.dtype) -> Tensor:
    return torch.as_tensor(np.asarray(array, dtype=np.float64), dtype=dtype)


class _Layer(nn.Module):
    """Shared buffers of a skinned mesh component."""

    def __init__(self, asset: ModelAsset, dtype: torch.dtype) -> None:
        super().__init__()
        self.parents = asset.parent_list()
        self.register_buffer("template", _tensor(asset.template, dtype))
        self.register_buffer("shape_dirs", _tensor(asset.shape_dirs, dtype))
        self.register_buffer("expr_dirs", _tensor(asset.expr_dirs, dtype))
        self.register_buffer("joint_regressor", _dense(asset.joint_regressor, dtype))
        self.register_buffer("skin_weights", _tensor(asset.skin_weights, dtype))
        self.register_buffer("keypoint_regressor", _dense(asset.keypoint_regressor, dtype))
        self.register_buffer("faces", torch.as_tensor(asset.faces.astype(np.int64)))
        pose_dirs = None if asset.pose_dirs is None else _tensor(asset.pose_dirs, dtype)
        self.register_buffer("pose_dirs", pose_dirs)

    def pose_mesh(
        self, pose: Tensor, shape: Tensor, expression: Tensor | None, translation: Tensor
    ) -> tuple[Tensor, Tensor]:
        """Blendshapes, forward kinematics and skinning for this component."""
        shaped = apply_blendshapes(
            self.template, self.shape_dirs, shape, self.expr_dirs, expression
        )
        rest_joints = regress_keypoints(shaped, self.joint_regressor)
        rotations = rodrigues(pose)
        if self.pose_dirs is not None:
            shaped = apply_pose_correctives(shaped, self.pose_dirs, rotations)
        transforms = forward_kinematics(self.parents, rotations, rest_joints, translation)
        posed = linear_blend_skinning(shaped, transforms, rest_joints, self.skin_weights)
        return posed, transforms


class EhmModel(nn.Module):
    """Body model with an optional attached head.

    Built from a ``BODY`` or ``COMPOSITE`` asset; asset tensors are copied
    into float64 buffers once, after which ``forward`` is a pure function of
    the parameters.
    """

    def __init__(self, asset: ModelAsset, dtype: torch.dtype = torch.float64) -> None:
        super().__init__()
        if asset.kind is AssetKind.HEAD:
            raise CompositionUnsupported(
                "A head asset only runs attached to a composite body",
                context={"kind": asset.kind.value},
            )
        self.asset = asset
        self.dtype = dtype
        self.body = _Layer(asset, dtype)
        self.head: _Layer | None = None
        self.tables: CompositionTables | None = None
        if asset.kind is AssetKind.COMPOSITE:
            self.tables = CompositionTables.from_asset(asset, dtype)
            assert asset.head is not None
            self.head = _Layer(asset.head, dtype)
        self.dims = ModelDims(
            num_joints=asset.num_joints,
            num_shape=asset.num_shape,
            hand_joint_ids=tuple(asset.hand_joints()),
            head_joints=asset.head.num_joints if asset.head is not None else 0,
            head_shape=asset.head.num_shape if asset.head is not None else 0,
            num_expr=asset.head.num_expr if asset.head is not None else 0,
        )

    @property
    def faces(self) -> Tensor:
        return self.body.faces

    def zero_params(self) -> FullParams:
        return FullParams.zeros(self.dims, dtype=self.dtype)

    def forward(self, params: FullParams) -> MeshState:  # type: ignore[override]
        """Run blendshapes, FK, skinning, head composition and keypoint regression."""
        if params.body.pose.shape != (self.dims.num_joints, 3):
            raise DimensionError(
                f"Body pose must be {self.dims.num_joints} x 3",
                context={"shape": list(params.body.pose.shape)},
            )
        vertices, transforms = self.body.pose_mesh(
            params.body.pose, params.body.shape, None, params.body.translation
        )

        head_vertices = head_transforms = None
        face_keypoints = vertices.new_zeros(0, 3)
        if self.head is not None:
            if params.head is None:
                raise DimensionError("Composite model needs head parameters")
            if params.head.pose.shape != (self.dims.head_joints, 3):
                raise DimensionError(
                    f"Head pose must be {self.dims.head_joints} x 3",
                    context={"shape": list(params.head.pose.shape)},
                )
            head_local, head_transforms = self.head.pose_mesh(
                params.head.pose,
                params.head.shape,
                params.head.expression,
                torch.zeros(3, dtype=vertices.dtype),
            )
            vertices, head_vertices = compose_head(
                vertices, head_local, params.head.scale, self.tables, transforms
            )
            face_keypoints = regress_keypoints(head_vertices, self.head.keypoint_regressor)

        state = MeshState(
            vertices=vertices,
            joint_transforms=transforms,
            body_keypoints=regress_keypoints(vertices, self.body.keypoint_regressor),
            face_keypoints=face_keypoints,
            head_vertices=head_vertices,
            head_transforms=head_transforms,
        )
        if logger.is_debug():
            self._check_keypoints(state)
        return state

    def _check_keypoints(self, state: MeshState) -> None:
        kp = self.asset.keypoint_regressor @ state.vertices.detach().cpu().numpy()
        error = float(np.abs(kp - state.body_keypoints.detach().cpu().numpy()).max(initial=0.0))
        logger.debug("Keypoint consistency", context={"max_error": error})
        if error > 1e-6:
            logger.warning("Keypoints drifted from regressor", context={"max_error": error})


def forward(asset: ModelAsset | EhmModel, params: FullParams) -> MeshState:
    """One-shot forward pass; build an :class:`EhmModel` once for repeated calls."""
    model = asset if isinstance(asset, EhmModel) else EhmModel(asset)
    return model(params)
