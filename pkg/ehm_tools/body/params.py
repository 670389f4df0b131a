"""Model parameters as tensors, their JSON documents and flat layouts."""

from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass, field, replace

import torch
from torch import Tensor

from ehm_tools.body.camera import Camera
from ehm_tools.exceptions import DimensionError
from ehm_tools.models import PARAM_BLOCKS, CameraModel, FullParamsDocument


@dataclass(frozen=True)
class ModelDims:
    """Parameter counts of a model."""

    num_joints: int
    num_shape: int
    hand_joint_ids: tuple[int, ...] = ()
    head_joints: int = 0
    head_shape: int = 0
    num_expr: int = 0

    @property
    def has_head(self) -> bool:
        return self.head_joints > 0


@dataclass
class BodyParams:
    pose: Tensor  # J x 3 axis-angle, root first
    shape: Tensor  # S
    translation: Tensor  # 3


@dataclass
class HeadParams:
    pose: Tensor  # J_h x 3 axis-angle, head root first
    shape: Tensor  # S_h
    expression: Tensor  # E
    scale: Tensor  # 3


@dataclass
class FullParams:
    """Every parameter the forward model consumes."""

    body: BodyParams
    head: HeadParams | None
    camera: Camera = field(
        default_factory=lambda: Camera(
            model=CameraModel.WEAK_PERSPECTIVE,
            rotation=torch.eye(3, dtype=torch.float64),
            translation=torch.zeros(3, dtype=torch.float64),
        )
    )

    @classmethod
    def zeros(
        cls, dims: ModelDims, camera: Camera | None = None, dtype: torch.dtype = torch.float64
    ) -> FullParams:
        """Rest pose, mean shape, neutral expression and unit head scale."""
        head = None
        if dims.has_head:
            head = HeadParams(
                pose=torch.zeros(dims.head_joints, 3, dtype=dtype),
                shape=torch.zeros(dims.head_shape, dtype=dtype),
                expression=torch.zeros(dims.num_expr, dtype=dtype),
                scale=torch.ones(3, dtype=dtype),
            )
        body = BodyParams(
            pose=torch.zeros(dims.num_joints, 3, dtype=dtype),
            shape=torch.zeros(dims.num_shape, dtype=dtype),
            translation=torch.zeros(3, dtype=dtype),
        )
        if camera is None:
            return cls(body=body, head=head)
        return cls(body=body, head=head, camera=camera)

    @classmethod
    def from_document(
        cls, doc: FullParamsDocument, dims: ModelDims, dtype: torch.dtype = torch.float64
    ) -> FullParams:
        """Build tensors from a parameter document.

        Empty blocks default to zeros and short coefficient vectors are
        zero-padded to the model's basis size.

        Raises:
            DimensionError: If a block is larger than the model allows
        """
        base = cls.zeros(dims, Camera.from_document(doc.camera, dtype), dtype)
        body = BodyParams(
            pose=_rows(doc.body_pose, base.body.pose, "body_pose"),
            shape=_padded(doc.body_shape, base.body.shape, "body_shape"),
            translation=torch.tensor(doc.root_translation, dtype=dtype),
        )
        head = base.head
        if head is not None:
            head = HeadParams(
                pose=_rows(doc.head_pose, head.pose, "head_pose"),
                shape=_padded(doc.head_shape, head.shape, "head_shape"),
                expression=_padded(doc.expression, head.expression, "expression"),
                scale=torch.tensor(doc.head_scale, dtype=dtype),
            )
        elif doc.head_pose or doc.head_shape or doc.expression:
            raise DimensionError("Model has no head but head parameters were given")
        return cls(body=body, head=head, camera=base.camera)

    def to_document(self) -> FullParamsDocument:
        doc = FullParamsDocument(
            body_pose=self.body.pose.detach().tolist(),
            body_shape=self.body.shape.detach().tolist(),
            root_translation=self.body.translation.detach().tolist(),
            camera=self.camera.to_document(),
        )
        if self.head is not None:
            doc.head_pose = self.head.pose.detach().tolist()
            doc.head_shape = self.head.shape.detach().tolist()
            doc.expression = self.head.expression.detach().tolist()
            doc.head_scale = self.head.scale.detach().tolist()
        return doc

    def detach(self) -> FullParams:
        head = None
        if self.head is not None:
            head = HeadParams(
                pose=self.head.pose.detach(),
                shape=self.head.shape.detach(),
                expression=self.head.expression.detach(),
                scale=self.head.scale.detach(),
            )
        return FullParams(
            body=BodyParams(
                pose=self.body.pose.detach(),
                shape=self.body.shape.detach(),
                translation=self.body.translation.detach(),
            ),
            head=head,
            camera=self.camera.detach(),
        )


def _rows(values: list[list[float]], default: Tensor, label: str) -> Tensor:
    if not values:
        return default
    tensor = torch.tensor(values, dtype=default.dtype)
    if tensor.shape != default.shape:
        raise DimensionError(
            f"{label} must have shape {list(default.shape)}",
            context={"block": label, "shape": list(tensor.shape)},
        )
    return tensor


def _padded(values: list[float], default: Tensor, label: str) -> Tensor:
    if len(values) > default.shape[0]:
        raise DimensionError(
            f"{label} has {len(values)} coefficients but the basis has {default.shape[0]}",
            context={"block": label, "coefficients": len(values)},
        )
    out = default.clone()
    out[: len(values)] = torch.tensor(values, dtype=default.dtype)
    return out


class ParamLayout:
    """Ordered flat view over the active (unfrozen) parameter blocks.

    The body pose splits into ``body_pose`` (every non-hand joint, root
    included) and ``hand_pose`` (rows listed in ``hand_joint_ids``). Blocks a
    model does not have are absent from the layout.
    """

    def __init__(self, dims: ModelDims, frozen: Iterable[str] = ()) -> None:
        self.dims = dims
        frozen = set(frozen)
        unknown = frozen - set(PARAM_BLOCKS)
        if unknown:
            raise DimensionError(f"Unknown parameter blocks: {sorted(unknown)}")
        hands = sorted(set(dims.hand_joint_ids))
        self.hand_ids = torch.tensor(hands, dtype=torch.long)
        self.body_ids = torch.tensor(
            [j for j in range(dims.num_joints) if j not in hands], dtype=torch.long
        )
        sizes = {
            "body_pose": 3 * len(self.body_ids),
            "hand_pose": 3 * len(hands),
            "root_translation": 3,
            "body_shape": dims.num_shape,
            "head_pose": 3 * dims.head_joints,
            "head_shape": dims.head_shape,
            "expression": dims.num_expr,
            "head_scale": 3 if dims.has_head else 0,
            "camera": 3,
        }
        self.sizes = {name: n for name, n in sizes.items() if n > 0}
        self.frozen = frozen
        self.active = [name for name in self.sizes if name not in frozen]
        self.slices: dict[str, slice] = {}
        offset = 0
        for name in self.active:
            self.slices[name] = slice(offset, offset + self.sizes[name])
            offset += self.sizes[name]
        self.size = offset

    def blocks(self, params: FullParams) -> dict[str, Tensor]:
        """Every block of ``params`` as a flat tensor."""
        out = {
            "body_pose": params.body.pose[self.body_ids].reshape(-1),
            "hand_pose": params.body.pose[self.hand_ids].reshape(-1),
            "root_translation": params.body.translation,
            "body_shape": params.body.shape,
            "camera": params.camera.block(),
        }
        if params.head is not None:
            out.update(
                head_pose=params.head.pose.reshape(-1),
                head_shape=params.head.shape,
                expression=params.head.expression,
                head_scale=params.head.scale,
            )
        return {name: out[name] for name in self.sizes}

    def pack(self, params: FullParams) -> Tensor:
        """Concatenate the active blocks into a detached flat vector."""
        blocks = self.blocks(params)
        if not self.active:
            return torch.zeros(0, dtype=params.body.pose.dtype)
        return torch.cat([blocks[name].detach().reshape(-1) for name in self.active]).clone()

    def unpack(self, flat: Tensor, base: FullParams) -> FullParams:
        """Replace the active blocks of ``base`` with the entries of ``flat``.

        Frozen blocks are taken from ``base`` unchanged; the result stays
        differentiable with respect to ``flat``.
        """
        if flat.shape != (self.size,):
            raise DimensionError(
                f"Expected {self.size} parameters, got {tuple(flat.shape)}",
                context={"expected": self.size, "got": list(flat.shape)},
            )

        def seg(name: str) -> Tensor | None:
            s = self.slices.get(name)
            return None if s is None else flat[s]

        pose = base.body.pose
        if (v := seg("body_pose")) is not None:
            pose = pose.index_copy(0, self.body_ids, v.reshape(-1, 3))
        if (v := seg("hand_pose")) is not None:
            pose = pose.index_copy(0, self.hand_ids, v.reshape(-1, 3))
        body = BodyParams(
            pose=pose,
            shape=_pick(seg("body_shape"), base.body.shape),
            translation=_pick(seg("root_translation"), base.body.translation),
        )
        head = base.head
        if head is not None:
            head_pose = seg("head_pose")
            head = HeadParams(
                pose=head.pose if head_pose is None else head_pose.reshape(-1, 3),
                shape=_pick(seg("head_shape"), head.shape),
                expression=_pick(seg("expression"), head.expression),
                scale=_pick(seg("head_scale"), head.scale),
            )
        camera = base.camera
        if (v := seg("camera")) is not None:
            camera = camera.with_block(v)
        return replace(base, body=body, head=head, camera=camera)


def _pick(value: Tensor | None, default: Tensor) -> Tensor:
    return default if value is None else value
