"""Pose transfer tool."""

import json
from typing import Any

import numpy as np

from ..assets.asset import ModelAsset
from ..exceptions import ConfigurationError, MapError
from ..models import PoseDocument, PoseOffsetDocument
from ..transfer import apply_pose_offset, derive_pose_offset
from .base import BaseTool


def joint_map_by_name(source: ModelAsset, target: ModelAsset) -> list[tuple[int, int]]:
    """Pair joints that carry the same name in both skeletons."""
    index = {name: i for i, name in enumerate(source.joint_names)}
    pairs = [(index[name], t) for t, name in enumerate(target.joint_names) if name in index]
    if not pairs:
        raise MapError("The skeletons share no joint names; give an explicit joint map")
    return pairs


class TransferTool(BaseTool):
    """Derive pose offsets between two skeletons, or carry a pose across with them."""

    name = "transfer"
    description = "Derive rest-pose offsets between skeletons or apply them to a source pose"
    parameters = {
        "mode": {"type": "string", "description": "'derive' or 'apply'", "required": True},
        "source": {"type": "string", "description": "Source EHMA (derive)", "required": False},
        "target": {"type": "string", "description": "Target EHMA (derive)", "required": False},
        "joint_map": {
            "type": "array",
            "description": "(source, target) joint pairs or a JSON file; by name if omitted",
            "required": False,
        },
        "offset": {"type": "object", "description": "PoseOffset or path (apply)", "required": False},
        "pose": {"type": "object", "description": "Source pose or path (apply)", "required": False},
        "output": {"type": "string", "description": "Output JSON", "required": False},
    }

    async def _execute(self, **kwargs: Any) -> dict[str, Any]:
        self._validate_parameters(kwargs, ["mode"])
        mode = kwargs["mode"]
        if mode == "derive":
            return self._derive(kwargs)
        if mode == "apply":
            return self._apply(kwargs)
        raise ConfigurationError(f"Unknown transfer mode: {mode}", context={"mode": mode})

    def _derive(self, kwargs: dict[str, Any]) -> dict[str, Any]:
        self._validate_parameters(kwargs, ["source", "target"])
        source = self._load_asset(kwargs["source"])
        target = self._load_asset(kwargs["target"])
        joint_map = kwargs.get("joint_map")
        if joint_map is None:
            joint_map = joint_map_by_name(source, target)
        elif isinstance(joint_map, str):
            joint_map = json.loads(self._validate_path(joint_map).read_text())
        offset = derive_pose_offset(source, target, [tuple(p) for p in joint_map])
        self._write_document(offset, kwargs.get("output"))
        return offset.model_dump(mode="json")

    def _apply(self, kwargs: dict[str, Any]) -> dict[str, Any]:
        self._validate_parameters(kwargs, ["offset", "pose"])
        offset = self._read_document(PoseOffsetDocument, kwargs["offset"])
        pose = self._read_document(PoseDocument, kwargs["pose"])
        theta = apply_pose_offset(np.asarray(pose.pose, dtype=np.float64), offset)
        result = PoseDocument(pose=theta.tolist())
        self._write_document(result, kwargs.get("output"))
        return result.model_dump(mode="json")
