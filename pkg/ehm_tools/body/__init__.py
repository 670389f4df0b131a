"""Differentiable forward model: blendshapes, kinematics, skinning, head composition."""

from .camera import Camera, project
from .composition import CompositionTables, compose_head
from .export import read_obj_vertices, write_obj
from .kinematics import forward_kinematics
from .model import EhmModel, MeshState, forward
from .params import BodyParams, FullParams, HeadParams, ModelDims, ParamLayout
from .rotation import rodrigues
from .skinning import (
    apply_blendshapes,
    apply_pose_correctives,
    linear_blend_skinning,
    regress_keypoints,
)

__all__ = [
    "BodyParams",
    "Camera",
    "CompositionTables",
    "EhmModel",
    "FullParams",
    "HeadParams",
    "MeshState",
    "ModelDims",
    "ParamLayout",
    "apply_blendshapes",
    "apply_pose_correctives",
    "compose_head",
    "forward",
    "forward_kinematics",
    "linear_blend_skinning",
    "project",
    "read_obj_vertices",
    "regress_keypoints",
    "rodrigues",
    "write_obj",
]
