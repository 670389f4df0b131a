"""Forward kinematics over a kinematic tree."""

from collections.abc import Sequence

import torch
from torch import Tensor

from ehm_tools.body.rotation import rodrigues
from ehm_tools.exceptions import DimensionError


def rigid(rotation: Tensor, translation: Tensor) -> Tensor:
    """Assemble a 4x4 homogeneous transform."""
    top = torch.cat([rotation, translation[:, None]], dim=1)
    bottom = torch.zeros(1, 4, dtype=rotation.dtype, device=rotation.device)
    bottom[0, 3] = 1.0
    return torch.cat([top, bottom], dim=0)


def forward_kinematics(
    parents: Sequence[int],
    pose: Tensor,
    rest_joints: Tensor,
    root_translation: Tensor,
) -> Tensor:
    """Compute world transforms (J x 4 x 4) for every joint.

    Args:
        parents: Parent index per joint, ``-1`` for the root; parents precede
            children
        pose: Axis-angle rotations (J x 3) or rotation matrices (J x 3 x 3)
        rest_joints: Rest joint positions (J x 3)
        root_translation: World translation of the root (3)

    Returns:
        Transforms whose rotation block is the accumulated joint rotation and
        whose translation is the posed joint position.

    Raises:
        DimensionError: If pose, joints and parents disagree
    """
    num_joints = len(parents)
    rotations = pose if pose.dim() == 3 else rodrigues(pose)
    if rotations.shape != (num_joints, 3, 3) or rest_joints.shape != (num_joints, 3):
        raise DimensionError(
            "Pose and rest joints must cover every joint",
            context={
                "joints": num_joints,
                "pose": list(pose.shape),
                "rest_joints": list(rest_joints.shape),
            },
        )

    transforms: list[Tensor] = []
    for j, parent in enumerate(parents):
        if parent < 0:
            local = rigid(rotations[j], rest_joints[j] + root_translation)
            transforms.append(local)
        else:
            local = rigid(rotations[j], rest_joints[j] - rest_joints[parent])
            transforms.append(transforms[parent] @ local)
    return torch.stack(transforms)
