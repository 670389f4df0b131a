"""Blendshapes, linear blend skinning and keypoint regression."""

import torch
from torch import Tensor

from ehm_tools.exceptions import DimensionError


def _blend(vertices: Tensor, dirs: Tensor, coeffs: Tensor | None, label: str) -> Tensor:
    if coeffs is None or coeffs.numel() == 0:
        return vertices
    n = coeffs.shape[0]
    if coeffs.dim() != 1 or n > dirs.shape[2]:
        raise DimensionError(
            f"{label} has {n} coefficients but the basis has {dirs.shape[2]}",
            context={"coefficients": n, "basis": int(dirs.shape[2])},
        )
    # Missing trailing coefficients act as zeros.
    return vertices + torch.einsum("vci,i->vc", dirs[:, :, :n], coeffs)


def apply_blendshapes(
    template: Tensor,
    shape_dirs: Tensor,
    beta: Tensor | None,
    expr_dirs: Tensor | None = None,
    phi: Tensor | None = None,
) -> Tensor:
    """Add shape and expression offsets to the template.

    Raises:
        DimensionError: If a coefficient vector is longer than its basis
    """
    shaped = _blend(template, shape_dirs, beta, "shape")
    if expr_dirs is not None:
        shaped = _blend(shaped, expr_dirs, phi, "expression")
    elif phi is not None and phi.numel():
        raise DimensionError("Model has no expression basis", context={"coefficients": phi.numel()})
    return shaped


def apply_pose_correctives(vertices: Tensor, pose_dirs: Tensor, rotations: Tensor) -> Tensor:
    """Add pose-dependent offsets driven by (R_j - I) of every non-root joint."""
    eye = torch.eye(3, dtype=rotations.dtype, device=rotations.device)
    features = (rotations[1:] - eye).reshape(-1)
    return vertices + torch.einsum("vcp,p->vc", pose_dirs, features)


def relative_transforms(transforms: Tensor, rest_joints: Tensor) -> Tensor:
    """Convert joint world transforms into transforms acting on rest-space points."""
    rot = transforms[:, :3, :3]
    offset = transforms[:, :3, 3] - torch.einsum("jab,jb->ja", rot, rest_joints)
    return _with_translation(transforms, offset)


def _with_translation(transforms: Tensor, translation: Tensor) -> Tensor:
    top = torch.cat([transforms[:, :3, :3], translation[:, :, None]], dim=2)
    return torch.cat([top, transforms[:, 3:]], dim=1)


def linear_blend_skinning(
    vertices: Tensor, transforms: Tensor, rest_joints: Tensor, skin_weights: Tensor
) -> Tensor:
    """Pose rest-space vertices (V x 3) with joint world transforms (J x 4 x 4).

    Raises:
        DimensionError: If weights, transforms and vertices disagree
    """
    num_vertices, num_joints = skin_weights.shape
    if (
        vertices.shape != (num_vertices, 3)
        or transforms.shape != (num_joints, 4, 4)
        or rest_joints.shape != (num_joints, 3)
    ):
        raise DimensionError(
            "Skinning inputs disagree",
            context={
                "vertices": list(vertices.shape),
                "transforms": list(transforms.shape),
                "skin_weights": list(skin_weights.shape),
            },
        )
    relative = relative_transforms(transforms, rest_joints)
    blended = (skin_weights @ relative[:, :3].reshape(num_joints, 12)).reshape(-1, 3, 4)
    return torch.einsum("vab,vb->va", blended[:, :, :3], vertices) + blended[:, :, 3]


def regress_keypoints(vertices: Tensor, regressor: Tensor) -> Tensor:
    """Apply a K x V regressor (dense or sparse) to V x 3 vertices.

    Raises:
        DimensionError: If the regressor width is not V
    """
    if regressor.shape[1] != vertices.shape[0]:
        raise DimensionError(
            f"Regressor expects {regressor.shape[1]} vertices, got {vertices.shape[0]}",
            context={"regressor": list(regressor.shape), "vertices": list(vertices.shape)},
        )
    return regressor @ vertices
