"""Seeded synthetic fitting problems with exact supervision."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import torch

from ehm_tools.body.camera import Camera, project
from ehm_tools.body.model import EhmModel
from ehm_tools.body.params import BodyParams, FullParams, HeadParams
from ehm_tools.losses import Supervision
from ehm_tools.models import CameraModel, RasterConfig
from ehm_tools.renderer import rasterize_soft_silhouette

FILL = 0.7


@dataclass
class SyntheticProblem:
    """Ground truth, a perturbed initialization and the supervision rendered from the truth."""

    truth: FullParams
    init: FullParams
    supervision: Supervision


def framing_camera(model: EhmModel, raster: RasterConfig, dtype: torch.dtype = torch.float64) -> Camera:
    """Weak-perspective camera centring the rest mesh inside the image."""
    verts = model.body.template.detach()
    lo, hi = verts[:, :2].min(dim=0).values, verts[:, :2].max(dim=0).values
    extent = float((hi - lo).max().clamp(min=1e-6))
    scale = FILL * min(raster.width, raster.height) / extent
    centre = 0.5 * (lo + hi)
    return Camera(
        model=CameraModel.WEAK_PERSPECTIVE,
        rotation=torch.eye(3, dtype=dtype),
        translation=torch.zeros(3, dtype=dtype),
        scale=torch.tensor(scale, dtype=dtype),
        tx=torch.tensor(0.5 * raster.width - scale * float(centre[0]), dtype=dtype),
        ty=torch.tensor(0.5 * raster.height - scale * float(centre[1]), dtype=dtype),
    )


def _perturb(
    params: FullParams,
    rng: np.random.Generator,
    pose_sigma: float,
    shape_sigma: float,
    camera_px: float,
) -> FullParams:
    def noise(like: torch.Tensor, sigma: float) -> torch.Tensor:
        return like + torch.as_tensor(rng.normal(0.0, sigma, tuple(like.shape)), dtype=like.dtype)

    body = BodyParams(
        pose=noise(params.body.pose, pose_sigma),
        shape=noise(params.body.shape, shape_sigma),
        translation=params.body.translation.clone(),
    )
    head = None
    if params.head is not None:
        head = HeadParams(
            pose=noise(params.head.pose, pose_sigma),
            shape=noise(params.head.shape, shape_sigma),
            expression=noise(params.head.expression, shape_sigma),
            scale=params.head.scale.clone(),
        )
    shift = rng.uniform(-camera_px, camera_px, 2)
    camera = replace(
        params.camera,
        tx=params.camera.tx + float(shift[0]),
        ty=params.camera.ty + float(shift[1]),
    )
    return FullParams(body=body, head=head, camera=camera)


def synthetic_problem(
    model: EhmModel,
    seed: int,
    raster: RasterConfig | None = None,
    with_params: bool = False,
    with_mask: bool = False,
    pose_sigma: float = 0.1,
    shape_sigma: float = 0.5,
    camera_px: float = 10.0,
) -> SyntheticProblem:
    """Draw a ground-truth pose, render its supervision and perturb an initialization.

    Supervision always carries 3D and 2D body keypoints and, with a head,
    2D face keypoints. ``with_params`` adds the parameter blocks themselves,
    ``with_mask`` a binarized silhouette at ``raster`` resolution.
    """
    raster = raster or RasterConfig()
    dtype = model.dtype
    rng = np.random.default_rng(seed)
    zero = model.zero_params()

    def draw(like: torch.Tensor, sigma: float) -> torch.Tensor:
        return torch.as_tensor(rng.normal(0.0, sigma, tuple(like.shape)), dtype=dtype)

    head = None
    if zero.head is not None:
        head = HeadParams(
            pose=draw(zero.head.pose, 0.1),
            shape=draw(zero.head.shape, 0.5),
            expression=draw(zero.head.expression, 0.5),
            scale=torch.as_tensor(rng.uniform(0.9, 1.1, 3), dtype=dtype),
        )
    truth = FullParams(
        body=BodyParams(
            pose=draw(zero.body.pose, 0.2),
            shape=draw(zero.body.shape, 0.5),
            translation=draw(zero.body.translation, 0.02),
        ),
        head=head,
        camera=framing_camera(model, raster, dtype),
    )

    with torch.no_grad():
        state = model(truth)
        kp2d, _ = project(truth.camera, state.body_keypoints)
        sup = Supervision(
            keypoints3d=state.body_keypoints.clone(),
            keypoints2d=kp2d,
            keypoint_confidence=torch.ones(kp2d.shape[0], dtype=dtype),
        )
        if model.head is not None:
            sup.face_keypoints2d, _ = project(truth.camera, state.face_keypoints)
            sup.face_confidence = torch.ones(sup.face_keypoints2d.shape[0], dtype=dtype)
        if with_mask:
            image = rasterize_soft_silhouette(state, model.faces, truth.camera, raster)
            sup.mask = (image > 0.5).to(dtype)

    if with_params:
        sup.body_pose = truth.body.pose.clone()
        sup.body_shape = truth.body.shape.clone()
        if truth.head is not None:
            sup.head_pose = truth.head.pose.clone()
            sup.head_shape = truth.head.shape.clone()
            sup.expression = truth.head.expression.clone()
            sup.head_scale = truth.head.scale.clone()

    init = _perturb(truth, rng, pose_sigma, shape_sigma, camera_px)
    return SyntheticProblem(truth=truth, init=init, supervision=sup)
