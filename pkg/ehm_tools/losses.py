"""Fitting objectives and the finite-difference gradient harness.

Parameter terms sum over elements, keypoint terms sum confidence-weighted
L1 residuals over keypoints and the silhouette term is a pixel mean.
Gradients come from reverse-mode autodiff through the forward model.
"""

from __future__ import annotations

from collections.abc import Callable, Iterable
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import Tensor

from ehm_tools.body.camera import Camera, project
from ehm_tools.body.model import EhmModel, MeshState
from ehm_tools.body.params import BodyParams, FullParams, HeadParams, ParamLayout
from ehm_tools.exceptions import (
    ConfigurationError,
    DimensionError,
    MissingSupervision,
    NoActiveTerms,
    ShapeMismatch,
)
from ehm_tools.logger import StructuredLogger
from ehm_tools.models import GradCheckReport, LossWeights, RasterConfig, SupervisionDocument
from ehm_tools.renderer import load_mask, rasterize_soft_silhouette

MIN_CONFIDENCE = 0.05

logger = StructuredLogger(__name__)


@dataclass
class Supervision:
    """Ground-truth blocks as tensors; every block is optional."""

    body_pose: Tensor | None = None
    body_shape: Tensor | None = None
    keypoints3d: Tensor | None = None
    keypoints2d: Tensor | None = None
    keypoint_confidence: Tensor | None = None
    head_pose: Tensor | None = None
    head_shape: Tensor | None = None
    expression: Tensor | None = None
    head_scale: Tensor | None = None
    face_keypoints2d: Tensor | None = None
    face_confidence: Tensor | None = None
    mask: Tensor | None = None

    @classmethod
    def from_document(
        cls,
        doc: SupervisionDocument,
        mask_shape: tuple[int, int] | None = None,
        dtype: torch.dtype = torch.float64,
    ) -> Supervision:
        def t(value: list | None) -> Tensor | None:
            return None if value is None else torch.tensor(value, dtype=dtype)

        mask = None
        if doc.mask_path is not None:
            mask = torch.as_tensor(load_mask(doc.mask_path, mask_shape), dtype=dtype)
        return cls(
            body_pose=t(doc.body_pose),
            body_shape=t(doc.body_shape),
            keypoints3d=t(doc.keypoints3d),
            keypoints2d=t(doc.keypoints2d),
            keypoint_confidence=t(doc.keypoint_confidence),
            head_pose=t(doc.head_pose),
            head_shape=t(doc.head_shape),
            expression=t(doc.expression),
            head_scale=t(doc.head_scale),
            face_keypoints2d=t(doc.face_keypoints2d),
            face_confidence=t(doc.face_confidence),
            mask=mask,
        )

    def is_empty(self) -> bool:
        return all(getattr(self, name) is None for name in self.__dataclass_fields__)


@dataclass
class LossValue:
    """Weighted objective at one parameter point."""

    total: float
    per_term: dict[str, float]
    gradient: Tensor
    layout: ParamLayout
    weights: dict[str, float] = field(default_factory=dict)


def _check(pred: Tensor, target: Tensor, label: str) -> None:
    if pred.shape != target.shape:
        raise DimensionError(
            f"Supervision block {label} has shape {list(target.shape)}, model gives {list(pred.shape)}",
            context={"block": label},
        )


def _l1(pred: Tensor, target: Tensor, label: str) -> Tensor:
    _check(pred, target, label)
    return (pred - target).abs().sum()


def _sq(pred: Tensor, target: Tensor, label: str) -> Tensor:
    _check(pred, target, label)
    return ((pred - target) ** 2).sum()


def _confidence(conf: Tensor | None, n: int, like: Tensor) -> Tensor:
    if conf is None:
        return like.new_ones(n)
    if conf.shape != (n,):
        raise DimensionError("Confidences must have one entry per keypoint", context={"n": n})
    return torch.where(conf < MIN_CONFIDENCE, torch.zeros_like(conf), conf)


def _keypoint_l1(
    pred: Tensor, target: Tensor, conf: Tensor | None, valid: Tensor | None, label: str
) -> Tensor:
    _check(pred, target, label)
    c = _confidence(conf, pred.shape[0], pred)
    if valid is not None:
        c = torch.where(valid, c, torch.zeros_like(c))
    residual = torch.where(
        (c > 0)[:, None], pred - target, torch.zeros_like(pred)
    )
    return (c * residual.abs().sum(-1)).sum()


def loss_body(params: BodyParams, sup: Supervision) -> Tensor:
    """Squared error on body pose and shape.

    Raises:
        MissingSupervision: If neither block is supervised
    """
    if sup.body_pose is None and sup.body_shape is None:
        raise MissingSupervision("Body term needs body_pose or body_shape")
    total = params.pose.new_zeros(())
    if sup.body_pose is not None:
        total = total + _sq(params.pose, sup.body_pose, "body_pose")
    if sup.body_shape is not None:
        total = total + _sq(params.shape, sup.body_shape, "body_shape")
    return total


def loss_kp_body(
    state: MeshState, camera: Camera, sup: Supervision
) -> tuple[Tensor, Tensor]:
    """Confidence-weighted L1 on 3D body keypoints (meters) and their projections (pixels).

    Returns:
        The 3D and 2D parts; an absent block contributes zero.

    Raises:
        MissingSupervision: If neither keypoint block is supervised
    """
    if sup.keypoints3d is None and sup.keypoints2d is None:
        raise MissingSupervision("Body keypoint term needs keypoints3d or keypoints2d")
    kp = state.body_keypoints
    zero = kp.new_zeros(())
    part3d = part2d = zero
    if sup.keypoints3d is not None:
        part3d = _keypoint_l1(kp, sup.keypoints3d, sup.keypoint_confidence, None, "keypoints3d")
    if sup.keypoints2d is not None:
        uv, valid = project(camera, kp)
        part2d = _keypoint_l1(uv, sup.keypoints2d, sup.keypoint_confidence, valid, "keypoints2d")
    return part3d, part2d


def loss_head(params: HeadParams, sup: Supervision) -> Tensor:
    """L1 on head pose, head shape, expression and head scale.

    Raises:
        MissingSupervision: If no head block is supervised
    """
    blocks = (
        (params.pose, sup.head_pose, "head_pose"),
        (params.shape, sup.head_shape, "head_shape"),
        (params.expression, sup.expression, "expression"),
        (params.scale, sup.head_scale, "head_scale"),
    )
    present = [(p, t, label) for p, t, label in blocks if t is not None]
    if not present:
        raise MissingSupervision("Head term needs at least one head block")
    total = params.scale.new_zeros(())
    for pred, target, label in present:
        total = total + _l1(pred, target, label)
    return total


def loss_kp_face(state: MeshState, camera: Camera, sup: Supervision) -> Tensor:
    """Confidence-weighted L1 on projected face keypoints (pixels).

    Raises:
        MissingSupervision: If no face keypoints are supervised
    """
    if sup.face_keypoints2d is None:
        raise MissingSupervision("Face keypoint term needs face_keypoints2d")
    uv, valid = project(camera, state.face_keypoints)
    return _keypoint_l1(uv, sup.face_keypoints2d, sup.face_confidence, valid, "face_keypoints2d")


def loss_photo(rendered: Tensor, mask: Tensor | None) -> Tensor:
    """Mean absolute difference between a rendered silhouette and the mask.

    Raises:
        MissingSupervision: If there is no mask
        ShapeMismatch: If image and mask sizes differ
    """
    if mask is None:
        raise MissingSupervision("Photometric term needs a silhouette mask")
    if rendered.shape != mask.shape:
        raise ShapeMismatch(
            f"Rendered image {list(rendered.shape)} does not match mask {list(mask.shape)}",
            context={"rendered": list(rendered.shape), "mask": list(mask.shape)},
        )
    return (rendered - mask).abs().mean()


class Objective:
    """Weighted sum of the applicable terms as a function of a flat parameter vector.

    A term applies when its weight is positive and its supervision (and, for
    head terms, the head) is present. The silhouette term also needs a
    raster config.
    """

    def __init__(
        self,
        model: EhmModel,
        base: FullParams,
        sup: Supervision,
        weights: LossWeights,
        frozen: Iterable[str] = (),
        raster: RasterConfig | None = None,
    ) -> None:
        self.model = model
        self.base = base.detach()
        self.sup = sup
        self.raster = raster
        self.layout = ParamLayout(model.dims, frozen)
        has_head = model.head is not None
        head_sup = any(
            x is not None for x in (sup.head_pose, sup.head_shape, sup.expression, sup.head_scale)
        )
        candidates = {
            "body": (weights.w_body, sup.body_pose is not None or sup.body_shape is not None),
            "kp_body_3d": (weights.w_kp1 * weights.w_kp1_3d, sup.keypoints3d is not None),
            "kp_body_2d": (weights.w_kp1 * weights.w_kp1_2d, sup.keypoints2d is not None),
            "head": (weights.w_head, has_head and head_sup),
            "kp_face": (weights.w_kp2, has_head and sup.face_keypoints2d is not None),
            "photo": (weights.w_photo, sup.mask is not None and raster is not None),
        }
        self.weights = {name: w for name, (w, ok) in candidates.items() if ok and w > 0}
        if not self.weights:
            raise NoActiveTerms(
                "No loss term has both a positive weight and supervision",
                context={"weights": weights.model_dump()},
            )

    def terms(self, params: FullParams) -> dict[str, Tensor]:
        state = self.model(params)
        out: dict[str, Tensor] = {}
        if "body" in self.weights:
            out["body"] = loss_body(params.body, self.sup)
        if "kp_body_3d" in self.weights or "kp_body_2d" in self.weights:
            part3d, part2d = loss_kp_body(state, params.camera, self.sup)
            if "kp_body_3d" in self.weights:
                out["kp_body_3d"] = part3d
            if "kp_body_2d" in self.weights:
                out["kp_body_2d"] = part2d
        if "head" in self.weights:
            assert params.head is not None
            out["head"] = loss_head(params.head, self.sup)
        if "kp_face" in self.weights:
            out["kp_face"] = loss_kp_face(state, params.camera, self.sup)
        if "photo" in self.weights:
            assert self.raster is not None
            image = rasterize_soft_silhouette(state, self.model.faces, params.camera, self.raster)
            out["photo"] = loss_photo(image, self.sup.mask)
        return out

    def evaluate(self, flat: Tensor) -> tuple[Tensor, dict[str, Tensor]]:
        terms = self.terms(self.layout.unpack(flat, self.base))
        total = sum((self.weights[name] * value for name, value in terms.items()), flat.new_zeros(()))
        return total, terms

    def __call__(self, flat: Tensor) -> Tensor:
        return self.evaluate(flat)[0]

    def value_and_grad(self, flat: Tensor) -> LossValue:
        x = flat.detach().clone().requires_grad_(True)
        total, terms = self.evaluate(x)
        grad = None
        if total.requires_grad:
            (grad,) = torch.autograd.grad(total, x, allow_unused=True)
        if grad is None:
            grad = torch.zeros_like(x)
        return LossValue(
            total=float(total.detach()),
            per_term={name: float(v.detach()) for name, v in terms.items()},
            gradient=grad.detach(),
            layout=self.layout,
            weights=dict(self.weights),
        )


def total_loss(
    model: EhmModel,
    params: FullParams,
    sup: Supervision,
    weights: LossWeights,
    frozen: Iterable[str] = (),
    raster: RasterConfig | None = None,
) -> LossValue:
    """Weighted objective and its gradient over the unfrozen parameter blocks.

    Raises:
        NoActiveTerms: If no term has a positive weight and supervision
    """
    objective = Objective(model, params, sup, weights, frozen, raster)
    return objective.value_and_grad(objective.layout.pack(params))


def _central(f: Callable[[Tensor], float], x: Tensor, i: int, h: float) -> tuple[float, bool]:
    """Central difference along entry ``i`` and whether the stencil is smooth.

    A kink inside the stencil shows up as disagreement between the ``h`` and
    ``h / 2`` differences.
    """

    def at(step: float) -> float:
        y = x.clone()
        y[i] += step
        return f(y)

    numeric = (at(h) - at(-h)) / (2 * h)
    numeric_half = (at(0.5 * h) - at(-0.5 * h)) / h
    smooth = abs(numeric - numeric_half) <= 1e-3 * (abs(numeric) + abs(numeric_half)) + 1e-9
    return numeric, smooth


# Offsets (in units of h) tried along an entry whose stencil straddles a kink.
_KINK_SHIFTS = (3.0, -3.0, 7.0, -7.0, 15.0, -15.0)


def gradient_check(
    model: EhmModel,
    params: FullParams,
    sup: Supervision,
    weights: LossWeights,
    h: float = 1e-5,
    frozen: Iterable[str] = (),
    raster: RasterConfig | None = None,
    tolerance: float | None = None,
) -> GradCheckReport:
    """Compare the autodiff gradient against central differences.

    An entry whose stencil straddles a kink of an L1 or nearest-edge term is
    compared at a point shifted along that entry until the stencil is clear
    (``kink_shifted``). Entries no shift clears are ``unchecked`` and fail the
    check when a tolerance is given.

    Raises:
        ConfigurationError: If ``h`` is outside [1e-7, 1e-3]
    """
    if not 1e-7 <= h <= 1e-3:
        raise ConfigurationError("Step h must lie in [1e-7, 1e-3]", context={"h": h})
    objective = Objective(model, params, sup, weights, frozen, raster)
    x0 = objective.layout.pack(params)
    analytic = objective.value_and_grad(x0).gradient

    def f(x: Tensor) -> float:
        with torch.no_grad():
            return float(objective(x))

    per_block: dict[str, float] = {name: 0.0 for name in objective.layout.active}
    block_of = np.empty(x0.numel(), dtype=object)
    for name, s in objective.layout.slices.items():
        block_of[s] = name

    worst = 0.0
    shifted = 0
    unchecked = 0
    for i in range(x0.numel()):
        numeric, smooth = _central(f, x0, i, h)
        a = float(analytic[i])
        if not smooth:
            for k in _KINK_SHIFTS:
                x = x0.clone()
                x[i] += k * h
                numeric, smooth = _central(f, x, i, h)
                if smooth:
                    a = float(objective.value_and_grad(x).gradient[i])
                    shifted += 1
                    break
            else:
                unchecked += 1
                continue
        rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
        worst = max(worst, rel)
        per_block[block_of[i]] = max(per_block[block_of[i]], rel)

    report = GradCheckReport(
        h=h,
        parameters=int(x0.numel()),
        max_rel_error=worst,
        per_block=per_block,
        kink_shifted=shifted,
        unchecked=unchecked,
        tolerance=tolerance,
        passed=None if tolerance is None else (worst <= tolerance and unchecked == 0),
    )
    logger.info(
        "Gradient check finished",
        context={
            "max_rel_error": worst,
            "kink_shifted": shifted,
            "unchecked": unchecked,
            "parameters": report.parameters,
        },
    )
    return report
