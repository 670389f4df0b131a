"""Part-level refinement of coarse pseudo-labels against 2D keypoints."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor

from ehm_tools.body.model import EhmModel
from ehm_tools.body.params import FullParams
from ehm_tools.exceptions import ConfigurationError, MissingPart
from ehm_tools.fitting.fit import fit
from ehm_tools.logger import StructuredLogger
from ehm_tools.losses import Supervision
from ehm_tools.models import (
    PARAM_BLOCKS,
    FitConfig,
    FitStatus,
    KeypointSetDocument,
    Part,
    RefineReport,
    RefineStep,
)

logger = StructuredLogger(__name__)

# Sub-fits run in this order; later parts hang off the body through FK.
PART_BLOCKS: dict[Part, tuple[str, ...]] = {
    Part.BODY: ("body_pose", "root_translation", "body_shape"),
    Part.HAND: ("hand_pose",),
    Part.FACE: ("head_pose", "head_shape", "expression", "head_scale"),
}


@dataclass
class PartKeypoints:
    """Detected keypoints laid out on the model's body and face keypoint tables."""

    body_points: Tensor  # K_b x 2
    body_confidence: Tensor  # K_b, zero where nothing was detected
    body_parts: Tensor  # K_b, 0 body / 1 hand
    face_points: Tensor  # K_h x 2
    face_confidence: Tensor  # K_h

    @classmethod
    def from_document(cls, model: EhmModel, doc: KeypointSetDocument) -> PartKeypoints:
        """Place detections by name, or by part label and order when unnamed.

        Raises:
            ConfigurationError: If a named keypoint is unknown to the model
        """
        asset = model.asset
        body_names = list(asset.keypoint_names)
        face_names = list(asset.head.keypoint_names) if asset.head is not None else []
        kb, kh = len(body_names), len(face_names)
        dtype = model.dtype

        body_points = torch.zeros(kb, 2, dtype=dtype)
        body_conf = torch.zeros(kb, dtype=dtype)
        face_points = torch.zeros(kh, 2, dtype=dtype)
        face_conf = torch.zeros(kh, dtype=dtype)
        if asset.keypoint_parts is not None:
            body_parts = torch.as_tensor(asset.keypoint_parts.astype("int64"))
        else:
            body_parts = torch.zeros(kb, dtype=torch.long)

        conf = doc.confidence or [1.0] * len(doc.points)
        if doc.names:
            slots = []
            for name in doc.names:
                if name in body_names:
                    slots.append(("body", body_names.index(name)))
                elif name in face_names:
                    slots.append(("face", face_names.index(name)))
                else:
                    raise ConfigurationError(
                        f"Keypoint {name!r} is not defined by the model",
                        context={"name": name},
                    )
        else:
            parts = doc.parts or [Part.BODY] * min(kb, len(doc.points)) + [Part.FACE] * max(
                0, len(doc.points) - kb
            )
            next_body = next_face = 0
            slots = []
            for part in parts:
                if part is Part.FACE:
                    slots.append(("face", next_face))
                    next_face += 1
                else:
                    slots.append(("body", next_body))
                    next_body += 1
            if next_body > kb or next_face > kh:
                raise ConfigurationError(
                    "More keypoints than the model defines",
                    context={"body": next_body, "face": next_face},
                )

        for (table, index), point, c in zip(slots, doc.points, conf):
            if table == "body":
                body_points[index] = torch.tensor(point, dtype=dtype)
                body_conf[index] = c
            else:
                face_points[index] = torch.tensor(point, dtype=dtype)
                face_conf[index] = c
        return cls(body_points, body_conf, body_parts, face_points, face_conf)

    def supervision(self, part: Part) -> Supervision:
        """Supervision restricted to one part's keypoints.

        Raises:
            MissingPart: If no keypoint of that part was detected
        """
        if part is Part.FACE:
            if not bool((self.face_confidence > 0).any()):
                raise MissingPart("No face keypoints detected", context={"part": part.value})
            return Supervision(
                face_keypoints2d=self.face_points, face_confidence=self.face_confidence
            )
        label = 1 if part is Part.HAND else 0
        conf = torch.where(
            self.body_parts == label, self.body_confidence, torch.zeros_like(self.body_confidence)
        )
        if not bool((conf > 0).any()):
            raise MissingPart(f"No {part.value} keypoints detected", context={"part": part.value})
        return Supervision(keypoints2d=self.body_points, keypoint_confidence=conf)


@dataclass
class RefineResult:
    params: FullParams
    report: RefineReport


def refine_part_labels(
    model: EhmModel,
    coarse: FullParams,
    keypoints: PartKeypoints,
    cfg: FitConfig | None = None,
) -> RefineResult:
    """Refine body, then hands, then face, each with every other block frozen.

    The camera is part of the coarse estimate and stays fixed. A part without
    detections (or without model support) is skipped and reported.
    """
    cfg = cfg or FitConfig()
    sub_cfg = cfg.model_copy(update={"stage2": cfg.stage2.model_copy(update={"enabled": False})})
    params = coarse.detach()
    steps: list[RefineStep] = []

    for part, blocks in PART_BLOCKS.items():
        if part is Part.HAND and not model.dims.hand_joint_ids:
            steps.append(RefineStep(part=part, status=FitStatus.SKIPPED, reason="model has no hand joints"))
            continue
        if part is Part.FACE and model.head is None:
            steps.append(RefineStep(part=part, status=FitStatus.SKIPPED, reason="model has no head"))
            continue
        try:
            sup = keypoints.supervision(part)
        except MissingPart as e:
            logger.warning("Skipping part refinement", context={"part": part.value, "reason": e.message})
            steps.append(RefineStep(part=part, status=FitStatus.SKIPPED, reason=e.message))
            continue

        frozen = [name for name in PARAM_BLOCKS if name not in blocks]
        result = fit(model, params, sup, sub_cfg, frozen=frozen)
        stage = result.report.stages[0]
        steps.append(
            RefineStep(
                part=part,
                status=stage.status,
                initial_loss=stage.initial_loss,
                final_loss=stage.best_loss,
            )
        )
        params = result.params

    return RefineResult(params=params, report=RefineReport(params=params.to_document(), steps=steps))
