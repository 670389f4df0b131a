"""Metric evaluation tool."""

from pathlib import Path
from typing import Any

import numpy as np

from ..body import read_obj_vertices
from ..exceptions import ConfigurationError
from ..metrics import evaluate
from ..models import EvalDocument
from .base import BaseTool


class EvaluateTool(BaseTool):
    """Score predictions against ground truth (MPJPE, PA-MPJPE, MVE, PA-PVE, LVE, PCK)."""

    name = "evaluate"
    description = "Compute joint, vertex and 2D keypoint metrics for a prediction"
    parameters = {
        "pred": {"type": "object", "description": "Prediction JSON/OBJ or document", "required": True},
        "gt": {"type": "object", "description": "Ground truth JSON/OBJ or document", "required": True},
        "region": {"type": "array", "description": "Vertex ids for MVE/PA-PVE", "required": False},
        "lip_region": {"type": "array", "description": "Vertex ids for LVE", "required": False},
        "pck": {"type": "array", "description": "PCK thresholds", "required": False},
        "normalizer": {"type": "number", "description": "PCK normalizer, px", "required": False},
        "rigid": {"type": "boolean", "description": "Align without scale", "required": False},
        "align": {
            "type": "boolean",
            "description": "Require (true) or omit (false) PA metrics; default reports them when possible",
            "required": False,
        },
        "mle": {"type": "boolean", "description": "Label MVE as MLE", "required": False},
        "root": {"type": "integer", "description": "Root joint for centring", "required": False},
        "output": {"type": "string", "description": "MetricReport JSON", "required": False},
    }

    def _read_eval(self, source: str | dict[str, Any]) -> EvalDocument:
        if isinstance(source, str) and Path(source).suffix.lower() == ".obj":
            vertices = read_obj_vertices(self._validate_path(source))
            return EvalDocument(vertices=vertices.tolist())
        return self._read_document(EvalDocument, source)

    async def _execute(self, **kwargs: Any) -> dict[str, Any]:
        self._validate_parameters(kwargs, ["pred", "gt"])
        pred = self._read_eval(kwargs["pred"])
        gt = self._read_eval(kwargs["gt"])

        def pair(name: str) -> tuple[np.ndarray, np.ndarray] | None:
            p, g = getattr(pred, name), getattr(gt, name)
            if p is None and g is None:
                return None
            if p is None or g is None:
                raise ConfigurationError(
                    f"'{name}' is given for only one of prediction and ground truth",
                    context={"block": name},
                )
            return np.asarray(p, dtype=np.float64), np.asarray(g, dtype=np.float64)

        blocks = {name: pair(name) for name in ("joints", "vertices", "keypoints2d")}
        if all(b is None for b in blocks.values()):
            raise ConfigurationError("Nothing to evaluate: no common block in pred and gt")

        report = evaluate(
            joints=blocks["joints"],
            vertices=blocks["vertices"],
            keypoints2d=blocks["keypoints2d"],
            region=kwargs.get("region"),
            lip_region=kwargs.get("lip_region"),
            taus=kwargs.get("pck") or (0.05, 0.1),
            normalizer=kwargs.get("normalizer"),
            rigid=bool(kwargs.get("rigid")),
            root=int(kwargs.get("root") or 0),
            mve_label="mle" if kwargs.get("mle") else "mve",
            align=kwargs.get("align"),
        )
        self._write_document(report, kwargs.get("output"))
        return report.model_dump(mode="json")
