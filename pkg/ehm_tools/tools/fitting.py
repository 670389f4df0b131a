"""Fitting, part refinement and gradient verification tools."""

from pathlib import Path
from typing import Any

from ..assets import synth_model
from ..body import EhmModel, FullParams
from ..exceptions import ConfigurationError
from ..fitting import PartKeypoints, fit, fit_many, refine_part_labels, synthetic_problem
from ..losses import Supervision, gradient_check
from ..models import (
    FitConfig,
    FullParamsDocument,
    KeypointSetDocument,
    LossWeights,
    RasterConfig,
    SupervisionDocument,
    SynthSpec,
)
from .base import BaseTool

# Default tolerances: L1 terms off their kinks, and with the soft silhouette.
KEYPOINT_TOLERANCE = 1e-3
SILHOUETTE_TOLERANCE = 5e-3


class FitTool(BaseTool):
    """Fit model parameters to supervision with the two-stage schedule."""

    name = "fit"
    description = "Fit pose, shape, head and camera parameters to supervision"
    parameters = {
        "asset": {"type": "string", "description": "EHMA model file", "required": True},
        "supervision": {
            "type": "array",
            "description": "Supervision document(s) or path(s); several run as a batch",
            "required": True,
        },
        "mask": {
            "type": "string",
            "description": "Silhouette mask overriding the supervision mask_path (one job)",
            "required": False,
        },
        "config": {"type": "object", "description": "FitConfig or path", "required": False},
        "init": {
            "type": "array",
            "description": "Initial parameter document(s) or path(s), rest pose if omitted",
            "required": False,
        },
        "output": {
            "type": "string",
            "description": "Params JSON (one job) or output directory (batch)",
            "required": False,
        },
        "report_output": {"type": "string", "description": "FitReport JSON", "required": False},
        "jobs": {"type": "integer", "description": "Worker count for batches", "required": False},
    }

    async def _execute(self, **kwargs: Any) -> dict[str, Any]:
        self._validate_parameters(kwargs, ["asset", "supervision"])
        model = EhmModel(self._load_asset(kwargs["asset"]))
        cfg = self._read_document(FitConfig, kwargs.get("config"))
        raster = cfg.stage2.raster if cfg.stage2.enabled else None
        mask_shape = (raster.height, raster.width) if raster is not None else None

        sups = kwargs["supervision"]
        batch = isinstance(sups, list)
        sups = sups if batch else [sups]
        inits = kwargs.get("init")
        if inits is None:
            inits = [None] * len(sups)
        elif not isinstance(inits, list):
            inits = [inits] * len(sups)
        if len(inits) != len(sups):
            raise ConfigurationError(
                "Give one initialization per supervision document",
                context={"supervision": len(sups), "init": len(inits)},
            )
        if batch and kwargs.get("mask"):
            raise ConfigurationError("A mask override applies to a single job")

        jobs = []
        for sup_src, init_src in zip(sups, inits):
            sup_doc = self._read_document(SupervisionDocument, sup_src)
            if kwargs.get("mask"):
                sup_doc = sup_doc.model_copy(update={"mask_path": kwargs["mask"]})
            init_doc = self._read_document(FullParamsDocument, init_src)
            jobs.append(
                (
                    FullParams.from_document(init_doc, model.dims),
                    Supervision.from_document(sup_doc, mask_shape),
                )
            )

        if not batch:
            result = fit(model, jobs[0][0], jobs[0][1], cfg)
            self._write_document(result.report.params, kwargs.get("output"))
            self._write_document(result.report, kwargs.get("report_output"))
            return result.report.model_dump(mode="json")

        results = fit_many(model, jobs, cfg, workers=kwargs.get("jobs"))
        if kwargs.get("output"):
            out_dir = Path(kwargs["output"])
            out_dir.mkdir(parents=True, exist_ok=True)
            for i, result in enumerate(results):
                self._write_document(result.report.params, out_dir / f"params_{i:03d}.json")
                self._write_document(result.report, out_dir / f"report_{i:03d}.json")
        return {"results": [r.report.model_dump(mode="json") for r in results]}


class RefineLabelsTool(BaseTool):
    """Refine coarse pseudo-labels part by part against 2D keypoints."""

    name = "refine_labels"
    description = "Refine body, hand and face parameters against detected 2D keypoints"
    parameters = {
        "asset": {"type": "string", "description": "EHMA model file", "required": True},
        "coarse": {"type": "object", "description": "Coarse params or path", "required": True},
        "keypoints": {"type": "object", "description": "KeypointSet or path", "required": True},
        "config": {"type": "object", "description": "FitConfig or path", "required": False},
        "output": {"type": "string", "description": "Refined params JSON", "required": False},
    }

    async def _execute(self, **kwargs: Any) -> dict[str, Any]:
        self._validate_parameters(kwargs, ["asset", "coarse", "keypoints"])
        model = EhmModel(self._load_asset(kwargs["asset"]))
        coarse = FullParams.from_document(
            self._read_document(FullParamsDocument, kwargs["coarse"]), model.dims
        )
        keypoints = PartKeypoints.from_document(
            model, self._read_document(KeypointSetDocument, kwargs["keypoints"])
        )
        cfg = self._read_document(FitConfig, kwargs.get("config"))
        result = refine_part_labels(model, coarse, keypoints, cfg)
        self._write_document(result.report.params, kwargs.get("output"))
        return result.report.model_dump(mode="json")


def acceptance_spec(seed: int) -> SynthSpec:
    """The desk-scale composite used by the gradient suite."""
    return SynthSpec(v=280, j=8, s=4, e=2, k=12, head_v=80, head_j=3, head_k=8, seed=seed)


class GradCheckTool(BaseTool):
    """Compare autodiff gradients with central differences on a seeded problem."""

    name = "grad_check"
    description = "Finite-difference check of the loss gradient on a synthetic fitting problem"
    parameters = {
        "asset": {
            "type": "string",
            "description": "EHMA model file (the seeded synthetic composite if omitted)",
            "required": False,
        },
        "seed": {"type": "integer", "description": "Problem seed", "required": False},
        "h": {"type": "number", "description": "Step in [1e-7, 1e-3]", "required": False},
        "tolerance": {"type": "number", "description": "Max relative error", "required": False},
        "photo": {
            "type": "boolean",
            "description": "Include the soft-silhouette term",
            "required": False,
        },
        "weights": {"type": "object", "description": "LossWeights", "required": False},
        "frozen": {"type": "array", "description": "Frozen blocks", "required": False},
    }

    async def _execute(self, **kwargs: Any) -> dict[str, Any]:
        seed = int(kwargs.get("seed") or 0)
        if kwargs.get("asset"):
            asset = self._load_asset(kwargs["asset"])
        else:
            asset = synth_model(acceptance_spec(seed))
        model = EhmModel(asset)

        photo = bool(kwargs.get("photo"))
        raster = RasterConfig(width=32, height=32, sigma=1.0) if photo else None
        weights = self._read_document(LossWeights, kwargs.get("weights"))
        if photo and weights.w_photo == 0:
            weights = weights.model_copy(update={"w_photo": 1.0})
        tolerance = kwargs.get("tolerance")
        if tolerance is None:
            tolerance = SILHOUETTE_TOLERANCE if photo else KEYPOINT_TOLERANCE

        problem = synthetic_problem(
            model, seed, raster=raster, with_params=True, with_mask=photo
        )
        report = gradient_check(
            model,
            problem.init,
            problem.supervision,
            weights,
            h=float(kwargs.get("h") or 1e-5),
            frozen=kwargs.get("frozen") or (),
            raster=raster,
            tolerance=float(tolerance),
        )
        return report.model_dump(mode="json")
