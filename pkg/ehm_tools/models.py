"""Pydantic models for ehm-tools documents.

Every JSON document read or written by the package (configs, parameter
files, supervision, reports) is declared here so that the CLI, the MCP
server and the library share one validated schema per document.
"""

import math
from datetime import datetime
from enum import Enum
from typing import Any, Literal

from pydantic import BaseModel, Field, field_validator, model_validator


class AssetKind(str, Enum):
    """Role of a model asset."""

    BODY = "body"
    HEAD = "head"
    COMPOSITE = "composite"


class CameraModel(str, Enum):
    """Supported projection models."""

    PERSPECTIVE = "perspective"
    WEAK_PERSPECTIVE = "weak_perspective"


class OptimizerKind(str, Enum):
    """First-order optimizers available to the fitter."""

    ADAM = "adam"
    GRADIENT_DESCENT = "gradient_descent"


class FitStatus(str, Enum):
    """Outcome of a fitting stage or of a whole fit."""

    CONVERGED = "converged"
    MAX_ITERATIONS = "max_iterations"
    DIVERGED = "diverged"
    SKIPPED = "skipped"


class Part(str, Enum):
    """Body part label carried by 2D keypoints."""

    BODY = "body"
    HAND = "hand"
    FACE = "face"


PARAM_BLOCKS = (
    "body_pose",
    "hand_pose",
    "root_translation",
    "body_shape",
    "head_pose",
    "head_shape",
    "expression",
    "head_scale",
    "camera",
)


def _check_blocks(names: list[str]) -> list[str]:
    unknown = sorted(set(names) - set(PARAM_BLOCKS))
    if unknown:
        raise ValueError(f"Unknown parameter blocks: {unknown}")
    return names


# ---------------------------------------------------------------- assets


class SynthSpec(BaseModel):
    """Specification of a deterministic synthetic model asset."""

    v: int = Field(200, ge=0, description="Body vertex count (head region included)")
    j: int = Field(8, ge=0, description="Body joint count")
    s: int = Field(4, ge=0, description="Shape basis size")
    e: int = Field(2, ge=0, description="Expression basis size (head only)")
    k: int = Field(12, ge=0, description="Body keypoint count")
    seed: int = Field(0, ge=0, lt=2**64, description="64-bit generator seed")
    kind: AssetKind = Field(AssetKind.COMPOSITE, description="Asset kind to build")
    head_v: int = Field(80, ge=0, description="Head vertex count (composite only)")
    head_j: int = Field(3, ge=1, description="Head joint count (composite only)")
    head_k: int = Field(8, ge=0, description="Face keypoint count (composite only)")
    head_s: int | None = Field(None, ge=0, description="Head shape basis size")
    hand_joints: int = Field(1, ge=0, description="Leaf joints labelled as hands")
    pose_dirs: bool = Field(False, description="Emit pose-corrective blendshapes for the body")


class Violation(BaseModel):
    """A single violated asset invariant."""

    tensor: str = Field(..., description="Name of the offending tensor")
    index: int | None = Field(None, description="First offending index")
    message: str = Field(..., description="What is wrong")


class ValidationReport(BaseModel):
    """Result of validating a model asset."""

    violations: list[Violation] = Field(default_factory=list)

    @property
    def ok(self) -> bool:
        """True when no invariant is violated."""
        return not self.violations


# ---------------------------------------------------------------- parameters


class CameraDocument(BaseModel):
    """Camera intrinsics and extrinsics."""

    model: CameraModel = Field(CameraModel.WEAK_PERSPECTIVE)
    f: float = Field(1000.0, description="Focal length in pixels (perspective)")
    cx: float = Field(0.0, description="Principal point x in pixels (perspective)")
    cy: float = Field(0.0, description="Principal point y in pixels (perspective)")
    scale: float = Field(100.0, description="Pixels per meter (weak perspective)")
    tx: float = Field(0.0, description="Image offset x in pixels (weak perspective)")
    ty: float = Field(0.0, description="Image offset y in pixels (weak perspective)")
    rotation: list[list[float]] = Field(
        default_factory=lambda: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        description="Extrinsic rotation, 3x3 row-major",
    )
    translation: list[float] = Field(
        default_factory=lambda: [0.0, 0.0, 0.0],
        description="Extrinsic translation in meters",
    )

    @field_validator("rotation")
    @classmethod
    def validate_rotation(cls, v: list[list[float]]) -> list[list[float]]:
        """Validate that the rotation is a proper orthonormal 3x3 matrix."""
        if len(v) != 3 or any(len(row) != 3 for row in v):
            raise ValueError("rotation must be 3x3")
        for a in range(3):
            for b in range(3):
                dot = sum(v[a][k] * v[b][k] for k in range(3))
                if abs(dot - (1.0 if a == b else 0.0)) > 1e-6:
                    raise ValueError("rotation must be orthonormal within 1e-6")
        return v

    @field_validator("translation")
    @classmethod
    def validate_translation(cls, v: list[float]) -> list[float]:
        """Validate the translation length."""
        if len(v) != 3:
            raise ValueError("translation must have 3 components")
        return v

    @model_validator(mode="after")
    def validate_intrinsics(self) -> "CameraDocument":
        """Validate the intrinsic parameter of the selected model."""
        if self.model is CameraModel.PERSPECTIVE and not self.f > 0:
            raise ValueError("perspective focal length must be > 0")
        if self.model is CameraModel.WEAK_PERSPECTIVE and not self.scale > 0:
            raise ValueError("weak-perspective scale must be > 0")
        return self


class FullParamsDocument(BaseModel):
    """All model parameters; angles in radians, lengths in meters."""

    body_pose: list[list[float]] = Field(
        default_factory=list, description="Per-joint axis-angle, root first (J_b x 3)"
    )
    body_shape: list[float] = Field(default_factory=list)
    root_translation: list[float] = Field(default_factory=lambda: [0.0, 0.0, 0.0])
    head_pose: list[list[float]] = Field(
        default_factory=list, description="Per-head-joint axis-angle (J_h x 3)"
    )
    head_shape: list[float] = Field(default_factory=list)
    expression: list[float] = Field(default_factory=list)
    head_scale: list[float] = Field(default_factory=lambda: [1.0, 1.0, 1.0])
    camera: CameraDocument = Field(default_factory=CameraDocument)

    @field_validator("body_pose", "head_pose")
    @classmethod
    def validate_pose(cls, v: list[list[float]]) -> list[list[float]]:
        """Validate axis-angle rows."""
        for row in v:
            if len(row) != 3 or not all(math.isfinite(x) for x in row):
                raise ValueError("pose rows must be 3 finite numbers")
            if math.sqrt(sum(x * x for x in row)) >= 2 * math.pi:
                raise ValueError("axis-angle magnitude must be below 2*pi")
        return v

    @field_validator("head_scale")
    @classmethod
    def validate_scale(cls, v: list[float]) -> list[float]:
        """Validate the head scale is a positive 3-vector."""
        if len(v) != 3 or not all(x > 0 and math.isfinite(x) for x in v):
            raise ValueError("head_scale must be 3 positive finite numbers")
        return v

    @field_validator("root_translation")
    @classmethod
    def validate_translation(cls, v: list[float]) -> list[float]:
        """Validate the root translation length."""
        if len(v) != 3:
            raise ValueError("root_translation must have 3 components")
        return v


# ---------------------------------------------------------------- supervision


class LossWeights(BaseModel):
    """Weights of the fitting objective terms."""

    w_body: float = Field(1.0, ge=0, allow_inf_nan=False)
    w_kp1: float = Field(1.0, ge=0, allow_inf_nan=False)
    w_kp1_3d: float = Field(1.0, ge=0, allow_inf_nan=False)
    w_kp1_2d: float = Field(1.0, ge=0, allow_inf_nan=False)
    w_head: float = Field(1.0, ge=0, allow_inf_nan=False)
    w_kp2: float = Field(1.0, ge=0, allow_inf_nan=False)
    w_photo: float = Field(0.0, ge=0, allow_inf_nan=False)

    def scaled(self, factor: float) -> "LossWeights":
        """Return a copy with every weight multiplied by ``factor``."""
        return LossWeights(
            **{name: value * factor for name, value in self.model_dump().items()}
        )


class KeypointSetDocument(BaseModel):
    """Named 2D landmarks in pixels with confidences and part labels."""

    names: list[str] = Field(default_factory=list)
    points: list[list[float]] = Field(default_factory=list, description="N x 2 px")
    confidence: list[float] | None = Field(None)
    parts: list[Part] = Field(default_factory=list)

    @model_validator(mode="after")
    def validate_lengths(self) -> "KeypointSetDocument":
        """Validate that the per-keypoint tables line up."""
        n = len(self.points)
        if any(len(p) != 2 for p in self.points):
            raise ValueError("points must be N x 2")
        if self.names and len(self.names) != n:
            raise ValueError("names must match points")
        if self.parts and len(self.parts) != n:
            raise ValueError("parts must match points")
        if self.confidence is not None:
            if len(self.confidence) != n:
                raise ValueError("confidence must match points")
            if not all(0.0 <= c <= 1.0 for c in self.confidence):
                raise ValueError("confidences must lie in [0, 1]")
        return self


class SupervisionDocument(BaseModel):
    """Ground-truth blocks for the fitting objective; every block is optional."""

    body_pose: list[list[float]] | None = None
    body_shape: list[float] | None = None
    keypoints3d: list[list[float]] | None = Field(None, description="K_b x 3, meters")
    keypoints2d: list[list[float]] | None = Field(None, description="K_b x 2, pixels")
    keypoint_confidence: list[float] | None = None
    head_pose: list[list[float]] | None = None
    head_shape: list[float] | None = None
    expression: list[float] | None = None
    head_scale: list[float] | None = None
    face_keypoints2d: list[list[float]] | None = Field(None, description="K_h x 2")
    face_confidence: list[float] | None = None
    mask_path: str | None = Field(None, description="PNG or raw f32 silhouette mask")

    @field_validator("keypoint_confidence", "face_confidence")
    @classmethod
    def validate_confidence(cls, v: list[float] | None) -> list[float] | None:
        """Validate confidences lie in [0, 1]."""
        if v is not None and not all(0.0 <= c <= 1.0 for c in v):
            raise ValueError("confidences must lie in [0, 1]")
        return v


# ---------------------------------------------------------------- rendering


class RasterConfig(BaseModel):
    """Soft-silhouette rasterizer settings."""

    width: int = Field(64, ge=8)
    height: int = Field(64, ge=8)
    sigma: float = Field(1.0, ge=0.25, le=16.0, description="Edge softness, pixels")


# ---------------------------------------------------------------- fitting


class OptimizerConfig(BaseModel):
    """Optimizer selection and hyperparameters."""

    kind: OptimizerKind = OptimizerKind.ADAM
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)


class StageConfig(BaseModel):
    """Schedule of one fitting stage."""

    enabled: bool = True
    iterations: int = Field(500, ge=1)
    lr: float = Field(1e-2, gt=0, description="Initial step size")
    lr_decay_to: float = Field(
        1.0, gt=0, le=1, description="Final step size as a fraction of lr"
    )
    lr_scale: dict[str, float] = Field(
        default_factory=lambda: {"camera": 100.0},
        description="Per-block step-size multipliers",
    )
    weights: LossWeights = Field(default_factory=LossWeights)
    frozen: list[str] = Field(default_factory=list, description="Frozen blocks")
    raster: RasterConfig | None = None

    @field_validator("frozen")
    @classmethod
    def validate_frozen(cls, v: list[str]) -> list[str]:
        """Validate frozen block names."""
        return _check_blocks(v)

    @field_validator("lr_scale")
    @classmethod
    def validate_lr_scale(cls, v: dict[str, float]) -> dict[str, float]:
        """Validate step-size multipliers."""
        _check_blocks(list(v))
        if not all(x > 0 for x in v.values()):
            raise ValueError("lr_scale values must be > 0")
        return v


# The silhouette term is a per-pixel mean while keypoint terms are pixel sums;
# at equal weight the keypoint subgradients swamp it.
STAGE2_PHOTO_WEIGHT = 1e4


def _default_stage1() -> StageConfig:
    return StageConfig(lr_decay_to=0.01)


def _default_stage2() -> StageConfig:
    return StageConfig(
        enabled=False,
        iterations=100,
        lr=1e-3,
        weights=LossWeights(w_photo=STAGE2_PHOTO_WEIGHT),
        raster=RasterConfig(),
    )


class FitConfig(BaseModel):
    """Two-stage fitting schedule."""

    stage1: StageConfig = Field(default_factory=_default_stage1)
    stage2: StageConfig = Field(default_factory=_default_stage2)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    convergence_rtol: float = Field(
        1e-9, ge=0, description="Relative loss change regarded as stalled"
    )
    patience: int = Field(20, ge=1, description="Stalled iterations before stopping")
    divergence_factor: float = Field(1e6, gt=1)
    debug_obj_dir: str | None = Field(None, description="Per-iteration OBJ dumps")

    @model_validator(mode="after")
    def validate_stages(self) -> "FitConfig":
        """Validate the stage-specific weight constraints."""
        if self.stage1.weights.w_photo != 0:
            raise ValueError("stage1 must not use the photometric term")
        if self.stage2.enabled:
            if not self.stage2.weights.w_photo > 0:
                raise ValueError("stage2 requires w_photo > 0")
            if self.stage2.raster is None:
                raise ValueError("stage2 requires a raster config")
        return self


class StageReport(BaseModel):
    """Trace and outcome of one fitting stage."""

    name: str
    status: FitStatus
    iterations: int = Field(0, ge=0)
    initial_loss: float | None = None
    best_loss: float | None = None
    losses: list[float] = Field(default_factory=list, description="Per-iteration loss")
    seconds: float = Field(0.0, ge=0)
    selected_by: Literal["total", "photo"] = Field(
        "total", description="Loss the best iterate is chosen by"
    )
    initial_photo: float | None = Field(None, description="Silhouette L1 at the stage start")
    best_photo: float | None = Field(None, description="Silhouette L1 of the kept iterate")


class FitReport(BaseModel):
    """Result of a fit."""

    params: FullParamsDocument
    stages: list[StageReport] = Field(default_factory=list)
    status: FitStatus
    final_loss: float | None = None
    completed_at: datetime = Field(default_factory=datetime.now)


class RefineStep(BaseModel):
    """One part-level sub-fit of label refinement."""

    part: Part
    status: FitStatus
    reason: str | None = Field(None, description="Why the step was skipped")
    initial_loss: float | None = None
    final_loss: float | None = None


class RefineReport(BaseModel):
    """Result of part-level pseudo-label refinement."""

    params: FullParamsDocument
    steps: list[RefineStep] = Field(default_factory=list)


# ---------------------------------------------------------------- verification


class GradCheckReport(BaseModel):
    """Finite-difference verification of the analytic gradient."""

    h: float
    parameters: int = Field(..., ge=0, description="Active parameters checked")
    max_rel_error: float = Field(..., ge=0)
    per_block: dict[str, float] = Field(default_factory=dict)
    kink_shifted: int = Field(
        0, ge=0, description="Entries compared at a shifted point to clear a kink"
    )
    unchecked: int = Field(0, ge=0, description="Entries no shift could clear; these fail the check")
    tolerance: float | None = None
    passed: bool | None = None


class MetricReport(BaseModel):
    """Named evaluation metrics with units."""

    metrics: dict[str, float] = Field(default_factory=dict)
    units: dict[str, str] = Field(default_factory=dict)
    counts: dict[str, int] = Field(default_factory=dict)
    skipped: list[str] = Field(
        default_factory=list, description="Aligned metrics the input could not support"
    )

    @field_validator("metrics")
    @classmethod
    def validate_metrics(cls, v: dict[str, float]) -> dict[str, float]:
        """Validate metrics are finite and non-negative."""
        for name, value in v.items():
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"metric {name} must be finite and >= 0")
            if name.startswith("pck") and value > 1:
                raise ValueError(f"metric {name} must lie in [0, 1]")
        return v


class PoseOffsetDocument(BaseModel):
    """Per-joint rotation offsets from a source to a target skeleton."""

    joint_map: list[tuple[int, int]] = Field(
        ..., description="(source joint, target joint) pairs"
    )
    joint_names: list[str] = Field(default_factory=list, description="Target names")
    target_parents: list[int] = Field(
        default_factory=list, description="Target parent table, -1 for the root"
    )
    delta: list[list[float]] = Field(..., description="Axis-angle per mapped joint")
    alignment_error: float = Field(0.0, ge=0, description="Max residual, radians")

    @model_validator(mode="after")
    def validate_offsets(self) -> "PoseOffsetDocument":
        """Validate the joint map and offset magnitudes."""
        if len(self.delta) != len(self.joint_map):
            raise ValueError("delta must have one row per mapped joint")
        targets = [t for _, t in self.joint_map]
        sources = [s for s, _ in self.joint_map]
        if len(set(targets)) != len(targets) or len(set(sources)) != len(sources):
            raise ValueError("joint_map must be injective")
        for row in self.delta:
            if len(row) != 3 or not all(math.isfinite(x) for x in row):
                raise ValueError("delta rows must be 3 finite numbers")
            if math.sqrt(sum(x * x for x in row)) >= math.pi:
                raise ValueError("delta magnitude must be below pi")
        return self


class StageTiming(BaseModel):
    """Timing of one forward-model stage."""

    cold_ms: float
    mean_ms: float
    p95_ms: float


class BenchReport(BaseModel):
    """Forward-model benchmark."""

    vertices: int
    joints: int
    iterations: int
    threads: int
    stages: dict[str, StageTiming]
    fps: float


class ForwardOutputDocument(BaseModel):
    """Keypoints and joints of one forward pass."""

    joints: list[list[float]] = Field(..., description="J x 3 posed joints, meters")
    body_keypoints3d: list[list[float]] = Field(..., description="K_b x 3, meters")
    face_keypoints3d: list[list[float]] = Field(default_factory=list)
    body_keypoints2d: list[list[float]] = Field(..., description="K_b x 2, pixels")
    face_keypoints2d: list[list[float]] = Field(default_factory=list)


class PoseDocument(BaseModel):
    """A bare axis-angle pose, one row per joint."""

    pose: list[list[float]] = Field(..., description="J x 3 axis-angle")


class EvalDocument(BaseModel):
    """Predicted or ground-truth quantities for evaluation; every block optional."""

    joints: list[list[float]] | None = Field(None, description="J x 3, meters")
    vertices: list[list[float]] | list[list[list[float]]] | None = Field(
        None, description="V x 3 or F x V x 3, meters"
    )
    keypoints2d: list[list[float]] | None = Field(None, description="K x 2, pixels")


# ---------------------------------------------------------------- surfaces


class ErrorResponse(BaseModel):
    """Standard error response model."""

    error_type: str = Field(..., description="Type of error that occurred")
    message: str = Field(..., description="Human-readable error message")
    details: dict[str, Any] | None = Field(None, description="Additional error details")


class ToolInfo(BaseModel):
    """Information about an available MCP tool."""

    name: str = Field(..., description="Name of the tool")
    description: str = Field(..., description="Description of what the tool does")
    parameters: dict[str, Any] = Field(
        default_factory=dict, description="Tool parameter schema"
    )


class ServerInfo(BaseModel):
    """Information about the MCP server."""

    name: str = Field(..., description="Server name")
    version: str = Field(..., description="Server version")
    tools: list[str] = Field(
        default_factory=list, description="List of available tool names"
    )


class HealthCheckResponse(BaseModel):
    """Response model for health check endpoint."""

    status: str = Field(..., description="Health status of the server")
    server_name: str = Field(..., description="Name of the MCP server")
    version: str = Field(..., description="Version of the server")
    timestamp: datetime = Field(
        default_factory=datetime.now, description="Response timestamp"
    )

    @field_validator("status")
    @classmethod
    def validate_status(cls, v: str) -> str:
        """Validate status field values."""
        allowed_statuses = {"healthy", "unhealthy", "degraded"}
        if v not in allowed_statuses:
            raise ValueError(f"Status must be one of: {allowed_statuses}")
        return v


SCHEMAS: dict[str, type[BaseModel]] = {
    "synth-spec": SynthSpec,
    "validation-report": ValidationReport,
    "params": FullParamsDocument,
    "camera": CameraDocument,
    "loss-weights": LossWeights,
    "supervision": SupervisionDocument,
    "keypoints": KeypointSetDocument,
    "raster-config": RasterConfig,
    "fit-config": FitConfig,
    "fit-report": FitReport,
    "refine-report": RefineReport,
    "grad-check-report": GradCheckReport,
    "metric-report": MetricReport,
    "pose": PoseDocument,
    "pose-offset": PoseOffsetDocument,
    "forward-output": ForwardOutputDocument,
    "eval-input": EvalDocument,
    "bench-report": BenchReport,
    "error": ErrorResponse,
}
