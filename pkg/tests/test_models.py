"""Tests for pydantic models."""

import math
from datetime import datetime

import pytest
from pydantic import ValidationError

from ehm_tools.models import (
    SCHEMAS,
    STAGE2_PHOTO_WEIGHT,
    AssetKind,
    CameraDocument,
    CameraModel,
    ErrorResponse,
    FitConfig,
    FullParamsDocument,
    HealthCheckResponse,
    KeypointSetDocument,
    LossWeights,
    MetricReport,
    PoseOffsetDocument,
    RasterConfig,
    ServerInfo,
    StageConfig,
    SupervisionDocument,
    SynthSpec,
    ToolInfo,
)


class TestHealthCheckResponse:
    """Test suite for HealthCheckResponse model."""

    def test_valid_health_check_response(self):
        """Test valid health check response creation."""
        response = HealthCheckResponse(status="healthy", server_name="ehm-tools", version="0.1.0")

        assert response.status == "healthy"
        assert response.server_name == "ehm-tools"
        assert isinstance(response.timestamp, datetime)

    def test_invalid_status_validation(self):
        """Test validation fails for invalid status."""
        with pytest.raises(ValidationError):
            HealthCheckResponse(status="invalid_status", server_name="test", version="1.0.0")


class TestToolInfo:
    """Test suite for ToolInfo and ServerInfo models."""

    def test_valid_tool_info(self):
        """Test valid tool info creation."""
        tool = ToolInfo(
            name="forward",
            description="Pose a model",
            parameters={"asset": {"type": "string", "required": True}},
        )
        assert "asset" in tool.parameters

    def test_tool_info_with_empty_parameters(self):
        """Test tool info with empty parameters."""
        tool = ToolInfo(name="health_check", description="Server health check", parameters={})
        assert tool.parameters == {}

    def test_server_info(self):
        """Test server info lists tool names."""
        info = ServerInfo(name="ehm-tools", version="0.1.0", tools=["forward", "evaluate"])
        assert info.tools == ["forward", "evaluate"]


class TestErrorResponse:
    """Test suite for ErrorResponse model."""

    def test_valid_error_response(self):
        """Test valid error response creation."""
        error = ErrorResponse(
            error_type="MapError",
            message="Joint map references joint 99",
            details={"pair": [1, 99]},
        )
        assert error.details["pair"] == [1, 99]

    def test_error_response_without_details(self):
        """Test error response without details."""
        assert ErrorResponse(error_type="EhmError", message="failed").details is None


class TestSynthSpec:
    """Test suite for SynthSpec."""

    def test_defaults(self):
        """Test the default spec is a small composite."""
        spec = SynthSpec()
        assert spec.kind is AssetKind.COMPOSITE
        assert (spec.v, spec.j, spec.head_v) == (200, 8, 80)

    @pytest.mark.parametrize("field", ["v", "j", "k", "seed"])
    def test_negative_counts(self, field):
        """Test negative counts are rejected."""
        with pytest.raises(ValidationError):
            SynthSpec(**{field: -1})

    def test_seed_is_64_bit(self):
        """Test seeds must fit in 64 bits."""
        SynthSpec(seed=2**64 - 1)
        with pytest.raises(ValidationError):
            SynthSpec(seed=2**64)


class TestCameraDocument:
    """Test suite for CameraDocument."""

    def test_defaults(self):
        """Test the default camera is weak perspective at 100 px/m."""
        camera = CameraDocument()
        assert camera.model is CameraModel.WEAK_PERSPECTIVE
        assert camera.scale == 100.0

    def test_rotation_must_be_orthonormal(self):
        """Test non-orthonormal rotations are rejected."""
        with pytest.raises(ValidationError):
            CameraDocument(rotation=[[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        with pytest.raises(ValidationError):
            CameraDocument(rotation=[[1.0, 0.0], [0.0, 1.0]])

    def test_rotation_tolerance(self):
        """Test rotations orthonormal within 1e-6 are accepted."""
        c, s = math.cos(0.3), math.sin(0.3)
        CameraDocument(rotation=[[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])

    def test_intrinsics(self):
        """Test the active model's intrinsic must be positive."""
        with pytest.raises(ValidationError):
            CameraDocument(model=CameraModel.PERSPECTIVE, f=0.0)
        with pytest.raises(ValidationError):
            CameraDocument(scale=-1.0)
        CameraDocument(model=CameraModel.PERSPECTIVE, f=500.0, scale=-1.0)


class TestFullParamsDocument:
    """Test suite for FullParamsDocument."""

    def test_empty_document(self):
        """Test an empty document means the rest pose."""
        doc = FullParamsDocument()
        assert doc.body_pose == []
        assert doc.head_scale == [1.0, 1.0, 1.0]

    @pytest.mark.parametrize(
        "update",
        [
            {"body_pose": [[0.0, 0.0]]},
            {"body_pose": [[7.0, 0.0, 0.0]]},
            {"head_pose": [[float("nan"), 0.0, 0.0]]},
            {"head_scale": [1.0, 0.0, 1.0]},
            {"root_translation": [0.0, 0.0]},
        ],
    )
    def test_invalid_blocks(self, update):
        """Test malformed blocks are rejected."""
        with pytest.raises(ValidationError):
            FullParamsDocument(**update)


class TestSupervision:
    """Test suite for supervision and keypoint documents."""

    def test_confidence_range(self):
        """Test confidences outside [0, 1] are rejected."""
        SupervisionDocument(keypoint_confidence=[0.0, 1.0])
        with pytest.raises(ValidationError):
            SupervisionDocument(face_confidence=[1.5])

    def test_keypoint_tables_line_up(self):
        """Test names, parts and confidences must match the points."""
        KeypointSetDocument(names=["a"], points=[[1.0, 2.0]], confidence=[0.5], parts=["hand"])
        with pytest.raises(ValidationError):
            KeypointSetDocument(names=["a", "b"], points=[[1.0, 2.0]])
        with pytest.raises(ValidationError):
            KeypointSetDocument(points=[[1.0, 2.0, 3.0]])
        with pytest.raises(ValidationError):
            KeypointSetDocument(points=[[1.0, 2.0]], confidence=[0.5, 0.5])

    def test_loss_weights(self):
        """Test weights are non-negative and scale together."""
        with pytest.raises(ValidationError):
            LossWeights(w_head=-0.1)
        with pytest.raises(ValidationError):
            LossWeights(w_body=float("inf"))
        scaled = LossWeights(w_photo=1.0).scaled(2.0)
        assert scaled.w_photo == 2.0
        assert scaled.w_body == 2.0


class TestFitConfig:
    """Test suite for fitting configuration."""

    def test_defaults(self):
        """Test the default schedule runs stage 1 only."""
        cfg = FitConfig()
        assert cfg.stage1.enabled
        assert not cfg.stage2.enabled
        assert cfg.stage2.weights.w_photo == STAGE2_PHOTO_WEIGHT
        assert cfg.stage1.lr_decay_to == 0.01
        assert cfg.stage1.lr_scale == {"camera": 100.0}

    def test_stage1_has_no_photo_term(self):
        """Test stage 1 may not weight the silhouette term."""
        with pytest.raises(ValidationError):
            FitConfig(stage1=StageConfig(weights=LossWeights(w_photo=0.5)))

    def test_stage2_requirements(self):
        """Test an enabled stage 2 needs a photo weight and a raster."""
        with pytest.raises(ValidationError):
            FitConfig(stage2=StageConfig(enabled=True, raster=RasterConfig()))
        with pytest.raises(ValidationError):
            FitConfig(stage2=StageConfig(enabled=True, weights=LossWeights(w_photo=1.0)))
        FitConfig(
            stage2=StageConfig(enabled=True, raster=RasterConfig(), weights=LossWeights(w_photo=1.0))
        )

    def test_block_names(self):
        """Test frozen lists and step scales only name known blocks."""
        StageConfig(frozen=["camera", "expression"])
        with pytest.raises(ValidationError):
            StageConfig(frozen=["jaw"])
        with pytest.raises(ValidationError):
            StageConfig(lr_scale={"camera": 0.0})

    def test_raster_bounds(self):
        """Test raster sizes and softness are bounded."""
        with pytest.raises(ValidationError):
            RasterConfig(width=4)
        with pytest.raises(ValidationError):
            RasterConfig(sigma=0.1)


class TestReports:
    """Test suite for output documents."""

    def test_metric_values(self):
        """Test metrics must be finite and PCK a fraction."""
        MetricReport(metrics={"mpjpe": 0.05, "pck@0.05": 0.81})
        with pytest.raises(ValidationError):
            MetricReport(metrics={"mpjpe": float("nan")})
        with pytest.raises(ValidationError):
            MetricReport(metrics={"pck@0.1": 1.2})

    def test_pose_offset(self):
        """Test offsets need one bounded row per injective pair."""
        PoseOffsetDocument(joint_map=[(0, 0), (1, 2)], delta=[[0, 0, 0], [0.1, 0, 0]])
        with pytest.raises(ValidationError):
            PoseOffsetDocument(joint_map=[(0, 0), (1, 0)], delta=[[0, 0, 0], [0, 0, 0]])
        with pytest.raises(ValidationError):
            PoseOffsetDocument(joint_map=[(0, 0)], delta=[[3.5, 0, 0]])
        with pytest.raises(ValidationError):
            PoseOffsetDocument(joint_map=[(0, 0)], delta=[])

    def test_every_schema_renders(self):
        """Test every registered document produces a JSON schema."""
        for name, model in SCHEMAS.items():
            schema = model.model_json_schema()
            assert schema["type"] == "object", name
