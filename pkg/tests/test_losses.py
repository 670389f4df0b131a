"""Tests for fitting objectives and the gradient harness."""

import pytest
import torch

from ehm_tools.assets import synth_model
from ehm_tools.body import EhmModel
from ehm_tools.exceptions import (
    ConfigurationError,
    DimensionError,
    MissingSupervision,
    NoActiveTerms,
    ShapeMismatch,
)
from ehm_tools.fitting import synthetic_problem
from ehm_tools.losses import (
    MIN_CONFIDENCE,
    Supervision,
    gradient_check,
    loss_body,
    loss_head,
    loss_kp_body,
    loss_photo,
    total_loss,
)
from ehm_tools.models import PARAM_BLOCKS, LossWeights, RasterConfig, SupervisionDocument
from ehm_tools.renderer import save_png
from ehm_tools.tools.fitting import KEYPOINT_TOLERANCE, SILHOUETTE_TOLERANCE, acceptance_spec


@pytest.fixture
def problem(composite_model):
    return synthetic_problem(composite_model, seed=3, with_params=True)


class TestTerms:
    """Test individual loss terms."""

    def test_body_term_is_squared_error(self, problem):
        """Test the body term sums squared differences."""
        sup = Supervision(body_pose=problem.truth.body.pose.clone())
        sup.body_pose[2, 1] += 0.1
        value = loss_body(problem.truth.body, sup)
        assert float(value) == pytest.approx(0.01)

    def test_head_term_is_l1(self, problem):
        """Test the head term sums absolute differences."""
        sup = Supervision(
            expression=problem.truth.head.expression + torch.tensor([0.2, -0.3], dtype=torch.float64)
        )
        assert float(loss_head(problem.truth.head, sup)) == pytest.approx(0.5)

    def test_low_confidence_keypoints_are_ignored(self, composite_model, problem):
        """Test keypoints below the confidence floor contribute nothing."""
        sup = Supervision(keypoints2d=problem.supervision.keypoints2d.clone())
        sup.keypoints2d[0] += 100.0
        conf = torch.ones(sup.keypoints2d.shape[0], dtype=torch.float64)
        conf[0] = MIN_CONFIDENCE - 0.01
        sup.keypoint_confidence = conf

        state = composite_model(problem.truth)
        _, part2d = loss_kp_body(state, problem.truth.camera, sup)
        assert float(part2d) == 0.0

    def test_confidence_scales_residual(self, composite_model, problem):
        """Test keypoint residuals are weighted by their confidence."""
        sup = Supervision(keypoints2d=problem.supervision.keypoints2d.clone())
        sup.keypoints2d[1, 0] += 2.0
        sup.keypoint_confidence = torch.full(
            (sup.keypoints2d.shape[0],), 0.5, dtype=torch.float64
        )
        state = composite_model(problem.truth)
        _, part2d = loss_kp_body(state, problem.truth.camera, sup)
        assert float(part2d) == pytest.approx(1.0, abs=1e-9)

    def test_keypoint_count_mismatch(self, composite_model, problem):
        """Test supervision with the wrong keypoint count raises DimensionError."""
        sup = Supervision(keypoints3d=problem.supervision.keypoints3d[:-1])
        state = composite_model(problem.truth)
        with pytest.raises(DimensionError):
            loss_kp_body(state, problem.truth.camera, sup)

    def test_missing_blocks(self, composite_model, problem):
        """Test terms without their supervision raise MissingSupervision."""
        with pytest.raises(MissingSupervision):
            loss_body(problem.truth.body, Supervision())
        with pytest.raises(MissingSupervision):
            loss_head(problem.truth.head, Supervision())
        with pytest.raises(MissingSupervision):
            loss_photo(torch.zeros(8, 8, dtype=torch.float64), None)

    def test_photo_term(self):
        """Test the silhouette term is a mean absolute difference."""
        rendered = torch.zeros(4, 4, dtype=torch.float64)
        mask = torch.zeros(4, 4, dtype=torch.float64)
        mask[:2] = 1.0
        assert float(loss_photo(rendered, mask)) == pytest.approx(0.5)

    def test_photo_size_mismatch(self):
        """Test differently sized images raise ShapeMismatch."""
        with pytest.raises(ShapeMismatch):
            loss_photo(torch.zeros(4, 4, dtype=torch.float64), torch.zeros(5, 4, dtype=torch.float64))


class TestTotalLoss:
    """Test the weighted objective."""

    def test_ground_truth_is_a_minimum(self, composite_model, problem):
        """Test zero loss and zero gradient at the generating parameters."""
        value = total_loss(composite_model, problem.truth, problem.supervision, LossWeights())

        assert value.total == 0.0
        assert torch.count_nonzero(value.gradient) == 0
        assert set(value.per_term) == {"body", "kp_body_3d", "kp_body_2d", "head", "kp_face"}

    def test_perturbed_start_has_gradient(self, composite_model, problem):
        """Test the perturbed initialization has positive loss and a gradient."""
        value = total_loss(composite_model, problem.init, problem.supervision, LossWeights())
        assert value.total > 0
        assert torch.count_nonzero(value.gradient) > 0

    def test_keypoint_weights_multiply(self, composite_model, problem):
        """Test the keypoint sub-weights multiply the keypoint weight."""
        weights = LossWeights(w_kp1=2.0, w_kp1_3d=0.5, w_kp1_2d=3.0)
        value = total_loss(composite_model, problem.init, problem.supervision, weights)
        assert value.weights["kp_body_3d"] == pytest.approx(1.0)
        assert value.weights["kp_body_2d"] == pytest.approx(6.0)
        expected = sum(value.weights[k] * v for k, v in value.per_term.items())
        assert value.total == pytest.approx(expected)

    def test_zero_weight_drops_term(self, composite_model, problem):
        """Test terms with zero weight are not evaluated."""
        value = total_loss(
            composite_model, problem.init, problem.supervision, LossWeights(w_head=0.0)
        )
        assert "head" not in value.per_term

    def test_no_active_terms(self, composite_model, problem):
        """Test an objective with nothing to minimize raises NoActiveTerms."""
        with pytest.raises(NoActiveTerms):
            total_loss(composite_model, problem.init, Supervision(), LossWeights())
        zero = LossWeights(w_body=0, w_kp1=0, w_head=0, w_kp2=0)
        with pytest.raises(NoActiveTerms):
            total_loss(composite_model, problem.init, problem.supervision, zero)

    def test_frozen_blocks_leave_gradient(self, composite_model, problem):
        """Test frozen blocks are excluded from the gradient vector."""
        full = total_loss(composite_model, problem.init, problem.supervision, LossWeights())
        frozen = total_loss(
            composite_model,
            problem.init,
            problem.supervision,
            LossWeights(),
            frozen=["camera", "expression"],
        )
        assert frozen.gradient.numel() == full.gradient.numel() - 3 - 2
        assert "camera" not in frozen.layout.slices

    def test_body_only_model_ignores_head_supervision(self, body_model):
        """Test head terms are inactive without a head."""
        problem = synthetic_problem(body_model, seed=1, with_params=True)
        value = total_loss(body_model, problem.init, problem.supervision, LossWeights())
        assert "head" not in value.per_term
        assert "kp_face" not in value.per_term


class TestSupervisionDocument:
    """Test loading supervision from documents."""

    def test_mask_is_loaded_and_binarized(self, tmp_path):
        """Test a PNG mask path becomes a binary tensor."""
        image = torch.zeros(16, 16, dtype=torch.float64)
        image[4:12, 4:12] = 0.8
        save_png(tmp_path / "mask.png", image)
        doc = SupervisionDocument(
            keypoints2d=[[1.0, 2.0]], mask_path=str(tmp_path / "mask.png")
        )

        sup = Supervision.from_document(doc, (16, 16))
        assert sup.mask.shape == (16, 16)
        assert float(sup.mask.sum()) == 64.0
        assert sup.keypoints2d.dtype == torch.float64
        assert sup.body_pose is None

    def test_empty_document(self):
        """Test a document without blocks gives empty supervision."""
        assert Supervision.from_document(SupervisionDocument()).is_empty()


class TestGradientCheck:
    """Test the finite-difference gradient harness."""

    def test_keypoint_objective_passes(self, composite_model):
        """Test autodiff matches central differences on a seeded problem."""
        problem = synthetic_problem(composite_model, seed=0, with_params=True)
        report = gradient_check(
            composite_model,
            problem.init,
            problem.supervision,
            LossWeights(),
            tolerance=1e-3,
        )
        assert report.passed is True
        assert report.max_rel_error <= 1e-3
        assert report.parameters == sum(
            n for n in total_loss(
                composite_model, problem.init, problem.supervision, LossWeights()
            ).layout.sizes.values()
        )
        assert report.unchecked == 0

    @staticmethod
    def _kinked_head(problem, h):
        """Head supervision placed inside the stencil of every head entry."""
        head = problem.init.head

        def near(x):
            offsets = torch.full_like(x, 0.3 * h)
            offsets[1::2] *= -1
            return x + offsets

        sup = Supervision(head_shape=near(head.shape), expression=near(head.expression))
        frozen = [name for name in PARAM_BLOCKS if name not in ("head_shape", "expression")]
        return sup, frozen

    def test_kinks_inside_the_stencil_are_shifted(self, composite_model, problem):
        """Test L1 entries straddling a kink are compared at a cleared point."""
        h = 1e-6
        sup, frozen = self._kinked_head(problem, h)
        report = gradient_check(
            composite_model, problem.init, sup, LossWeights(), h=h, frozen=frozen, tolerance=1e-3
        )
        assert report.parameters > 0
        assert report.kink_shifted == report.parameters
        assert report.unchecked == 0
        assert report.max_rel_error < 1e-3
        assert report.passed is True

    def test_unclearable_kinks_fail(self, composite_model, problem, monkeypatch):
        """Test entries that cannot be compared fail the check."""
        monkeypatch.setattr("ehm_tools.losses._KINK_SHIFTS", ())
        h = 1e-6
        sup, frozen = self._kinked_head(problem, h)
        report = gradient_check(
            composite_model, problem.init, sup, LossWeights(), h=h, frozen=frozen, tolerance=1e-3
        )
        assert report.unchecked == report.parameters
        assert report.passed is False

    def test_no_tolerance_gives_no_verdict(self, composite_model):
        """Test the report carries no verdict without a tolerance."""
        problem = synthetic_problem(composite_model, seed=1, with_params=True)
        report = gradient_check(
            composite_model, problem.init, problem.supervision, LossWeights(w_head=0.0),
            frozen=["body_pose", "hand_pose", "head_pose"],
        )
        assert report.passed is None
        assert "body_pose" not in report.per_block

    @pytest.mark.parametrize("h", [1e-8, 1e-2])
    def test_step_out_of_range(self, composite_model, problem, h):
        """Test steps outside [1e-7, 1e-3] are refused."""
        with pytest.raises(ConfigurationError):
            gradient_check(composite_model, problem.init, problem.supervision, LossWeights(), h=h)

    @pytest.mark.slow
    def test_silhouette_objective_passes(self, composite_model):
        """Test the soft-silhouette gradient against central differences."""
        raster = RasterConfig(width=32, height=32, sigma=1.0)
        problem = synthetic_problem(
            composite_model, seed=2, raster=raster, with_params=True, with_mask=True
        )
        report = gradient_check(
            composite_model,
            problem.init,
            problem.supervision,
            LossWeights(w_photo=1.0),
            raster=raster,
            tolerance=5e-3,
        )
        assert report.passed is True


@pytest.mark.slow
class TestGradientSuite:
    """Test the seeded gradient suite on desk-scale composites."""

    @pytest.mark.parametrize("seed", range(20))
    def test_seed(self, seed):
        """Test quadratic, keypoint and silhouette gradients for one seed."""
        model = EhmModel(synth_model(acceptance_spec(seed)))
        raster = RasterConfig(width=32, height=32, sigma=1.0)
        problem = synthetic_problem(
            model, seed, raster=raster, with_params=True, with_mask=True
        )

        quadratic = gradient_check(
            model,
            problem.init,
            problem.supervision,
            LossWeights(w_kp1=0.0, w_head=0.0, w_kp2=0.0),
            tolerance=1e-6,
        )
        l1 = gradient_check(
            model,
            problem.init,
            problem.supervision,
            LossWeights(w_body=0.0),
            h=1e-6,
            tolerance=KEYPOINT_TOLERANCE,
        )
        full = gradient_check(
            model,
            problem.init,
            problem.supervision,
            LossWeights(w_photo=1.0),
            raster=raster,
            tolerance=SILHOUETTE_TOLERANCE,
        )

        assert quadratic.passed, quadratic.max_rel_error
        assert l1.passed, l1.max_rel_error
        assert full.passed, full.max_rel_error
