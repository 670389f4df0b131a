"""Tests for the differentiable forward model."""

import numpy as np
import pytest
import torch
from scipy.spatial.transform import Rotation

from ehm_tools.assets import decode_asset, encode_asset, synth_model
from ehm_tools.body import (
    Camera,
    EhmModel,
    FullParams,
    ModelDims,
    ParamLayout,
    apply_blendshapes,
    apply_pose_correctives,
    compose_head,
    forward,
    forward_kinematics,
    linear_blend_skinning,
    project,
    read_obj_vertices,
    regress_keypoints,
    rodrigues,
    write_obj,
)
from ehm_tools.exceptions import CompositionUnsupported, DimensionError
from ehm_tools.models import AssetKind, CameraModel, FullParamsDocument, SynthSpec


def _rest_joints(model: EhmModel) -> torch.Tensor:
    return regress_keypoints(model.body.template, model.body.joint_regressor)


class TestRodrigues:
    """Test axis-angle to matrix conversion."""

    def test_matches_scipy(self, rng):
        """Test agreement with scipy for ordinary and tiny angles."""
        rotvecs = np.concatenate(
            [rng.normal(0.0, 1.0, (20, 3)), rng.normal(0.0, 1e-10, (5, 3)), np.zeros((1, 3))]
        )
        ours = rodrigues(torch.tensor(rotvecs)).numpy()
        np.testing.assert_allclose(ours, Rotation.from_rotvec(rotvecs).as_matrix(), atol=1e-12)

    def test_gradient_is_finite_at_zero(self):
        """Test that the small-angle branch keeps gradients finite."""
        v = torch.zeros(3, dtype=torch.float64, requires_grad=True)
        rodrigues(v).sum().backward()
        assert torch.isfinite(v.grad).all()

    def test_batched_shape(self):
        """Test batching over leading dimensions."""
        assert rodrigues(torch.zeros(4, 5, 3, dtype=torch.float64)).shape == (4, 5, 3, 3)


class TestKinematics:
    """Test forward kinematics and skinning."""

    def test_forward_kinematics_matches_recursion(self, body_model, rng):
        """Test chained transforms against a recursive numpy oracle."""
        parents = body_model.body.parents
        pose = rng.normal(0.0, 0.4, (len(parents), 3))
        rest = _rest_joints(body_model).numpy()
        translation = np.array([0.1, -0.2, 0.3])

        transforms = forward_kinematics(
            parents, torch.tensor(pose), torch.tensor(rest), torch.tensor(translation)
        ).numpy()

        def world(j: int) -> tuple[np.ndarray, np.ndarray]:
            R = Rotation.from_rotvec(pose[j]).as_matrix()
            if parents[j] < 0:
                return R, rest[j] + translation
            pR, pt = world(parents[j])
            return pR @ R, pR @ (rest[j] - rest[parents[j]]) + pt

        for j in range(len(parents)):
            R, t = world(j)
            np.testing.assert_allclose(transforms[j, :3, :3], R, atol=1e-12)
            np.testing.assert_allclose(transforms[j, :3, 3], t, atol=1e-12)

    def test_skinning_matches_naive_loop(self, body_model, rng):
        """Test vectorized skinning against a per-vertex loop."""
        parents = body_model.body.parents
        rest = _rest_joints(body_model)
        pose = torch.tensor(rng.normal(0.0, 0.3, (len(parents), 3)))
        transforms = forward_kinematics(parents, pose, rest, torch.zeros(3, dtype=torch.float64))
        template = body_model.body.template
        weights = body_model.body.skin_weights

        posed = linear_blend_skinning(template, transforms, rest, weights).numpy()

        G, r, W, v = transforms.numpy(), rest.numpy(), weights.numpy(), template.numpy()
        for i in range(0, v.shape[0], 17):
            expected = sum(
                W[i, j] * (G[j, :3, :3] @ (v[i] - r[j]) + G[j, :3, 3]) for j in range(len(parents))
            )
            np.testing.assert_allclose(posed[i], expected, atol=1e-12)

    def test_skinning_rejects_mismatched_weights(self, body_model):
        """Test that inconsistent skinning inputs raise DimensionError."""
        rest = _rest_joints(body_model)
        transforms = torch.eye(4, dtype=torch.float64).repeat(rest.shape[0], 1, 1)
        with pytest.raises(DimensionError):
            linear_blend_skinning(
                body_model.body.template[:-1], transforms, rest, body_model.body.skin_weights
            )

    def test_blendshapes_pad_missing_coefficients(self, body_model):
        """Test that short coefficient vectors act as zero-padded."""
        body = body_model.body
        short = apply_blendshapes(body.template, body.shape_dirs, torch.tensor([0.5], dtype=torch.float64))
        padded = apply_blendshapes(
            body.template,
            body.shape_dirs,
            torch.tensor([0.5, 0.0, 0.0, 0.0], dtype=torch.float64),
        )
        torch.testing.assert_close(short, padded)

    def test_blendshapes_reject_long_coefficients(self, body_model):
        """Test that too many coefficients raise DimensionError."""
        body = body_model.body
        with pytest.raises(DimensionError):
            apply_blendshapes(body.template, body.shape_dirs, torch.zeros(9, dtype=torch.float64))


class TestForwardModel:
    """Test the full forward pass."""

    def test_zero_params_reproduce_template(self, composite_model):
        """Test that rest pose with unit head scale leaves the template unchanged."""
        state = composite_model(composite_model.zero_params())
        torch.testing.assert_close(
            state.vertices, composite_model.body.template, atol=1e-6, rtol=0
        )

    def test_root_rotation_is_equivariant(self, body_model, rng):
        """Test that rotating the root rotates the mesh about the root joint."""
        params = body_model.zero_params()
        params.body.pose = torch.tensor(rng.normal(0.0, 0.2, tuple(params.body.pose.shape)))
        params.body.pose[0] = 0.0
        base = body_model(params).vertices

        turn = np.array([0.0, 0.7, 0.0])
        params.body.pose[0] = torch.tensor(turn)
        turned = body_model(params).vertices

        root = _rest_joints(body_model)[0]
        R = torch.tensor(Rotation.from_rotvec(turn).as_matrix())
        torch.testing.assert_close(turned, (base - root) @ R.T + root, atol=1e-10, rtol=0)

    def test_translation_shifts_everything(self, composite_model):
        """Test that root translation moves every vertex and keypoint."""
        params = composite_model.zero_params()
        base = composite_model(params)
        params.body.translation = torch.tensor([0.5, -0.25, 1.0], dtype=torch.float64)
        moved = composite_model(params)
        torch.testing.assert_close(moved.vertices - base.vertices, params.body.translation.expand_as(base.vertices))
        torch.testing.assert_close(
            moved.face_keypoints - base.face_keypoints,
            params.body.translation.expand_as(base.face_keypoints),
        )

    def test_keypoints_follow_regressor(self, composite_model, composite_asset):
        """Test body keypoints equal the sparse regressor applied to the mesh."""
        state = composite_model(composite_model.zero_params())
        expected = composite_asset.keypoint_regressor @ state.vertices.numpy()
        np.testing.assert_allclose(state.body_keypoints.numpy(), expected, atol=1e-10)

    def test_head_only_asset_cannot_run(self):
        """Test that a standalone head has no body to attach to."""
        head = synth_model(SynthSpec(v=60, j=3, s=3, e=2, k=5, kind=AssetKind.HEAD))
        with pytest.raises(CompositionUnsupported):
            EhmModel(head)

    def test_compose_without_tables(self, body_model):
        """Test composition on a body-only model raises CompositionUnsupported."""
        state = body_model(body_model.zero_params())
        with pytest.raises(CompositionUnsupported):
            compose_head(
                state.vertices,
                torch.zeros(5, 3, dtype=torch.float64),
                torch.ones(3, dtype=torch.float64),
                None,
                state.joint_transforms,
            )

    def test_wrong_pose_shape(self, body_model):
        """Test that a pose with the wrong joint count raises DimensionError."""
        params = body_model.zero_params()
        params.body.pose = torch.zeros(3, 3, dtype=torch.float64)
        with pytest.raises(DimensionError):
            body_model(params)

    def test_one_shot_forward(self, body_asset, body_model):
        """Test the functional entry point matches the module."""
        params = body_model.zero_params()
        torch.testing.assert_close(forward(body_asset, params).vertices, body_model(params).vertices)


class TestHeadComposition:
    """Test attaching the scaled head."""

    def test_head_scale_grows_head(self, composite_model, composite_asset):
        """Test that a larger head scale enlarges the head about the attach joint."""
        params = composite_model.zero_params()
        rest = composite_model(params).head_vertices
        params.head.scale = torch.full((3,), 1.5, dtype=torch.float64)
        big = composite_model(params).head_vertices

        pivot = _rest_joints(composite_model)[composite_asset.head_attach_joint]
        torch.testing.assert_close(big - pivot, 1.5 * (rest - pivot))

    def test_seam_blends_body_and_head(self, composite_model, composite_asset):
        """Test seam vertices interpolate between body and placed head."""
        params = composite_model.zero_params()
        params.head.scale = torch.tensor([1.2, 0.9, 1.1], dtype=torch.float64)
        state = composite_model(params)
        rest = composite_model.body.template

        ids = torch.as_tensor(composite_asset.head_vertex_ids.astype(np.int64))
        w = torch.as_tensor(composite_asset.seam_weights.astype(np.float64))[:, None]
        expected = (1 - w) * rest[ids] + w * state.head_vertices
        torch.testing.assert_close(state.vertices[ids], expected, atol=1e-6, rtol=0)

    def test_head_follows_attach_joint(self, composite_model, composite_asset):
        """Test that rotating the attach joint carries the head rigidly."""
        params = composite_model.zero_params()
        attach = composite_asset.head_attach_joint
        params.body.pose[attach] = torch.tensor([0.0, 0.0, 0.5], dtype=torch.float64)
        state = composite_model(params)

        G = state.joint_transforms[attach]
        local = composite_model.head.template
        torch.testing.assert_close(state.head_vertices, local @ G[:3, :3].T + G[:3, 3], atol=1e-6, rtol=0)

    def test_expression_moves_only_head(self, composite_model, composite_asset):
        """Test expressions leave body vertices untouched."""
        params = composite_model.zero_params()
        base = composite_model(params).vertices
        params.head.expression = torch.tensor([2.0, -2.0], dtype=torch.float64)
        moved = composite_model(params).vertices

        body_only = np.setdiff1d(np.arange(base.shape[0]), composite_asset.head_vertex_ids)
        torch.testing.assert_close(moved[body_only], base[body_only])
        assert not torch.allclose(moved, base)


class TestPoseCorrectives:
    """Test pose-dependent corrective offsets."""

    @pytest.fixture(scope="class")
    def corrective_asset(self):
        return synth_model(
            SynthSpec(v=200, j=8, s=4, e=0, k=12, seed=11, kind=AssetKind.BODY, pose_dirs=True)
        )

    def test_synthesized_shape(self, corrective_asset, body_asset):
        """Test the option adds V x 3 x 9(J-1) correctives and leaves the rest as is."""
        assert corrective_asset.pose_dirs.shape == (200, 3, 9 * 7)
        assert np.any(corrective_asset.pose_dirs != 0)
        assert body_asset.pose_dirs is None
        np.testing.assert_array_equal(corrective_asset.template, body_asset.template)
        np.testing.assert_array_equal(corrective_asset.skin_weights, body_asset.skin_weights)

    def test_zero_pose_has_no_correctives(self, corrective_asset, body_model):
        """Test the rest pose reproduces the template exactly."""
        model = EhmModel(corrective_asset)
        params = model.zero_params()
        params.body.shape = torch.tensor([0.5, -1.0, 0.0, 2.0], dtype=torch.float64)

        torch.testing.assert_close(model(params).vertices, body_model(params).vertices, atol=0, rtol=0)

    def test_hand_computed_offset(self):
        """Test offsets are pose_dirs applied to the entries of R_j - I."""
        a, b = 0.2, -0.3
        rotations = rodrigues(
            torch.tensor([[0.4, 0.1, 0.0], [0.0, 0.0, a], [b, 0.0, 0.0]], dtype=torch.float64)
        )
        pose_dirs = torch.zeros(2, 3, 18, dtype=torch.float64)
        pose_dirs[0, 0, 1] = 2.0  # joint 1, R[0, 1]
        pose_dirs[1, 2, 9 + 8] = 0.5  # joint 2, R[2, 2]
        pose_dirs[1, 1, 9 + 5] = -1.0  # joint 2, R[1, 2]

        offsets = apply_pose_correctives(torch.zeros(2, 3, dtype=torch.float64), pose_dirs, rotations)
        expected = torch.tensor(
            [[2.0 * -np.sin(a), 0.0, 0.0], [0.0, np.sin(b), 0.5 * (np.cos(b) - 1.0)]],
            dtype=torch.float64,
        )
        torch.testing.assert_close(offsets, expected, atol=1e-12, rtol=0)

    def test_small_pose_moves_root_vertices_by_corrective(self, corrective_asset):
        """Test root-only vertices move by exactly the corrective when a child bends."""
        model = EhmModel(corrective_asset)
        parents = corrective_asset.parent_list()
        joint = next(j for j in range(1, len(parents)) if parents[j] == 0)
        angle = np.array([0.0, 0.0, 0.05])
        params = model.zero_params()
        params.body.pose[joint] = torch.tensor(angle)

        features = np.zeros((len(parents) - 1, 3, 3))
        features[joint - 1] = Rotation.from_rotvec(angle).as_matrix() - np.eye(3)
        dirs = corrective_asset.pose_dirs.astype(np.float64)
        expected = np.einsum("vcp,p->vc", dirs, features.reshape(-1))

        rows = np.flatnonzero(corrective_asset.skin_weights[:, 0] == 1.0)
        assert rows.size and np.abs(expected[rows]).max() > 1e-5
        moved = model(params).vertices.numpy() - model.body.template.numpy()
        np.testing.assert_allclose(moved[rows], expected[rows], atol=1e-10)

    def test_round_trip(self, corrective_asset):
        """Test correctives survive encoding and pass validation."""
        loaded = decode_asset(encode_asset(corrective_asset))
        np.testing.assert_array_equal(loaded.pose_dirs, corrective_asset.pose_dirs)


class TestCamera:
    """Test projections."""

    def test_weak_perspective(self):
        """Test scale-and-offset projection."""
        camera = FullParams.zeros(ModelDims(num_joints=2, num_shape=0)).camera
        camera.scale = torch.tensor(50.0, dtype=torch.float64)
        camera.tx = torch.tensor(10.0, dtype=torch.float64)
        camera.ty = torch.tensor(-5.0, dtype=torch.float64)
        uv, valid = project(camera, torch.tensor([[1.0, 2.0, 3.0]], dtype=torch.float64))
        torch.testing.assert_close(uv, torch.tensor([[60.0, 95.0]], dtype=torch.float64))
        assert valid.all()

    def test_perspective_marks_points_behind(self):
        """Test that points behind a pinhole camera are invalid and zeroed."""
        camera = Camera(
            model=CameraModel.PERSPECTIVE,
            rotation=torch.eye(3, dtype=torch.float64),
            translation=torch.tensor([0.0, 0.0, 2.0], dtype=torch.float64),
            f=torch.tensor(100.0, dtype=torch.float64),
            cx=torch.tensor(32.0, dtype=torch.float64),
            cy=torch.tensor(32.0, dtype=torch.float64),
        )
        points = torch.tensor([[0.2, -0.4, 0.0], [0.0, 0.0, -3.0]], dtype=torch.float64)
        uv, valid = project(camera, points)
        assert valid.tolist() == [True, False]
        torch.testing.assert_close(uv[0], torch.tensor([42.0, 12.0], dtype=torch.float64))
        torch.testing.assert_close(uv[1], torch.zeros(2, dtype=torch.float64))


class TestParams:
    """Test parameter documents and flat layouts."""

    def test_document_pads_short_coefficients(self, composite_model):
        """Test that missing trailing coefficients default to zero."""
        doc = FullParamsDocument(body_shape=[0.3], expression=[1.0])
        params = FullParams.from_document(doc, composite_model.dims)
        assert params.body.shape.tolist() == [0.3, 0.0, 0.0, 0.0]
        assert params.head.expression.tolist() == [1.0, 0.0]
        assert params.body.pose.shape == (composite_model.dims.num_joints, 3)

    def test_document_rejects_oversized_block(self, composite_model):
        """Test that too many coefficients raise DimensionError."""
        with pytest.raises(DimensionError):
            FullParams.from_document(FullParamsDocument(body_shape=[0.0] * 9), composite_model.dims)

    def test_body_model_rejects_head_params(self, body_model):
        """Test head blocks are refused for a body-only model."""
        with pytest.raises(DimensionError):
            FullParams.from_document(FullParamsDocument(expression=[1.0]), body_model.dims)

    def test_document_round_trip(self, composite_model, rng):
        """Test params survive conversion to a document and back."""
        params = composite_model.zero_params()
        params.body.pose = torch.tensor(rng.normal(0.0, 0.2, (composite_model.dims.num_joints, 3)))
        params.head.scale = torch.tensor([1.1, 0.9, 1.0], dtype=torch.float64)
        back = FullParams.from_document(params.to_document(), composite_model.dims)
        torch.testing.assert_close(back.body.pose, params.body.pose)
        torch.testing.assert_close(back.head.scale, params.head.scale)

    def test_layout_skips_frozen_blocks(self, composite_model):
        """Test the flat vector only covers active blocks."""
        dims = composite_model.dims
        full = ParamLayout(dims)
        frozen = ParamLayout(dims, frozen=["camera", "head_scale"])
        assert frozen.size == full.size - 6
        assert "camera" not in frozen.slices

    def test_layout_splits_hand_pose(self, composite_model):
        """Test hand joints get their own block."""
        dims = composite_model.dims
        layout = ParamLayout(dims)
        assert layout.sizes["hand_pose"] == 3 * len(dims.hand_joint_ids)
        assert layout.sizes["body_pose"] == 3 * (dims.num_joints - len(dims.hand_joint_ids))

    def test_unpack_keeps_frozen_blocks(self, composite_model, rng):
        """Test unpacking writes active blocks and leaves frozen ones alone."""
        base = composite_model.zero_params()
        layout = ParamLayout(composite_model.dims, frozen=["body_pose", "camera"])
        flat = torch.tensor(rng.normal(0.0, 0.1, layout.size))
        out = layout.unpack(flat, base)

        hands = list(composite_model.dims.hand_joint_ids)
        others = [j for j in range(composite_model.dims.num_joints) if j not in hands]
        assert torch.equal(out.body.pose[others], base.body.pose[others])
        assert out.camera is base.camera
        torch.testing.assert_close(layout.pack(out), flat)

    def test_unpack_rejects_wrong_length(self, composite_model):
        """Test that a flat vector of the wrong size raises DimensionError."""
        layout = ParamLayout(composite_model.dims)
        with pytest.raises(DimensionError):
            layout.unpack(torch.zeros(layout.size + 1, dtype=torch.float64), composite_model.zero_params())

    def test_unknown_block(self, composite_model):
        """Test that unknown frozen block names are rejected."""
        with pytest.raises(DimensionError):
            ParamLayout(composite_model.dims, frozen=["eyebrows"])


class TestObjExport:
    """Test OBJ mesh output."""

    def test_write_then_read(self, tmp_path, body_model):
        """Test written vertices read back within print precision."""
        state = body_model(body_model.zero_params())
        path = tmp_path / "mesh.obj"
        write_obj(path, state.vertices.numpy(), body_model.faces.numpy())

        np.testing.assert_allclose(read_obj_vertices(path), state.vertices.numpy(), atol=1e-8)
        faces = [line for line in path.read_text().splitlines() if line.startswith("f ")]
        assert len(faces) == body_model.faces.shape[0]
        assert min(int(i) for line in faces for i in line.split()[1:]) == 1
