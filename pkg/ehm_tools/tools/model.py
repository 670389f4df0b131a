"""Forward-pass and benchmark tools."""

import time
from collections.abc import Callable
from typing import Any

import numpy as np
import torch

from ..assets import synth_model
from ..body import (
    EhmModel,
    FullParams,
    apply_blendshapes,
    compose_head,
    forward_kinematics,
    linear_blend_skinning,
    project,
    regress_keypoints,
    rodrigues,
    write_obj,
)
from ..models import (
    BenchReport,
    ForwardOutputDocument,
    FullParamsDocument,
    StageTiming,
    SynthSpec,
)
from .base import BaseTool


class ForwardTool(BaseTool):
    """Run the forward model once and export the mesh and keypoints."""

    name = "forward"
    description = "Pose a model with a parameter document; export OBJ and keypoints"
    parameters = {
        "asset": {"type": "string", "description": "EHMA model file", "required": True},
        "params": {
            "type": "object",
            "description": "FullParams document or path to one (rest pose if omitted)",
            "required": False,
        },
        "obj_output": {"type": "string", "description": "OBJ mesh output", "required": False},
        "keypoints_output": {
            "type": "string",
            "description": "Keypoints JSON output",
            "required": False,
        },
    }

    async def _execute(self, **kwargs: Any) -> dict[str, Any]:
        self._validate_parameters(kwargs, ["asset"])
        model = EhmModel(self._load_asset(kwargs["asset"]))
        doc = self._read_document(FullParamsDocument, kwargs.get("params"))
        params = FullParams.from_document(doc, model.dims)

        with torch.no_grad():
            state = model(params)
            body2d, _ = project(params.camera, state.body_keypoints)
            face2d, _ = project(params.camera, state.face_keypoints)

        if kwargs.get("obj_output"):
            write_obj(kwargs["obj_output"], state.vertices.numpy(), model.faces.numpy())
        output = ForwardOutputDocument(
            joints=state.joints.tolist(),
            body_keypoints3d=state.body_keypoints.tolist(),
            face_keypoints3d=state.face_keypoints.tolist(),
            body_keypoints2d=body2d.tolist(),
            face_keypoints2d=face2d.tolist(),
        )
        self._write_document(output, kwargs.get("keypoints_output"))
        return output.model_dump(mode="json")


def _time(fn: Callable[[], Any], iterations: int, warmup: int) -> StageTiming:
    start = time.perf_counter()
    fn()
    cold = (time.perf_counter() - start) * 1000
    for _ in range(warmup):
        fn()
    samples = np.empty(iterations)
    for i in range(iterations):
        start = time.perf_counter()
        fn()
        samples[i] = (time.perf_counter() - start) * 1000
    return StageTiming(
        cold_ms=cold,
        mean_ms=float(samples.mean()),
        p95_ms=float(np.percentile(samples, 95)),
    )


def random_params(model: EhmModel, seed: int, sigma: float = 0.2) -> FullParams:
    """A seeded non-trivial pose for timing and smoke runs."""
    rng = np.random.default_rng(seed)
    params = model.zero_params()
    params.body.pose = torch.as_tensor(
        rng.normal(0.0, sigma, tuple(params.body.pose.shape)), dtype=model.dtype
    )
    params.body.shape = torch.as_tensor(
        rng.normal(0.0, 1.0, tuple(params.body.shape.shape)), dtype=model.dtype
    )
    if params.head is not None:
        params.head.pose = torch.as_tensor(
            rng.normal(0.0, sigma, tuple(params.head.pose.shape)), dtype=model.dtype
        )
        params.head.expression = torch.as_tensor(
            rng.normal(0.0, 1.0, tuple(params.head.expression.shape)), dtype=model.dtype
        )
    return params


def bench_model(model: EhmModel, iterations: int, warmup: int, seed: int) -> BenchReport:
    """Time every forward stage separately and the full forward pass."""
    params = random_params(model, seed)
    body = model.body
    pose, beta = params.body.pose, params.body.shape

    with torch.no_grad():
        shaped = apply_blendshapes(body.template, body.shape_dirs, beta)
        rest = regress_keypoints(shaped, body.joint_regressor)
        rotations = rodrigues(pose)
        transforms = forward_kinematics(body.parents, rotations, rest, params.body.translation)
        posed = linear_blend_skinning(shaped, transforms, rest, body.skin_weights)

        def fk() -> Any:
            joints = regress_keypoints(shaped, body.joint_regressor)
            return forward_kinematics(body.parents, rodrigues(pose), joints, params.body.translation)

        stages = {
            "blendshapes": _time(
                lambda: apply_blendshapes(body.template, body.shape_dirs, beta),
                iterations,
                warmup,
            ),
            "fk": _time(fk, iterations, warmup),
            "lbs": _time(
                lambda: linear_blend_skinning(shaped, transforms, rest, body.skin_weights),
                iterations,
                warmup,
            ),
        }
        if model.head is not None and params.head is not None:
            head, hp = model.head, params.head
            zero = torch.zeros(3, dtype=model.dtype)

            def compose() -> Any:
                local, _ = head.pose_mesh(hp.pose, hp.shape, hp.expression, zero)
                return compose_head(posed, local, hp.scale, model.tables, transforms)

            stages["compose"] = _time(compose, iterations, warmup)
        stages["forward"] = _time(lambda: model(params), iterations, warmup)

    return BenchReport(
        vertices=int(model.body.template.shape[0]),
        joints=model.dims.num_joints,
        iterations=iterations,
        threads=torch.get_num_threads(),
        stages=stages,
        fps=1000.0 / max(stages["forward"].mean_ms, 1e-9),
    )


def bench_table(report: BenchReport) -> str:
    """Human-readable rendering of a benchmark report."""
    lines = [
        f"V={report.vertices} J={report.joints} iterations={report.iterations} "
        f"threads={report.threads}",
        f"{'stage':<12}{'cold ms':>10}{'mean ms':>10}{'p95 ms':>10}",
    ]
    for name, t in report.stages.items():
        lines.append(f"{name:<12}{t.cold_ms:>10.3f}{t.mean_ms:>10.3f}{t.p95_ms:>10.3f}")
    lines.append(f"forward FPS: {report.fps:.1f}")
    return "\n".join(lines)


class BenchTool(BaseTool):
    """Benchmark the forward model stage by stage."""

    name = "bench"
    description = "Per-stage forward timings (cold, mean, p95) and full-forward FPS"
    parameters = {
        "asset": {
            "type": "string",
            "description": "EHMA model file (a synthetic composite when omitted)",
            "required": False,
        },
        "spec": {
            "type": "object",
            "description": "SynthSpec for the synthetic model when no asset is given",
            "required": False,
        },
        "iterations": {"type": "integer", "description": "Timed iterations", "required": False},
        "warmup": {"type": "integer", "description": "Untimed warmup runs", "required": False},
        "seed": {"type": "integer", "description": "Parameter seed", "required": False},
    }

    async def _execute(self, **kwargs: Any) -> dict[str, Any]:
        if kwargs.get("asset"):
            asset = self._load_asset(kwargs["asset"])
        else:
            asset = synth_model(self._read_document(SynthSpec, kwargs.get("spec")))
        model = EhmModel(asset)
        report = bench_model(
            model,
            iterations=int(kwargs.get("iterations") or 1000),
            warmup=int(kwargs.get("warmup") or 10),
            seed=int(kwargs.get("seed") or 0),
        )
        self.logger.info(
            "Benchmark finished",
            context={"fps": report.fps, "forward_ms": report.stages["forward"].mean_ms},
        )
        return report.model_dump(mode="json")
