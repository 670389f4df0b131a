"""Evaluation metrics: Procrustes alignment, joint, vertex and 2D keypoint errors.

All distances are in the units of the inputs (meters for meshes and joints,
pixels for 2D keypoints). Alignment follows the ``s * R @ pred + t ~ gt``
convention with reflections excluded.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from ehm_tools.exceptions import BadRegion, DegenerateInput, DimensionError
from ehm_tools.models import MetricReport

RANK_TOL = 1e-9


@dataclass(frozen=True)
class SimilarityTransform:
    """Scale, rotation and translation mapping predictions onto ground truth."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * points @ self.rotation.T + self.translation


def _as_points(points: np.ndarray, dim: int, label: str) -> np.ndarray:
    array = np.asarray(points, dtype=np.float64)
    if array.ndim != 2 or array.shape[1] != dim:
        raise DimensionError(
            f"{label} must be N x {dim}", context={"shape": list(array.shape)}
        )
    return array


def _same_shape(pred: np.ndarray, gt: np.ndarray) -> None:
    if pred.shape != gt.shape:
        raise DimensionError(
            "Prediction and ground truth shapes differ",
            context={"pred": list(pred.shape), "gt": list(gt.shape)},
        )


def _check_spread(centered: np.ndarray, label: str) -> None:
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[0] < RANK_TOL or sv[1] < RANK_TOL * sv[0]:
        raise DegenerateInput(
            f"{label} points are collinear or coincident",
            context={"singular_values": sv.tolist()},
        )


def procrustes_align(
    pred: np.ndarray, gt: np.ndarray, rigid: bool = False
) -> SimilarityTransform:
    """Least-squares transform taking ``pred`` onto ``gt``.

    With ``rigid`` the scale is fixed to 1 (rotation and translation only).

    A degenerate prediction is valid input: a collinear one still aligns, and
    a fully coincident one maps onto the ground-truth centroid.

    Raises:
        DimensionError: If the point sets are not matching N x 3 arrays
        DegenerateInput: If fewer than 3 points or the ground truth has rank < 2
    """
    pred = _as_points(pred, 3, "pred")
    gt = _as_points(gt, 3, "gt")
    _same_shape(pred, gt)
    if pred.shape[0] < 3:
        raise DegenerateInput(
            "Alignment needs at least 3 points", context={"points": pred.shape[0]}
        )
    mu_p, mu_g = pred.mean(axis=0), gt.mean(axis=0)
    p, g = pred - mu_p, gt - mu_g
    _check_spread(g, "Ground-truth")
    spread = float(np.sum(p * p))
    if spread == 0.0:
        scale = 1.0 if rigid else 0.0
        return SimilarityTransform(
            scale=scale, rotation=np.eye(3), translation=mu_g - scale * mu_p
        )

    u, s, vt = np.linalg.svd(p.T @ g)
    d = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    correction = np.diag([1.0, 1.0, d])
    rotation = vt.T @ correction @ u.T
    scale = 1.0 if rigid else float(np.sum(s * np.diag(correction)) / spread)
    translation = mu_g - scale * rotation @ mu_p
    return SimilarityTransform(scale=scale, rotation=rotation, translation=translation)


def mpjpe(
    pred: np.ndarray,
    gt: np.ndarray,
    aligned: bool = False,
    rigid: bool = False,
    root: int = 0,
) -> float:
    """Mean per-joint position error.

    Unaligned errors are measured after subtracting each set's ``root`` joint;
    aligned errors after :func:`procrustes_align`.
    """
    pred = _as_points(pred, 3, "pred")
    gt = _as_points(gt, 3, "gt")
    _same_shape(pred, gt)
    if aligned:
        pred = procrustes_align(pred, gt, rigid=rigid).apply(pred)
    else:
        if not 0 <= root < pred.shape[0]:
            raise DimensionError("Root joint out of range", context={"root": root})
        pred = pred - pred[root]
        gt = gt - gt[root]
    return float(np.linalg.norm(pred - gt, axis=1).mean())


def pa_mpjpe(pred: np.ndarray, gt: np.ndarray, rigid: bool = False) -> float:
    return mpjpe(pred, gt, aligned=True, rigid=rigid)


@dataclass(frozen=True)
class VertexErrors:
    """Per-region vertex errors, averaged over frames."""

    mve: float
    lve: float
    pa_pve: float | None
    frames: int
    vertices: int


def _frames(verts: np.ndarray, label: str) -> np.ndarray:
    array = np.asarray(verts, dtype=np.float64)
    if array.ndim == 2:
        array = array[None]
    if array.ndim != 3 or array.shape[2] != 3:
        raise DimensionError(
            f"{label} must be V x 3 or F x V x 3", context={"shape": list(array.shape)}
        )
    return array


def _region(region: Sequence[int] | np.ndarray | None, num_vertices: int) -> np.ndarray:
    if region is None:
        return np.arange(num_vertices)
    ids = np.asarray(region, dtype=np.int64).reshape(-1)
    if ids.size == 0:
        raise BadRegion("Vertex region is empty")
    bad = ids[(ids < 0) | (ids >= num_vertices)]
    if bad.size:
        raise BadRegion(
            f"Region references vertex {int(bad[0])} of {num_vertices}",
            context={"index": int(bad[0]), "vertices": num_vertices},
        )
    return ids


def lip_vertex_error(
    pred: np.ndarray, gt: np.ndarray, region: Sequence[int] | np.ndarray | None = None
) -> float:
    """Max per-vertex error over the lip region, averaged over frames."""
    pred, gt = _frames(pred, "pred"), _frames(gt, "gt")
    _same_shape(pred, gt)
    ids = _region(region, pred.shape[1])
    err = np.linalg.norm(pred[:, ids] - gt[:, ids], axis=2)
    return float(err.max(axis=1).mean())


def vertex_errors(
    pred: np.ndarray,
    gt: np.ndarray,
    region: Sequence[int] | np.ndarray | None = None,
    aligned: bool = False,
    lip_region: Sequence[int] | np.ndarray | None = None,
    rigid: bool = False,
) -> VertexErrors:
    """Mean vertex error over ``region`` and lip vertex error over ``lip_region``.

    Inputs are single meshes (V x 3) or sequences (F x V x 3). The lip region
    defaults to ``region``. With ``aligned`` each frame is also Procrustes
    aligned on the region and PA-PVE is reported.

    Raises:
        DimensionError: If the meshes differ in shape
        BadRegion: If a region index is out of range
    """
    pred, gt = _frames(pred, "pred"), _frames(gt, "gt")
    _same_shape(pred, gt)
    ids = _region(region, pred.shape[1])
    lips = ids if lip_region is None else _region(lip_region, pred.shape[1])

    mve = float(np.linalg.norm(pred[:, ids] - gt[:, ids], axis=2).mean())
    lve = lip_vertex_error(pred, gt, lips)
    pa_pve = None
    if aligned:
        per_frame = []
        for p, g in zip(pred[:, ids], gt[:, ids]):
            p_aligned = procrustes_align(p, g, rigid=rigid).apply(p)
            per_frame.append(np.linalg.norm(p_aligned - g, axis=1).mean())
        pa_pve = float(np.mean(per_frame))
    return VertexErrors(
        mve=mve, lve=lve, pa_pve=pa_pve, frames=pred.shape[0], vertices=int(ids.size)
    )


def bbox_diagonal(points2d: np.ndarray) -> float:
    points2d = _as_points(points2d, 2, "points")
    return float(np.linalg.norm(points2d.max(axis=0) - points2d.min(axis=0)))


def pck(
    pred2d: np.ndarray,
    gt2d: np.ndarray,
    tau: float,
    normalizer: float | None = None,
) -> float:
    """Fraction of keypoints within ``tau * normalizer`` pixels (inclusive).

    The normalizer defaults to the diagonal of the ground-truth bounding box.

    Raises:
        DimensionError: If the keypoint sets are not matching K x 2 arrays
        DegenerateInput: If the normalizer is not positive
    """
    pred2d = _as_points(pred2d, 2, "pred2d")
    gt2d = _as_points(gt2d, 2, "gt2d")
    _same_shape(pred2d, gt2d)
    if pred2d.shape[0] == 0:
        raise DimensionError("PCK needs at least one keypoint")
    if normalizer is None:
        normalizer = bbox_diagonal(gt2d)
    if not normalizer > 0:
        raise DegenerateInput(
            "PCK normalizer must be positive", context={"normalizer": normalizer}
        )
    dist = np.linalg.norm(pred2d - gt2d, axis=1)
    return float(np.mean(dist <= tau * normalizer))


def pck_curve(
    pred2d: np.ndarray,
    gt2d: np.ndarray,
    taus: Sequence[float],
    normalizer: float | None = None,
) -> dict[float, float]:
    return {float(tau): pck(pred2d, gt2d, tau, normalizer) for tau in taus}


def _pck_name(tau: float) -> str:
    return f"pck@{tau:g}"


def evaluate(
    *,
    joints: tuple[np.ndarray, np.ndarray] | None = None,
    vertices: tuple[np.ndarray, np.ndarray] | None = None,
    keypoints2d: tuple[np.ndarray, np.ndarray] | None = None,
    region: Sequence[int] | None = None,
    lip_region: Sequence[int] | None = None,
    taus: Sequence[float] = (0.05, 0.1),
    normalizer: float | None = None,
    rigid: bool = False,
    root: int = 0,
    mve_label: str = "mve",
    align: bool | None = None,
) -> MetricReport:
    """Compute every metric the given (pred, gt) pairs support.

    MPJPE, MVE and LVE are always unaligned. The Procrustes-aligned metrics
    (PA-MPJPE, PA-PVE) follow ``align``: ``None`` reports them when the ground
    truth can be aligned and lists them under ``skipped`` otherwise, ``True``
    requires them and ``False`` leaves them out.

    ``mve_label`` renames the mean vertex error (``mle`` is accepted as an
    alias by the CLI).

    Raises:
        DegenerateInput: If ``align`` is True and a pair cannot be aligned
    """
    metrics: dict[str, float] = {}
    units: dict[str, str] = {}
    counts: dict[str, int] = {}
    skipped: list[str] = []

    def aligned(name: str, compute: Callable[[], float | None]) -> None:
        if align is False:
            return
        try:
            value = compute()
        except DegenerateInput:
            if align:
                raise
            skipped.append(name)
            return
        if value is not None:
            metrics[name] = value
            units[name] = "m"

    if joints is not None:
        pred, gt = joints
        metrics["mpjpe"] = mpjpe(pred, gt, root=root)
        units["mpjpe"] = "m"
        aligned("pa_mpjpe", lambda: pa_mpjpe(pred, gt, rigid=rigid))
        counts["joints"] = int(np.asarray(gt).shape[0])

    if vertices is not None:
        vpred, vgt = vertices
        errors = vertex_errors(vpred, vgt, region, lip_region=lip_region)
        metrics[mve_label] = errors.mve
        metrics["lve"] = errors.lve
        units.update({mve_label: "m", "lve": "m"})
        aligned(
            "pa_pve",
            lambda: vertex_errors(vpred, vgt, region, aligned=True, rigid=rigid).pa_pve,
        )
        counts["vertices"] = errors.vertices
        counts["frames"] = errors.frames

    if keypoints2d is not None:
        pred, gt = keypoints2d
        for tau, value in pck_curve(pred, gt, taus, normalizer).items():
            metrics[_pck_name(tau)] = value
            units[_pck_name(tau)] = "fraction"
        counts["keypoints"] = int(np.asarray(gt).shape[0])

    return MetricReport(metrics=metrics, units=units, counts=counts, skipped=skipped)
