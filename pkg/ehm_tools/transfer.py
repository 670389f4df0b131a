"""Body-pose transfer between skeletons through rest-pose alignment offsets.

For every mapped joint the offset is the rotation that turns the target's
rest bone directions (towards its mapped children) onto the source's, taken
in the parent frame after the ancestors' offsets have been applied. Posing
the target with the offsets therefore reproduces the source rest pose, and
source poses carry over by composing each source rotation with the offset.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from ehm_tools.assets.asset import ModelAsset
from ehm_tools.exceptions import DegenerateBone, DimensionError, MapError
from ehm_tools.logger import StructuredLogger
from ehm_tools.models import PoseOffsetDocument

MIN_BONE = 1e-6

logger = StructuredLogger(__name__)


def rest_joints(asset: ModelAsset) -> np.ndarray:
    """Mean-shape rest joint positions in float64."""
    return np.asarray(
        asset.joint_regressor.astype(np.float64) @ asset.template.astype(np.float64)
    )


def _check_map(
    joint_map: Sequence[tuple[int, int]], source: ModelAsset, target: ModelAsset
) -> dict[int, int]:
    pairs = [(int(s), int(t)) for s, t in joint_map]
    for s, t in pairs:
        if not (0 <= s < source.num_joints and 0 <= t < target.num_joints):
            raise MapError(
                f"Joint pair ({s}, {t}) is out of range",
                context={
                    "pair": [s, t],
                    "source_joints": source.num_joints,
                    "target_joints": target.num_joints,
                },
            )
    sources = [s for s, _ in pairs]
    targets = [t for _, t in pairs]
    if len(set(sources)) != len(sources) or len(set(targets)) != len(targets):
        raise MapError("Joint map must be injective", context={"joint_map": pairs})
    return {t: s for s, t in pairs}


def _unit(v: np.ndarray, joint: int, which: str) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n < MIN_BONE:
        raise DegenerateBone(
            f"Bone at {which} joint {joint} has length {n:.3g} m",
            context={"joint": joint, "skeleton": which, "length": n},
        )
    return v / n


def _shortest_arc(b: np.ndarray, a: np.ndarray) -> Rotation:
    """Smallest rotation taking unit vector ``b`` onto unit vector ``a``."""
    axis = np.cross(b, a)
    sin = float(np.linalg.norm(axis))
    cos = float(np.clip(np.dot(b, a), -1.0, 1.0))
    if sin < 1e-12:
        if cos > 0:
            return Rotation.identity()
        raise DegenerateBone("Opposite bone directions have no unique alignment")
    return Rotation.from_rotvec(axis / sin * np.arctan2(sin, cos))


def derive_pose_offset(
    source: ModelAsset,
    target: ModelAsset,
    joint_map: Sequence[tuple[int, int]],
) -> PoseOffsetDocument:
    """Derive per-joint rotation offsets aligning the target rest pose to the source.

    Raises:
        MapError: If the map references missing joints or is not injective
        DegenerateBone: If a mapped bone is shorter than ``MIN_BONE``
    """
    by_target = _check_map(joint_map, source, target)
    src_parents = source.parent_list()
    tgt_parents = target.parent_list()
    src_joints = rest_joints(source)
    tgt_joints = rest_joints(target)

    def mapped_children(t: int) -> list[tuple[int, int]]:
        s = by_target[t]
        return [
            (by_target[c], c)
            for c in range(target.num_joints)
            if tgt_parents[c] == t and c in by_target and src_parents[by_target[c]] == s
        ]

    accumulated = [Rotation.identity()] * target.num_joints
    deltas: dict[int, Rotation] = {}
    for t in range(target.num_joints):
        parent = accumulated[tgt_parents[t]] if tgt_parents[t] >= 0 else Rotation.identity()
        delta = Rotation.identity()
        if t in by_target:
            s = by_target[t]
            children = mapped_children(t)
            a = np.array(
                [_unit(src_joints[cs] - src_joints[s], cs, "source") for cs, _ in children]
            ).reshape(-1, 3)
            b = np.array(
                [_unit(tgt_joints[ct] - tgt_joints[t], ct, "target") for _, ct in children]
            ).reshape(-1, 3)
            a_local = parent.inv().apply(a) if len(a) else a
            if len(children) == 1:
                delta = _shortest_arc(b[0], a_local[0])
            elif len(children) > 1:
                delta, _ = Rotation.align_vectors(a_local, b)
            deltas[t] = delta
        accumulated[t] = parent * delta

    error = 0.0
    for t in by_target:
        for cs, ct in mapped_children(t):
            a = _unit(src_joints[cs] - src_joints[by_target[t]], cs, "source")
            b = accumulated[t].apply(_unit(tgt_joints[ct] - tgt_joints[t], ct, "target"))
            error = max(error, float(np.arccos(np.clip(np.dot(a, b), -1.0, 1.0))))

    pairs = sorted(((s, t) for t, s in by_target.items()), key=lambda p: p[1])
    offset = PoseOffsetDocument(
        joint_map=pairs,
        joint_names=[target.joint_names[t] for _, t in pairs],
        target_parents=tgt_parents,
        delta=[deltas[t].as_rotvec().tolist() for _, t in pairs],
        alignment_error=error,
    )
    logger.info(
        "Derived pose offset",
        context={"joints": len(pairs), "alignment_error": error},
    )
    return offset


def apply_pose_offset(theta_source: np.ndarray, offset: PoseOffsetDocument) -> np.ndarray:
    """Transfer a source pose (J_s x 3 axis-angle) onto the target skeleton.

    Each mapped target joint receives the source rotation expressed in the
    offset-aligned parent frame, followed by its own offset; unmapped target
    joints stay at zero.

    Raises:
        DimensionError: If the source pose misses a mapped joint
    """
    theta_source = np.asarray(theta_source, dtype=np.float64)
    if theta_source.ndim != 2 or theta_source.shape[1] != 3:
        raise DimensionError("Source pose must be J x 3", context={"shape": list(theta_source.shape)})
    needed = max((s for s, _ in offset.joint_map), default=-1)
    if theta_source.shape[0] <= needed:
        raise DimensionError(
            f"Source pose has {theta_source.shape[0]} joints, the map needs {needed + 1}",
            context={"shape": list(theta_source.shape)},
        )

    parents = offset.target_parents
    num_target = len(parents) if parents else max((t for _, t in offset.joint_map), default=-1) + 1
    if not parents:
        parents = [-1] * num_target
    by_target = {t: (s, Rotation.from_rotvec(d)) for (s, t), d in zip(offset.joint_map, offset.delta)}

    accumulated = [Rotation.identity()] * num_target
    theta_target = np.zeros((num_target, 3))
    for t in range(num_target):
        parent = accumulated[parents[t]] if parents[t] >= 0 else Rotation.identity()
        if t in by_target:
            s, delta = by_target[t]
            local = parent.inv() * Rotation.from_rotvec(theta_source[s]) * parent * delta
            theta_target[t] = local.as_rotvec()
            accumulated[t] = parent * delta
        else:
            accumulated[t] = parent
    return theta_target
