"""Deterministic desk-scale model assets.

Each joint owns one closed ellipsoid cluster spanning the bone from the joint
to its first child (or a short extension for leaves). The cluster's first
vertex sits exactly on the joint, so the joint regressor is one-hot and every
joint visibly moves its own vertices. Composite assets reuse the head joint's
cluster as the head sub-asset, expressed relative to the attach joint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ehm_tools.assets.asset import ROOT_PARENT, ModelAsset
from ehm_tools.exceptions import InvalidSpec
from ehm_tools.models import AssetKind, SynthSpec

SEAM_BAND = 0.3
PARENT_BLEND_BAND = 0.25
HEAD_LENGTH = 0.22
HEAD_RADIUS = 0.09
POSE_CORRECTIVE_SCALE = 0.01


@dataclass
class _Cluster:
    verts: np.ndarray  # n x 3
    t: np.ndarray  # axial parameter in [0, 1], 0 at the joint
    radial: np.ndarray  # n x 3 unit radial directions (zero at the poles)
    faces: np.ndarray  # local triangle indices
    axis: np.ndarray


def _perpendicular_frame(axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 0.0, 1.0])
    u = np.cross(axis, helper)
    u /= np.linalg.norm(u)
    return u, np.cross(axis, u)


def _zipper(a: list[int], b: list[int]) -> list[tuple[int, int, int]]:
    """Triangulate the band between two closed rings of arbitrary sizes."""
    faces = []
    i = j = 0
    na, nb = len(a), len(b)
    while i < na or j < nb:
        if j == nb or (i < na and (i + 1) / na <= (j + 1) / nb):
            faces.append((a[i % na], a[(i + 1) % na], b[j % nb]))
            i += 1
        else:
            faces.append((a[i % na], b[(j + 1) % nb], b[j % nb]))
            j += 1
    return faces


def _ellipsoid(
    start: np.ndarray, end: np.ndarray, radius: float, n: int, phase: float
) -> _Cluster:
    axis_vec = end - start
    length = float(np.linalg.norm(axis_vec))
    axis = axis_vec / length
    u, w = _perpendicular_frame(axis)
    center = 0.5 * (start + end)

    if n <= 2:
        verts = [start, end][:n]
        t = [0.0, 1.0][:n]
        return _Cluster(
            np.array(verts), np.array(t), np.zeros((n, 3)), np.zeros((0, 3), int), axis
        )

    with_far_pole = n >= 5
    ring_total = n - (2 if with_far_pole else 1)
    rings = 1 if n < 5 else max(1, min(int(round(np.sqrt(ring_total / 3))), ring_total // 3))
    sizes = [ring_total // rings + (1 if k < ring_total % rings else 0) for k in range(rings)]

    verts, ts, radial = [start], [0.0], [np.zeros(3)]
    ring_ids: list[list[int]] = []
    for k, m in enumerate(sizes):
        tk = (k + 1) / (rings + 1) if with_far_pole else 0.5
        axial = -np.cos(np.pi * tk) * 0.5 * length
        rad = np.sin(np.pi * tk) * radius
        ids = []
        for i in range(m):
            phi = 2 * np.pi * i / m + phase * k
            direction = np.cos(phi) * u + np.sin(phi) * w
            ids.append(len(verts))
            verts.append(center + axial * axis + rad * direction)
            ts.append(tk)
            radial.append(direction)
        ring_ids.append(ids)

    faces: list[tuple[int, int, int]] = []
    first = ring_ids[0]
    if len(first) == 2:
        faces.append((0, first[0], first[1]))
    else:
        faces.extend((0, first[i], first[(i + 1) % len(first)]) for i in range(len(first)))
    for a, b in zip(ring_ids, ring_ids[1:]):
        faces.extend(_zipper(a, b))
    last = ring_ids[-1]
    if with_far_pole:
        pole = len(verts)
        verts.append(end)
        ts.append(1.0)
        radial.append(np.zeros(3))
        faces.extend((pole, last[(i + 1) % len(last)], last[i]) for i in range(len(last)))
    elif len(last) == 3:
        faces.append((last[0], last[2], last[1]))

    return _Cluster(
        np.array(verts), np.array(ts), np.array(radial), np.array(faces, dtype=int), axis
    )


def _csr_rows(rows: list[list[tuple[int, float]]], cols: int) -> sp.csr_matrix:
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for row in rows:
        for col, value in row:
            indices.append(col)
            data.append(value)
        indptr.append(len(indices))
    return sp.csr_matrix(
        (
            np.array(data, dtype=np.float32),
            np.array(indices, dtype=np.int32),
            np.array(indptr, dtype=np.int32),
        ),
        shape=(len(rows), cols),
    )


def _pair_row(
    rng: np.random.Generator, candidates: np.ndarray
) -> list[tuple[int, float]]:
    if candidates.size == 1:
        return [(int(candidates[0]), 1.0)]
    a, b = sorted(int(x) for x in rng.choice(candidates, size=2, replace=False))
    u = float(np.float32(rng.uniform(0.3, 0.7)))
    return [(a, u), (b, float(np.float32(1.0) - np.float32(u)))]


def _normalized_rows(weights: np.ndarray) -> np.ndarray:
    weights = weights / weights.sum(axis=1, keepdims=True)
    return weights.astype(np.float32)


def _skeleton(
    rng: np.random.Generator, num_joints: int, head_joint: int | None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    parents = np.zeros(num_joints, dtype=np.int64)
    parents[0] = -1
    joints = np.zeros((num_joints, 3))
    bone_dirs = np.zeros((num_joints, 3))
    bone_dirs[0] = (0.0, 1.0, 0.0)
    for j in range(1, num_joints):
        parents[j] = rng.integers(max(0, j - 3), j)
        if j == head_joint:
            d = np.array([0.0, 1.0, 0.0]) + rng.normal(0.0, 0.1, 3)
        else:
            d = rng.normal(0.0, 1.0, 3)
            d[1] += 0.5
        d /= np.linalg.norm(d)
        bone_dirs[j] = d
        joints[j] = joints[parents[j]] + rng.uniform(0.12, 0.2) * d
    return parents, joints, bone_dirs


def _split_counts(total: int, parts: int) -> list[int]:
    return [total // parts + (1 if k < total % parts else 0) for k in range(parts)]


def _synth_head(
    cluster: _Cluster,
    template: np.ndarray,
    head_j: int,
    head_s: int,
    head_e: int,
    head_k: int,
    rng: np.random.Generator,
) -> ModelAsset:
    """Build a head asset over ``template`` (float32, pivot at the origin)."""
    n = template.shape[0]
    pos = template.astype(np.float64)
    face_region = np.flatnonzero((cluster.t >= SEAM_BAND) & (cluster.t < 1.0))
    if face_region.size < max(1, head_j - 1):
        face_region = np.arange(1, n)

    reg_rows: list[list[tuple[int, float]]] = [[(0, 1.0)]]
    picks = rng.choice(face_region, size=head_j - 1, replace=False) if head_j > 1 else []
    for v in picks:
        ring = np.flatnonzero(np.isclose(cluster.t, cluster.t[v]))
        opposite = int(ring[np.argmax(np.linalg.norm(pos[ring] - pos[v], axis=1))])
        if opposite == int(v):
            reg_rows.append([(int(v), 1.0)])
        else:
            lo, hi = sorted((int(v), opposite))
            w_lo = np.float32(0.7) if lo == int(v) else np.float32(0.3)
            reg_rows.append([(lo, float(w_lo)), (hi, float(np.float32(1.0) - w_lo))])
    joint_regressor = _csr_rows(reg_rows, n)
    rest_joints = joint_regressor.astype(np.float64) @ pos

    weights = np.ones((n, head_j))
    for k in range(1, head_j):
        d2 = np.sum((pos - rest_joints[k]) ** 2, axis=1)
        weights[:, k] = 3.0 * np.exp(-d2 / (2 * 0.04**2))
    skin_weights = _normalized_rows(weights)

    shape_dirs = np.zeros((n, 3, head_s))
    for i in range(head_s):
        shape_dirs[:, :, i] = (
            rng.normal(0.0, 0.01) * cluster.radial + rng.normal(0.0, 0.05) * pos
        )
    feature = skin_weights[:, 1] if head_j > 1 else (cluster.t > 0.5).astype(np.float64)
    expr_dirs = np.zeros((n, 3, head_e))
    for i in range(head_e):
        expr_dirs[:, :, i] = feature[:, None] * (
            rng.normal(0.0, 0.006, 3) + rng.normal(0.0, 0.004) * cluster.radial
        )

    kp_rows = [_pair_row(rng, face_region) for _ in range(head_k)]
    anchor = rest_joints[1] if head_j > 1 else pos[-1]
    lips = np.argsort(np.sum((pos - anchor) ** 2, axis=1), kind="stable")[: min(6, n)]

    joint_names = ["head_root", "jaw"] + [f"eye_{i:02d}" for i in range(head_j - 2)]
    parents = np.full(head_j, 0, dtype=np.uint32)
    parents[0] = ROOT_PARENT
    return ModelAsset(
        kind=AssetKind.HEAD,
        template=template,
        faces=cluster.faces.astype(np.uint32),
        shape_dirs=shape_dirs.astype(np.float32),
        expr_dirs=expr_dirs.astype(np.float32),
        joint_regressor=joint_regressor,
        parents=parents,
        skin_weights=skin_weights,
        keypoint_regressor=_csr_rows(kp_rows, n),
        joint_names=tuple(joint_names[:head_j]),
        keypoint_names=tuple(f"face_{i:02d}" for i in range(head_k)),
        head_attach_joint=0,
        lip_vertex_ids=np.sort(lips).astype(np.uint32),
    )


def _pose_dirs(
    rng: np.random.Generator,
    clusters: list[_Cluster],
    offsets: np.ndarray,
    parents: np.ndarray,
) -> np.ndarray:
    """Small radial bulges driven by each joint on its own and its parent's vertices."""
    V, J = int(offsets[-1]), len(clusters)
    dirs = np.zeros((V, 3, 9 * (J - 1)))
    for j in range(1, J):
        cols = slice(9 * (j - 1), 9 * j)
        for owner in (j, int(parents[j])):
            rows = slice(offsets[owner], offsets[owner + 1])
            weights = rng.normal(0.0, POSE_CORRECTIVE_SCALE, 9)
            dirs[rows, :, cols] = clusters[owner].radial[:, :, None] * weights
    return dirs.astype(np.float32)


def _check_spec(spec: SynthSpec) -> None:
    context = spec.model_dump(mode="json")
    if spec.j < 2:
        raise InvalidSpec("A model needs at least two joints", context=context)
    if spec.v < spec.j:
        raise InvalidSpec(
            f"V={spec.v} cannot give each of J={spec.j} joints a vertex",
            context=context,
        )
    if spec.kind is AssetKind.COMPOSITE:
        if spec.head_v < max(5, spec.head_j):
            raise InvalidSpec("head_v must be >= max(5, head_j)", context=context)
        if spec.v - spec.head_v < spec.j - 1:
            raise InvalidSpec("Not enough body vertices outside the head", context=context)
    if spec.kind is AssetKind.HEAD and spec.v < 5:
        raise InvalidSpec("A head needs at least 5 vertices", context=context)


def synth_model(spec: SynthSpec) -> ModelAsset:
    """Generate a deterministic, valid model asset from ``spec``.

    The result is a pure function of the spec (seed included).

    Raises:
        InvalidSpec: If the counts cannot produce a valid asset
    """
    _check_spec(spec)
    # Pose correctives draw from their own stream so enabling them leaves the rest unchanged.
    body_seq, head_seq, pose_seq = np.random.SeedSequence(spec.seed).spawn(3)
    rng = np.random.default_rng(body_seq)
    head_rng = np.random.default_rng(head_seq)
    head_s = spec.s if spec.head_s is None else spec.head_s

    if spec.kind is AssetKind.HEAD:
        cluster = _ellipsoid(
            np.zeros(3), np.array([0.0, HEAD_LENGTH, 0.0]), HEAD_RADIUS, spec.v, 0.3
        )
        return _synth_head(
            cluster,
            cluster.verts.astype(np.float32),
            spec.j,
            spec.s,
            spec.e,
            spec.k,
            head_rng,
        )

    composite = spec.kind is AssetKind.COMPOSITE
    J = spec.j
    head_joint = J - 1 if composite else None
    parents, joints, bone_dirs = _skeleton(rng, J, head_joint)

    if composite:
        counts = _split_counts(spec.v - spec.head_v, J - 1) + [spec.head_v]
    else:
        counts = _split_counts(spec.v, J)

    clusters: list[_Cluster] = []
    for j in range(J):
        children = np.flatnonzero(parents == j)
        if j == head_joint:
            end = joints[j] + HEAD_LENGTH * bone_dirs[j]
            radius = HEAD_RADIUS
        elif children.size:
            end = joints[children[0]]
            radius = rng.uniform(0.025, 0.05)
        else:
            end = joints[j] + rng.uniform(0.1, 0.18) * bone_dirs[j]
            radius = rng.uniform(0.025, 0.05)
        clusters.append(_ellipsoid(joints[j], end, radius, counts[j], rng.uniform(0, 1)))

    offsets = np.concatenate([[0], np.cumsum(counts)])
    V = int(offsets[-1])
    template = np.concatenate([c.verts for c in clusters]).astype(np.float32)
    faces = np.concatenate(
        [c.faces + offsets[j] for j, c in enumerate(clusters)]
    ).astype(np.uint32)

    skin = np.zeros((V, J))
    for j, c in enumerate(clusters):
        rows = np.arange(offsets[j], offsets[j + 1])
        blend = (
            0.5 * np.clip(PARENT_BLEND_BAND - c.t, 0.0, None) / PARENT_BLEND_BAND
            if j > 0
            else np.zeros_like(c.t)
        )
        skin[rows, j] = 1.0 - blend
        if j > 0:
            skin[rows, parents[j]] += blend
    skin_weights = _normalized_rows(skin)

    joint_regressor = _csr_rows([[(int(offsets[j]), 1.0)] for j in range(J)], V)

    shape_dirs = np.zeros((V, 3, spec.s))
    for i in range(spec.s):
        for j, c in enumerate(clusters):
            rows = slice(offsets[j], offsets[j + 1])
            shape_dirs[rows, :, i] = rng.normal(0.0, 0.01, 3)
            if j != head_joint:
                shape_dirs[rows, :, i] += rng.normal(0.0, 0.004) * c.radial

    leaves = [
        j for j in range(1, J) if j != head_joint and not np.any(parents == j)
    ]
    hands = sorted(leaves, reverse=True)[: spec.hand_joints]
    kp_rows, parts = [], []
    for k in range(spec.k):
        j = k % J
        kp_rows.append(_pair_row(rng, np.arange(offsets[j], offsets[j + 1])))
        parts.append(1 if j in hands else 0)

    joint_names = []
    for j in range(J):
        if j == 0:
            joint_names.append("root")
        elif j == head_joint:
            joint_names.append("head")
        elif j in hands:
            joint_names.append(f"hand_{hands.index(j):02d}")
        else:
            joint_names.append(f"joint_{j:02d}")

    u32_parents = parents.astype(np.int64)
    u32_parents[0] = int(ROOT_PARENT)
    body = dict(
        template=template,
        faces=faces,
        shape_dirs=shape_dirs.astype(np.float32),
        expr_dirs=np.zeros((V, 3, 0), dtype=np.float32),
        joint_regressor=joint_regressor,
        parents=u32_parents.astype(np.uint32),
        skin_weights=skin_weights,
        keypoint_regressor=_csr_rows(kp_rows, V),
        joint_names=tuple(joint_names),
        keypoint_names=tuple(f"kp_{k:02d}" for k in range(spec.k)),
        keypoint_parts=np.array(parts, dtype=np.uint32),
        hand_joint_ids=np.array(sorted(hands), dtype=np.uint32),
    )
    if spec.pose_dirs:
        body["pose_dirs"] = _pose_dirs(np.random.default_rng(pose_seq), clusters, offsets, parents)
    if not composite:
        return ModelAsset(kind=AssetKind.BODY, head_attach_joint=0, **body)

    head_rows = np.arange(offsets[head_joint], offsets[head_joint + 1])
    pivot = template[offsets[head_joint]].astype(np.float64)
    head_template = (template[head_rows].astype(np.float64) - pivot).astype(np.float32)
    head_cluster = clusters[head_joint]
    head = _synth_head(
        head_cluster,
        head_template,
        spec.head_j,
        head_s,
        spec.e,
        spec.head_k,
        head_rng,
    )
    seam = np.clip(head_cluster.t / SEAM_BAND, 0.0, 1.0).astype(np.float32)
    return ModelAsset(
        kind=AssetKind.COMPOSITE,
        head_attach_joint=int(head_joint),
        head_vertex_ids=head_rows.astype(np.uint32),
        seam_weights=seam,
        head=head,
        **body,
    )
