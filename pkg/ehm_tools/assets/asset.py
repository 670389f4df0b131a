"""In-memory model asset and its invariant checks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ehm_tools.models import AssetKind, ValidationReport, Violation

ROOT_PARENT = np.uint32(0xFFFFFFFF)
STOCHASTIC_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class ModelAsset:
    """Every tensor the forward model consumes for one model component.

    Dense tensors are float32/uint32 numpy arrays, regressors are CSR
    matrices. Assets are treated as immutable once built or loaded; arrays
    coming from :func:`~ehm_tools.assets.io.load_asset` are read-only views.

    A ``COMPOSITE`` asset is a body that also carries the head-composition
    tables and the embedded ``HEAD`` sub-asset it composes with.
    """

    kind: AssetKind
    template: np.ndarray
    faces: np.ndarray
    shape_dirs: np.ndarray
    expr_dirs: np.ndarray
    joint_regressor: sp.csr_matrix
    parents: np.ndarray
    skin_weights: np.ndarray
    keypoint_regressor: sp.csr_matrix
    joint_names: tuple[str, ...]
    keypoint_names: tuple[str, ...]
    head_attach_joint: int = 0
    keypoint_parts: np.ndarray | None = None
    hand_joint_ids: np.ndarray | None = None
    head_vertex_ids: np.ndarray | None = None
    seam_weights: np.ndarray | None = None
    lip_vertex_ids: np.ndarray | None = None
    pose_dirs: np.ndarray | None = None
    head: ModelAsset | None = field(default=None)

    @property
    def num_vertices(self) -> int:
        return int(self.template.shape[0])

    @property
    def num_joints(self) -> int:
        return int(self.parents.shape[0])

    @property
    def num_shape(self) -> int:
        return int(self.shape_dirs.shape[2])

    @property
    def num_expr(self) -> int:
        return int(self.expr_dirs.shape[2])

    @property
    def num_keypoints(self) -> int:
        return int(self.keypoint_regressor.shape[0])

    def parent_list(self) -> list[int]:
        """Parents as Python ints, root mapped to -1."""
        return [-1 if p == ROOT_PARENT else int(p) for p in self.parents]

    def hand_joints(self) -> list[int]:
        if self.hand_joint_ids is None:
            return []
        return [int(j) for j in self.hand_joint_ids]


def _first(mask: np.ndarray) -> int:
    return int(np.flatnonzero(mask)[0])


def _check_stochastic(
    name: str, rows: np.ndarray, out: list[Violation], nonneg: bool = False
) -> None:
    if nonneg and np.any(rows < 0):
        bad = np.any(rows < 0, axis=1)
        out.append(Violation(tensor=name, index=_first(bad), message="negative weight"))
    sums = rows.sum(axis=1, dtype=np.float64)
    off = np.abs(sums - 1.0) > STOCHASTIC_TOL
    if np.any(off):
        i = _first(off)
        out.append(
            Violation(tensor=name, index=i, message=f"row sums to {sums[i]:.9g}, not 1")
        )


def _check_index_table(
    name: str, ids: np.ndarray | None, bound: int, out: list[Violation]
) -> None:
    if ids is None:
        return
    ids = np.asarray(ids)
    bad = (ids < 0) | (ids >= bound)
    if np.any(bad):
        out.append(
            Violation(
                tensor=name,
                index=_first(bad),
                message=f"index out of range [0, {bound})",
            )
        )


def _check_csr(
    name: str, mat: sp.csr_matrix, rows: int, cols: int, out: list[Violation]
) -> bool:
    if mat.shape != (rows, cols):
        out.append(
            Violation(tensor=name, message=f"shape {mat.shape} != {(rows, cols)}")
        )
        return False
    indices = np.asarray(mat.indices)
    bad = (indices < 0) | (indices >= cols)
    if np.any(bad):
        out.append(
            Violation(tensor=name, index=_first(bad), message="column index out of range")
        )
        return False
    return True


def _validate_into(asset: ModelAsset, out: list[Violation], prefix: str = "") -> None:
    V = asset.template.shape[0] if asset.template.ndim == 2 else 0
    J = asset.parents.shape[0]

    def name(t: str) -> str:
        return prefix + t

    if asset.template.ndim != 2 or asset.template.shape[1] != 3:
        out.append(Violation(tensor=name("template"), message="must be V x 3"))
        return
    if not np.all(np.isfinite(asset.template)):
        bad = ~np.all(np.isfinite(asset.template), axis=1)
        out.append(
            Violation(tensor=name("template"), index=_first(bad), message="non-finite")
        )
    if J < 1:
        out.append(Violation(tensor=name("parents"), message="no joints"))
        return

    if asset.faces.size:
        if asset.faces.ndim != 2 or asset.faces.shape[1] != 3:
            out.append(Violation(tensor=name("faces"), message="must be F x 3"))
        else:
            _check_index_table(name("faces"), asset.faces.reshape(-1), V, out)

    for tname, dirs in (("shape_dirs", asset.shape_dirs), ("expr_dirs", asset.expr_dirs)):
        if dirs.ndim != 3 or dirs.shape[:2] != (V, 3):
            out.append(Violation(tensor=name(tname), message="must be V x 3 x N"))
    if asset.kind is not AssetKind.HEAD and asset.expr_dirs.ndim == 3:
        if asset.expr_dirs.shape[2] != 0:
            out.append(
                Violation(
                    tensor=name("expr_dirs"),
                    message="body assets carry no expression basis",
                )
            )

    if _check_csr(name("joint_regressor"), asset.joint_regressor, J, V, out):
        _check_stochastic(
            name("joint_regressor"), asset.joint_regressor.toarray(), out
        )

    if asset.parents[0] != ROOT_PARENT:
        out.append(Violation(tensor=name("parents"), index=0, message="root must be sentinel"))
    for j in range(1, J):
        p = asset.parents[j]
        if p == ROOT_PARENT or int(p) >= j:
            out.append(
                Violation(
                    tensor=name("parents"),
                    index=j,
                    message=f"parent {int(p)} is not an earlier joint (tree violation)",
                )
            )
            break

    if asset.skin_weights.shape != (V, J):
        out.append(
            Violation(
                tensor=name("skin_weights"),
                message=f"shape {asset.skin_weights.shape} != {(V, J)}",
            )
        )
    else:
        _check_stochastic(name("skin_weights"), asset.skin_weights, out, nonneg=True)

    K = asset.keypoint_regressor.shape[0]
    _check_csr(name("keypoint_regressor"), asset.keypoint_regressor, K, V, out)

    if len(asset.joint_names) != J:
        out.append(Violation(tensor=name("joint_names"), message="must list every joint"))
    if len(asset.keypoint_names) != K:
        out.append(
            Violation(tensor=name("keypoint_names"), message="must list every keypoint")
        )
    if asset.keypoint_parts is not None:
        parts = np.asarray(asset.keypoint_parts)
        if parts.shape != (K,):
            out.append(Violation(tensor=name("keypoint_parts"), message="must be length K"))
        elif np.any(parts > 1):
            out.append(
                Violation(
                    tensor=name("keypoint_parts"),
                    index=_first(parts > 1),
                    message="part label must be 0 (body) or 1 (hand)",
                )
            )

    _check_index_table(name("hand_joint_ids"), asset.hand_joint_ids, J, out)
    _check_index_table(name("lip_vertex_ids"), asset.lip_vertex_ids, V, out)

    if asset.pose_dirs is not None:
        if asset.pose_dirs.shape != (V, 3, 9 * (J - 1)):
            out.append(
                Violation(tensor=name("pose_dirs"), message="must be V x 3 x 9(J-1)")
            )

    if not 0 <= asset.head_attach_joint < J:
        out.append(
            Violation(
                tensor=name("head_attach_joint"),
                index=asset.head_attach_joint,
                message="attach joint out of range",
            )
        )

    has_ids = asset.head_vertex_ids is not None
    has_seam = asset.seam_weights is not None
    if has_ids != has_seam:
        out.append(
            Violation(
                tensor=name("seam_weights"),
                message="seam_weights must be present iff head_vertex_ids is",
            )
        )
    if asset.kind is AssetKind.COMPOSITE:
        if not has_ids or asset.head is None:
            out.append(
                Violation(
                    tensor=name("head_vertex_ids"),
                    message="composite assets need head_vertex_ids and a head",
                )
            )
    elif has_ids or asset.head is not None:
        out.append(
            Violation(
                tensor=name("head_vertex_ids"),
                message="only composite assets carry composition metadata",
            )
        )
    _check_index_table(name("head_vertex_ids"), asset.head_vertex_ids, V, out)
    if has_ids and has_seam:
        ids = np.asarray(asset.head_vertex_ids)
        seam = np.asarray(asset.seam_weights)
        if seam.shape != ids.shape:
            out.append(
                Violation(tensor=name("seam_weights"), message="one weight per head vertex")
            )
        else:
            bad = (seam < 0) | (seam > 1)
            if np.any(bad):
                out.append(
                    Violation(
                        tensor=name("seam_weights"),
                        index=_first(bad),
                        message="weight outside [0, 1]",
                    )
                )
        if asset.head is not None and asset.head.num_vertices != ids.shape[0]:
            out.append(
                Violation(
                    tensor="head.template",
                    message="head vertex count must equal len(head_vertex_ids)",
                )
            )

    if asset.head is not None:
        if asset.head.kind is not AssetKind.HEAD:
            out.append(Violation(tensor="head", message="embedded asset must be a head"))
        _validate_into(asset.head, out, prefix="head.")


def validate_asset(asset: ModelAsset) -> ValidationReport:
    """Check every asset invariant and report all violations.

    The report is empty iff the asset is usable by the forward model. Each
    violation names the tensor and, where meaningful, the first offending
    index.
    """
    violations: list[Violation] = []
    _validate_into(asset, violations)
    return ValidationReport(violations=violations)
