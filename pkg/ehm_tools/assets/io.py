"""Reader and writer for the EHMA model-asset format.

Layout (all integers little-endian)::

    b"EHMA" | u32 version | u64 manifest length | manifest (UTF-8 JSON) | data section

The data section starts immediately after the manifest, at byte
``16 + manifest length``. The manifest is a JSON object whose ``tensors`` key
lists every tensor as ``{name, dtype, shape, byte_offset, byte_len}``, with
offsets relative to the start of the data section and each aligned to 16
bytes. Its other keys hold what tensors cannot: asset kind, joint and keypoint
names, the head attach joint, sparse matrix shapes and, under ``head``, the
same object for an embedded head. Sparse matrices are stored as CSR triples named
``<matrix>.row_ptr``, ``<matrix>.col_idx`` and ``<matrix>.values``; the
embedded head of a composite asset uses the ``head.`` name prefix.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np
import scipy.sparse as sp

from ehm_tools.assets.asset import ModelAsset, validate_asset
from ehm_tools.exceptions import (
    AssetIoError,
    BadMagic,
    InvariantViolation,
    ShapeMismatch,
    VersionUnsupported,
)
from ehm_tools.logger import StructuredLogger
from ehm_tools.models import AssetKind

MAGIC = b"EHMA"
VERSION = 1
ALIGN = 16
_HEADER = struct.Struct("<4sIQ")
_DTYPES = {"f32": np.dtype("<f4"), "u32": np.dtype("<u4")}

_DENSE = ("template", "faces", "shape_dirs", "expr_dirs", "parents", "skin_weights")
_SPARSE = ("joint_regressor", "keypoint_regressor")
_OPTIONAL = (
    "keypoint_parts",
    "hand_joint_ids",
    "head_vertex_ids",
    "seam_weights",
    "lip_vertex_ids",
    "pose_dirs",
)
_FLOAT_TENSORS = {
    "template",
    "shape_dirs",
    "expr_dirs",
    "skin_weights",
    "seam_weights",
    "pose_dirs",
}

logger = StructuredLogger(__name__)


def _align(n: int) -> int:
    return (n + ALIGN - 1) // ALIGN * ALIGN


def _dtype_name(name: str) -> str:
    leaf = name.split(".")[-1]
    return "f32" if leaf in _FLOAT_TENSORS or leaf == "values" else "u32"


def _collect(asset: ModelAsset, prefix: str = "") -> list[tuple[str, np.ndarray]]:
    tensors: list[tuple[str, np.ndarray]] = []
    for name in _DENSE:
        tensors.append((prefix + name, getattr(asset, name)))
    for name in _SPARSE:
        mat: sp.csr_matrix = getattr(asset, name)
        tensors.append((f"{prefix}{name}.row_ptr", mat.indptr))
        tensors.append((f"{prefix}{name}.col_idx", mat.indices))
        tensors.append((f"{prefix}{name}.values", mat.data))
    for name in _OPTIONAL:
        value = getattr(asset, name)
        if value is not None:
            tensors.append((prefix + name, value))
    if asset.head is not None:
        tensors.extend(_collect(asset.head, prefix + "head."))
    return tensors


def _meta(asset: ModelAsset) -> dict[str, Any]:
    meta: dict[str, Any] = {
        "kind": asset.kind.value,
        "head_attach_joint": asset.head_attach_joint,
        "joint_names": list(asset.joint_names),
        "keypoint_names": list(asset.keypoint_names),
        "sparse_shapes": {
            name: list(getattr(asset, name).shape) for name in _SPARSE
        },
    }
    if asset.head is not None:
        meta["head"] = _meta(asset.head)
    return meta


def encode_asset(asset: ModelAsset) -> bytes:
    """Serialize an asset to EHMA bytes; identical assets give identical bytes."""
    entries = []
    chunks: list[bytes] = []
    offset = 0
    for name, array in _collect(asset):
        dtype = _dtype_name(name)
        payload = np.ascontiguousarray(array, dtype=_DTYPES[dtype]).tobytes()
        entries.append(
            {
                "name": name,
                "dtype": dtype,
                "shape": list(np.shape(array)),
                "byte_offset": offset,
                "byte_len": len(payload),
            }
        )
        padded = _align(len(payload))
        chunks.append(payload + b"\x00" * (padded - len(payload)))
        offset += padded

    manifest = dict(_meta(asset), tensors=entries)
    manifest_bytes = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    header = _HEADER.pack(MAGIC, VERSION, len(manifest_bytes))
    return header + manifest_bytes + b"".join(chunks)


def save_asset(asset: ModelAsset, path: str | Path) -> None:
    """Write an asset to ``path`` in the EHMA format.

    Raises:
        InvariantViolation: If the asset does not validate
        AssetIoError: If the file cannot be written
    """
    report = validate_asset(asset)
    if not report.ok:
        raise InvariantViolation(
            "Refusing to save an invalid asset",
            context={"violations": [v.model_dump() for v in report.violations]},
        )
    data = encode_asset(asset)
    try:
        Path(path).write_bytes(data)
    except OSError as e:
        raise AssetIoError(f"Cannot write asset: {e}", context={"path": str(path)}) from e
    logger.debug("Saved asset", context={"path": str(path), "bytes": len(data)})


def _read_tensors(
    data: bytes, manifest: dict[str, Any], data_start: int
) -> dict[str, np.ndarray]:
    tensors: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        name = entry["name"]
        if entry["dtype"] not in _DTYPES:
            raise ShapeMismatch(f"Unknown dtype for {name}", context={"tensor": name})
        dtype = _DTYPES[entry["dtype"]]
        shape = tuple(int(d) for d in entry["shape"])
        expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        begin = data_start + int(entry["byte_offset"])
        end = begin + int(entry["byte_len"])
        if entry["byte_len"] != expected or end > len(data):
            raise ShapeMismatch(
                f"Manifest shape {list(shape)} does not match payload of {name}",
                context={
                    "tensor": name,
                    "declared_bytes": expected,
                    "payload_bytes": int(entry["byte_len"]),
                },
            )
        count = expected // dtype.itemsize
        if count == 0:
            flat = np.empty(0, dtype=dtype)
        else:
            flat = np.frombuffer(data, dtype=dtype, count=count, offset=begin)
            if not flat.flags.aligned:
                flat = flat.copy()
                flat.flags.writeable = False
        tensors[name] = flat.reshape(shape)
    return tensors


def _csr(tensors: dict[str, np.ndarray], name: str, shape: list[int]) -> sp.csr_matrix:
    indptr = tensors[f"{name}.row_ptr"]
    indices = tensors[f"{name}.col_idx"]
    values = tensors[f"{name}.values"]
    rows, cols = shape
    if indptr.shape != (rows + 1,) or indices.shape != values.shape:
        raise ShapeMismatch(f"Malformed CSR triple for {name}", context={"tensor": name})
    if indptr[-1] != indices.shape[0] or np.any(np.diff(indptr.astype(np.int64)) < 0):
        raise ShapeMismatch(f"Malformed CSR row pointers for {name}", context={"tensor": name})
    if indices.size and int(indices.max()) >= cols:
        raise InvariantViolation(
            f"Column index out of range in {name}",
            context={"tensor": name, "index": int(np.argmax(indices >= cols))},
        )
    return sp.csr_matrix(
        (values, indices.astype(np.int32), indptr.astype(np.int32)), shape=(rows, cols)
    )


def _build(
    tensors: dict[str, np.ndarray], meta: dict[str, Any], prefix: str = ""
) -> ModelAsset:
    try:
        dense = {name: tensors[prefix + name] for name in _DENSE}
        sparse = {
            name: _csr(tensors, prefix + name, meta["sparse_shapes"][name])
            for name in _SPARSE
        }
    except KeyError as e:
        raise ShapeMismatch(f"Missing tensor {e}", context={"tensor": str(e)}) from e
    optional = {name: tensors.get(prefix + name) for name in _OPTIONAL}

    V = dense["template"].shape[0]
    J = dense["parents"].shape[0]
    for name, expected in (
        ("skin_weights", (V, J)),
        ("shape_dirs", (V, 3)),
        ("expr_dirs", (V, 3)),
    ):
        if dense[name].shape[: len(expected)] != expected:
            raise ShapeMismatch(
                f"{name} shape {list(dense[name].shape)} disagrees with V={V}, J={J}",
                context={"tensor": prefix + name},
            )

    head = None
    if "head" in meta:
        head = _build(tensors, meta["head"], prefix + "head.")
    return ModelAsset(
        kind=AssetKind(meta["kind"]),
        joint_names=tuple(meta["joint_names"]),
        keypoint_names=tuple(meta["keypoint_names"]),
        head_attach_joint=int(meta["head_attach_joint"]),
        head=head,
        **dense,
        **sparse,
        **optional,
    )


def decode_asset(data: bytes) -> ModelAsset:
    """Decode EHMA bytes into a validated asset."""
    if len(data) < _HEADER.size or data[:4] != MAGIC:
        raise BadMagic("Not an EHMA asset file", context={"magic": data[:4].hex()})
    _, version, manifest_len = _HEADER.unpack_from(data)
    if version != VERSION:
        raise VersionUnsupported(
            f"Unsupported asset version {version}", context={"version": version}
        )
    manifest_end = _HEADER.size + manifest_len
    if manifest_end > len(data):
        raise ShapeMismatch("Manifest extends past end of file")
    try:
        manifest = json.loads(data[_HEADER.size : manifest_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ShapeMismatch(f"Unreadable manifest: {e}") from e

    if not isinstance(manifest, dict) or not isinstance(manifest.get("tensors"), list):
        raise ShapeMismatch("Manifest has no tensor list")
    tensors = _read_tensors(data, manifest, manifest_end)
    asset = _build(tensors, manifest)
    report = validate_asset(asset)
    if not report.ok:
        raise InvariantViolation(
            f"Asset violates {len(report.violations)} invariant(s)",
            context={"violations": [v.model_dump() for v in report.violations]},
        )
    return asset


def load_asset(path: str | Path) -> ModelAsset:
    """Load and validate an EHMA asset file.

    Raises:
        AssetIoError: If the file cannot be read
        BadMagic: If the file is not in this format
        VersionUnsupported: If the format version is unknown
        ShapeMismatch: If manifest and payload disagree
        InvariantViolation: If the decoded asset fails validation
    """
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise AssetIoError(f"Cannot read asset: {e}", context={"path": str(path)}) from e
    asset = decode_asset(data)
    logger.debug(
        "Loaded asset",
        context={
            "path": str(path),
            "kind": asset.kind.value,
            "vertices": asset.num_vertices,
            "joints": asset.num_joints,
            "bytes": len(data),
        },
    )
    return asset
