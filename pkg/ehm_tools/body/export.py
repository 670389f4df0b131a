"""ASCII OBJ mesh export."""

from pathlib import Path

import numpy as np

from ehm_tools.exceptions import AssetIoError


def write_obj(path: str | Path, vertices: np.ndarray, faces: np.ndarray) -> None:
    """Write vertices (V x 3) and zero-based triangle indices (F x 3) as OBJ."""
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in np.asarray(vertices, dtype=np.float64)]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in np.asarray(faces, dtype=np.int64)]
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as e:
        raise AssetIoError(f"Cannot write mesh: {e}", context={"path": str(path)}) from e


def read_obj_vertices(path: str | Path) -> np.ndarray:
    """Read the ``v`` records of an OBJ file as a V x 3 array."""
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise AssetIoError(f"Cannot read mesh: {e}", context={"path": str(path)}) from e
    rows = [line.split()[1:4] for line in text.splitlines() if line.startswith("v ")]
    return np.array(rows, dtype=np.float64).reshape(-1, 3)
