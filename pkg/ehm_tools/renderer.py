"""Differentiable soft-silhouette rasterizer and mask I/O.

Each triangle contributes ``sigmoid(d / sigma)`` coverage to a pixel, where
``d`` is the signed distance from the pixel centre to the triangle (positive
inside). Coverages combine as independent events, which in log space is

    occupancy = 1 - exp(-sum(softplus(d / sigma)))

Only pixel/face pairs within ``CUTOFF * sigma`` of the face's bounding box
(found through a uniform grid of ``CELL`` pixel cells) are evaluated.
"""

from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor

from ehm_tools.body.camera import Camera, project
from ehm_tools.body.model import MeshState
from ehm_tools.exceptions import AssetIoError, ConfigurationError, EmptyProjection
from ehm_tools.logger import StructuredLogger
from ehm_tools.models import RasterConfig

CELL = 8
CUTOFF = 20.0
CHUNK = 1 << 20
_EPS = 1e-12

logger = StructuredLogger(__name__)


def _pairs(tri: Tensor, cfg: RasterConfig) -> tuple[Tensor, Tensor]:
    """Candidate (face, pixel) pairs from the face bounding boxes."""
    margin = CUTOFF * cfg.sigma
    with torch.no_grad():
        lo = tri.min(dim=1).values - margin
        hi = tri.max(dim=1).values + margin
    cells_x = (cfg.width + CELL - 1) // CELL
    cells_y = (cfg.height + CELL - 1) // CELL
    cx0 = torch.clamp(torch.floor(lo[:, 0] / CELL), 0, cells_x).long()
    cy0 = torch.clamp(torch.floor(lo[:, 1] / CELL), 0, cells_y).long()
    cx1 = torch.clamp(torch.floor(hi[:, 0] / CELL) + 1, 0, cells_x).long()
    cy1 = torch.clamp(torch.floor(hi[:, 1] / CELL) + 1, 0, cells_y).long()
    span_x = (cx1 - cx0).clamp(min=0)
    span_y = (cy1 - cy0).clamp(min=0)
    counts = span_x * span_y

    face = torch.repeat_interleave(torch.arange(tri.shape[0]), counts)
    if face.numel() == 0:
        empty = torch.zeros(0, dtype=torch.long)
        return empty, empty
    starts = torch.cumsum(counts, 0) - counts
    local = torch.arange(face.numel()) - starts[face]
    cell_x = cx0[face] + local % span_x[face]
    cell_y = cy0[face] + local // span_x[face]

    offsets = torch.arange(CELL)
    px = (cell_x[:, None, None] * CELL + offsets[None, None, :]).expand(-1, CELL, CELL)
    py = (cell_y[:, None, None] * CELL + offsets[None, :, None]).expand(-1, CELL, CELL)
    face = face[:, None, None].expand(-1, CELL, CELL)
    keep = (px < cfg.width) & (py < cfg.height)
    return face[keep], py[keep] * cfg.width + px[keep]


def _signed_distance(tri: Tensor, points: Tensor) -> Tensor:
    """Signed distance from each point to its triangle, positive inside."""
    d2 = []
    cross = []
    for i in range(3):
        a = tri[:, i]
        edge = tri[:, (i + 1) % 3] - a
        rel = points - a
        t = ((rel * edge).sum(-1) / (edge * edge).sum(-1).clamp(min=_EPS)).clamp(0.0, 1.0)
        diff = rel - t[:, None] * edge
        d2.append((diff * diff).sum(-1))
        cross.append(edge[:, 0] * rel[:, 1] - edge[:, 1] * rel[:, 0])
    dist = torch.sqrt(torch.stack(d2).min(dim=0).values + _EPS)
    c = torch.stack(cross)
    inside = (c >= 0).all(dim=0) | (c <= 0).all(dim=0)
    return torch.where(inside, dist, -dist)


def soft_silhouette(points2d: Tensor, faces: Tensor, cfg: RasterConfig) -> Tensor:
    """Rasterize projected vertices (V x 2 px) into an H x W occupancy image."""
    tri = points2d[faces]
    face_idx, pix_idx = _pairs(tri, cfg)
    cols = (pix_idx % cfg.width).to(points2d.dtype) + 0.5
    rows = torch.div(pix_idx, cfg.width, rounding_mode="floor").to(points2d.dtype) + 0.5
    centres = torch.stack([cols, rows], dim=-1)

    total = points2d.new_zeros(cfg.height * cfg.width)
    for start in range(0, face_idx.numel(), CHUNK):
        stop = start + CHUNK
        d = _signed_distance(tri[face_idx[start:stop]], centres[start:stop])
        total = total.index_add(0, pix_idx[start:stop], F.softplus(d / cfg.sigma))
    return (1.0 - torch.exp(-total)).reshape(cfg.height, cfg.width)


def rasterize_soft_silhouette(
    state: MeshState, faces: Tensor, camera: Camera, cfg: RasterConfig
) -> Tensor:
    """Render the soft silhouette of a posed mesh.

    Faces touching a vertex behind a perspective camera are dropped.

    Raises:
        EmptyProjection: If no vertex projects validly
    """
    uv, valid = project(camera, state.vertices)
    if not bool(valid.any()):
        raise EmptyProjection(
            "No vertex projects in front of the camera",
            context={"vertices": int(valid.numel())},
        )
    faces = faces[valid[faces].all(dim=1)]
    image = soft_silhouette(uv, faces, cfg)
    if logger.is_debug():
        logger.debug(
            "Rasterized silhouette",
            context={"faces": int(faces.shape[0]), "coverage": float(image.detach().mean())},
        )
    return image


def save_png(path: str | Path, image: Tensor | np.ndarray) -> None:
    """Write an image in [0, 1] as an 8-bit grayscale PNG."""
    array = image.detach().cpu().numpy() if isinstance(image, Tensor) else np.asarray(image)
    pixels = np.clip(np.rint(array * 255.0), 0, 255).astype(np.uint8)
    if not cv2.imwrite(str(path), pixels):
        raise AssetIoError("Cannot write PNG", context={"path": str(path)})


def save_raw(path: str | Path, image: Tensor | np.ndarray) -> None:
    """Dump an image as little-endian float32, row-major, without a header."""
    array = image.detach().cpu().numpy() if isinstance(image, Tensor) else np.asarray(image)
    try:
        array.astype("<f4").tofile(str(path))
    except OSError as e:
        raise AssetIoError(f"Cannot write raw image: {e}", context={"path": str(path)}) from e


def load_mask(path: str | Path, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Read a binary silhouette mask from PNG or raw float32.

    Raw files carry no header, so ``shape`` (height, width) is required for
    them. Values are thresholded at 0.5.
    """
    path = Path(path)
    if path.suffix.lower() == ".png":
        pixels = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
        if pixels is None:
            raise AssetIoError("Cannot read PNG mask", context={"path": str(path)})
        values = pixels.astype(np.float64) / 255.0
    else:
        if shape is None:
            raise ConfigurationError(
                "Raw float32 masks need an explicit height and width",
                context={"path": str(path)},
            )
        try:
            values = np.fromfile(str(path), dtype="<f4").astype(np.float64)
        except OSError as e:
            raise AssetIoError(f"Cannot read mask: {e}", context={"path": str(path)}) from e
        if values.size != shape[0] * shape[1]:
            raise ConfigurationError(
                f"Raw mask has {values.size} values, expected {shape[0] * shape[1]}",
                context={"path": str(path)},
            )
        values = values.reshape(shape)
    if shape is not None and values.shape != tuple(shape):
        raise ConfigurationError(
            f"Mask is {values.shape}, expected {tuple(shape)}", context={"path": str(path)}
        )
    return (values > 0.5).astype(np.float64)
