"""Synthetic model generation tool."""

from pathlib import Path
from typing import Any

from ..assets import save_asset, synth_model
from ..models import SynthSpec
from .base import BaseTool


class SynthModelTool(BaseTool):
    """Generate a deterministic synthetic model asset and write it as EHMA."""

    name = "synth_model"
    description = "Generate a deterministic synthetic body, head or composite model asset"
    parameters = {
        "output": {
            "type": "string",
            "description": "Destination EHMA file",
            "required": True,
        },
        "spec": {
            "type": "object",
            "description": "SynthSpec fields (v, j, s, e, k, seed, kind, head_v, ...)",
            "required": False,
        },
    }

    async def _execute(self, **kwargs: Any) -> dict[str, Any]:
        self._validate_parameters(kwargs, ["output"])
        spec = self._read_document(SynthSpec, kwargs.get("spec"))
        asset = synth_model(spec)

        output = Path(kwargs["output"])
        save_asset(asset, output)
        return {
            "path": str(output),
            "kind": asset.kind.value,
            "vertices": asset.num_vertices,
            "joints": asset.num_joints,
            "faces": int(asset.faces.shape[0]),
            "bytes": output.stat().st_size,
        }
