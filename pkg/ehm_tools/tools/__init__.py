"""Command implementations shared by the CLI and the MCP server."""

from .assets import SynthModelTool
from .base import BaseTool
from .evaluate import EvaluateTool
from .fitting import FitTool, GradCheckTool, RefineLabelsTool
from .model import BenchTool, ForwardTool
from .transfer import TransferTool

__all__ = [
    "BaseTool",
    "BenchTool",
    "EvaluateTool",
    "FitTool",
    "ForwardTool",
    "GradCheckTool",
    "RefineLabelsTool",
    "SynthModelTool",
    "TransferTool",
]
