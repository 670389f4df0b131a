"""Base tool class for ehm-tools.

Every command of the CLI and every MCP tool is a :class:`BaseTool`. The base
class provides the shared logging, error wrapping, timing and input
validation so that both surfaces behave identically.
"""

import json
import time
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, TypeVar

from pydantic import BaseModel, ValidationError

from ..assets import load_asset
from ..assets.asset import ModelAsset
from ..exceptions import AssetIoError, ConfigurationError, EhmError
from ..logger import StructuredLogger

DocumentT = TypeVar("DocumentT", bound=BaseModel)


class BaseTool(ABC):
    """Base class for all ehm-tools commands.

    This class provides common functionality including:
    - Structured logging with context
    - Error handling and wrapping
    - Parameter and path validation
    - Execution timing
    """

    name: str = ""
    description: str = ""
    parameters: dict[str, dict[str, Any]] = {}

    def __init__(self, name: str | None = None) -> None:
        """Initialize the base tool.

        Args:
            name: The name of the tool, defaults to the class attribute
        """
        self.name = name or self.name
        self.logger = StructuredLogger(f"ehm_tools.tools.{self.name}")

    async def execute(self, **kwargs: Any) -> Any:
        """Execute the tool with the given parameters.

        This method wraps the actual implementation with logging,
        error handling, and timing.

        Args:
            **kwargs: Tool-specific parameters

        Returns:
            Tool-specific result

        Raises:
            EhmError: If execution fails
        """
        start_time = time.time()

        context = {"tool": self.name, "parameters": kwargs}

        self.logger.info("Starting execution", context=context)

        try:
            result = await self._execute(**kwargs)

            duration_ms = (time.time() - start_time) * 1000
            completion_context = {"tool": self.name, "duration_ms": duration_ms}

            self.logger.info("Execution completed", context=completion_context)
            return result

        except Exception as e:
            duration_ms = (time.time() - start_time) * 1000
            error_context = {
                "tool": self.name,
                "duration_ms": duration_ms,
                "error_type": type(e).__name__,
                "error_message": str(e),
            }

            self.logger.error("Execution failed", context=error_context)

            # Re-raise ehm-tools errors as-is
            if isinstance(e, EhmError):
                raise

            if isinstance(e, ValidationError):
                raise ConfigurationError(
                    f"Invalid document: {e.error_count()} validation error(s)",
                    context={"errors": json.loads(e.json())},
                ) from e

            # Wrap other exceptions
            raise EhmError(f"Tool {self.name} execution failed: {e}") from e

    @abstractmethod
    async def _execute(self, **kwargs: Any) -> Any:
        """Execute the tool's core functionality.

        Args:
            **kwargs: Tool-specific parameters

        Returns:
            Tool-specific result
        """
        pass

    def _validate_path(self, path: str | Path) -> Path:
        """Validate that a path exists and is accessible.

        Raises:
            AssetIoError: If the path doesn't exist
        """
        path = Path(path)
        if not path.exists():
            raise AssetIoError(f"Path does not exist: {path}", context={"path": str(path)})
        return path

    def _validate_parameters(self, provided: dict[str, Any], required: list[str]) -> None:
        """Validate that all required parameters are provided.

        Raises:
            ConfigurationError: If required parameters are missing
        """
        missing = [param for param in required if provided.get(param) is None]

        if missing:
            raise ConfigurationError(
                f"Missing required parameters: {', '.join(missing)}",
                context={
                    "missing_parameters": missing,
                    "provided_parameters": list(provided.keys()),
                    "required_parameters": required,
                },
            )

    def _load_asset(self, path: str | Path) -> ModelAsset:
        return load_asset(self._validate_path(path))

    def _read_document(
        self, model: type[DocumentT], source: str | Path | dict[str, Any] | None
    ) -> DocumentT:
        """Validate a document given inline, as a JSON file path, or absent (defaults)."""
        if source is None:
            return model()
        if isinstance(source, dict):
            return model.model_validate(source)
        path = self._validate_path(source)
        try:
            return model.model_validate_json(path.read_text())
        except OSError as e:
            raise AssetIoError(f"Cannot read {path}: {e}", context={"path": str(path)}) from e

    def _write_document(self, document: BaseModel, path: str | Path | None) -> None:
        if path is None:
            return
        try:
            Path(path).write_text(document.model_dump_json(indent=2))
        except OSError as e:
            raise AssetIoError(f"Cannot write {path}: {e}", context={"path": str(path)}) from e
