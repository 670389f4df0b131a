"""MCP server exposing the model engine as tools."""

import json
from typing import Any

from mcp.server import Server
from mcp.types import TextContent, Tool

from ehm_tools import __version__
from ehm_tools.exceptions import EhmError
from ehm_tools.logger import StructuredLogger
from ehm_tools.models import ErrorResponse, HealthCheckResponse, ServerInfo, ToolInfo
from ehm_tools.tools import (
    BaseTool,
    EvaluateTool,
    ForwardTool,
    GradCheckTool,
    SynthModelTool,
)

logger = StructuredLogger(__name__)


def _input_schema(parameters: dict[str, dict[str, Any]]) -> dict[str, Any]:
    properties = {
        name: {"type": spec["type"], "description": spec["description"]}
        for name, spec in parameters.items()
    }
    required = [name for name, spec in parameters.items() if spec.get("required")]
    return {"type": "object", "properties": properties, "required": required}


class EhmServer:
    """MCP server providing forward, evaluation, synthesis and gradient checks."""

    def __init__(self) -> None:
        """Initialize the server and register the default tools."""
        self.name = "ehm-tools"
        self.version = __version__
        self.tools: dict[str, ToolInfo] = {}
        self.handlers: dict[str, BaseTool] = {}
        self._server: Any = Server(self.name)

        for tool in (ForwardTool(), EvaluateTool(), SynthModelTool(), GradCheckTool()):
            self.add_tool(tool)

        # Register server handlers
        self._register_handlers()

    def _register_handlers(self) -> None:
        """Register MCP server handlers."""

        @self._server.list_tools()  # type: ignore[misc]
        async def handle_list_tools() -> list[Tool]:
            """Handle list tools request."""
            return await self.list_tools()

        @self._server.call_tool()  # type: ignore[misc]
        async def handle_call_tool(name: str, arguments: dict[str, Any]) -> list[TextContent]:
            """Handle tool call request."""
            result = await self.call_tool(name, arguments)
            return [TextContent(type="text", text=json.dumps(result, default=str))]

    async def call_tool(self, name: str, arguments: dict[str, Any] | None) -> dict[str, Any]:
        """Dispatch a tool call; errors come back as an ``ErrorResponse`` payload."""
        if name == "health_check":
            return (await self.health_check()).model_dump(mode="json")
        handler = self.handlers.get(name)
        if handler is None:
            raise ValueError(f"Unknown tool: {name}")
        try:
            result: dict[str, Any] = await handler.execute(**(arguments or {}))
            return result
        except EhmError as e:
            return ErrorResponse(
                error_type=type(e).__name__, message=e.message, details=e.context or None
            ).model_dump(mode="json")

    async def health_check(self) -> HealthCheckResponse:
        """Perform health check and return server status."""
        return HealthCheckResponse(
            status="healthy", server_name=self.name, version=self.version
        )

    async def list_tools(self) -> list[Tool]:
        """List all available tools."""
        return [
            Tool(
                name=info.name,
                description=info.description,
                inputSchema=_input_schema(info.parameters),
            )
            for info in self.tools.values()
        ]

    async def startup(self) -> None:
        """Server startup process."""
        logger.info("EHM server starting up", context={"version": self.version})

    async def shutdown(self) -> None:
        """Server shutdown process."""
        logger.info("EHM server shutting down")

    def get_server_info(self) -> ServerInfo:
        """Get structured server information."""
        return ServerInfo(
            name=self.name, version=self.version, tools=list(self.tools.keys())
        )

    def add_tool(self, tool: BaseTool) -> None:
        """Register a tool implementation under its name."""
        self.handlers[tool.name] = tool
        self.register_tool(
            tool.name,
            ToolInfo(name=tool.name, description=tool.description, parameters=tool.parameters),
        )

    def register_tool(self, name: str, tool_info: ToolInfo) -> None:
        """Register tool metadata with the server."""
        self.tools[name] = tool_info
        logger.info("Registered tool", context={"tool": name})

    async def run(self) -> None:
        """Serve over stdio until the client disconnects."""
        from mcp.server.stdio import stdio_server

        await self.startup()
        try:
            async with stdio_server() as (read_stream, write_stream):
                await self._server.run(
                    read_stream,
                    write_stream,
                    self._server.create_initialization_options(),
                )
        finally:
            await self.shutdown()


def create_server() -> EhmServer:
    """Factory function to create a new server instance."""
    return EhmServer()


async def main() -> None:
    """Main entry point for running the server."""
    server = create_server()
    await server.run()


if __name__ == "__main__":
    import asyncio

    asyncio.run(main())
