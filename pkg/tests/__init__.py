"""Tests for mcp-pytest-tools."""
