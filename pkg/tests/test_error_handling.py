"""Tests for error handling functionality in ehm-tools."""

import pytest

from ehm_tools.exceptions import (
    AssetFormatError,
    AssetIoError,
    BadMagic,
    BadRegion,
    CompositionUnsupported,
    ConfigurationError,
    DegenerateBone,
    DegenerateInput,
    DimensionError,
    DivergenceDetected,
    EhmError,
    EmptyProjection,
    GradCheckFailed,
    InvalidSpec,
    InvariantViolation,
    MapError,
    MissingPart,
    MissingSupervision,
    NoActiveTerms,
    ShapeMismatch,
    VersionUnsupported,
)


class TestEhmError:
    """Test the base exception class."""

    def test_basic_exception_creation(self):
        """Test creating a basic exception with just a message."""
        error = EhmError("Test error message")
        assert str(error) == "Test error message"
        assert error.message == "Test error message"
        assert error.context == {}

    def test_exception_with_context(self):
        """Test creating an exception with additional context."""
        context = {"tensor": "parents", "index": 3}
        error = EhmError("Bad tree", context=context)
        assert str(error) == "Bad tree"
        assert error.context == context

    def test_exception_inheritance(self):
        """Test that EhmError inherits from Exception."""
        assert isinstance(EhmError("Test error"), Exception)


class TestSpecificExceptions:
    """Test specific exception types."""

    @pytest.mark.parametrize(
        "error_type",
        [
            AssetFormatError,
            ShapeMismatch,
            InvariantViolation,
            InvalidSpec,
            AssetIoError,
            DimensionError,
            CompositionUnsupported,
            DegenerateBone,
            MapError,
            MissingSupervision,
            NoActiveTerms,
            EmptyProjection,
            DivergenceDetected,
            MissingPart,
            DegenerateInput,
            BadRegion,
            ConfigurationError,
            GradCheckFailed,
        ],
    )
    def test_domain_errors_share_the_base(self, error_type):
        """Test every domain error is an EhmError with its message."""
        error = error_type("Something went wrong")
        assert isinstance(error, EhmError)
        assert str(error) == "Something went wrong"

    def test_format_errors(self):
        """Test header errors are asset format errors."""
        assert issubclass(BadMagic, AssetFormatError)
        assert issubclass(VersionUnsupported, AssetFormatError)
        assert not issubclass(ShapeMismatch, AssetFormatError)


class TestExceptionContext:
    """Test exception context handling."""

    def test_context_preservation(self):
        """Test that context is preserved across exception handling."""
        context = {"stage": {"name": "stage1", "status": "diverged"}, "loss": 1e12}
        error = DivergenceDetected("Stage stage1 diverged", context=context)

        try:
            raise error
        except EhmError as caught:
            assert caught.context == context
            assert caught.context["stage"]["status"] == "diverged"

    def test_empty_context_default(self):
        """Test that empty context defaults to empty dict."""
        error = MapError("Test message")
        assert error.context == {}
        assert isinstance(error.context, dict)

    def test_none_context_becomes_empty_dict(self):
        """Test that None context becomes empty dict."""
        error = MapError("Test message", context=None)
        assert error.context == {}


class TestExceptionChaining:
    """Test exception chaining scenarios."""

    def test_exception_from_os_error(self):
        """Test wrapping an OS error when an asset cannot be opened."""
        with pytest.raises(AssetIoError) as exc_info:
            try:
                raise FileNotFoundError("No such file or directory: 'smplx.ehma'")
            except FileNotFoundError as e:
                raise AssetIoError(
                    f"Cannot read asset: {e}", context={"original_error": str(e)}
                ) from e

        assert "Cannot read asset" in str(exc_info.value)
        assert "smplx.ehma" in exc_info.value.context["original_error"]
        assert isinstance(exc_info.value.__cause__, FileNotFoundError)

    def test_loader_reports_missing_file(self, tmp_path):
        """Test the asset loader raises AssetIoError for a missing path."""
        from ehm_tools.assets import load_asset

        with pytest.raises(AssetIoError):
            load_asset(tmp_path / "absent.ehma")
