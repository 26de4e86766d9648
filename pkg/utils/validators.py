"""Validation utilities shared by the advisory checks and the CLI."""

import shutil
from pathlib import Path
from typing import Dict, List, Optional

from utils.logging_setup import get_logger

logger = get_logger("validators")


class ValidationResult:
    """Result of a validation check."""

    def __init__(self, is_valid: bool, message: str, suggestions: Optional[List[str]] = None):
        self.is_valid = is_valid
        self.message = message
        self.suggestions = suggestions or []

    def to_dict(self) -> Dict[str, object]:
        """Convert the result to a JSON-friendly dictionary."""
        return {
            'is_valid': self.is_valid,
            'message': self.message,
            'suggestions': list(self.suggestions)
        }

    def __repr__(self) -> str:
        status = "ok" if self.is_valid else "FAIL"
        return f"ValidationResult({status}: {self.message})"


def validate_numeric_backend() -> ValidationResult:
    """
    Validate that the numerical stack is importable and recent enough.

    Returns:
        ValidationResult with the numpy/scipy status
    """
    try:
        import numpy as np
        import scipy
    except ImportError as e:
        return ValidationResult(
            False,
            f"Numerical backend missing: {e}",
            ["Install the requirements with 'pip install -r requirements.txt'"]
        )

    major, minor = (int(part) for part in np.__version__.split(".")[:2])
    if (major, minor) < (1, 24):
        return ValidationResult(
            False,
            f"numpy {np.__version__} is too old (need >= 1.24)",
            ["Upgrade numpy: 'pip install -U numpy'"]
        )

    logger.debug(f"Numerical backend: numpy {np.__version__}, scipy {scipy.__version__}")
    return ValidationResult(True, f"numpy {np.__version__}, scipy {scipy.__version__}")


def validate_output_directory(output_dir: Path) -> ValidationResult:
    """
    Validate and prepare output directory.

    Args:
        output_dir: Output directory path

    Returns:
        ValidationResult with directory status
    """
    try:
        output_dir.mkdir(parents=True, exist_ok=True)

        # Test write permission
        test_file = output_dir / ".test_write"
        test_file.write_text("test")
        test_file.unlink()

        return ValidationResult(True, f"Output directory ready: {output_dir}")

    except PermissionError:
        return ValidationResult(
            False,
            f"Cannot write to output directory: {output_dir}",
            [
                "Choose a different output directory with --out",
                "Check directory permissions"
            ]
        )
    except OSError as e:
        return ValidationResult(
            False,
            f"Error preparing output directory: {str(e)}",
            ["Check disk space", "Choose a different location"]
        )


def validate_disk_space(path: Path, required_mb: float = 50) -> ValidationResult:
    """
    Validate available disk space.

    Args:
        path: Path to check disk space for
        required_mb: Required space in megabytes

    Returns:
        ValidationResult with disk space status
    """
    try:
        stat = shutil.disk_usage(path)
        available_mb = stat.free / (1024 * 1024)

        if available_mb < required_mb:
            return ValidationResult(
                False,
                f"Insufficient disk space. Available: {available_mb:.1f}MB, Required: {required_mb:.1f}MB",
                ["Free up disk space", "Choose a different output location"]
            )

        return ValidationResult(
            True,
            f"Sufficient disk space available: {available_mb:.1f}MB"
        )

    except OSError as e:
        return ValidationResult(
            False,
            f"Error checking disk space: {str(e)}",
            ["Check if path is accessible"]
        )


def validate_system_requirements(output_dir: Path = Path("results")) -> Dict[str, ValidationResult]:
    """
    Validate all system requirements for running an experiment.

    Args:
        output_dir: Directory the experiment will write into

    Returns:
        Dictionary of validation results by component
    """
    results = {}
    results["numeric_backend"] = validate_numeric_backend()
    results["output_dir"] = validate_output_directory(output_dir)
    if output_dir.exists():
        results["disk_space"] = validate_disk_space(output_dir)
    return results
