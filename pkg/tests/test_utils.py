"""Tests for utility functions."""

import json
import logging

import numpy as np
import pytest

from core.results import Manifest, write_json, write_rows, write_rows_csv
from utils.logging_setup import APP_NAME, get_logger, setup_logging
from utils.paths import generate_output_dir, sanitize_filename
from utils.validators import (
    ValidationResult, validate_disk_space, validate_numeric_backend,
    validate_output_directory, validate_system_requirements
)


class TestPathUtils:
    """Test path utility functions."""

    def test_sanitize_filename(self):
        """Test filename sanitization."""
        assert sanitize_filename("test<>file") == "test_file"
        assert sanitize_filename("poly:alpha=0.4") == "poly_alpha_0.4"
        assert sanitize_filename("iso:d=1,c=1") == "iso_d_1_c_1"
        assert sanitize_filename("clt run") == "clt_run"
        assert sanitize_filename("") == "untitled"
        assert sanitize_filename("   ") == "untitled"

    def test_generate_output_dir(self, tmp_path):
        """Default pattern is <base>/<kind>_<name>_seed<seed>."""
        out = generate_output_dir(tmp_path, "clt-replicates", "rlmc x^2", 7)
        assert out == tmp_path / "clt-replicates_rlmc_x^2_seed7"
        assert out.is_dir()

        custom = generate_output_dir(tmp_path, "bias-sweep", "sweep", 3, pattern="{base}/{seed}/{name}")
        assert custom == tmp_path / "3" / "sweep"


class TestValidators:
    """Test validation functions."""

    def test_numeric_backend(self):
        result = validate_numeric_backend()
        assert result.is_valid
        assert np.__version__ in result.message

    def test_output_directory(self, tmp_path):
        target = tmp_path / "nested" / "out"
        result = validate_output_directory(target)
        assert result.is_valid
        assert target.is_dir()
        assert not (target / ".test_write").exists()

    def test_disk_space(self, tmp_path):
        assert validate_disk_space(tmp_path, required_mb=1).is_valid
        assert not validate_disk_space(tmp_path, required_mb=1e15).is_valid

    def test_system_requirements(self, tmp_path):
        results = validate_system_requirements(tmp_path)
        assert set(results) == {"numeric_backend", "output_dir", "disk_space"}

    def test_validation_result_dict(self):
        result = ValidationResult(False, "u outside window", ["Use u = 1/M"])
        assert result.to_dict() == {'is_valid': False, 'message': "u outside window", 'suggestions': ["Use u = 1/M"]}
        assert "FAIL" in repr(result)


class TestLogging:
    """Test logging setup."""

    def test_console_only(self):
        logger = setup_logging(log_dir=None, log_level=logging.WARNING)
        assert logger.name == APP_NAME
        assert len(logger.handlers) == 1
        assert logger.level == logging.WARNING

    def test_file_handler(self, tmp_path):
        logger = setup_logging(log_dir=tmp_path / "logs")
        try:
            assert len(logger.handlers) == 2
            get_logger("tests").info("hello")
            for handler in logger.handlers:
                handler.flush()
            files = list((tmp_path / "logs").glob(f"{APP_NAME}-*.log"))
            assert len(files) == 1
            assert "hello" in files[0].read_text()
        finally:
            for handler in logger.handlers:
                handler.close()
            logger.handlers.clear()

    def test_child_logger(self):
        assert get_logger("clt").name == f"{APP_NAME}.clt"


class TestResultWriters:
    """Test deterministic result files."""

    def test_csv_cells(self, tmp_path):
        rows = [{'n': 10, 'estimate': 0.1, 'diverged': False, 'bound': None},
                {'n': np.int64(20), 'estimate': np.float64(1.0 / 3.0), 'diverged': True}]
        path = write_rows_csv(tmp_path / "rows.csv", ['n', 'estimate', 'diverged', 'bound'], rows)
        assert path.read_text() == "n,estimate,diverged,bound\n10,0.1,false,\n20,0.3333333333333333,true,\n"

    def test_json_rows(self, tmp_path):
        path = write_rows(tmp_path / "results", "json", ['a'], [{'a': np.float64(2.5), 'b': 1}])
        assert path.name == "results.json"
        assert json.loads(path.read_text()) == [{'a': 2.5}]

    def test_json_non_finite(self, tmp_path):
        path = write_json(tmp_path / "summary.json", {'x': float('inf'), 'y': np.arange(2)})
        assert json.loads(path.read_text()) == {'x': "inf", 'y': [0, 1]}

    def test_manifest(self, tmp_path):
        manifest = Manifest(config={'seed': 1}, seed=1, stream_ids=[0, 1], partial=True, exit_code=2)
        data = json.loads(manifest.write(tmp_path).read_text())
        assert data['partial'] is True
        assert data['exit_code'] == 2
        assert set(data['versions']) == {"langevin-clt", "python", "numpy", "scipy"}


if __name__ == "__main__":
    pytest.main([__file__])
