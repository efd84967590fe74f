"""
Module to test reading *ini files: run configurations and object template headers.

This module contains tests for:
- KeyValueReader: sectioned key/value files
- TemplateHeaderReader: template.ini headers with number conversion
- write_ini: writing sections back in the same layout
"""
import logging

import pytest

from hoiModule.iniFiles.read_ini import KeyValueReader, TemplateHeaderReader, write_ini
from hoiModule.utils.errors import ConfigError, DataError


@pytest.fixture
def run_file(tmp_path):
    """Defining a mock run configuration file"""
    mock_file_path = tmp_path / "run.ini"
    mock_file_path.write_text("""
; refinement of the test split
[paths]
data_root = data/synthetic
run_dir   = runs/a

# guidance weights
[guidance]
rho          = 10
lambda_ho    = 1.0
max_grad_norm = none

[sweep]
tau = 25 50 100
""", encoding="utf-8")
    return str(mock_file_path)


@pytest.fixture
def template_file(tmp_path):
    """Defining a mock template.ini file"""
    mock_file_path = tmp_path / "template.ini"
    mock_file_path.write_text("""[template]
id = box_carry
kind = box
half_extents = 0.12 0.12 0.12
spacing = 2.5e-3
""", encoding="utf-8")
    return str(mock_file_path)


def test_file_path_key_value(run_file):
    """Test the file path"""
    reader = KeyValueReader(run_file)
    assert reader.file_path == run_file


def test_read_sections(run_file):
    """Test reading the sections: raw strings in file order"""
    reader = KeyValueReader(run_file)
    expected_sections = {
        'paths': {'data_root': 'data/synthetic', 'run_dir': 'runs/a'},
        'guidance': {'rho': '10', 'lambda_ho': '1.0', 'max_grad_norm': 'none'},
        'sweep': {'tau': '25 50 100'},
    }
    assert reader.sections == expected_sections
    assert list(reader.sections) == ['paths', 'guidance', 'sweep']


def test_get_value(run_file):
    """Test getting a specific value"""
    reader = KeyValueReader(run_file)
    assert reader.get_value("guidance", "rho") == '10'
    assert reader.get_value("sweep", "tau") == '25 50 100'


def test_invalid_key(run_file, caplog):
    """Test getting an invalid key"""
    reader = KeyValueReader(run_file)
    with caplog.at_level(logging.WARNING):
        assert reader.get_value("guidance", "invalid_key") is None
        assert reader.get_value("invalid_section", "rho") is None
    assert "guidance.invalid_key" in caplog.text


def test_invalid_key_type(run_file):
    """Test getting a key with invalid type"""
    reader = KeyValueReader(run_file)
    with pytest.raises(TypeError):
        reader.get_value("guidance", 123)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        KeyValueReader(str(tmp_path / "missing.ini"))


@pytest.mark.parametrize("content", [
    "rho = 1\n",
    "[guidance]\nrho = 1\nrho = 2\n",
    "[guidance]\nthis line is not a key\n",
])
def test_malformed_files(tmp_path, content):
    """Keys outside a section, duplicated keys and stray lines are configuration errors"""
    path = tmp_path / "bad.ini"
    path.write_text(content, encoding="utf-8")
    with pytest.raises(ConfigError):
        KeyValueReader(str(path))


def test_read_template_header(template_file):
    """Numbers are converted, text stays text"""
    reader = TemplateHeaderReader(template_file)
    expected_header = {
        'id': 'box_carry',
        'kind': 'box',
        'half_extents': [0.12, 0.12, 0.12],
        'spacing': 0.0025,
    }
    assert reader.header == expected_header


def test_template_header_missing_kind(tmp_path):
    path = tmp_path / "template.ini"
    path.write_text("[template]\nid = thing\n", encoding="utf-8")
    with pytest.raises(DataError):
        TemplateHeaderReader(str(path))


def test_template_header_errors_are_data_errors(tmp_path):
    """A malformed template header is a data problem, not a configuration one"""
    path = tmp_path / "template.ini"
    path.write_text("id = thing\n", encoding="utf-8")
    with pytest.raises(DataError):
        TemplateHeaderReader(str(path))


def test_write_ini_reads_back(tmp_path):
    """Values written by write_ini read back as the same strings, floats exactly"""
    path = str(tmp_path / "out.ini")
    write_ini(path, {
        "guidance": {"rho": 0.1 + 0.2, "hard_min": False, "max_grad_norm": None},
        "sweep": {"tau": (25, 50)},
    }, comment="effective run configuration")
    reader = KeyValueReader(path)
    assert float(reader.get_value("guidance", "rho")) == 0.1 + 0.2
    assert reader.get_value("guidance", "hard_min") == "false"
    assert reader.get_value("guidance", "max_grad_norm") == "none"
    assert reader.get_value("sweep", "tau") == "25 50"
    with open(path, encoding="utf-8") as f:
        assert f.readline() == "; effective run configuration\n"
