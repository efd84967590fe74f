"""
    Module to read *.ini files: run configurations and object-template headers.

    Both files use the same plain-text layout:

        ; comment            (also '#')
        [section]
        key = value

    Classes:
    --------
    * Reader: shared methods and attributes (path validation, key lookup).
    * KeyValueReader: reads any sectioned key/value file into {section: {key: str}}.
    * TemplateHeaderReader: reads template.ini and converts numbers and number lists.

    Functions:
    ----------
    * write_ini: write {section: {key: value}} back in the same layout.
"""
import os
import re
import logging

from hoiModule.utils.errors import ConfigError, DataError

# Set up logger:
logger = logging.getLogger(__name__)

_SECTION    = re.compile(r"^\[\s*([A-Za-z0-9_.\-]+)\s*\]$")
_KEY_VALUE  = re.compile(r"^([A-Za-z0-9_.\-]+)\s*=\s*(.*?)\s*$")
_NUMBER     = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")


class Reader:
    """Abstract class to read *.ini files, it holds the shared path checks.

    ----------
    Attributes:
        - file_path (str): path to the ini file

    ----------
    Methods:
        - file_path: property checking that the path is a string and exists
        - _is_valid_key: check that a key is a string contained in a dictionary
    """

    def __init__(self, file_path: str):
        self._file_path = file_path

    @property
    def file_path(self) -> str:
        """
        Check that the file_path given is a string and that it exists.

        Raises:
            TypeError: If file_path is not a string.
            FileNotFoundError: If the file does not exist.
        """
        if not isinstance(self._file_path, str):
            raise TypeError("file_path must be a string")
        if not os.path.exists(self._file_path):
            raise FileNotFoundError(f"file_path: {self._file_path} does not exist")
        return self._file_path

    @file_path.setter
    def file_path(self, file_path: str):
        if not isinstance(file_path, str):
            raise TypeError("file_path must be a string")
        self._file_path = file_path

    @staticmethod
    def _is_valid_key(dictionnary: dict, key: str) -> bool:
        if not isinstance(key, str):
            raise TypeError("key must be a string")
        return key in dictionnary


# =============================================================================
class KeyValueReader(Reader):
    """
    Class to read a sectioned key/value file.

    Attributes:
        - file_path (str): path to the file
        - sections (dict): {section: {key: raw string value}}, in file order

    Methods:
        - read: parse the file (called by the constructor)
        - get_value: value of a key in a section, None with a warning when absent

    Raises:
        - ConfigError: a line is neither a comment, a section header nor key = value, or a
          key appears before any section or twice in one section
    """
    error_class = ConfigError

    def __init__(self, file_path: str):
        super().__init__(file_path)
        self.sections: dict = {}
        self.read()
        logger.debug("Read %d section(s) from %s", len(self.sections), self._file_path)

    def read(self) -> dict:
        current = None
        with open(self.file_path, 'r', encoding="utf-8") as file:
            for number, line in enumerate(file, start=1):
                line = line.strip()
                if not line or line.startswith((';', '#')):
                    continue
                match = _SECTION.match(line)
                if match:
                    current = match.group(1)
                    self.sections.setdefault(current, {})
                    continue
                match = _KEY_VALUE.match(line)
                if not match:
                    raise self.error_class(f"{self._file_path}:{number}: cannot parse '{line}'")
                if current is None:
                    raise self.error_class(f"{self._file_path}:{number}: key outside a section")
                key, value = match.groups()
                if self._is_valid_key(self.sections[current], key):
                    raise self.error_class(f"{self._file_path}:{number}: duplicate key "
                                           f"{current}.{key}")
                self.sections[current][key] = value
        return self.sections

    def get_value(self, section: str, key: str):
        if self._is_valid_key(self.sections, section) and \
                self._is_valid_key(self.sections[section], key):
            return self.sections[section][key]
        logger.warning("Key: %s.%s not found in the file", section, key)
        return None


# =============================================================================
class TemplateHeaderReader(KeyValueReader):
    """
    Class to read the template.ini header of an object template directory.

    Values made of numbers are converted: one number -> float, several -> list of floats.

    Attributes:
        - header (dict): converted [template] section (id, kind and SDF parameters)
    """
    error_class = DataError

    def __init__(self, file_path: str):
        super().__init__(file_path)
        if not self._is_valid_key(self.sections, "template"):
            raise DataError(f"{file_path}: missing [template] section")
        self.header = {key: _convert(value) for key, value in self.sections["template"].items()}
        for key in ("id", "kind"):
            if not self._is_valid_key(self.header, key):
                raise DataError(f"{file_path}: missing key template.{key}")


def _convert(value: str):
    tokens = value.split()
    if tokens and all(_NUMBER.match(token) for token in tokens):
        numbers = [float(token) for token in tokens]
        return numbers[0] if len(numbers) == 1 else numbers
    return value


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return " ".join(_format(v) for v in value)
    if value is None:
        return "none"
    return str(value)


def write_ini(file_path: str, sections: dict, comment: str | None = None) -> None:
    """
    Write {section: {key: value}} in the layout read by KeyValueReader.

    Floats are written with repr() so they read back exactly.
    """
    with open(file_path, 'w', encoding="utf-8") as file:
        if comment:
            for line in comment.splitlines():
                file.write(f"; {line}\n")
        for section, values in sections.items():
            file.write(f"[{section}]\n")
            for key, value in values.items():
                file.write(f"{key} = {_format(value)}\n")
            file.write("\n")
