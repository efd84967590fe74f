"""
    Module to read and write denoiser weight files.

    Layout (all integers '<u4', all values '<f8'):

        magic           4 bytes, b"SHOI"
        version         u4
        arch hash       32 bytes, sha256 of the architecture configuration
        header length   u4, followed by a UTF-8 JSON header
                        {"config": {...}, "kind": "weights" | "checkpoint", ...}
        tensor count    u4
        per tensor      u4 name length, UTF-8 name, u4 ndim, ndim x u4 dims,
                        prod(dims) little-endian float64 values (row-major)

    Checkpoints use the same layout; the Adam moments are stored as extra tensors named
    "adam.m/<name>" and "adam.v/<name>", and the header carries the step counter.

    Classes:
    --------
    ReadWeights: reads and validates one file.

    Functions:
    ----------
    write_tensor_file, save_weights, load_weights
"""
import os
import json
import logging
import numpy as np

from hoiModule.denoiser.neural import DenoiserConfig, DenoiserWeights, parameter_shapes
from hoiModule.utils.errors import WeightsFormatError

# Set up logging
logger = logging.getLogger(__name__)

MAGIC           = b"SHOI"
FORMAT_VERSION  = 1


def _u4(value: int) -> bytes:
    return np.array([value], dtype='<u4').tobytes()


def write_tensor_file(file_path: str, header: dict, tensors: dict, arch_hash: bytes) -> None:
    """
    Write a header and named tensors. The file is written next to its destination and moved
    into place, so an interrupted write never leaves a truncated file at `file_path`.
    """
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp_path = file_path + ".tmp"
    with open(tmp_path, "wb") as f:
        f.write(MAGIC)
        f.write(_u4(FORMAT_VERSION))
        f.write(arch_hash)
        f.write(_u4(len(blob)))
        f.write(blob)
        f.write(_u4(len(tensors)))
        for name, value in tensors.items():
            value = np.asarray(value, dtype=np.float64)
            encoded = name.encode("utf-8")
            f.write(_u4(len(encoded)))
            f.write(encoded)
            f.write(_u4(value.ndim))
            for n in value.shape:
                f.write(_u4(n))
            f.write(np.ascontiguousarray(value).astype('<f8').tobytes())
    os.replace(tmp_path, file_path)


class ReadWeights():
    """
    Class to read a weights or checkpoint file.

    Attributes:
    -----------
    file_path (str): path to the binary file.
    header (dict): decoded JSON header, set by read().
    config (DenoiserConfig): architecture recorded in the file, set by read().
    tensors (dict): every tensor of the file, set by read().
    """
    def __init__(self, file_path: str) -> None:
        self.file_path  = file_path
        self.header     = {}
        self.config     = None
        self.tensors    = {}

    def _take(self, f, count: int, dtype: str, what: str) -> np.ndarray:
        values = np.fromfile(f, dtype=dtype, count=count)
        if values.size != count:
            raise WeightsFormatError(f"{self.file_path}: truncated file while reading {what}")
        return values

    def _take_bytes(self, f, count: int, what: str) -> bytes:
        data = f.read(count)
        if len(data) != count:
            raise WeightsFormatError(f"{self.file_path}: truncated file while reading {what}")
        return data

    def read(self) -> "ReadWeights":
        """
        Read and validate the whole file.

        Raises:
            WeightsFormatError: missing file, bad magic, unsupported version, architecture
                hash mismatch, truncated content or trailing bytes.
        """
        if not os.path.exists(self.file_path):
            raise WeightsFormatError(f"weights file {self.file_path} not found")
        with open(self.file_path, "rb") as f:
            magic = f.read(4)
            if magic != MAGIC:
                raise WeightsFormatError(f"{self.file_path}: bad magic {magic!r}, "
                                         f"expected {MAGIC!r}")
            version = int(self._take(f, 1, '<u4', "version")[0])
            if version != FORMAT_VERSION:
                raise WeightsFormatError(f"{self.file_path}: unsupported format version "
                                         f"{version}, expected {FORMAT_VERSION}")
            arch_hash = self._take_bytes(f, 32, "architecture hash")
            size = int(self._take(f, 1, '<u4', "header length")[0])
            try:
                self.header = json.loads(self._take_bytes(f, size, "header").decode("utf-8"))
                self.config = DenoiserConfig.from_dict(self.header["config"])
            except (ValueError, KeyError, TypeError) as err:
                raise WeightsFormatError(f"{self.file_path}: unreadable header ({err})") from err
            if self.config.arch_hash() != arch_hash:
                raise WeightsFormatError(f"{self.file_path}: architecture hash does not match "
                                         "the recorded configuration")
            count = int(self._take(f, 1, '<u4', "tensor count")[0])
            for _ in range(count):
                length = int(self._take(f, 1, '<u4', "tensor name")[0])
                name = self._take_bytes(f, length, "tensor name").decode("utf-8")
                ndim = int(self._take(f, 1, '<u4', f"tensor '{name}'")[0])
                shape = tuple(int(n) for n in self._take(f, ndim, '<u4', f"tensor '{name}'"))
                values = self._take(f, int(np.prod(shape)), '<f8', f"tensor '{name}'")
                self.tensors[name] = values.reshape(shape).astype(np.float64)
            if f.read(1):
                raise WeightsFormatError(f"{self.file_path}: trailing bytes after "
                                         f"{count} tensors")
        logger.debug("Read %d tensors from %s", len(self.tensors), self.file_path)
        return self

    def weights(self, expected: DenoiserConfig | None = None) -> DenoiserWeights:
        """
        Build the weight bundle, optionally checking it against an expected architecture.

        Raises:
            WeightsFormatError: a tensor is missing or has another shape; the message names it.
        """
        config = self.config if expected is None else expected
        shapes = parameter_shapes(config)
        for name, shape in shapes.items():
            if name not in self.tensors:
                raise WeightsFormatError(f"{self.file_path}: architecture mismatch, tensor "
                                         f"'{name}' is missing")
            if self.tensors[name].shape != shape:
                raise WeightsFormatError(f"{self.file_path}: architecture mismatch, tensor "
                                         f"'{name}' has shape {self.tensors[name].shape}, "
                                         f"expected {shape}")
        return DenoiserWeights(config, {name: self.tensors[name] for name in shapes})


def save_weights(weights: DenoiserWeights, file_path: str) -> None:
    write_tensor_file(file_path, {"config": weights.config.to_dict(), "kind": "weights"},
                      weights.tensors, weights.config.arch_hash())
    logger.info("Saved %d denoiser tensors to %s", len(weights), file_path)


def load_weights(file_path: str, expected: DenoiserConfig | None = None) -> DenoiserWeights:
    return ReadWeights(file_path).read().weights(expected)
