"""
    Module to read and write sampled SDF grids stored as raw binary files.

    The sdf_grid.bin file of a template directory holds R_x * R_y * R_z little-endian
    float64 values in C order (x slowest, z fastest). The resolution, origin and spacing of
    the grid are recorded in the template.ini header, so the binary file carries no header.

    Classes:
    --------
    ReadSdfGrid: reads one grid given its placement.

    Functions:
    ----------
    write_sdf_grid: write the values of a GridSdf.
"""
import os
import logging
import numpy as np

from hoiModule.bodyModel.object_model import GridSdf
from hoiModule.utils.errors import DataError

# Set up logging
logger = logging.getLogger(__name__)


class ReadSdfGrid():
    """
    Class to read a sampled SDF grid.

    Attributes:
    -----------
    file_path (str): path to the binary file.
    resolution (tuple): samples per axis.
    origin (list): position of the first sample.
    spacing (float): sample spacing.
    endianess (str): "little" (default) or "big".
    """
    def __init__(self,
                 file_path: str,
                 config: dict) -> None:
        self.file_path  = file_path
        self.resolution = tuple(int(r) for r in config["resolution"])
        self.origin     = config["origin"]
        self.spacing    = float(config["spacing"])
        self.endianess  = config.get("endianess", "little")
        if len(self.resolution) != 3:
            raise DataError(f"SDF grid resolution must have 3 entries, got {self.resolution}")

    def read(self) -> GridSdf:
        """
        Read the grid values and build the GridSdf.

        Raises:
            DataError: the file is missing or does not hold exactly R_x * R_y * R_z values.
        """
        sens = '<' if self.endianess == "little" else '>'
        count = int(np.prod(self.resolution))
        if not os.path.exists(self.file_path):
            raise DataError(f"SDF grid file {self.file_path} not found")
        with open(self.file_path, "rb") as f:
            values = np.fromfile(f, dtype=(sens + 'f8'), count=count)
            trailing = f.read(1)
        if values.size != count or trailing:
            raise DataError(f"SDF grid file {self.file_path}: expected {count} values "
                            f"({self.resolution}), found a file of another size")
        logger.debug("Read SDF grid %s from %s", self.resolution, self.file_path)
        return GridSdf(values.reshape(self.resolution).astype(np.float64), self.origin,
                       self.spacing)


def write_sdf_grid(file_path: str, grid: GridSdf) -> None:
    grid.values.astype('<f8').tofile(file_path)
