import csv
import io
import logging
import os
import tempfile
from typing import Iterable, List, Sequence

import numpy as np
from PIL import Image

from .errors import InvalidInputError, UsageError

logger = logging.getLogger(__name__)

DEPTH_UNITS_M = 0.001


def atomic_write_bytes(filename: str, payload: bytes, message=""):
    """Write payload to filename through a temporary file and an atomic rename

    Args:
        filename (str): target path
        payload (bytes): file content
        message (str, optional): description used in the log record
    """
    directory = os.path.dirname(os.path.abspath(filename))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(filename))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, filename)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    if message:
        logger.info(f"Save {message} to {filename}")


def atomic_write_text(filename: str, text: str, message=""):
    atomic_write_bytes(filename, text.encode("utf-8"), message)


def write_csv(filename: str, header: Sequence[str], rows: Iterable[Sequence], message=""):
    """write rows as CSV (atomic)

    Args:
        filename (str): csv filename
        header (Sequence[str]): column names
        rows (Iterable[Sequence]): records
        message (str, optional): message to log
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_format_cell(v) for v in row])
    atomic_write_text(filename, buf.getvalue(), message)


def _format_cell(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value


def read_rgb_png(filename: str) -> np.ndarray:
    """Read an 8-bit RGB PNG

    Args:
        filename (str): filename

    Returns:
        np.ndarray shape (H, W, 3) : float64 image in [0, 1]
    """
    with Image.open(filename) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return arr.astype(np.float64) / 255.0


def write_rgb_png(filename: str, image: np.ndarray, message=""):
    """Write an image in [0, 1] as 8-bit RGB PNG

    Args:
        filename (str): filename
        image (np.ndarray): H x W x 3 values in [0, 1]
        message (str, optional): message to log
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise InvalidInputError(f"expected H x W x 3 image, got shape {image.shape}")
    u8 = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(u8).save(buf, format="PNG")
    atomic_write_bytes(filename, buf.getvalue(), message)


def read_depth_png(filename: str, units=DEPTH_UNITS_M) -> np.ndarray:
    """Read a single-channel 16-bit depth PNG

    Args:
        filename (str): filename
        units (float, optional): meters per raw unit. Defaults to 1/1000.

    Returns:
        np.ndarray shape (H, W) : depth in meters
    """
    with Image.open(filename) as im:
        arr = np.asarray(im)
    if arr.ndim != 2:
        raise InvalidInputError(f"{filename}: depth must be single channel, got shape {arr.shape}")
    return arr.astype(np.float64) * units


def write_depth_png(filename: str, depth: np.ndarray, units=DEPTH_UNITS_M, message=""):
    raw = np.round(np.asarray(depth, dtype=np.float64) / units)
    if raw.min() < 0 or raw.max() > np.iinfo(np.uint16).max:
        raise InvalidInputError(f"depth out of 16-bit range for units={units}")
    buf = io.BytesIO()
    Image.fromarray(raw.astype(np.uint16)).save(buf, format="PNG")
    atomic_write_bytes(filename, buf.getvalue(), message)


def arg_values(value, typefunc, numberOfValues=-1, is_single=False):
    """split comma seperated value and convert them using typefunc

    Args:
        value (Any): value
        typefunc : conversion function
        numberOfValues (int) : number of values, if numberOfValues < 0, it supports arbitrary number of inputs
        is_single (bool) : whether to choose value as a single item rather than list

    Returns:
        result
    """
    if not value:
        return None
    value = value.strip()
    if value[0] == "(" and value[-1] == ")":
        value = value[1:-1]
    values = value.split(",")
    if numberOfValues > 0 and len(values) != numberOfValues:
        raise UsageError(
            f"expected {numberOfValues} value(s), got {len(values)} in {value!r}"
        )
    if is_single:
        return typefunc(values[0])
    return list(map(typefunc, values))


def verbose_level(arguments: dict) -> int:
    """0 quiet, 1 default, 2 verbose"""
    output_flag = 1
    if arguments.get("--verbose"):
        output_flag = 2
    if arguments.get("--quiet"):
        output_flag = 0
    return output_flag


def setup_logging(output_flag: int):
    level = {0: logging.WARNING, 1: logging.INFO, 2: logging.DEBUG}[output_flag]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", force=True)


def list_files(directory: str, suffix: str) -> List[str]:
    return sorted(f for f in os.listdir(directory) if f.endswith(suffix))
