import json
import os
import tempfile
from contextlib import contextmanager

import numpy as np
import numpy.lib.format as npy_format


class DataFormatError(ValueError):
    """A file exists but its content does not match the expected format"""


def ensure_directory(path):
    """Ensure the directory exists"""
    if path:
        os.makedirs(path, exist_ok=True)


@contextmanager
def atomic_write(file_path, binary=False):
    """
    Open a temporary file next to ``file_path`` and move it into place on success.

    Readers never observe a half-written file; on failure the target is left
    untouched and the temporary file is removed.
    """
    directory = os.path.dirname(os.path.abspath(file_path))
    ensure_directory(directory)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix='.tmp-', suffix=os.path.basename(file_path))
    mode = 'wb' if binary else 'w'
    try:
        kwargs = {} if binary else {'encoding': 'utf-8', 'newline': ''}
        with os.fdopen(fd, mode, **kwargs) as f:
            yield f
        os.replace(tmp_path, file_path)
    except Exception as e:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        if isinstance(e, OSError):
            raise OSError(f"Failed to save {file_path}: {str(e)}") from e
        raise


def save_json(file_path, data):
    """Save a JSON document atomically"""
    with atomic_write(file_path) as f:
        json.dump(data, f, indent=4, sort_keys=True)
        f.write('\n')


def load_json(file_path):
    """Load a JSON document"""
    try:
        with open(file_path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise DataFormatError(f"Corrupted JSON file {file_path}: {str(e)}") from e


def save_npy(file_path, array):
    """
    Save a dense float array as an NPY v1.0 container.

    The payload is always little-endian 8-byte IEEE-754 in C order; the header
    is padded to 64-byte alignment by numpy's writer.
    """
    array = np.ascontiguousarray(array, dtype='<f8')
    if not np.all(np.isfinite(array)):
        raise ValueError(f"Refusing to save non-finite values to {file_path}")
    with atomic_write(file_path, binary=True) as f:
        npy_format.write_array(f, array, version=(1, 0), allow_pickle=False)


def load_npy(file_path):
    """Load an NPY container holding '<f8' values"""
    try:
        with open(file_path, 'rb') as f:
            version = npy_format.read_magic(f)
            if version != (1, 0):
                raise DataFormatError(f"Unsupported NPY version {version} in {file_path}")
            shape, fortran_order, dtype = npy_format.read_array_header_1_0(f)
            if dtype != np.dtype('<f8') or fortran_order:
                raise DataFormatError(
                    f"Expected C-order '<f8' data in {file_path}, got {dtype.str} "
                    f"fortran_order={fortran_order}")
            count = int(np.prod(shape)) if shape else 1
            payload = f.read(count * 8)
            if len(payload) != count * 8:
                raise DataFormatError(f"Truncated NPY payload in {file_path}")
            return np.frombuffer(payload, dtype='<f8').reshape(shape).copy()
    except ValueError as e:
        if isinstance(e, DataFormatError):
            raise
        raise DataFormatError(f"Invalid NPY file {file_path}: {str(e)}") from e


def save_csv(file_path, frame):
    """Save a DataFrame as UTF-8 CSV with a header row"""
    with atomic_write(file_path) as f:
        frame.to_csv(f, index=False, float_format='%.17g', lineterminator='\n')


def save_text_lines(file_path, lines):
    """Save one entry per line"""
    with atomic_write(file_path) as f:
        for line in lines:
            f.write(f"{line}\n")


def load_text_lines(file_path):
    """Load non-empty lines"""
    with open(file_path, 'r', encoding='utf-8') as f:
        return [line.strip() for line in f if line.strip()]


class JsonLinesLog:
    """Append-only JSON-lines log; a no-op when no path is given"""

    def __init__(self, file_path=None):
        self.file_path = file_path
        if file_path:
            ensure_directory(os.path.dirname(os.path.abspath(file_path)))
            # Each run starts a fresh log
            with open(file_path, 'w', encoding='utf-8'):
                pass

    def write(self, record):
        if not self.file_path:
            return
        try:
            with open(self.file_path, 'a', encoding='utf-8') as f:
                f.write(json.dumps(record, sort_keys=True) + '\n')
        except OSError as e:
            raise OSError(f"Failed to save log entry to {self.file_path}: {str(e)}") from e
