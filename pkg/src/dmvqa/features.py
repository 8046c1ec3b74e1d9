"""Binary image-feature files: one float32 row per image id.

Layout, little-endian throughout:

    bytes 0..7    magic b"FEATBIN1"
    bytes 8..11   u32 format version (currently 1)
    bytes 12..15  u32 header length in bytes
    header        UTF-8 JSON: {"dim": int, "index": {image_id: row}}
    data          n_rows * dim float32 values, row-major

Rows are addressed through the header index so ids can be arbitrary
strings; the data block stays a flat dense matrix for cheap mmap-free
reads.
"""

import json
import struct

import numpy as np

from .errors import DataError

MAGIC = b"FEATBIN1"
FEATURE_VERSION = 1


def write_feature_file(path, features):
    """Write {image_id: 1-D array} to a binary feature file."""
    ids = sorted(features)
    if not ids:
        raise DataError("no features to write")
    dims = {np.asarray(features[i]).shape for i in ids}
    if len(dims) != 1 or len(next(iter(dims))) != 1:
        raise DataError(f"features must share one 1-D shape, got {sorted(dims)}")
    dim = next(iter(dims))[0]
    header = json.dumps({"dim": dim, "index": {i: row for row, i in enumerate(ids)}},
                        sort_keys=True).encode()
    matrix = np.stack([np.asarray(features[i], dtype="<f4") for i in ids])
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FEATURE_VERSION, len(header)))
        fh.write(header)
        fh.write(matrix.tobytes())


def read_feature_file(path):
    """Read a binary feature file back to {image_id: float64 array}."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise DataError(f"{path}: not a feature file (bad magic)")
    version, header_len = struct.unpack_from("<II", blob, 8)
    if version != FEATURE_VERSION:
        raise DataError(f"{path}: unsupported feature file version {version}")
    try:
        header = json.loads(blob[16:16 + header_len].decode())
        dim, index = header["dim"], header["index"]
    except (ValueError, KeyError) as exc:
        raise DataError(f"{path}: corrupt feature header: {exc}") from exc
    data = np.frombuffer(blob, dtype="<f4", offset=16 + header_len)
    if data.size != len(index) * dim:
        raise DataError(f"{path}: data block holds {data.size} values, "
                        f"expected {len(index) * dim}")
    matrix = data.reshape(len(index), dim).astype(np.float64)
    return {image_id: matrix[row] for image_id, row in index.items()}
