"""Binary per-frame feature container.

Layout: magic "DOAF", version u16, then one record per frame of
{frame_index u32, P u16, L u16, P*L float32 values}, all little-endian.
A text sidecar at ``<path>.idx`` maps frame_index to timestamp, one
"frame_index timestamp_s" pair per line.
"""

import struct

import numpy as np

from .errors import BadMagic, ConfigError, VersionMismatch

_MAGIC = b"DOAF"
_VERSION = 1


def read_key_values(path):
    """Parse a 'key = value' text file ('#' starts a comment).

    Returns (key, value) pairs in file order; keys may repeat.
    """
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            entries.append((key.strip(), value.strip()))
    return entries



def write_feature_store(path, frames, timestamps=None):
    """Write (frame_index, values) pairs; ``values`` is a (P, L) array.

    ``timestamps`` maps frame_index to seconds for the sidecar index; when
    omitted the sidecar is not written.
    """
    parts = [_MAGIC, struct.pack("<H", _VERSION)]
    for frame_index, values in frames:
        values = np.asarray(values)
        if values.ndim != 2:
            raise ValueError("feature values must be a (P, L) matrix")
        p, l = values.shape
        parts.append(struct.pack("<IHH", int(frame_index), p, l))
        parts.append(values.astype("<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))
    if timestamps is not None:
        with open(f"{path}.idx", "w", encoding="utf-8") as fh:
            for frame_index, _ in frames:
                fh.write(f"{int(frame_index)} {timestamps[frame_index]:.6f}\n")


def read_feature_store(path):
    """Read back all records as (frame_index, float64 (P, L) array) pairs."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _MAGIC:
        raise BadMagic(f"{path}: not a feature store")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != _VERSION:
        raise VersionMismatch(f"{path}: version {version}, expected {_VERSION}")
    pos = 6
    frames = []
    while pos < len(data):
        if pos + 8 > len(data):
            raise ValueError(f"{path}: truncated record header")
        frame_index, p, l = struct.unpack_from("<IHH", data, pos)
        pos += 8
        count = p * l
        if pos + 4 * count > len(data):
            raise ValueError(f"{path}: truncated record payload")
        values = np.frombuffer(data, dtype="<f4", count=count, offset=pos)
        pos += 4 * count
        frames.append((frame_index, values.reshape(p, l).astype(np.float64)))
    return frames


def read_store_index(path):
    """Sidecar index as a dict frame_index -> timestamp_s."""
    index = {}
    with open(f"{path}.idx", "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                key, value = line.split()
                index[int(key)] = float(value)
    return index
