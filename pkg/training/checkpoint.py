"""
Checkpoint files: model config, normalizer and weights in one binary file

=== FILE LAYOUT ===

    bytes 0-4     magic b"MPSTN"
    u32 LE        format version
    u32 LE        header length H in bytes
    H bytes       UTF-8 JSON header
    payload       raw float64 little-endian tensor data, in directory order

The JSON header holds:

    config       the ModelConfig fields
    normalizer   per-station / per-channel mean and std
    network      station count and edge list (needed to rebuild Â)
    metadata     epoch, val_mae, variant, ...
    tensors      [{"name", "shape", "offset"}]   offsets relative to payload
    payload_bytes

Floats in the JSON header are written with Python's shortest round-trip
repr, and tensors as raw bytes, so load(save(x)) is bit-exact.
"""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from model.mpstn import ModelConfig, param_shapes
from pipeline.folding import Normalizer
from pipeline.synthgen import NetworkSpec
from utils.errors import ConfigError, DataError
from utils.helpers import config_from_dict, config_to_dict
from utils.storage import atomic_write_bytes

# ---------------------------------------------------------------------------
# CONFIGURATION
# ---------------------------------------------------------------------------
MAGIC = b"MPSTN"
FORMAT_VERSION = 1
_U32 = struct.Struct("<I")
_DTYPE = np.dtype("<f8")
HEADER_SECTIONS = ("config", "normalizer", "network", "metadata", "tensors", "payload_bytes")


@dataclass(eq=False)
class Checkpoint:
    config: ModelConfig
    normalizer: Normalizer
    network: NetworkSpec
    params: dict                      # name -> float64 ndarray
    metadata: dict = field(default_factory=dict)


def encode_checkpoint(checkpoint):
    directory = []
    chunks = []
    offset = 0
    for name, array in checkpoint.params.items():
        raw = np.ascontiguousarray(array, dtype=_DTYPE).tobytes()
        directory.append({"name": name, "shape": list(array.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    header = {
        "config": config_to_dict(checkpoint.config),
        "normalizer": checkpoint.normalizer.to_dict(),
        "network": checkpoint.network.to_dict(),
        "metadata": checkpoint.metadata,
        "tensors": directory,
        "payload_bytes": offset,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    return b"".join([MAGIC, _U32.pack(FORMAT_VERSION), _U32.pack(len(header_bytes)), header_bytes, *chunks])


def decode_checkpoint(blob, source="checkpoint"):
    """Parses a whole checkpoint; nothing is returned unless every check passes."""
    fixed = len(MAGIC) + 2 * _U32.size
    if len(blob) < fixed or blob[:len(MAGIC)] != MAGIC:
        raise DataError(f"{source}: not an MPSTN checkpoint (bad magic)")
    (version,) = _U32.unpack_from(blob, len(MAGIC))
    if version != FORMAT_VERSION:
        raise DataError(f"{source}: unsupported checkpoint format version {version} (expected {FORMAT_VERSION})")
    (header_len,) = _U32.unpack_from(blob, len(MAGIC) + _U32.size)
    if fixed + header_len > len(blob):
        raise DataError(f"{source}: truncated header")
    try:
        header = json.loads(blob[fixed:fixed + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"{source}: corrupt header ({e})") from e

    _check_header(header, source)
    payload = blob[fixed + header_len:]
    if len(payload) != header["payload_bytes"]:
        raise DataError(f"{source}: payload is {len(payload)} bytes, header says {header['payload_bytes']}")

    try:
        config = config_from_dict(ModelConfig, header["config"])
    except ConfigError as e:
        raise DataError(f"{source}: bad model config ({e})") from e
    expected = param_shapes(config)
    params = {}
    offset = 0
    for entry in header["tensors"]:
        name, shape, start = entry["name"], tuple(entry["shape"]), entry["offset"]
        if name in params:
            raise DataError(f"{source}: tensor {name!r} is listed twice")
        if expected.get(name) != shape:
            raise DataError(f"{source}: tensor {name!r} has shape {shape}, config expects {expected.get(name)}")
        if start != offset:
            raise DataError(f"{source}: tensor {name!r} starts at byte {start}, expected {offset}")
        nbytes = int(np.prod(shape, dtype=np.int64)) * _DTYPE.itemsize
        if start + nbytes > len(payload):
            raise DataError(f"{source}: tensor {name!r} runs past the end of the payload")
        params[name] = np.frombuffer(payload, dtype=_DTYPE, count=nbytes // _DTYPE.itemsize,
                                     offset=start).reshape(shape).astype(np.float64)
        offset += nbytes
    missing = sorted(set(expected) - set(params))
    if missing:
        raise DataError(f"{source}: missing tensors {missing}")
    if offset != len(payload):
        raise DataError(f"{source}: {len(payload) - offset} payload bytes belong to no tensor")

    try:
        normalizer = Normalizer.from_dict(header["normalizer"])
        network = NetworkSpec.from_dict(header["network"])
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"{source}: bad normalizer or network section ({e!r})") from e

    return Checkpoint(
        config=config,
        normalizer=normalizer,
        network=network,
        params={name: params[name] for name in expected},
        metadata=header["metadata"],
    )


def _check_header(header, source):
    """Raises DataError unless every section and directory field is present and typed."""
    if not isinstance(header, dict):
        raise DataError(f"{source}: header must be a JSON object")
    missing = sorted(set(HEADER_SECTIONS) - set(header))
    if missing:
        raise DataError(f"{source}: header lacks {missing}")
    for key in ("config", "normalizer", "network", "metadata"):
        if not isinstance(header[key], dict):
            raise DataError(f"{source}: header section {key!r} must be an object")
    if not isinstance(header["tensors"], list):
        raise DataError(f"{source}: header section 'tensors' must be a list")
    if not _is_count(header["payload_bytes"]):
        raise DataError(f"{source}: payload_bytes must be a non-negative integer")
    for i, entry in enumerate(header["tensors"]):
        if not isinstance(entry, dict) or sorted(entry) != ["name", "offset", "shape"]:
            raise DataError(f"{source}: tensor entry {i} must have exactly name, shape and offset")
        if not isinstance(entry["name"], str) or not _is_count(entry["offset"]):
            raise DataError(f"{source}: tensor entry {i} has a bad name or offset")
        if not isinstance(entry["shape"], list) or not all(_is_count(d) for d in entry["shape"]):
            raise DataError(f"{source}: tensor {entry['name']!r} has a bad shape {entry['shape']!r}")


def _is_count(value):
    return isinstance(value, int) and not isinstance(value, bool) and value >= 0


def save_checkpoint(checkpoint, path):
    atomic_write_bytes(path, encode_checkpoint(checkpoint))


def load_checkpoint(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing checkpoint: {path}")
    return decode_checkpoint(path.read_bytes(), source=str(path))
