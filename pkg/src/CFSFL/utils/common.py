import os  # Module to interact with the operating system
import json  # Module for working with JSON files
import struct  # Packing of the checkpoint header fields
from box.exceptions import BoxValueError  # Exception class for Box-related errors
import yaml  # Module for working with YAML files
import numpy as np
from CFSFL import logger  # Custom logger for the project
from CFSFL.constants import CHECKPOINT_MAGIC, CHECKPOINT_VERSION, DTYPE_FLOAT32
from CFSFL.exception import CheckpointError
from ensure import ensure_annotations  # Decorator for enforcing function annotations
from box import ConfigBox  # Enhanced dictionary-like object from Box
from pathlib import Path  # Module for working with file system paths
from typing import Any, Dict, Tuple


# In-memory cache for YAML files
_yaml_cache = {}


@ensure_annotations
def read_yaml(path_to_yaml: Path) -> ConfigBox:
    """Reads a YAML file and returns its content as a ConfigBox object.

    Args:
        path_to_yaml (Path): Path to the YAML file.

    Raises:
        ValueError: If the YAML file is empty.
        e: If any other error occurs during file reading.

    Returns:
        ConfigBox: A ConfigBox object containing the parsed YAML data.
    """
    key = Path(path_to_yaml).resolve()
    if key in _yaml_cache:
        logger.info(f"yaml file: {path_to_yaml} retrieved from cache")
        return _yaml_cache[key]

    try:
        with open(path_to_yaml) as yaml_file:
            content = yaml.safe_load(yaml_file)
            logger.info(f"yaml file: {path_to_yaml} loaded successfully")
            config = ConfigBox(content)
            _yaml_cache[key] = config
            return config
    except BoxValueError:
        raise ValueError("yaml file is empty")
    except Exception as e:
        logger.error(f"Error reading YAML file at {path_to_yaml}: {e}")
        raise e


@ensure_annotations
def create_directories(path_to_directories: list, verbose=True):
    """Creates a list of directories if they do not exist.

    Args:
        path_to_directories (list): List of paths to directories to be created.
        verbose (bool, optional): If True, logs the creation of each directory. Defaults to True.
    """
    for path in path_to_directories:
        if not os.path.exists(path):
            os.makedirs(path, exist_ok=True)
            if verbose:
                logger.info(f"Created directory at: {path}")
        elif verbose:
            logger.info(f"Directory already exists at: {path}")


@ensure_annotations
def save_json(path: Path, data: dict):
    """Saves a dictionary as a JSON file (keys sorted, so output is reproducible).

    Args:
        path (Path): Path where the JSON file will be saved.
        data (dict): Data to be saved as JSON.
    """
    with open(path, "w") as f:
        json.dump(data, f, indent=4, sort_keys=True)
    logger.info(f"JSON file saved at: {path}")


@ensure_annotations
def get_size(path: Path) -> str:
    """Gets the size of a file in an appropriate unit.

    Args:
        path (Path): Path to the file.

    Returns:
        str: File size in an appropriate unit (bytes, KB, or MB).
    """
    size_in_bytes = os.path.getsize(path)
    if size_in_bytes < 1024:
        return f"{size_in_bytes} bytes"
    elif size_in_bytes < 1024 ** 2:
        return f"~ {size_in_bytes / 1024:.2f} KB"
    else:
        return f"~ {size_in_bytes / (1024 ** 2):.2f} MB"


def flatten_dict(tree: dict, prefix: str = "") -> Dict[str, Any]:
    """Nested mapping -> flat mapping with dotted keys (``train.T``)."""
    flat = {}
    for key, value in tree.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(flatten_dict(value, prefix=f"{dotted}."))
        else:
            flat[dotted] = value
    return flat


def unflatten_dict(flat: Dict[str, Any]) -> dict:
    tree: dict = {}
    for dotted, value in flat.items():
        node = tree
        *parents, leaf = dotted.split(".")
        for part in parents:
            node = node.setdefault(part, {})
        node[leaf] = value
    return tree


def noise_stream(seed: int, *keys: int) -> np.random.Generator:
    """Counter-based generator keyed on (seed, *keys).

    Streams for different keys are independent, so results never depend on
    iteration order or on how work is split across threads.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))))


@ensure_annotations
def save_checkpoint(path: Path, tensors: dict, meta: dict):
    """Writes named tensors plus a JSON metadata blob.

    Layout: magic "CFSF", u32 version, u32 tensor count; per tensor u16 name
    length, UTF-8 name, u8 dtype code, u8 rank, u32 dims, little-endian
    float32 row-major data; then a u64-length-prefixed JSON blob.
    """
    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(tensors))]
    for name, value in tensors.items():
        encoded = name.encode("utf-8")
        array = np.ascontiguousarray(value, dtype="<f4")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BB", DTYPE_FLOAT32, array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(array.tobytes(order="C"))
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    chunks.append(struct.pack("<Q", len(blob)))
    chunks.append(blob)

    with open(path, "wb") as f:
        f.write(b"".join(chunks))
    logger.info(f"Checkpoint saved at: {path} ({get_size(Path(path))})")


def load_checkpoint(path: Path) -> Tuple[Dict[str, np.ndarray], dict]:
    """Inverse of ``save_checkpoint``; tensors come back as float64 arrays."""
    with open(path, "rb") as f:
        raw = f.read()

    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    try:
        version, count = struct.unpack_from("<II", raw, 4)
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
        offset = 12
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", raw, offset)
            offset += 2
            name = raw[offset:offset + name_len].decode("utf-8")
            offset += name_len
            dtype, rank = struct.unpack_from("<BB", raw, offset)
            offset += 2
            if dtype != DTYPE_FLOAT32:
                raise CheckpointError(f"{path}: unsupported dtype code {dtype} for {name}")
            dims = struct.unpack_from(f"<{rank}I", raw, offset)
            offset += 4 * rank
            n_bytes = 4 * int(np.prod(dims, dtype=np.int64))
            array = np.frombuffer(raw, dtype="<f4", count=n_bytes // 4, offset=offset).reshape(dims)
            offset += n_bytes
            tensors[name] = array.astype(np.float64)
        (blob_len,) = struct.unpack_from("<Q", raw, offset)
        offset += 8
        meta = json.loads(raw[offset:offset + blob_len].decode("utf-8"))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError, ValueError) as e:
        if isinstance(e, CheckpointError):
            raise
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint ({e})")

    logger.info(f"Checkpoint loaded from: {path}")
    return tensors, meta
