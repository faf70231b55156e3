"""
Checkpoint container

Little-endian binary layout:

    magic        4 bytes  b"TDLC"
    version      uint32   (currently 1)
    config       8 x int64  n_layers, n_heads, d_model, d_ff,
                            input_vocab, output_vocab, max_len, seed
    count        uint32   number of named tensors
    per tensor:
        name_len uint32, name (utf-8)
        dtype    uint8    1 = float32, 2 = float64
        rank     uint32, dims (rank x uint32)
        payload  little-endian values, C order

Model tensors come first in parameter order, followed by any extra tensors
(trainer step counter, optimizer moments) under their own names.
"""
import logging
import struct
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import CheckpointError
from .model import ModelConfig, ModelParams, parameter_shapes

logger = logging.getLogger(__name__)

MAGIC = b"TDLC"
VERSION = 1

_DTYPES = {
    1: np.dtype('<f4'),
    2: np.dtype('<f8'),
}
_DTYPE_CODES = {'float32': 1, 'float64': 2}


def checkpoint_name(step: int) -> str:
    return f"ckpt-{step}.bin"


def _write_tensor(handle, name: str, tensor: np.ndarray, code: int):
    encoded = name.encode('utf-8')
    handle.write(struct.pack('<I', len(encoded)))
    handle.write(encoded)
    handle.write(struct.pack('<BI', code, tensor.ndim))
    handle.write(struct.pack(f'<{tensor.ndim}I', *tensor.shape))
    handle.write(np.ascontiguousarray(tensor, dtype=_DTYPES[code]).tobytes())


def save_checkpoint(path, params: ModelParams, extra: Optional[Dict[str, np.ndarray]] = None,
                    dtype: str = 'float64') -> Path:
    """
    Write params (and optional extra tensors) to `path`.

    float64 payloads round-trip bit-exactly; float32 halves the file size.
    """
    if dtype not in _DTYPE_CODES:
        raise CheckpointError(f"Unsupported checkpoint dtype {dtype!r}")
    code = _DTYPE_CODES[dtype]
    extra = extra or {}
    clashes = set(extra) & set(params.tensors)
    if clashes:
        raise CheckpointError(f"Extra tensors shadow model parameters: {sorted(clashes)}")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'wb') as handle:
        handle.write(MAGIC)
        handle.write(struct.pack('<I', VERSION))
        handle.write(struct.pack('<8q', *params.config.as_tuple()))
        handle.write(struct.pack('<I', len(params.tensors) + len(extra)))
        for name, tensor in params.items():
            _write_tensor(handle, name, tensor, code)
        for name, tensor in extra.items():
            _write_tensor(handle, name, np.asarray(tensor, dtype=np.float64), code)
    logger.debug("Wrote checkpoint %s (%d tensors)", path, len(params.tensors) + len(extra))
    return path


class _Reader:
    def __init__(self, data: bytes, path: Path):
        self.data = data
        self.offset = 0
        self.path = path

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path, expected_config: Optional[ModelConfig] = None
                    ) -> Tuple[ModelParams, Dict[str, np.ndarray]]:
    """
    Read a checkpoint.

    Returns:
        (params, extra) where extra holds every non-parameter tensor

    Raises:
        CheckpointError: bad magic/version, truncation, or a config that
            differs from expected_config
        OSError: the file cannot be read
    """
    path = Path(path)
    reader = _Reader(path.read_bytes(), path)
    if reader.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a transducer checkpoint")
    (version,) = reader.unpack('<I')
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        config = ModelConfig(*reader.unpack('<8q'))
    except ValueError as exc:
        raise CheckpointError(f"{path}: invalid model config: {exc}") from exc
    if expected_config is not None and config != expected_config:
        raise CheckpointError(f"{path}: checkpoint config {config} does not match {expected_config}")

    (count,) = reader.unpack('<I')
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack('<I')
        name = reader.take(name_len).decode('utf-8')
        code, rank = reader.unpack('<BI')
        if code not in _DTYPES:
            raise CheckpointError(f"{path}: tensor {name} has unknown dtype code {code}")
        dims = reader.unpack(f'<{rank}I') if rank else ()
        dtype = _DTYPES[code]
        size = int(np.prod(dims, dtype=np.int64)) if dims else 1
        payload = reader.take(size * dtype.itemsize)
        tensors[name] = np.frombuffer(payload, dtype=dtype).reshape(dims).astype(np.float64)

    if reader.offset != len(reader.data):
        raise CheckpointError(f"{path}: trailing bytes after the last tensor")

    shapes = parameter_shapes(config)
    missing = [name for name in shapes if name not in tensors]
    if missing:
        raise CheckpointError(f"{path}: missing parameters {missing}")
    params = ModelParams(config, {name: tensors.pop(name) for name in shapes})
    return params, tensors
