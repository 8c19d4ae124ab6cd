"""
Checkpoint container and its binary layout:

    magic "VLCK" | version u32 | document length u64 | tensor count u32
    UTF-8 JSON document {config, step, rng_state}
    per tensor: name length u16, name, dtype code u8, rank u8,
                dims u64 x rank, payload offset u64, payload bytes u64
    raw little-endian payloads (offsets relative to the payload start)
"""
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np
import torch

from vlsatools.config import RunConfig
from vlsatools.model import VLSAModel, model_dtype

logger = logging.getLogger(__name__)

MAGIC = b"VLCK"
VERSION = 1
HEADER_DTYPE = np.dtype(
    [("magic", "S4"), ("version", "<u4"), ("doc_len", "<u8"), ("count", "<u4")]
)
DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8")}
CODE_FOR = {v: k for k, v in DTYPE_CODES.items()}


class CheckpointFormatError(ValueError):
    def __init__(self, path, message):
        self.path = os.fspath(path)
        super().__init__(f"{self.path}: {message}")


@dataclass
class Checkpoint:
    """
    Named parameter arrays plus the run configuration, step counter and the
    random-stream state (all streams are keyed by seed and step).
    """

    params: dict
    config: RunConfig
    step: int = 0
    rng_state: dict = field(default_factory=dict)

    @classmethod
    def from_model(
        cls, model: VLSAModel, step: int = 0, rng_state: dict = None
    ) -> "Checkpoint":
        state = model.state_dict()
        params = {k: v.detach().cpu().numpy().copy() for k, v in state.items()}
        seed = model.config.train.seed
        rng_state = rng_state or {"stream": "philox", "seed": seed, "step": step}
        return cls(params, model.config, step, rng_state)

    def to_model(self) -> VLSAModel:
        model = VLSAModel(self.config).to(model_dtype(self.config))
        state = {k: torch.from_numpy(np.array(v)) for k, v in self.params.items()}
        model.load_state_dict(state)
        model.eval()
        return model

    @property
    def checkpoint_id(self) -> str:
        """Short sha256 over names and payloads."""
        digest = hashlib.sha256()
        for name in sorted(self.params):
            digest.update(name.encode("utf-8"))
            digest.update(np.ascontiguousarray(self.params[name]).tobytes())
        return digest.hexdigest()[:12]

    def document(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "step": self.step,
            "rng_state": self.rng_state,
        }


def _le(array: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(array, dtype=array.dtype.newbyteorder("<"))


def save_checkpoint(ckpt: Checkpoint, path):
    """Write ``ckpt`` to ``path``."""
    doc = json.dumps(ckpt.document(), sort_keys=True).encode("utf-8")
    names = sorted(ckpt.params)
    header = np.zeros(1, dtype=HEADER_DTYPE)
    header["magic"], header["version"] = MAGIC, VERSION
    header["doc_len"], header["count"] = len(doc), len(names)
    table, payloads, offset = [], [], 0
    for name in names:
        array = _le(ckpt.params[name])
        if array.dtype not in CODE_FOR:
            raise CheckpointFormatError(
                path, f"unsupported dtype {array.dtype} for {name}"
            )
        encoded = name.encode("utf-8")
        table.append(np.asarray([len(encoded)], "<u2").tobytes() + encoded)
        table.append(np.asarray([CODE_FOR[array.dtype], array.ndim], "u1").tobytes())
        extents = list(array.shape) + [offset, array.nbytes]
        table.append(np.asarray(extents, "<u8").tobytes())
        payloads.append(array.tobytes())
        offset += array.nbytes
    with open(path, "wb") as f:
        f.write(header.tobytes())
        f.write(doc)
        f.write(b"".join(table))
        f.write(b"".join(payloads))
    logger.info(
        "saved checkpoint %s (step %d, %d tensors)", path, ckpt.step, len(names)
    )
    return path


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        buffer = f.read()
    if len(buffer) < HEADER_DTYPE.itemsize:
        raise CheckpointFormatError(path, "file too short for a checkpoint header")
    header = np.frombuffer(buffer, HEADER_DTYPE, 1)[0]
    if header["magic"] != MAGIC:
        raise CheckpointFormatError(path, f"bad magic {header['magic']!r}")
    if header["version"] != VERSION:
        raise CheckpointFormatError(path, f"unsupported version {header['version']}")
    pos = HEADER_DTYPE.itemsize
    doc_len = int(header["doc_len"])
    try:
        document = json.loads(buffer[pos : pos + doc_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CheckpointFormatError(path, f"bad config document ({err})") from None
    pos += doc_len
    entries = []
    try:
        for _ in range(int(header["count"])):
            n = int(np.frombuffer(buffer, "<u2", 1, pos)[0])
            name = buffer[pos + 2 : pos + 2 + n].decode("utf-8")
            pos += 2 + n
            code, rank = (int(x) for x in np.frombuffer(buffer, "u1", 2, pos))
            pos += 2
            values = np.frombuffer(buffer, "<u8", rank + 2, pos)
            pos += 8 * (rank + 2)
            dims = tuple(int(d) for d in values[:rank])
            entries.append((name, code, dims, int(values[rank])))
    except ValueError as err:
        raise CheckpointFormatError(path, f"truncated tensor table ({err})") from None
    params = {}
    for name, code, dims, offset in entries:
        if code not in DTYPE_CODES:
            raise CheckpointFormatError(path, f"unknown dtype code {code} for {name}")
        dtype = DTYPE_CODES[code]
        count = int(np.prod(dims, dtype=np.int64))
        start = pos + offset
        if start + count * dtype.itemsize > len(buffer):
            raise CheckpointFormatError(path, f"truncated payload for {name}")
        params[name] = np.frombuffer(buffer, dtype, count, start).reshape(dims).astype(
            dtype.newbyteorder("=")
        )
    config = RunConfig.from_dict(document["config"])
    step = int(document["step"])
    return Checkpoint(params, config, step, document.get("rng_state", {}))
