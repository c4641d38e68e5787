"""Binary model checkpoints.

Layout (all integers little-endian):

    magic   4 bytes  b"D3CK"
    version u32      currently 1
    kind    u8 length + ascii bytes ("d3" or "dbase")
    quality u32   stage1 size u32   stage2 size u32   block dim u32
    seed    u64
    count   u32      number of named tensors
    tensors          name length u32, name utf-8, rank u32, dims u32 each,
                     float64 data, row-major

Both diagonal scaling layers are serialized (theta and its element-wise
reciprocal) even though only theta is free; the reciprocal view makes the
tie explicit on disk and is verified on load.
"""

import struct

import numpy as np

from .errors import (
    CheckpointError,
    CheckpointMagicError,
    CheckpointTruncatedError,
    CheckpointVersionError,
)
from .jpegcodec import BLOCK_DIM, DCT
from .network import DenseBaselineModel, DualDomainModel, SparseStage

MAGIC = b"D3CK"
VERSION = 1


def _named_tensors(model):
    if model.kind == "d3":
        return [
            ("stage1.analysis", model.stage1.analysis),
            ("stage1.synthesis", model.stage1.synthesis),
            ("stage1.theta", model.stage1.theta),
            ("stage1.theta_recip", model.stage1.theta_recip),
            ("stage2.analysis", model.stage2.analysis),
            ("stage2.synthesis", model.stage2.synthesis),
            ("stage2.theta", model.stage2.theta),
            ("stage2.theta_recip", model.stage2.theta_recip),
        ]
    return [(f"w{i + 1}", w) for i, w in enumerate(model.weights)]


def _sizes(model):
    if model.kind == "d3":
        return model.stage1.size, model.stage2.size
    return model.weights[0].shape[0], model.weights[2].shape[0]


def save_model(model, path) -> None:
    """Serialize a model; load(save(m)) is bit-identical."""
    p1, p2 = _sizes(model)
    meta = model.meta
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        kind = model.kind.encode("ascii")
        fh.write(struct.pack("<B", len(kind)))
        fh.write(kind)
        fh.write(struct.pack(
            "<IIII", int(meta.get("quality", 0)), p1, p2, BLOCK_DIM
        ))
        fh.write(struct.pack("<Q", int(meta.get("seed", 0))))
        tensors = _named_tensors(model)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors:
            arr = np.ascontiguousarray(arr, dtype=np.float64)
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.data):
            raise CheckpointTruncatedError(
                f"checkpoint ends at byte {len(self.data)}, needed {self.pos + count}"
            )
        chunk = self.data[self.pos : self.pos + count]
        self.pos += count
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_model(path):
    """Load a checkpoint written by save_model."""
    with open(path, "rb") as fh:
        reader = _Reader(fh.read())
    if reader.take(4) != MAGIC:
        raise CheckpointMagicError(f"{path}: bad magic")
    (version,) = reader.unpack("<I")
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: version {version}, expected {VERSION}")
    (kind_len,) = reader.unpack("<B")
    kind = reader.take(kind_len).decode("ascii")
    quality, p1, p2, block_dim = reader.unpack("<IIII")
    (seed,) = reader.unpack("<Q")
    if block_dim != BLOCK_DIM:
        raise CheckpointError(f"{path}: block dimension {block_dim} unsupported")
    (count,) = reader.unpack("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<I")
        name = reader.take(name_len).decode("utf-8")
        (rank,) = reader.unpack("<I")
        dims = reader.unpack(f"<{rank}I")
        size = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(reader.take(size * 8), dtype="<f8").reshape(dims)
        tensors[name] = data.astype(np.float64)

    meta = {"quality": quality, "seed": seed, "p1": p1, "p2": p2}
    try:
        if kind == "d3":
            stages = []
            for s in ("stage1", "stage2"):
                theta = tensors[f"{s}.theta"]
                recip = tensors[f"{s}.theta_recip"]
                if not np.array_equal(recip, 1.0 / theta):
                    raise CheckpointError(
                        f"{path}: {s} scaling layers are not exact reciprocals"
                    )
                stages.append(SparseStage(
                    analysis=tensors[f"{s}.analysis"],
                    synthesis=tensors[f"{s}.synthesis"],
                    theta=theta,
                ))
            return DualDomainModel(transform=DCT, stage1=stages[0], stage2=stages[1], meta=meta)
        if kind == "dbase":
            weights = [tensors[f"w{i}"] for i in (1, 2, 3, 4)]
            return DenseBaselineModel(weights=weights, meta=meta)
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing tensor {exc}") from exc
    raise CheckpointError(f"{path}: unknown model kind {kind!r}")
