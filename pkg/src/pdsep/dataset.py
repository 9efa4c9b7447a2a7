"""Labelled mixture datasets and the PDG1 container format.

Layout (all little-endian)::

    b"PDG1"  u16 version
    u32 N  u32 rank  u32 extents...  u32 kind  u32 count  u64 seed
    count x record:
        f32 mixture[...]  f32 source_1[...] ... f32 source_N[...]
        u32 kind  u32 kernel_ndim  u32 kernel_extents...  u64 seed  f32 scale
        f32 coeffs[N, *kernel_extents]

rank 1 records carry one extent (T); rank 2 records carry three (H, W, C).
A sibling ``<path>.manifest`` file repeats the header as key=value lines.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .mixing import MixKind, MixingSpec, mix, random_spec

MAGIC = b"PDG1"
FORMAT_VERSION = 1
SPLITS = {"train": 0, "test": 1}


class FormatError(ValueError):
    """A container file is malformed or truncated."""


@dataclass
class SampleRecord:
    mixture: np.ndarray
    sources: list
    spec: MixingSpec

    def __post_init__(self):
        for s in self.sources:
            if s.shape != self.mixture.shape:
                raise ValueError(f"source shape {s.shape} differs from mixture shape {self.mixture.shape}")


@dataclass
class Manifest:
    n: int
    shape: tuple
    kind: MixKind
    count: int
    seed: int
    version: int = FORMAT_VERSION

    @property
    def rank(self) -> int:
        return 1 if len(self.shape) == 1 else 2

    def to_text(self, extra: dict | None = None) -> str:
        items = {
            "format": "PDG1",
            "version": self.version,
            "n": self.n,
            "rank": self.rank,
            "shape": ",".join(str(d) for d in self.shape),
            "kind": self.kind.short,
            "count": self.count,
            "seed": self.seed,
        }
        items.update(extra or {})
        return "".join(f"{k}={v}\n" for k, v in items.items())


@dataclass
class Dataset:
    records: list
    manifest: Manifest
    info: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i) -> SampleRecord:
        return self.records[i]


def synth_dataset(
    bank: Sequence[np.ndarray],
    count: int,
    kind,
    n: int,
    k: int = 8,
    seed: int = 0,
    split: str = "train",
) -> Dataset:
    """Mix the first ``n`` bank sources ``count`` times with fresh random weights.

    Every record shares the same base sources. Each record's spec seed is drawn
    from a stream keyed by (seed, split), so train and test splits built from
    one seed never share a weight draw.
    """
    kind = MixKind.parse(kind)
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if n < 2:
        raise ValueError(f"need at least 2 sources, got {n}")
    if len(bank) < n:
        raise ValueError(f"source bank has {len(bank)} sources, need {n}")
    if split not in SPLITS:
        raise ValueError(f"split must be one of {sorted(SPLITS)}, got {split!r}")
    sources = [np.asarray(s, dtype=np.float32) for s in bank[:n]]
    shape = sources[0].shape
    rank = 1 if len(shape) == 1 else 2
    seeds = np.random.default_rng([seed, SPLITS[split]]).integers(0, 2**63, size=count, dtype=np.uint64)
    records = []
    for rec_seed in seeds:
        spec = random_spec(kind, n, k, seed=int(rec_seed), rank=rank)
        spec.coeffs = spec.coeffs.astype(np.float32)
        mixture, scale = mix([s.astype(np.float64) for s in sources], MixingSpec(spec.kind, spec.coeffs.astype(np.float64)))
        spec.scale = float(np.float32(scale))
        records.append(SampleRecord(mixture.astype(np.float32), [s.copy() for s in sources], spec))
    manifest = Manifest(n=n, shape=tuple(shape), kind=kind, count=count, seed=seed)
    return Dataset(records, manifest, info={"split": split, "klen": k if kind is MixKind.CONVOLUTIVE else 0})


# -- container IO --------------------------------------------------------------

def _f32(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def encode(dataset: Dataset) -> bytes:
    m = dataset.manifest
    if len(dataset.records) != m.count:
        raise ValueError(f"manifest count {m.count} != {len(dataset.records)} records")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<H", m.version))
    buf.write(struct.pack("<II", m.n, m.rank))
    buf.write(struct.pack(f"<{len(m.shape)}I", *m.shape))
    buf.write(struct.pack("<IIQ", int(m.kind), m.count, m.seed))
    for rec in dataset.records:
        if len(rec.sources) != m.n or rec.mixture.shape != tuple(m.shape):
            raise ValueError("record does not match the manifest's N and shape")
        buf.write(_f32(rec.mixture))
        for s in rec.sources:
            buf.write(_f32(s))
        kshape = rec.spec.kernel_shape
        buf.write(struct.pack("<II", int(rec.spec.kind), len(kshape)))
        buf.write(struct.pack(f"<{len(kshape)}I", *kshape))
        buf.write(struct.pack("<Qf", rec.spec.seed, rec.spec.scale))
        buf.write(_f32(rec.spec.coeffs))
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("file is truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        fmt = "<" + fmt
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, shape) -> np.ndarray:
        count = int(np.prod(shape, dtype=np.int64))
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float32).reshape(shape)


def decode(data: bytes) -> Dataset:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise FormatError("not a PDG1 dataset (bad magic bytes)")
    (version,) = r.unpack("H")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported PDG1 version {version}")
    n, rank = r.unpack("II")
    if rank not in (1, 2):
        raise FormatError(f"invalid rank {rank}")
    shape = r.unpack("I" if rank == 1 else "3I")
    kind_code, count, seed = r.unpack("IIQ")
    try:
        kind = MixKind(kind_code)
    except ValueError:
        raise FormatError(f"invalid mixing kind code {kind_code}") from None
    records = []
    for _ in range(count):
        mixture = r.floats(shape)
        sources = [r.floats(shape) for _ in range(n)]
        rec_kind, kdim = r.unpack("II")
        kshape = r.unpack(f"{kdim}I") if kdim else ()
        rec_seed, scale = r.unpack("Qf")
        coeffs = r.floats((n,) + tuple(kshape))
        try:
            spec = MixingSpec(MixKind(rec_kind), coeffs, seed=rec_seed, scale=float(scale))
        except ValueError as exc:
            raise FormatError(f"invalid record spec: {exc}") from None
        records.append(SampleRecord(mixture, sources, spec))
    if r.pos != len(data):
        raise FormatError("trailing bytes after the last record")
    return Dataset(records, Manifest(n=n, shape=tuple(shape), kind=kind, count=count, seed=seed, version=version))


def save_dataset(dataset: Dataset, path) -> None:
    path = Path(path)
    path.write_bytes(encode(dataset))
    extra = {k: v for k, v in dataset.info.items()}
    Path(str(path) + ".manifest").write_text(dataset.manifest.to_text(extra))


def load_dataset(path) -> Dataset:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read dataset {path}: {exc}") from None
    return decode(data)
