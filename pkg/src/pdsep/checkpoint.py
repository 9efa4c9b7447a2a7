"""PDGM checkpoint files.

Layout (little-endian)::

    b"PDGM"  u16 version
    u32 len  arch descriptor as key=value text
    u32 N    f64 lr  f64 rho  f64 eps
    per sub-model: u64 step, u32 count, parameter blocks, u32 count, optimizer blocks
    u32 CRC32 of everything above

A block is ``u16 name_len, name, u32 ndim, u32 extents..., f32 data``.
"""

from __future__ import annotations

import io
import struct
import zlib
from pathlib import Path

import numpy as np

from .backbone import RMSProp, Tensor
from .dataset import FormatError, _Reader
from .nets import ArchDescriptor, critic_shapes, generator_shapes
from .trainer import PDualGanModel, SubModel

MAGIC = b"PDGM"
VERSION = 1


def _block(buf: io.BytesIO, name: str, array: np.ndarray) -> None:
    raw = name.encode("utf-8")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<I", array.ndim))
    buf.write(struct.pack(f"<{array.ndim}I", *array.shape))
    buf.write(np.ascontiguousarray(array, dtype="<f4").tobytes())


def _read_block(r: _Reader) -> tuple[str, np.ndarray]:
    (n,) = r.unpack("H")
    name = r.take(n).decode("utf-8")
    (ndim,) = r.unpack("I")
    shape = r.unpack(f"{ndim}I") if ndim else ()
    return name, r.floats(shape)


def encode(model: PDualGanModel) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<H", VERSION))
    arch = model.desc.to_text().encode("utf-8")
    buf.write(struct.pack("<I", len(arch)))
    buf.write(arch)
    opt = model.subs[0].opt_g
    buf.write(struct.pack("<Iddd", model.n, opt.lr, opt.rho, opt.eps))
    for i, sub in enumerate(model.subs):
        buf.write(struct.pack("<Q", sub.step))
        params = sub.named_params()
        buf.write(struct.pack("<I", len(params)))
        for name, t in params.items():
            _block(buf, f"sub{i}/{name}", t.data)
        states = sub.named_states()
        buf.write(struct.pack("<I", len(states)))
        for name, acc in states.items():
            _block(buf, f"sub{i}/opt/{name}", acc)
    body = buf.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


def decode(data: bytes) -> PDualGanModel:
    if data[:4] != MAGIC:
        raise FormatError("not a PDGM checkpoint (bad magic bytes)")
    r = _Reader(data)
    r.take(4)
    (version,) = r.unpack("H")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version} (expected {VERSION})")
    (arch_len,) = r.unpack("I")
    try:
        desc = ArchDescriptor.from_text(r.take(arch_len).decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise FormatError(f"invalid architecture block: {exc}") from None
    n, lr, rho, eps = r.unpack("Iddd")
    subs = []
    for i in range(n):
        (step,) = r.unpack("Q")
        (count,) = r.unpack("I")
        params = dict(_read_block(r) for _ in range(count))
        (count,) = r.unpack("I")
        states = dict(_read_block(r) for _ in range(count))
        subs.append(_rebuild(desc, i, step, params, states, lr, rho, eps))
    body_end = r.pos
    (crc,) = r.unpack("I")
    if r.pos != len(data):
        raise FormatError("trailing bytes after checkpoint trailer")
    if zlib.crc32(data[:body_end]) != crc:
        raise FormatError("checkpoint checksum mismatch")
    return PDualGanModel(desc, subs)


def _rebuild(desc, i, step, params, states, lr, rho, eps) -> SubModel:
    groups = {}
    for group, shapes in (("G_A", generator_shapes(desc)), ("G_B", generator_shapes(desc)),
                          ("D_A", critic_shapes(desc)), ("D_B", critic_shapes(desc))):
        tensors = {}
        for name, shape in shapes.items():
            key = f"sub{i}/{group}/{name}"
            if key not in params:
                raise FormatError(f"checkpoint is missing parameter {key}")
            if params[key].shape != tuple(shape):
                raise FormatError(f"parameter {key} has shape {params[key].shape}, expected {shape}")
            tensors[name] = Tensor(params[key], requires_grad=True, dtype=np.float32)
        groups[group] = tensors
    gen = {f"G_A/{k}": v for k, v in groups["G_A"].items()} | {f"G_B/{k}": v for k, v in groups["G_B"].items()}
    opts = {"G": RMSProp(gen, lr, rho, eps), "D_A": RMSProp(groups["D_A"], lr, rho, eps),
            "D_B": RMSProp(groups["D_B"], lr, rho, eps)}
    for prefix, opt in opts.items():
        for name in opt.acc:
            key = f"sub{i}/opt/{prefix}/{name}"
            if key not in states:
                raise FormatError(f"checkpoint is missing optimizer state {key}")
            opt.acc[name] = states[key].copy()
    return SubModel(groups["G_A"], groups["G_B"], groups["D_A"], groups["D_B"],
                    opts["G"], opts["D_A"], opts["D_B"], step=step)


def save_checkpoint(model: PDualGanModel, path) -> None:
    Path(path).write_bytes(encode(model))


def load_checkpoint(path) -> PDualGanModel:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from None
    return decode(data)
