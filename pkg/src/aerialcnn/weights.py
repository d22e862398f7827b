"""Weight container serialization.

A container is a single little-endian binary file:

    u32   magic 0x4C575453 (bytes ``STWL`` on disk)
    u32   format version, currently 1
    u32   architecture-id byte length, then that many UTF-8 bytes
    f32   preprocessing scale
    3*f32 preprocessing per-channel offsets
    u32   entry count
    per entry:
        u32     name byte length, then that many UTF-8 bytes
        u8      rank
        rank*u32 dimensions
        f32[n]  row-major payload, n = product of dimensions
    u32   CRC-32 over every byte after the 4-byte magic

Entry names follow the parameter naming contract enforced by the model
graph, so a container can be checked against a graph by name and shape
alone. Loading is strict: wrong magic, wrong version, truncation, trailing
bytes, or a checksum mismatch each raise a dedicated error.
"""

import os
import re
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from . import models
from .errors import (
    ContainerChecksumError,
    ContainerError,
    ContainerMagicError,
    ContainerTruncatedError,
    ContainerVersionError,
    ValidationError,
)

MAGIC = 0x4C575453
FORMAT_VERSION = 1


@dataclass(frozen=True)
class Preprocessing:
    """Affine pixel transform a container declares for its weights:
    ``value * scale + offsets[channel]`` applied to raw uint8 input."""

    scale: float
    offsets: tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "scale", float(self.scale))
        offsets = tuple(float(v) for v in self.offsets)
        if len(offsets) != 3:
            raise ValidationError(
                f"preprocessing needs one offset per RGB channel, got {len(offsets)}")
        if not np.isfinite([self.scale, *offsets]).all():
            raise ValidationError("preprocessing scale/offsets must be finite")
        object.__setattr__(self, "offsets", offsets)


UNIT_SCALE = Preprocessing(scale=1.0 / 255.0, offsets=(0.0, 0.0, 0.0))


@dataclass(frozen=True)
class WeightContainer:
    architecture_id: str
    preprocessing: Preprocessing
    entries: dict[str, np.ndarray]

    def __post_init__(self):
        clean = {}
        for name, value in self.entries.items():
            if not models.PARAM_NAME_PATTERN.match(name):
                raise ValidationError(
                    f"entry name {name!r} violates the parameter naming contract")
            clean[name] = np.ascontiguousarray(value, dtype=np.float32)
        object.__setattr__(self, "entries", clean)

    @property
    def total_parameters(self):
        return sum(v.size for v in self.entries.values())


def container_from_graph(graph, preprocessing=None):
    """Snapshot a populated graph. Entry order follows the graph's own
    parameter order so repeated saves are byte-identical."""
    graph.require_populated()
    if preprocessing is None:
        preprocessing = graph.preprocessing or UNIT_SCALE
    entries = {name: graph.params[name] for name in graph.param_names()}
    return WeightContainer(graph.architecture_id, preprocessing, entries)


# ---------------------------------------------------------------------------
# save


def save_weights(container, path):
    blob = bytearray()
    blob += struct.pack("<I", MAGIC)
    arch = container.architecture_id.encode("utf-8")
    blob += struct.pack("<I", len(arch)) + arch
    blob += struct.pack("<f", container.preprocessing.scale)
    blob += struct.pack("<3f", *container.preprocessing.offsets)
    blob += struct.pack("<I", len(container.entries))
    for name, value in container.entries.items():
        encoded = name.encode("utf-8")
        blob += struct.pack("<I", len(encoded)) + encoded
        blob += struct.pack("<B", value.ndim)
        blob += struct.pack(f"<{value.ndim}I", *value.shape)
        blob += value.astype("<f4", copy=False).tobytes(order="C")
    # Version sits between magic and arch id; splice it in so the CRC spans
    # everything after the magic, version included.
    blob[4:4] = struct.pack("<I", FORMAT_VERSION)
    blob += struct.pack("<I", zlib.crc32(blob[4:]))
    with open(path, "wb") as fh:
        fh.write(blob)
        fh.flush()
        os.fsync(fh.fileno())


# ---------------------------------------------------------------------------
# load


class _Cursor:
    def __init__(self, blob, end):
        self.blob = blob
        self.end = end        # structural bytes stop here; CRC follows
        self.pos = 4          # magic already consumed
        self.context = "header"

    def take(self, count):
        if self.pos + count > self.end:
            raise ContainerTruncatedError(
                f"container ends inside {self.context} "
                f"(needed {count} bytes at offset {self.pos}, "
                f"structure ends at {self.end})")
        piece = self.blob[self.pos:self.pos + count]
        self.pos += count
        return piece

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def u8(self):
        return self.take(1)[0]

    def f32(self, count=1):
        return struct.unpack(f"<{count}f", self.take(4 * count))


def load_weights(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4:
        raise ContainerTruncatedError(
            f"file is {len(blob)} bytes, too short for the magic number")
    magic = struct.unpack("<I", blob[:4])[0]
    if magic != MAGIC:
        raise ContainerMagicError(
            f"bad magic 0x{magic:08X}, expected 0x{MAGIC:08X}")
    if len(blob) < 12:
        raise ContainerTruncatedError(
            f"file is {len(blob)} bytes, too short for version and checksum")

    cur = _Cursor(blob, len(blob) - 4)
    version = cur.u32()
    if version != FORMAT_VERSION:
        raise ContainerVersionError(
            f"unsupported container version {version}, expected {FORMAT_VERSION}")

    cur.context = "architecture id"
    arch = cur.take(cur.u32()).decode("utf-8")
    cur.context = "preprocessing"
    scale = cur.f32()[0]
    offsets = cur.f32(3)
    cur.context = "entry count"
    count = cur.u32()

    entries = {}
    for i in range(count):
        cur.context = f"entry {i} name"
        name = cur.take(cur.u32()).decode("utf-8")
        cur.context = f"entry {name!r}"
        rank = cur.u8()
        dims = tuple(cur.u32() for _ in range(rank))
        payload = cur.take(4 * int(np.prod(dims, dtype=np.int64)))
        if name in entries:
            raise ContainerError(f"duplicate entry {name!r}")
        entries[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()

    if cur.pos != cur.end:
        raise ContainerError(
            f"{cur.end - cur.pos} unexpected bytes between the last entry "
            "and the checksum")
    stored = struct.unpack("<I", blob[-4:])[0]
    actual = zlib.crc32(blob[4:-4])
    if stored != actual:
        raise ContainerChecksumError(
            f"checksum mismatch: stored 0x{stored:08X}, computed 0x{actual:08X}")

    return WeightContainer(arch, Preprocessing(scale, offsets), entries)


# ---------------------------------------------------------------------------
# applying containers to graphs


def apply_weights(graph, container, strict=True):
    """Install container entries into ``graph.params``.

    Strict mode demands an exact cover of the graph's parameters. Either
    way validation runs to completion before anything is written, so a
    failed apply leaves the graph untouched. The container's declared
    preprocessing is recorded on the graph.
    """
    if container.architecture_id != graph.architecture_id:
        raise ValidationError(
            f"container was saved for {container.architecture_id!r} but the "
            f"graph is {graph.architecture_id!r}")
    _check_cover(graph, container.entries, strict=strict)
    staged = {name: value.astype(graph.dtype)
              for name, value in container.entries.items()}
    graph.params.update(staged)
    graph.preprocessing = container.preprocessing
    return graph


def apply_base_weights(graph, container):
    """Install a headless base container into a transfer graph built on it.
    Head parameters are left alone (initialize them with only_missing)."""
    expected = f"{container.architecture_id}_transfer"
    if graph.architecture_id != expected:
        raise ValidationError(
            f"base container {container.architecture_id!r} does not match "
            f"transfer graph {graph.architecture_id!r}")
    _check_cover(graph, container.entries, strict=False)
    staged = {name: value.astype(graph.dtype)
              for name, value in container.entries.items()}
    graph.params.update(staged)
    graph.preprocessing = container.preprocessing
    return graph


def _check_cover(graph, entries, strict):
    specs = {p.name: p for p in graph.param_specs}
    extra = sorted(set(entries) - set(specs))
    if extra:
        raise ValidationError(
            f"container carries {len(extra)} entries the graph does not "
            f"declare: {', '.join(extra[:5])}")
    if strict:
        missing = sorted(set(specs) - set(entries))
        if missing:
            raise ValidationError(
                f"container is missing {len(missing)} graph parameters: "
                f"{', '.join(missing[:5])}")
    mismatched = [
        f"{name}: container {tuple(value.shape)} vs graph {specs[name].shape}"
        for name, value in entries.items()
        if tuple(value.shape) != tuple(specs[name].shape)
    ]
    if mismatched:
        raise ValidationError(
            "entry shapes disagree with the graph: " + "; ".join(mismatched[:5]))


def graph_for_container(container, num_classes=None):
    """Rebuild the graph a container belongs to, inferring headedness and
    class count from the entries themselves when possible."""
    arch = container.architecture_id
    inferred = _final_dense_units(container)
    if inferred is None and _is_base_id(arch):
        return _headless(arch)
    return models.build_for_architecture(arch, num_classes=num_classes or inferred)


def _is_base_id(arch):
    return arch == "vgg16" or bool(re.fullmatch(r"mobilenet_v2_w\d{3}", arch))


def _headless(arch):
    if arch == "vgg16":
        return models.build_vgg16(include_reference_head=False)
    m = re.fullmatch(r"mobilenet_v2_w(\d{3})", arch)
    if m:
        return models.build_mobilenet_v2(int(m.group(1)) / 100.0,
                                         include_head=False)
    raise ValidationError(f"unknown base architecture {arch!r}")


def _final_dense_units(container):
    """Bias length of the highest-indexed dense entry, i.e. the class count
    of a headed container; None when the container has no dense layers."""
    best = None
    for name, value in container.entries.items():
        m = re.fullmatch(r"dense_(\d+)/bias", name)
        if m:
            index = int(m.group(1))
            if best is None or index > best[0]:
                best = (index, value.size)
    return None if best is None else best[1]
