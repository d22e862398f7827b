"""Dataset ingestion, preprocessing, splitting, augmentation and batching.

On-disk layout is one directory per class: ``<root>/<class>/*.{jpg,jpeg,png}``.
Class codes are assigned by ascending lexicographic class name so labels are
reproducible without a sidecar file; an optional ``path,class`` CSV manifest
can override the directory convention.

Everything downstream of decoding is deterministic in the declared seeds:
the split permutation, per-epoch batch order, and every augmentation draw
are pure functions of (seed, epoch, record index).
"""

from __future__ import annotations

import csv
import math
import queue
import threading
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import StateError, ValidationError

IMAGE_EXTENSIONS = (".jpg", ".jpeg", ".png")
SPLIT_TAGS = ("train", "val", "test")
DEFAULT_FRACTIONS = (0.70, 0.15, 0.15)
NORMALIZE_MODES = ("unit_scale", "container_declared")

# Guards floor(n * fraction) against the binary representation of decimal
# fractions: 2600 * 0.7 evaluates to 1819.9999999999998.
_CUT_EPS = 1e-9


@dataclass(frozen=True)
class ImageRecord:
    source_path: str
    class_name: str
    width: int
    height: int


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple[ImageRecord, ...]
    class_index: dict[str, int]

    def __post_init__(self):
        codes = sorted(self.class_index.values())
        if codes != list(range(len(codes))):
            raise ValidationError(f"class codes must be 0..K-1 without gaps, got {codes}")
        for record in self.records:
            if record.class_name not in self.class_index:
                raise ValidationError(
                    f"record {record.source_path!r} has unindexed class "
                    f"{record.class_name!r}")

    @property
    def class_names(self):
        return sorted(self.class_index, key=self.class_index.get)

    @property
    def num_classes(self):
        return len(self.class_index)

    def label_of(self, record):
        return self.class_index[record.class_name]

    def indices_by_class(self):
        grouped = {name: [] for name in self.class_index}
        for i, record in enumerate(self.records):
            grouped[record.class_name].append(i)
        return grouped


@dataclass(frozen=True)
class ScanResult:
    manifest: DatasetManifest
    skipped: tuple[tuple[str, str], ...]   # (path, reason)


@dataclass(frozen=True)
class AugmentConfig:
    enabled: bool = False
    horizontal_flip: bool = True
    rotation_degrees: float = 10.0
    rng_seed: object = 0


@dataclass(frozen=True)
class SplitAssignment:
    tags: tuple[str, ...]
    fractions: tuple[float, float, float]
    rng_seed: int

    def indices_for(self, split):
        if split not in SPLIT_TAGS:
            raise ValidationError(f"unknown split {split!r}, expected one of {SPLIT_TAGS}")
        return [i for i, tag in enumerate(self.tags) if tag == split]

    def counts(self):
        return {split: self.tags.count(split) for split in SPLIT_TAGS}


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray     # N x 3 x S x S in the active normalization's range
    labels: np.ndarray     # N int64
    split: str
    indices: tuple[int, ...]


# ---------------------------------------------------------------------------
# scanning


def _probe_image(path):
    """Return (width, height) if the file decodes as an image."""
    with Image.open(path) as im:
        width, height = im.size
        im.verify()
    return width, height


def scan_dataset(root):
    """Walk the directory-per-class layout into a manifest.

    Corrupt or unreadable files land in the skip report instead of failing
    the scan; an entirely empty class is a hard error because it would make
    the label space ambiguous.
    """
    root = Path(root)
    if not root.is_dir():
        raise ValidationError(f"dataset root {str(root)!r} is not a directory")
    class_dirs = sorted((d for d in root.iterdir() if d.is_dir()),
                        key=lambda d: d.name)
    if not class_dirs:
        raise ValidationError(f"dataset root {str(root)!r} contains no class directories")
    records = []
    skipped = []
    for class_dir in class_dirs:
        kept = 0
        files = sorted(p for p in class_dir.iterdir()
                       if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS)
        for path in files:
            try:
                width, height = _probe_image(path)
            except Exception as exc:  # Pillow raises a zoo of decode errors
                skipped.append((str(path), str(exc) or type(exc).__name__))
                continue
            records.append(ImageRecord(str(path), class_dir.name, width, height))
            kept += 1
        if kept == 0:
            raise ValidationError(
                f"class directory {class_dir.name!r} has no decodable images")
    class_index = {d.name: i for i, d in enumerate(class_dirs)}
    return ScanResult(DatasetManifest(tuple(records), class_index), tuple(skipped))


def load_manifest_csv(path):
    """Manifest override: CSV with header ``path,class``; relative paths
    resolve against the CSV's directory."""
    path = Path(path)
    base = path.parent
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["path", "class"]:
            raise ValidationError(
                f"manifest {str(path)!r} must start with header 'path,class'")
        for row in reader:
            if len(row) != 2:
                raise ValidationError(f"malformed manifest row: {row!r}")
            rows.append(row)
    if not rows:
        raise ValidationError(f"manifest {str(path)!r} lists no images")
    records = []
    skipped = []
    for raw_path, class_name in rows:
        resolved = Path(raw_path)
        if not resolved.is_absolute():
            resolved = base / resolved
        try:
            width, height = _probe_image(resolved)
        except Exception as exc:
            skipped.append((str(resolved), str(exc) or type(exc).__name__))
            continue
        records.append(ImageRecord(str(resolved), class_name, width, height))
    if not records:
        raise ValidationError(f"manifest {str(path)!r} has no decodable images")
    class_index = {name: i for i, name in
                   enumerate(sorted({r.class_name for r in records}))}
    return ScanResult(DatasetManifest(tuple(records), class_index), tuple(skipped))


def save_manifest_csv(manifest, path):
    _write_csv(path, ["path", "class"],
               ((r.source_path, r.class_name) for r in manifest.records))


def save_split_csv(manifest, assignment, path):
    _write_csv(path, ["path", "split"],
               ((r.source_path, tag)
                for r, tag in zip(manifest.records, assignment.tags)))


def save_skip_report(skipped, path):
    _write_csv(path, ["path", "reason"], skipped)


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# preprocessing


def load_image(record_or_path):
    """Decode to an 8-bit H x W x 3 RGB array."""
    path = getattr(record_or_path, "source_path", record_or_path)
    with Image.open(path) as im:
        array = np.asarray(im.convert("RGB"), dtype=np.uint8)
    if array.ndim != 3 or array.shape[2] != 3:
        raise ValidationError(f"{path!r} did not decode to an RGB raster")
    return array


def square_crop(image):
    """Centered crop to side min(W, H); the odd leftover pixel is dropped
    from the right (wide inputs) or the bottom (tall inputs)."""
    image = np.asarray(image)
    height, width = image.shape[:2]
    if height < 1 or width < 1:
        raise ValidationError("images must be at least 1x1")
    side = min(height, width)
    top = (height - side) // 2
    left = (width - side) // 2
    return image[top:top + side, left:left + side]


def _bilinear_resize(src, out_h, out_w):
    """Half-pixel-centered bilinear sampling with edge clamping, float64."""
    height, width = src.shape[:2]
    ys = np.clip((np.arange(out_h) + 0.5) * (height / out_h) - 0.5, 0, height - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * (width / out_w) - 0.5, 0, width - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, height - 1)
    x1 = np.minimum(x0 + 1, width - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    top = src[y0][:, x0] * (1.0 - wx) + src[y0][:, x1] * wx
    bottom = src[y1][:, x0] * (1.0 - wx) + src[y1][:, x1] * wx
    return top * (1.0 - wy) + bottom * wy


def resize_to_target(image, target=224):
    """Bilinear resize of a square 8-bit image to target x target."""
    image = np.asarray(image)
    height, width = image.shape[:2]
    if height != width:
        raise ValidationError(
            f"resize expects a square input (apply square_crop first), got {height}x{width}")
    if target < 1:
        raise ValidationError(f"target size must be positive, got {target}")
    if height == target:
        return image.copy()
    resized = _bilinear_resize(image.astype(np.float64), target, target)
    return np.clip(np.rint(resized), 0, 255).astype(np.uint8)


def normalize(image, mode, preprocessing=None):
    """8-bit H x W x 3 to float32 3 x H x W in the declared value range.

    ``container_declared`` applies the affine transform recorded in a loaded
    weight container (pixel * scale + per-channel offset) so imported bases
    see the preprocessing they were trained with.
    """
    image = np.asarray(image)
    if image.dtype != np.uint8 or image.ndim != 3 or image.shape[2] != 3:
        raise ValidationError(
            f"normalize expects an 8-bit H x W x 3 image, got {image.dtype} {image.shape}")
    if mode == "unit_scale":
        out = image.astype(np.float32) / np.float32(255.0)
    elif mode == "container_declared":
        if preprocessing is None:
            raise StateError(
                "container_declared normalization requires loaded container metadata")
        offsets = np.asarray(preprocessing.offsets, dtype=np.float32)
        out = image.astype(np.float32) * np.float32(preprocessing.scale) + offsets
    else:
        raise ValidationError(f"unknown normalization mode {mode!r}")
    return np.ascontiguousarray(out.transpose(2, 0, 1))


# ---------------------------------------------------------------------------
# augmentation


def horizontal_flip(image):
    return np.asarray(image)[:, ::-1]


def rotate(image, degrees):
    """Rotate about the image center, bilinear, edges replicated."""
    image = np.asarray(image)
    height, width = image.shape[:2]
    theta = math.radians(degrees)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    jj, ii = np.meshgrid(np.arange(width), np.arange(height))
    x = jj - cx
    y = ii - cy
    # Inverse mapping: sample the source at the un-rotated position.
    sx = np.clip(cos_t * x + sin_t * y + cx, 0, width - 1)
    sy = np.clip(-sin_t * x + cos_t * y + cy, 0, height - 1)
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    wx = (sx - x0)[..., None]
    wy = (sy - y0)[..., None]
    src = image.astype(np.float64)
    top = src[y0, x0] * (1 - wx) + src[y0, x1] * wx
    bottom = src[y1, x0] * (1 - wx) + src[y1, x1] * wx
    out = top * (1 - wy) + bottom * wy
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def augment(image, config):
    """Seed-deterministic horizontal flip (p=0.5) plus a uniform rotation
    in [-r, +r] degrees. Both draws are always consumed so the stream does
    not depend on which transforms are switched on."""
    if not config.enabled:
        return np.asarray(image)
    rng = np.random.default_rng(config.rng_seed)
    flip = rng.random() < 0.5
    angle = rng.uniform(-config.rotation_degrees, config.rotation_degrees)
    out = np.asarray(image)
    if config.horizontal_flip and flip:
        out = horizontal_flip(out)
    if config.rotation_degrees > 0 and angle != 0.0:
        out = rotate(out, angle)
    return np.ascontiguousarray(out)


def materialize_augmentation(manifest, config, out_root):
    """Physically expand a dataset: write each image plus one augmented
    variant under a fresh directory-per-class tree, and return its scan.

    This is the eager alternative to on-the-fly augmentation for anyone who
    wants the enlarged dataset as files.
    """
    if not config.enabled:
        raise ValidationError("materializing augmentation needs an enabled config")
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    for index, record in enumerate(manifest.records):
        class_dir = out_root / record.class_name
        class_dir.mkdir(exist_ok=True)
        image = load_image(record)
        stem = f"{index:06d}"
        Image.fromarray(image).save(class_dir / f"{stem}_orig.png")
        variant = augment(image, replace(config, rng_seed=(config.rng_seed, index)))
        Image.fromarray(variant).save(class_dir / f"{stem}_aug.png")
    return scan_dataset(out_root)


# ---------------------------------------------------------------------------
# splitting


def stratified_split(manifest, fractions=DEFAULT_FRACTIONS, rng_seed=0):
    """Per-class shuffled split at floor(n*f_train) / floor(n*(f_train+f_val));
    the flooring remainder goes to test. Deterministic in rng_seed."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise ValidationError(f"need three positive fractions, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValidationError(f"fractions must sum to 1, got {sum(fractions)}")
    tags = [None] * len(manifest.records)
    for class_name, indices in sorted(manifest.indices_by_class().items()):
        n = len(indices)
        cut_train = math.floor(n * fractions[0] + _CUT_EPS)
        cut_val = math.floor(n * (fractions[0] + fractions[1]) + _CUT_EPS)
        if cut_train < 1 or cut_val <= cut_train or cut_val >= n:
            raise ValidationError(
                f"class {class_name!r} has {n} records, too few to populate "
                "train, val and test")
        code = manifest.class_index[class_name]
        rng = np.random.default_rng(np.random.SeedSequence((rng_seed, code)))
        perm = rng.permutation(n)
        for position, record_index in enumerate(perm):
            if position < cut_train:
                tag = "train"
            elif position < cut_val:
                tag = "val"
            else:
                tag = "test"
            tags[indices[record_index]] = tag
    return SplitAssignment(tuple(tags), fractions, int(rng_seed))


# ---------------------------------------------------------------------------
# batching


def make_batches(manifest, assignment, split, batch_size, shuffle_seed=0, epoch=0, *,
                 target_size=224, normalize_mode="unit_scale", preprocessing=None,
                 augment_config=None, shuffle=True, dtype=np.float32,
                 loader=None, prefetch=0):
    """Stream Batch objects for one epoch over one split.

    Batch order is a pure function of (shuffle_seed, epoch); the final
    partial batch is emitted. Augmentation applies to the train split only,
    with a per-image seed of (augment seed, epoch, record index). ``loader``
    may override image decoding (tests feed arrays directly); ``prefetch``
    > 0 moves preprocessing onto a producer thread with a bounded queue of
    that depth without changing the order.
    """
    if batch_size < 1:
        raise ValidationError(f"batch size must be at least 1, got {batch_size}")
    if normalize_mode not in NORMALIZE_MODES:
        raise ValidationError(f"unknown normalization mode {normalize_mode!r}")
    indices = assignment.indices_for(split)
    if not indices:
        raise ValidationError(f"split {split!r} is empty")
    if shuffle:
        rng = np.random.default_rng(np.random.SeedSequence((int(shuffle_seed), int(epoch))))
        order = [indices[i] for i in rng.permutation(len(indices))]
    else:
        order = list(indices)
    load = loader or load_image

    def produce():
        for start in range(0, len(order), batch_size):
            chunk = order[start:start + batch_size]
            inputs = []
            labels = []
            for record_index in chunk:
                record = manifest.records[record_index]
                image = load(record)
                image = square_crop(image)
                image = resize_to_target(image, target_size)
                if split == "train" and augment_config is not None and augment_config.enabled:
                    per_image = replace(
                        augment_config,
                        rng_seed=(augment_config.rng_seed, int(epoch), record_index))
                    image = augment(image, per_image)
                inputs.append(normalize(image, normalize_mode, preprocessing))
                labels.append(manifest.label_of(record))
            yield Batch(
                inputs=np.stack(inputs).astype(dtype, copy=False),
                labels=np.asarray(labels, dtype=np.int64),
                split=split,
                indices=tuple(chunk),
            )

    if prefetch > 0:
        return _prefetched(produce(), prefetch)
    return produce()


def _prefetched(generator, depth):
    """Run a generator on a producer thread behind a bounded queue."""
    out = queue.Queue(maxsize=depth)
    done = object()

    def worker():
        try:
            for item in generator:
                out.put(item)
            out.put(done)
        except BaseException as exc:
            out.put(exc)

    thread = threading.Thread(target=worker, daemon=True)
    thread.start()
    while True:
        item = out.get()
        if item is done:
            break
        if isinstance(item, BaseException):
            raise item
        yield item
    thread.join()
