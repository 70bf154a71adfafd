"""On-disk artifact I/O: PGM images, binary masks, flow fields, float maps,
model checkpoints, and dataset manifests.

Array conventions used throughout the package:

- grayscale image: float32 array of shape (H, W), values in [0, 1]
- binary mask:     uint8 array of shape (H, W), values in {0, 1}
                   (1 = virtual-image region, 0 = real-image region)
- float map:       float32 array of shape (H, W), finite values
- flow field:      float32 array of shape (H, W, 2); [..., 0] = u, [..., 1] = v

All multi-byte integers and floats on disk are little-endian. Readers raise
FormatError / ValidationError on malformed input, never a bare exception.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, ShapeError, ValidationError

FLO_MAGIC = b"PIEH"
FLOATMAP_MAGIC = b"LMEF"
CHECKPOINT_MAGIC = b"MRVS"
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# PGM (P5, maxval 255)
# ---------------------------------------------------------------------------

def _read_pgm_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    """Next whitespace-delimited header token, skipping '#' comments."""
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c in b" \t\r\n":
            pos += 1
        elif c == b"#":
            while pos < n and buf[pos:pos + 1] != b"\n":
                pos += 1
        else:
            break
    start = pos
    while pos < n and buf[pos:pos + 1] not in b" \t\r\n":
        pos += 1
    if start == pos:
        raise FormatError("truncated PGM header")
    return buf[start:pos], pos


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM (P5) file into a float32 image scaled to [0, 1]."""
    buf = Path(path).read_bytes()
    if buf[:2] != b"P5":
        raise FormatError(f"not a binary PGM (P5) file: {path}")
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _read_pgm_token(buf, pos)
        if not tok.isdigit():
            raise FormatError(f"malformed PGM header token {tok!r} in {path}")
        fields.append(int(tok))
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"unsupported PGM maxval {maxval} (expected 255)")
    if width <= 0 or height <= 0:
        raise FormatError(f"invalid PGM dimensions {width}x{height}")
    pos += 1  # single whitespace byte after maxval
    payload = buf[pos:pos + width * height]
    if len(payload) != width * height:
        raise FormatError(
            f"truncated PGM payload: expected {width * height} bytes, "
            f"got {len(payload)}"
        )
    data = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return (data.astype(np.float32) / 255.0)


def write_pgm(img: np.ndarray, path) -> None:
    """Write a [0, 1] grayscale image as binary PGM; values round half up."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise ShapeError(f"expected 2-d image, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValidationError("image contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValidationError("image values outside [0, 1]")
    height, width = img.shape
    data = np.floor(img.astype(np.float64) * 255.0 + 0.5).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (width, height))
        fh.write(data.tobytes())


def read_mask(path) -> np.ndarray:
    """Read a binary mask stored as PGM with values {0, 255} only."""
    img = read_pgm(path)
    raw = np.floor(img * 255.0 + 0.5).astype(np.uint8)
    if not np.isin(raw, (0, 255)).all():
        raise ValidationError(
            f"mask file {path} contains values other than 0 and 255"
        )
    return (raw == 255).astype(np.uint8)


def write_mask(mask: np.ndarray, path) -> None:
    """Write a {0, 1} mask as a {0, 255} PGM file."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ShapeError(f"expected 2-d mask, got shape {mask.shape}")
    if not np.isin(mask, (0, 1)).all():
        raise ValidationError("mask values must be 0 or 1")
    write_pgm(mask.astype(np.float32), path)


# ---------------------------------------------------------------------------
# Middlebury .flo
# ---------------------------------------------------------------------------

def read_flo(path) -> np.ndarray:
    """Read a Middlebury .flo flow field into a float32 (H, W, 2) array."""
    buf = Path(path).read_bytes()
    if buf[:4] != FLO_MAGIC:
        raise FormatError(f"bad .flo magic {buf[:4]!r} in {path}")
    if len(buf) < 12:
        raise FormatError(f"truncated .flo header in {path}")
    width, height = struct.unpack("<ii", buf[4:12])
    if width <= 0 or height <= 0:
        raise FormatError(f"invalid .flo dimensions {width}x{height}")
    expected = width * height * 2 * 4
    payload = buf[12:]
    if len(payload) != expected:
        raise FormatError(
            f".flo payload size mismatch: expected {expected} bytes, "
            f"got {len(payload)}"
        )
    flow = np.frombuffer(payload, dtype="<f4").reshape(height, width, 2)
    return flow.astype(np.float32)


def write_flo(flow: np.ndarray, path) -> None:
    flow = np.asarray(flow, dtype=np.float32)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ShapeError(f"expected (H, W, 2) flow, got shape {flow.shape}")
    height, width = flow.shape[:2]
    with open(path, "wb") as fh:
        fh.write(FLO_MAGIC)
        fh.write(struct.pack("<ii", width, height))
        fh.write(flow.astype("<f4").tobytes())


# ---------------------------------------------------------------------------
# LMEF float map
# ---------------------------------------------------------------------------

def read_floatmap(path) -> np.ndarray:
    """Read an LMEF float map into a float32 (H, W) array."""
    buf = Path(path).read_bytes()
    if buf[:4] != FLOATMAP_MAGIC:
        raise FormatError(f"bad float-map magic {buf[:4]!r} in {path}")
    if len(buf) < 12:
        raise FormatError(f"truncated float-map header in {path}")
    width, height = struct.unpack("<ii", buf[4:12])
    if width <= 0 or height <= 0:
        raise FormatError(f"invalid float-map dimensions {width}x{height}")
    expected = width * height * 4
    payload = buf[12:]
    if len(payload) != expected:
        raise FormatError(
            f"float-map payload size mismatch: expected {expected} bytes, "
            f"got {len(payload)}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(height, width)
    if not np.all(np.isfinite(data)):
        raise ValidationError(f"float map {path} contains non-finite values")
    return data.astype(np.float32)


def write_floatmap(fmap: np.ndarray, path) -> None:
    fmap = np.asarray(fmap, dtype=np.float32)
    if fmap.ndim != 2:
        raise ShapeError(f"expected 2-d float map, got shape {fmap.shape}")
    if not np.all(np.isfinite(fmap)):
        raise ValidationError("float map contains non-finite values")
    height, width = fmap.shape
    with open(path, "wb") as fh:
        fh.write(FLOATMAP_MAGIC)
        fh.write(struct.pack("<ii", width, height))
        fh.write(fmap.astype("<f4").tobytes())


# ---------------------------------------------------------------------------
# MRVS checkpoints (named float32 tensor collections)
# ---------------------------------------------------------------------------

def save_checkpoint(state: dict[str, np.ndarray], path) -> None:
    """Serialize a name -> tensor mapping. Entries are written in the
    mapping's iteration order so identical dicts produce identical bytes."""
    names = list(state.keys())
    if len(set(names)) != len(names):
        raise ValidationError("duplicate tensor names in checkpoint state")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<ii", CHECKPOINT_VERSION, len(names)))
        for name in names:
            arr = np.ascontiguousarray(state[name], dtype=np.float32)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<i", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<i", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<i", dim))
            fh.write(arr.astype("<f4").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {buf[:4]!r} in {path}")
    if len(buf) < 12:
        raise FormatError(f"truncated checkpoint header in {path}")
    version, count = struct.unpack("<ii", buf[4:12])
    if version != CHECKPOINT_VERSION:
        raise FormatError(
            f"checkpoint version mismatch: found {version}, "
            f"expected {CHECKPOINT_VERSION}"
        )
    if count < 0:
        raise FormatError(f"invalid checkpoint entry count {count}")
    state: dict[str, np.ndarray] = {}
    pos = 12

    def take(nbytes: int) -> bytes:
        nonlocal pos
        if pos + nbytes > len(buf):
            raise FormatError(f"truncated checkpoint payload in {path}")
        chunk = buf[pos:pos + nbytes]
        pos += nbytes
        return chunk

    for _ in range(count):
        (name_len,) = struct.unpack("<i", take(4))
        if name_len <= 0:
            raise FormatError(f"invalid tensor name length {name_len}")
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<i", take(4))
        if rank < 0 or rank > 8:
            raise FormatError(f"invalid tensor rank {rank}")
        shape = struct.unpack("<%di" % rank, take(4 * rank))
        if any(d <= 0 for d in shape):
            raise FormatError(f"invalid tensor shape {shape} for {name!r}")
        size = int(np.prod(shape, dtype=np.int64)) if rank else 1
        data = np.frombuffer(take(4 * size), dtype="<f4")
        if name in state:
            raise FormatError(f"duplicate tensor name {name!r} in {path}")
        state[name] = data.astype(np.float32).reshape(shape)
    if pos != len(buf):
        raise FormatError(f"trailing bytes after checkpoint payload in {path}")
    return state


# ---------------------------------------------------------------------------
# Dataset manifests
# ---------------------------------------------------------------------------

_SPLITS = ("train", "val", "test")


@dataclasses.dataclass
class ManifestEntry:
    frame_prev_path: str
    frame_curr_path: str
    mask_path: str
    split: str
    stereo_right_path: str | None = None
    flow_path: str | None = None
    calib_id: str | None = None


@dataclasses.dataclass
class DatasetManifest:
    """Sample list plus the calibrations their entries reference.

    Paths are stored relative to the manifest file; `root` is filled on
    load so they can be resolved.
    """

    entries: list[ManifestEntry]
    calibrations: dict[str, dict] = dataclasses.field(default_factory=dict)
    root: Path | None = None

    def split_entries(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def resolve(self, rel: str) -> Path:
        return (self.root / rel) if self.root is not None else Path(rel)


def save_manifest(manifest: DatasetManifest, path) -> None:
    doc = {
        "entries": [dataclasses.asdict(e) for e in manifest.entries],
        "calibrations": manifest.calibrations,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "entries" not in doc:
        raise FormatError(f"manifest {path} is missing the 'entries' list")
    calibrations = doc.get("calibrations", {})
    entries = []
    for raw in doc["entries"]:
        try:
            entry = ManifestEntry(**raw)
        except TypeError as exc:
            raise FormatError(f"bad manifest entry {raw!r}: {exc}") from exc
        if entry.split not in _SPLITS:
            raise ValidationError(
                f"entry split {entry.split!r} not one of {_SPLITS}"
            )
        if entry.calib_id is not None and entry.calib_id not in calibrations:
            raise ValidationError(
                f"entry references unknown calibration {entry.calib_id!r}"
            )
        entries.append(entry)
    manifest = DatasetManifest(entries=entries, calibrations=calibrations,
                               root=path.parent)
    for entry in entries:
        for rel in (entry.frame_prev_path, entry.frame_curr_path,
                    entry.mask_path, entry.stereo_right_path,
                    entry.flow_path):
            if rel is not None and not manifest.resolve(rel).exists():
                raise ValidationError(
                    f"manifest references missing file {rel!r}"
                )
    return manifest
