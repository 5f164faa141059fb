"""
SA-INR — Artifact Storage Formats

Sidecar arrays (a JSON header next to a raw little-endian float32 payload,
guarded by a 64-bit FNV-1a hash), experiment manifests, 8-bit PGM/PPM
renderings, CSV tables and JSON records.

Every writer produces a deterministic byte stream for identical input.
"""
import csv
import hashlib
import json
import logging
import math
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence, Union

import numpy as np
from PIL import Image
from pydantic import BaseModel, ValidationError

from .config import settings
from .models import ArrayHeader, ExperimentManifest

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK64 = 0xFFFFFFFFFFFFFFFF

HEADER_SUFFIX = ".json"
PAYLOAD_SUFFIX = ".f32"


class StorageError(ValueError):
    """Base class for unreadable or unwritable artifacts."""
    pass


class ArrayFormatError(StorageError):
    """Array header or payload is malformed."""
    pass


class PayloadHashMismatchError(ArrayFormatError):
    """Payload bytes do not hash to the header's FNV-1a value."""
    pass


class PayloadTruncatedError(ArrayFormatError):
    """Payload is shorter than the header's dimensions require."""
    pass


class DimensionOverflowError(ArrayFormatError):
    """Declared dimensions exceed the configured element limit, or the payload is longer than declared."""
    pass


class ManifestError(StorageError):
    """Manifest fails schema validation."""
    pass


def fnv1a64(data: bytes) -> str:
    """64-bit FNV-1a over `data`, as 16 lowercase hex digits."""
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & MASK64
    return f"{h:016x}"


# --- Sidecar arrays ---

def _paths(base: PathLike) -> tuple[Path, Path]:
    base = Path(base)
    return base.with_name(base.name + HEADER_SUFFIX), base.with_name(base.name + PAYLOAD_SUFFIX)


def write_array(base: PathLike, array, name: Optional[str] = None, units: str = "") -> ArrayHeader:
    """Write `<base>.json` and `<base>.f32`; values are stored at single precision."""
    data = np.asarray(array, dtype=np.float64)
    if not np.isfinite(data).all():
        raise ArrayFormatError(f"{base}: refusing to store non-finite values")
    payload = np.ascontiguousarray(data, dtype="<f4").tobytes(order="C")
    header = ArrayHeader(
        name=name or Path(base).name,
        dims=list(data.shape),
        units=units,
        fnv1a64=fnv1a64(payload),
    )
    header_path, payload_path = _paths(base)
    header_path.parent.mkdir(parents=True, exist_ok=True)
    payload_path.write_bytes(payload)
    write_json(header_path, header)
    return header


def read_header(base: PathLike) -> ArrayHeader:
    header_path, _ = _paths(base)
    try:
        return ArrayHeader.model_validate_json(header_path.read_bytes())
    except ValidationError as e:
        raise ArrayFormatError(f"{header_path}: invalid array header: {e}") from e


def read_array(base: PathLike) -> tuple[np.ndarray, ArrayHeader]:
    """
    Read a sidecar array back as float32, verifying length and hash.

    Raises:
        DimensionOverflowError: declared size over the limit, or trailing bytes
        PayloadTruncatedError: payload shorter than declared
        PayloadHashMismatchError: payload corrupted
    """
    header = read_header(base)
    _, payload_path = _paths(base)
    elements = math.prod(header.dims)
    if elements > settings.max_array_elements:
        raise DimensionOverflowError(
            f"{payload_path}: {header.dims} declares {elements} elements, limit is {settings.max_array_elements}"
        )
    payload = payload_path.read_bytes()
    expected = 4 * elements
    if len(payload) < expected:
        raise PayloadTruncatedError(f"{payload_path}: {len(payload)} bytes, dims {header.dims} need {expected}")
    if len(payload) > expected:
        raise DimensionOverflowError(
            f"{payload_path}: {len(payload)} bytes exceed the {expected} declared by dims {header.dims}"
        )
    digest = fnv1a64(payload)
    if digest != header.fnv1a64:
        raise PayloadHashMismatchError(f"{payload_path}: hash {digest} != header {header.fnv1a64}")
    array = np.frombuffer(payload, dtype="<f4").reshape(header.dims).astype(np.float32)
    return array, header


def load_array(base: PathLike) -> np.ndarray:
    """`read_array` promoted to float64 for computation."""
    array, _ = read_array(base)
    return array.astype(np.float64)


# --- Manifest ---

def manifest_json(manifest: ExperimentManifest) -> str:
    return json.dumps(manifest.model_dump(mode="json"), sort_keys=True, indent=2) + "\n"


def manifest_hash(manifest: ExperimentManifest) -> str:
    return hashlib.sha256(manifest_json(manifest).encode("utf-8")).hexdigest()


def write_manifest(path: PathLike, manifest: ExperimentManifest) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(manifest_json(manifest), encoding="utf-8")


def read_manifest(path: PathLike) -> ExperimentManifest:
    path = Path(path)
    try:
        return ExperimentManifest.model_validate_json(path.read_bytes())
    except ValidationError as e:
        fields = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in e.errors()
        )
        raise ManifestError(f"{path}: {fields}") from e


# --- Images ---

def window_to_bytes(img, window: tuple[float, float]) -> np.ndarray:
    """round(255 * clamp((v - lo) / (hi - lo), 0, 1)), halves rounded away from zero."""
    lo, hi = float(window[0]), float(window[1])
    if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
        raise StorageError(f"invalid display window ({lo}, {hi})")
    values = np.asarray(img, dtype=np.float64)
    if not np.isfinite(values).all():
        raise StorageError(f"{int((~np.isfinite(values)).sum())} non-finite pixels cannot be exported")
    scaled = np.clip((values - lo) / (hi - lo), 0.0, 1.0) * 255.0
    return np.floor(scaled + 0.5).astype(np.uint8)


def export_pgm(img, path: PathLike, window: tuple[float, float]) -> None:
    """Binary 8-bit grayscale PGM (P5)."""
    data = window_to_bytes(img, window)
    if data.ndim != 2:
        raise StorageError(f"PGM export needs a 2D image, got shape {data.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(data).save(path, format="PPM")


def export_ppm(rgb, path: PathLike, window: tuple[float, float] = (0.0, 1.0)) -> None:
    """Binary 8-bit RGB PPM (P6) from an (H, W, 3) array."""
    data = window_to_bytes(rgb, window)
    if data.ndim != 3 or data.shape[-1] != 3:
        raise StorageError(f"PPM export needs an (H, W, 3) image, got shape {data.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(data).save(path, format="PPM")


# --- Tables and records ---

def _cell(value: Any) -> str:
    if isinstance(value, float):
        return format(value, ".10g")
    return str(value)


def write_csv(path: PathLike, rows: Iterable[dict], fieldnames: Sequence[str]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(fieldnames), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({key: _cell(row.get(key, "")) for key in fieldnames})


def write_json(path: PathLike, record: Union[BaseModel, dict, list]) -> None:
    """Sorted keys, two-space indent, trailing newline."""
    if isinstance(record, BaseModel):
        record = record.model_dump(mode="json")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(record, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def read_json(path: PathLike) -> Any:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise StorageError(f"{path}: invalid JSON: {e}") from e
