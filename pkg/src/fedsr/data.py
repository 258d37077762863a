"""Image IO, patch extraction and deterministic test-set generation."""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .degradation import VARIANTS, degrade, test_variant_specs
from .errors import CorruptedDatasetError, InvalidArgumentError, ParseError
from .rng import derive_stream
from .tensor import DTYPE

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


@dataclass
class ImageRecord:
    id: str
    hr: np.ndarray  # (3, H, W) float32 in [0, 1]


def _read_token(data: bytes, pos: int, path) -> tuple[bytes, int, int]:
    """Next header token, its start offset and the offset just past it."""
    n = len(data)
    while pos < n:
        ch = data[pos:pos + 1]
        if ch == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ParseError("unexpected end of header", pos, path)
    return data[start:pos], start, pos


def decode_ppm(data: bytes, path=None) -> np.ndarray:
    """Decode a binary P6 (maxval 255) payload into a (3,H,W) float32 tensor."""
    magic, _, pos = _read_token(data, 0, path)
    if magic != b"P6":
        raise ParseError(f"not a binary PPM (magic {magic!r})", 0, path)
    fields, starts = [], []
    for what in ("width", "height", "maxval"):
        tok, start, pos = _read_token(data, pos, path)
        if not tok.isdigit():
            raise ParseError(f"invalid {what} {tok!r}", start, path)
        fields.append(int(tok))
        starts.append(start)
    width, height, maxval = fields
    if maxval != 255:
        raise ParseError(f"unsupported maxval {maxval}, expected 255", starts[2], path)
    if width < 1 or height < 1:
        raise ParseError(f"invalid dimensions {width}x{height}", starts[0], path)
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise ParseError("missing whitespace after maxval", pos, path)
    pos += 1
    need = width * height * 3
    payload = data[pos:pos + need]
    if len(payload) < need:
        raise ParseError(
            f"truncated payload: expected {need} bytes, found {len(payload)}",
            pos + len(payload), path,
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return (pixels.transpose(2, 0, 1).astype(DTYPE) / DTYPE(255.0))


def encode_ppm(image) -> bytes:
    if image.ndim != 3 or image.shape[0] != 3:
        raise InvalidArgumentError(f"expected a (3,H,W) image, got {image.shape}")
    _, h, w = image.shape
    q = np.floor(np.clip(image.astype(np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    return f"P6\n{w} {h}\n255\n".encode("ascii") + q.transpose(1, 2, 0).tobytes()


def load_ppm(path) -> ImageRecord:
    path = Path(path)
    return ImageRecord(path.stem, decode_ppm(path.read_bytes(), path=str(path)))


def save_ppm(image, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_ppm(image))


def mod_crop(image, scale: int):
    _, h, w = image.shape
    return image[:, : h - h % scale, : w - w % scale]


def _anchors(length: int, patch: int, stride: int) -> list[int]:
    out = list(range(0, length - patch + 1, stride))
    if out[-1] + patch < length:
        out.append(length - patch)
    return out


def extract_patches(image, patch: int, stride: int) -> list[np.ndarray]:
    """Row-major grid of ``patch`` squares; the last row/column is snapped to the border."""
    hr = image.hr if isinstance(image, ImageRecord) else image
    if patch < 1 or stride < 1:
        raise InvalidArgumentError("patch and stride must be positive")
    _, h, w = hr.shape
    if patch > min(h, w):
        return []
    return [
        hr[:, y:y + patch, x:x + patch].copy()
        for y in _anchors(h, patch, stride)
        for x in _anchors(w, patch, stride)
    ]


def list_ppm(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"not a directory: {directory}")
    return sorted(p for p in directory.rglob("*.ppm") if p.is_file())


def load_dataset(directory) -> list[ImageRecord]:
    """Load every PPM under ``directory``, sorted by path."""
    return [load_ppm(p) for p in list_ppm(directory)]


def _image_id(root: Path, path: Path) -> str:
    rel = path.relative_to(root)
    return rel.parts[0] if len(rel.parts) > 1 else path.stem


def dataset_ids(directory) -> list[str]:
    root = Path(directory)
    return sorted({_image_id(root, p) for p in list_ppm(root)})


def load_training_set(directory, patch: int, stride: int, scale: int) -> dict[str, np.ndarray]:
    """Map image id -> stacked HR patches ``(P,3,patch,patch)``.

    Files directly under ``directory`` are images keyed by stem. Files inside a
    sub-directory (the layout written by :func:`write_training_patches`) are
    grouped under the sub-directory name, so one source image stays one id.
    """
    if patch % scale:
        raise InvalidArgumentError(f"patch {patch} not divisible by scale {scale}")
    root = Path(directory)
    groups: dict[str, list[np.ndarray]] = {}
    for path in list_ppm(root):
        groups.setdefault(_image_id(root, path), []).extend(
            extract_patches(load_ppm(path).hr, patch, stride)
        )
    empty = [k for k, v in groups.items() if not v]
    if empty:
        raise InvalidArgumentError(f"images smaller than patch {patch}: {empty}")
    return {k: np.stack(v) for k, v in sorted(groups.items())}


def write_training_patches(records, out_dir, patch: int, stride: int) -> int:
    out_dir = Path(out_dir)
    count = 0
    for rec in records:
        for k, p in enumerate(extract_patches(rec, patch, stride)):
            save_ppm(p, out_dir / rec.id / f"{k:04d}.ppm")
            count += 1
    return count


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def pregenerate_test_variants(dataset, scale: int, out_dir, master_seed: int = 0,
                              test_params=None) -> dict:
    """Write HR references, the 8 degraded LR variants and ``manifest.json``.

    The noise field for an image comes from stream ``noise/{image_id}``, so every
    noisy variant of that image shares one realization.
    """
    out_dir = Path(out_dir)
    ids = [r.id for r in dataset]
    if len(set(ids)) != len(ids):
        raise InvalidArgumentError("image ids must be unique")
    specs = test_variant_specs(scale, test_params)
    hr_files = []
    records = []
    for rec in dataset:
        hr = mod_crop(rec.hr, scale)
        rel = Path("hr") / f"{rec.id}.ppm"
        save_ppm(hr, out_dir / rel)
        hr_files.append({"id": rec.id, "path": rel.as_posix(), "sha256": sha256_file(out_dir / rel)})
        records.append((rec.id, hr))
    variants = []
    for name in VARIANTS:
        spec = specs[name]
        files = []
        for image_id, hr in records:
            lr = degrade(hr, spec, derive_stream(master_seed, f"noise/{image_id}"))
            rel = Path(name) / f"{image_id}.ppm"
            save_ppm(lr, out_dir / rel)
            files.append({"id": image_id, "path": rel.as_posix(),
                          "sha256": sha256_file(out_dir / rel)})
        variants.append({"name": name, "spec": spec.to_dict(), "files": files})
        log.info("wrote variant %s (%d images)", name, len(files))
    manifest = {"scale": scale, "master_seed": master_seed, "hr": hr_files, "variants": variants}
    (out_dir / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def load_manifest(path) -> tuple[dict, Path]:
    """Read a manifest (file or directory holding one); returns it with its root."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    return json.loads(path.read_text()), path.parent


def verify_manifest(manifest, root) -> None:
    entries = list(manifest.get("hr", []))
    for v in manifest["variants"]:
        entries.extend(v["files"])
    for entry in entries:
        path = Path(root) / entry["path"]
        if not path.is_file():
            raise CorruptedDatasetError(f"missing file {path}")
        digest = sha256_file(path)
        if digest != entry["sha256"]:
            raise CorruptedDatasetError(
                f"digest mismatch for {path}: manifest {entry['sha256'][:12]}..., "
                f"file {digest[:12]}..."
            )


def synthetic_image(seed: int, size: int = 64, label: str = "synthetic") -> np.ndarray:
    """Procedural RGB test image: gradients, oriented sinusoids and discs."""
    rng = derive_stream(seed, label)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    img = np.empty((3, size, size))
    for c in range(3):
        gx, gy = rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4)
        img[c] = 0.5 + gx * (xx - 0.5) + gy * (yy - 0.5)
    for _ in range(3):
        freq = rng.uniform(2.0, 10.0)
        theta = rng.uniform(0.0, math.pi)
        phase = rng.uniform(0.0, 2 * math.pi)
        amp = rng.uniform(0.05, 0.15)
        wave = np.sin(2 * math.pi * freq * (xx * math.cos(theta) + yy * math.sin(theta)) + phase)
        tint = np.array([rng.uniform(0.5, 1.0) for _ in range(3)])
        img += amp * tint[:, None, None] * wave
    for _ in range(4):
        cx, cy = rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)
        radius = rng.uniform(0.05, 0.2)
        color = np.array([rng.uniform(0.0, 1.0) for _ in range(3)])
        mask = (xx - cx) ** 2 + (yy - cy) ** 2 < radius ** 2
        img[:, mask] = 0.5 * img[:, mask] + 0.5 * color[:, None]
    return np.clip(img, 0.0, 1.0).astype(DTYPE)


def synthetic_corpus(count: int, size: int = 64, seed: int = 0, prefix: str = "img"):
    return [ImageRecord(f"{prefix}{i:03d}", synthetic_image(seed, size, f"synthetic/{prefix}/{i}"))
            for i in range(count)]
