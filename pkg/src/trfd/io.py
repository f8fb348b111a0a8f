"""File formats and data ingestion: RTEN tensors, PNG images, point clouds,
task configs, masks, and noise. All multi-byte values are little-endian and
every writer is atomic (temp file + rename)."""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, FormatError, RangeError, ShapeError
from .objectives import PointSet

TENSOR_MAGIC = b"RTEN"
TENSOR_VERSION = 1


def atomic_write_bytes(path, payload: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_tensor(x: np.ndarray, path):
    """Write a dense tensor as an RTEN container (row-major float64)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 1:
        x = x.reshape(1)
    header = TENSOR_MAGIC + struct.pack("<II", TENSOR_VERSION, x.ndim)
    header += struct.pack(f"<{x.ndim}Q", *x.shape)
    atomic_write_bytes(path, header + np.ascontiguousarray(x, dtype="<f8").tobytes())


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != TENSOR_MAGIC:
        raise FormatError(f"{path}: not an RTEN tensor file (bad magic)")
    version, order = struct.unpack_from("<II", blob, 4)
    if version != TENSOR_VERSION:
        raise FormatError(f"{path}: unsupported RTEN version {version}")
    if order < 1 or len(blob) < 12 + 8 * order:
        raise FormatError(f"{path}: truncated RTEN header")
    dims = struct.unpack_from(f"<{order}Q", blob, 12)
    if any(n < 1 for n in dims):
        raise FormatError(f"{path}: non-positive dimension in header")
    count = int(np.prod(dims))
    expected = 12 + 8 * order + 8 * count
    if len(blob) != expected:
        raise FormatError(
            f"{path}: payload is {len(blob)} bytes, expected {expected}")
    data = np.frombuffer(blob, dtype="<f8", count=count, offset=12 + 8 * order)
    return data.reshape(dims).astype(np.float64)


def load_png(path) -> np.ndarray:
    """8-bit RGB or grayscale PNG mapped to [0, 1] floats."""
    try:
        img = Image.open(path)
        img.load()
    except Exception as exc:
        raise FormatError(f"{path}: cannot read PNG: {exc}") from exc
    if img.mode not in ("L", "RGB"):
        raise FormatError(f"{path}: unsupported PNG mode {img.mode!r} "
                          "(need 8-bit RGB or grayscale)")
    return np.asarray(img, dtype=np.float64) / 255.0


def save_png(x: np.ndarray, path):
    """Clamp to [0, 1], round half-up to 8 bits, and write a PNG."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3 and x.shape[2] == 1:
        x = x[:, :, 0]
    if x.ndim not in (2, 3) or (x.ndim == 3 and x.shape[2] != 3):
        raise ShapeError(f"cannot save shape {x.shape} as PNG")
    quantized = np.floor(np.clip(x, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    mode = "L" if x.ndim == 2 else "RGB"
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.",
                               suffix=".png")
    os.close(fd)
    try:
        Image.fromarray(quantized, mode=mode).save(tmp, format="PNG")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_observation(path) -> np.ndarray:
    """Dispatch on extension: .png images or .rten raw tensors."""
    suffix = Path(path).suffix.lower()
    if suffix == ".png":
        return load_png(path)
    return load_tensor(path)


def load_pointcloud(path) -> PointSet:
    """Text records of (x y z c s); coordinates are min-max normalized per
    column to [-1, 1], constant columns mapping to 0."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.replace(",", " ").split()
            if len(parts) != 5:
                raise FormatError(
                    f"{path}:{lineno}: expected 5 columns, got {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise FormatError(f"{path}: no point records found")
    data = np.asarray(rows, dtype=np.float64)
    raw = data[:, :4]
    lo = raw.min(axis=0)
    hi = raw.max(axis=0)
    span = hi - lo
    coords = np.zeros_like(raw)
    live = span > 0
    coords[:, live] = 2.0 * (raw[:, live] - lo[live]) / span[live] - 1.0
    return PointSet(coords=coords, values=data[:, 4], lo=lo, hi=hi)


def save_pointcloud(points: PointSet, values: np.ndarray, path):
    """Export points with (possibly predicted) scalar values, coordinates
    mapped back to their original range."""
    raw = points.denormalize(points.coords)
    lines = [" ".join(repr(float(v)) for v in (*row, s))
             for row, s in zip(raw, values)]
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


def generate_mask(shape, sampling_ratio: float, seed: int) -> np.ndarray:
    """i.i.d. Bernoulli(sampling_ratio) observation mask."""
    if not 0.0 <= sampling_ratio <= 1.0:
        raise RangeError(f"sampling ratio must lie in [0, 1], got {sampling_ratio}")
    rng = np.random.default_rng(seed)
    return (rng.random(tuple(shape)) < sampling_ratio).astype(np.float64)


def add_noise(x: np.ndarray, sd: float, seed: int) -> np.ndarray:
    """Additive i.i.d. Gaussian noise, unclipped."""
    if sd < 0:
        raise RangeError(f"noise standard deviation must be >= 0, got {sd}")
    x = np.asarray(x, dtype=np.float64)
    if sd == 0.0:
        return x.copy()
    rng = np.random.default_rng(seed)
    return x + sd * rng.standard_normal(x.shape)


# ---------------------------------------------------------------------------
# Task configuration (JSON)

_SCHEMA = {
    "task": str,
    "observation": str,
    "ground_truth": str,
    "mask": str,
    "noise_sd": (int, float),
    "scale": int,
    "ranks": list,
    "beta": int,
    "omega0": (int, float),
    "layers": list,
    "hidden": int,
    "lr": (int, float),
    "iterations": int,
    "gamma1": (int, float),
    "gamma2": (int, float),
    "seed": int,
    "eval_every": int,
    "output_dir": str,
    "variant": str,
    "basis_scheme": str,
    "basis_scale": (int, float),
    "shared_embedding": bool,
    "basis_trainable": bool,
}

_REQUIRED = ("task", "observation", "output_dir")

# Per-task hyperparameter defaults (color-image presets for the grid tasks).
TASK_DEFAULTS = {
    "inpaint": {"rank": 20, "beta": 10, "omega0": 90.0, "layers": [1, 1, 2],
                "gamma1": 5e-5, "gamma2": 5e-5, "iterations": 3000},
    "denoise": {"rank": 16, "beta": 5, "omega0": 120.0, "layers": [1, 1, 2],
                "gamma1": 1e-4, "gamma2": 1e-4, "iterations": 3000},
    "superres": {"rank": 20, "beta": 10, "omega0": 90.0, "layers": [1, 1, 2],
                 "gamma1": 5e-5, "gamma2": 0.0, "iterations": 5000},
    "pointcloud": {"rank": 20, "beta": 3, "omega0": 240.0, "layers": [1, 1, 1, 1],
                   "gamma1": 0.0, "gamma2": 0.0, "iterations": 5000},
}

DEFAULT_LR = 3e-4


def load_task_config(path) -> dict:
    """Parse and schema-validate a task config; unknown keys are rejected and
    every violation is reported at once."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    problems = []
    for key, value in raw.items():
        if key not in _SCHEMA:
            problems.append(f"unknown key {key!r}")
        elif not isinstance(value, _SCHEMA[key]) or isinstance(value, bool) \
                and _SCHEMA[key] is not bool:
            problems.append(f"key {key!r} has wrong type {type(value).__name__}")
    for key in _REQUIRED:
        if key not in raw:
            problems.append(f"missing required key {key!r}")
    task = raw.get("task")
    if task is not None and task not in TASK_DEFAULTS:
        problems.append(f"task must be one of {tuple(TASK_DEFAULTS)}, got {task!r}")
    if task == "inpaint" and "mask" not in raw:
        problems.append("inpainting requires a 'mask' path")
    if task == "superres" and "scale" not in raw:
        problems.append("super-resolution requires an integer 'scale'")
    if raw.get("variant", "reptrfd") not in ("trfd", "reptrfd"):
        problems.append(f"variant must be 'trfd' or 'reptrfd', got {raw.get('variant')!r}")
    if problems:
        raise ConfigError(f"{path}: " + "; ".join(problems))
    return raw


def write_json(obj, path):
    atomic_write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n")
                       .encode("utf-8"))
