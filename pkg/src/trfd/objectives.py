"""Task losses and regularizers: masked/full/downsampled/point fidelity, TV, SSTV.

Each loss exists twice: a plain numpy evaluation (for metrics and oracles)
and a graph builder producing a differentiable scalar Node.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ShapeError
from .model import FactorModel, graph_point_values, graph_reconstruction

TASK_KINDS = ("inpaint", "denoise", "superres", "pointcloud")


@dataclass
class RegWeights:
    gamma1: float = 0.0  # TV
    gamma2: float = 0.0  # SSTV

    def __post_init__(self):
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ConfigError(
                f"regularization weights must be nonnegative, got "
                f"({self.gamma1}, {self.gamma2})")


@dataclass
class PointSet:
    """Observed point samples: normalized input coordinates plus target scalars.

    coords has shape (N, 4) with columns (x, y, z, c) in [-1, 1]; values has
    shape (N,). lo/hi keep the per-column normalization for inverse mapping.
    """

    coords: np.ndarray
    values: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        if self.coords.ndim != 2 or len(self.values) != len(self.coords):
            raise ShapeError("point set coords/values are inconsistent")
        if len(self.coords) < 1:
            raise ShapeError("point set must contain at least one point")

    def denormalize(self, coords: np.ndarray) -> np.ndarray:
        span = np.where(self.hi > self.lo, self.hi - self.lo, 1.0)
        return (coords + 1.0) / 2.0 * span + self.lo


def _check_mask(mask: np.ndarray, shape) -> np.ndarray:
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != tuple(shape):
        raise ShapeError(f"mask shape {mask.shape} != observation shape {tuple(shape)}")
    if not np.all((mask == 0) | (mask == 1)):
        raise ShapeError("mask entries must be exactly 0 or 1")
    return mask


def masked_mse(x: np.ndarray, obs: np.ndarray, mask: np.ndarray) -> float:
    """Squared Frobenius norm of the masked difference (sum, not mean)."""
    x, obs = np.asarray(x), np.asarray(obs)
    if x.shape != obs.shape:
        raise ShapeError(f"shape mismatch: {x.shape} vs {obs.shape}")
    mask = _check_mask(mask, x.shape)
    return float(np.sum(mask * (x - obs) ** 2))


def tv(x: np.ndarray) -> float:
    """l1 norm of forward differences along the two spatial modes."""
    x = np.asarray(x)
    if x.ndim < 2:
        raise ShapeError("total variation needs at least two modes")
    return float(np.sum(np.abs(np.diff(x, axis=0))) +
                 np.sum(np.abs(np.diff(x, axis=1))))


def sstv(x: np.ndarray) -> float:
    """l1 norm of mixed spatial-spectral second differences (spectral mode 3 first)."""
    x = np.asarray(x)
    if x.ndim < 3:
        raise ShapeError("spatial-spectral TV needs at least three modes")
    dz = np.diff(x, axis=2)
    return float(np.sum(np.abs(np.diff(dz, axis=0))) +
                 np.sum(np.abs(np.diff(dz, axis=1))))


def downsample(x: np.ndarray, s: int) -> np.ndarray:
    """Non-overlapping s×s spatial block averaging."""
    x = np.asarray(x)
    if x.ndim < 2:
        raise ShapeError("downsampling needs at least two modes")
    n1, n2 = x.shape[:2]
    if s < 1 or n1 % s or n2 % s:
        raise ShapeError(f"spatial dims ({n1}, {n2}) not divisible by factor {s}")
    return x.reshape(n1 // s, s, n2 // s, s, *x.shape[2:]).mean(axis=(1, 3))


# ---------------------------------------------------------------------------
# Differentiable graph versions


def graph_masked_mse(x: ad.Node, obs: np.ndarray, mask: np.ndarray) -> ad.Node:
    mask = _check_mask(mask, x.value.shape)
    diff = ad.subtract(x, x.tape.constant(np.asarray(obs, dtype=np.float64)))
    return ad.tensor_sum(ad.multiply(ad.square(diff), x.tape.constant(mask)))


def graph_mse(x: ad.Node, obs: np.ndarray) -> ad.Node:
    diff = ad.subtract(x, x.tape.constant(np.asarray(obs, dtype=np.float64)))
    return ad.tensor_sum(ad.square(diff))


def graph_tv(x: ad.Node) -> ad.Node:
    if x.value.ndim < 2:
        raise ShapeError("total variation needs at least two modes")
    return ad.add(ad.tensor_sum(ad.absolute(ad.diff(x, axis=0))),
                  ad.tensor_sum(ad.absolute(ad.diff(x, axis=1))))


def graph_sstv(x: ad.Node) -> ad.Node:
    if x.value.ndim < 3:
        raise ShapeError("spatial-spectral TV needs at least three modes")
    dz = ad.diff(x, axis=2)
    return ad.add(ad.tensor_sum(ad.absolute(ad.diff(dz, axis=0))),
                  ad.tensor_sum(ad.absolute(ad.diff(dz, axis=1))))


def _add_regularizers(loss: ad.Node, x: ad.Node, reg: RegWeights,
                      allow_sstv: bool = True) -> ad.Node:
    if reg.gamma1 > 0:
        loss = ad.add(loss, ad.scale(graph_tv(x), reg.gamma1))
    if reg.gamma2 > 0:
        if not allow_sstv:
            raise ConfigError("SSTV weight set on a task that does not support it")
        if x.value.ndim < 3:
            raise ConfigError("SSTV requires at least a third-order reconstruction")
        loss = ad.add(loss, ad.scale(graph_sstv(x), reg.gamma2))
    return loss


def task_loss(task, model: FactorModel, tape: ad.Tape | None = None) -> ad.Node:
    """Differentiable scalar loss for a RecoveryTask (see trainer.RecoveryTask)."""
    tape = tape or ad.Tape()
    kind = task.kind
    if kind not in TASK_KINDS:
        raise ConfigError(f"unknown task kind {kind!r}")
    reg = task.reg or RegWeights()

    if kind == "pointcloud":
        if reg.gamma1 or reg.gamma2:
            raise ConfigError("point-cloud recovery takes no regularizer")
        points: PointSet = task.observation
        values = graph_point_values(model, tape, points.coords)
        diff = ad.subtract(values, tape.constant(points.values))
        return ad.tensor_sum(ad.square(diff))

    x = graph_reconstruction(model, tape, task.grids)
    obs = np.asarray(task.observation, dtype=np.float64)
    if kind == "inpaint":
        if task.mask is None:
            raise ConfigError("inpainting requires a mask")
        loss = graph_masked_mse(x, obs, task.mask)
        return _add_regularizers(loss, x, reg)
    if kind == "denoise":
        loss = graph_mse(x, obs)
        return _add_regularizers(loss, x, reg)
    # superres
    if task.scale is None or task.scale < 1:
        raise ConfigError("super-resolution requires a positive integer scale")
    down = ad.avg_pool(x, task.scale)
    if down.value.shape != obs.shape:
        raise ShapeError(
            f"downsampled shape {down.value.shape} != observation {obs.shape}")
    loss = graph_mse(down, obs)
    return _add_regularizers(loss, x, reg, allow_sstv=False)
