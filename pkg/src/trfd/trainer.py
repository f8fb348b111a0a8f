"""Adam training loop over a FactorModel for any recovery task.

Full-batch, deterministic under the task seed, with a loss/PSNR trace and a
NaN guard that keeps the last good parameter state.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, NumericError
from .metrics import psnr
from .model import FactorModel, build_cores
from .objectives import PointSet, RegWeights, TASK_KINDS, task_loss
from .tensor import tr_contract


def grid_coordinates(dims) -> list[np.ndarray]:
    """Per-mode training grids, normalized to [-1, 1]."""
    grids = []
    for n in dims:
        grids.append(np.zeros(1) if n == 1 else np.linspace(-1.0, 1.0, n))
    return grids


@dataclass
class RecoveryTask:
    kind: str
    observation: object  # ndarray, or PointSet for pointcloud
    mask: np.ndarray | None = None
    scale: int | None = None
    reg: RegWeights = field(default_factory=RegWeights)
    grids: list | None = None
    iterations: int = 3000
    seed: int = 0
    eval_every: int = 100
    ground_truth: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ConfigError(f"unknown task kind {self.kind!r}")
        if self.kind == "inpaint" and self.mask is None:
            raise ConfigError("inpainting requires a mask")
        if self.kind != "inpaint" and self.mask is not None:
            raise ConfigError(f"mask given for task {self.kind!r}")
        if self.kind == "superres" and (self.scale is None or self.scale < 1):
            raise ConfigError("super-resolution requires a positive integer scale")
        if self.kind != "superres" and self.scale is not None:
            raise ConfigError(f"scale factor given for task {self.kind!r}")
        if self.kind == "pointcloud" and not isinstance(self.observation, PointSet):
            raise ConfigError("point-cloud task needs a PointSet observation")
        if self.iterations < 0:
            raise ConfigError("iteration count must be nonnegative")
        if self.grids is None and self.kind != "pointcloud":
            obs = np.asarray(self.observation)
            dims = obs.shape
            if self.kind == "superres":
                dims = (obs.shape[0] * self.scale, obs.shape[1] * self.scale) \
                    + obs.shape[2:]
            self.grids = grid_coordinates(dims)


@dataclass
class TrainTrace:
    entries: list[tuple[int, float, float | None]] = field(default_factory=list)

    def log(self, iteration: int, loss: float, psnr_db: float | None = None):
        if self.entries and iteration <= self.entries[-1][0]:
            raise ValueError("trace iterations must be strictly increasing")
        self.entries.append((iteration, loss, psnr_db))

    def to_csv(self) -> str:
        lines = ["iter,loss,psnr"]
        for it, loss, p in self.entries:
            lines.append(f"{it},{loss!r},{'' if p is None else repr(p)}")
        return "\n".join(lines) + "\n"


@dataclass
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict[str, np.ndarray],
              grads: dict[str, np.ndarray]):
    """Standard bias-corrected Adam update, in place."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    for name, theta in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in parameter {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        state.m[name] = b1 * state.m[name] + (1 - b1) * g
        state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = state.m[name] / (1 - b1 ** state.t)
        v_hat = state.v[name] / (1 - b2 ** state.t)
        theta -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def _trace_psnr(model: FactorModel, task: RecoveryTask) -> float | None:
    if task.ground_truth is None or task.kind == "pointcloud":
        return None
    recon = tr_contract(build_cores(model, task.grids))
    return psnr(recon, task.ground_truth, peak=1.0)


def train(task: RecoveryTask, model: FactorModel,
          lr: float = 3e-4) -> tuple[FactorModel, TrainTrace]:
    """Run full-batch Adam for task.iterations steps; returns (model, trace).

    On a non-finite loss or gradient the loop aborts and the last finite
    parameter state is restored.
    """
    trace = TrainTrace()
    if task.iterations == 0:
        return model, trace
    state = AdamState(lr=lr)
    params = dict(model.parameters())
    last_good = None
    for it in range(task.iterations):
        tape = ad.Tape()
        loss = task_loss(task, model, tape)
        loss_val = float(loss.value)
        log_now = it % task.eval_every == 0 or it == task.iterations - 1
        if not np.isfinite(loss_val):
            if last_good is not None:
                model.set_parameters(last_good)
            raise NumericError(f"loss became non-finite at iteration {it}; "
                               "last good checkpoint retained")
        if log_now:
            trace.log(it, loss_val, _trace_psnr(model, task))
            last_good = {name: arr.copy() for name, arr in params.items()}
        tape.backward(loss)
        try:
            adam_step(state, params, tape.gradients())
        except NumericError:
            if last_good is not None:
                model.set_parameters(last_good)
            raise
    return model, trace
