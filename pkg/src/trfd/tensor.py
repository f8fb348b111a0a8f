"""Dense tensor-ring algebra: entry evaluation, contraction, mode-k products and DFTs.

Tensors are plain float64 numpy arrays in row-major (C) order, last index
fastest. Modes are 0-based axes in code.
"""

from __future__ import annotations

import string
from dataclasses import dataclass

import numpy as np

from .errors import NumericError, RangeError, ShapeError


@dataclass(frozen=True)
class TRCores:
    """An ordered chain of third-order cores closed into a ring.

    Core k has shape (r_k, n_k, r_{k+1}) and the last bond wraps around:
    r_{d+1} == r_1.
    """

    cores: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.cores) == 0:
            raise ShapeError("a tensor ring needs at least one core")
        cores = tuple(np.asarray(c, dtype=np.float64) for c in self.cores)
        object.__setattr__(self, "cores", cores)
        for k, core in enumerate(cores):
            if core.ndim != 3:
                raise ShapeError(f"core {k} must be third-order, got ndim={core.ndim}")
        for k, core in enumerate(cores):
            nxt = cores[(k + 1) % len(cores)]
            if core.shape[2] != nxt.shape[0]:
                raise ShapeError(
                    f"bond mismatch between core {k} (r={core.shape[2]}) and "
                    f"core {(k + 1) % len(cores)} (r={nxt.shape[0]})"
                )

    @property
    def order(self) -> int:
        return len(self.cores)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(c.shape[1] for c in self.cores)

    @property
    def ranks(self) -> tuple[int, ...]:
        return tuple(c.shape[0] for c in self.cores)


def tr_entry(cores: TRCores, index) -> float:
    """Entry at a 1-based multi-index: trace of the left-to-right slice product."""
    if len(index) != cores.order:
        raise ShapeError(f"index has {len(index)} entries, expected {cores.order}")
    for k, (v, n) in enumerate(zip(index, cores.dims)):
        if not 1 <= v <= n:
            raise RangeError(f"index {v} out of range [1, {n}] at mode {k}")
    acc = cores.cores[0][:, index[0] - 1, :]
    for k in range(1, cores.order):
        acc = acc @ cores.cores[k][:, index[k] - 1, :]
    return float(np.trace(acc))


def _ring_subscripts(d: int) -> tuple[list[str], str]:
    """Einsum subscripts for contracting d ring cores into the full tensor."""
    if 2 * d > len(string.ascii_lowercase):
        raise ShapeError(f"order {d} too large for einsum contraction")
    bond = string.ascii_lowercase[:d]
    data = string.ascii_lowercase[d:2 * d]
    terms = [bond[k] + data[k] + bond[(k + 1) % d] for k in range(d)]
    return terms, data


def tr_contract(cores: TRCores) -> np.ndarray:
    """Full reconstruction; entrywise equal to tr_entry."""
    terms, out = _ring_subscripts(cores.order)
    if cores.order == 1:
        # einsum "aia->i" handles the self-closing bond directly
        return np.einsum("aia->i", cores.cores[0])
    spec = ",".join(terms) + "->" + out
    return np.einsum(spec, *cores.cores, optimize=True)


def tr_contract_gradients(cores: TRCores, upstream: np.ndarray) -> list[np.ndarray]:
    """Gradients of sum(upstream * tr_contract(cores)) w.r.t. every core."""
    d = cores.order
    terms, out = _ring_subscripts(d)
    grads = []
    for k in range(d):
        if d == 1:
            g = np.zeros_like(cores.cores[0])
            idx = np.arange(g.shape[0])
            g[idx, :, idx] = upstream[None, :]
            grads.append(g)
            continue
        others = [terms[j] for j in range(d) if j != k]
        spec = out + "," + ",".join(others) + "->" + terms[k]
        args = [cores.cores[j] for j in range(d) if j != k]
        grads.append(np.einsum(spec, upstream, *args, optimize=True))
    return grads


def mode_k_product(x: np.ndarray, m: np.ndarray, axis: int) -> np.ndarray:
    """Contract axis `axis` of x against the columns of matrix m."""
    x = np.asarray(x)
    m = np.asarray(m)
    if not 0 <= axis < x.ndim:
        raise RangeError(f"axis {axis} out of range for order-{x.ndim} tensor")
    if m.ndim != 2 or m.shape[1] != x.shape[axis]:
        raise ShapeError(
            f"matrix shape {m.shape} incompatible with mode size {x.shape[axis]}"
        )
    out = np.tensordot(m, x, axes=(1, axis))  # new axis lands in front
    return np.moveaxis(out, 0, axis)


def dft_matrix(n: int) -> np.ndarray:
    """Unnormalized forward DFT matrix, F[a, b] = exp(-2πi·a·b/n)."""
    idx = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(idx, idx) / n)


def mode_k_dft(x: np.ndarray, axis: int) -> np.ndarray:
    """Unnormalized DFT along one mode."""
    x = np.asarray(x)
    if not 0 <= axis < x.ndim:
        raise RangeError(f"axis {axis} out of range for order-{x.ndim} tensor")
    return np.fft.fft(x, axis=axis)


def mode_k_idft(x: np.ndarray, axis: int) -> np.ndarray:
    """Inverse of mode_k_dft (applies the 1/n normalization)."""
    x = np.asarray(x)
    if not 0 <= axis < x.ndim:
        raise RangeError(f"axis {axis} out of range for order-{x.ndim} tensor")
    return np.fft.ifft(x, axis=axis)


def frequency_magnitudes(n: int) -> np.ndarray:
    """Aliased frequency magnitude of each DFT bin: min(ω, n-ω)."""
    omega = np.arange(n)
    return np.minimum(omega, n - omega)


def lowpass_cores(cores: TRCores, cutoffs) -> TRCores:
    """Zero each core's mode-2 DFT bins with frequency magnitude above its cutoff."""
    if len(cutoffs) != cores.order:
        raise ShapeError(f"need {cores.order} cutoffs, got {len(cutoffs)}")
    filtered = []
    for k, core in enumerate(cores.cores):
        n = core.shape[1]
        omega = int(cutoffs[k])
        if not 0 <= omega <= n // 2:
            raise RangeError(f"cutoff {omega} out of range [0, {n // 2}] at mode {k}")
        spec = mode_k_dft(core, axis=1)
        keep = frequency_magnitudes(n) <= omega
        spec[:, ~keep, :] = 0.0
        back = mode_k_idft(spec, axis=1)
        if np.max(np.abs(back.imag)) > 1e-10:
            raise NumericError("unexpected imaginary residue after lowpass filtering")
        filtered.append(back.real)
    return TRCores(tuple(filtered))
