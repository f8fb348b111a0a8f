"""Analytic-property harnesses and spectral measurements.

Covers the spectral-propagation bound (attenuation constants c_k computed by
exhaustive enumeration), the gradient-ratio measurement for the
reparameterization, the basis variance-preservation check, and an empirical
Lipschitz verification.
"""

from __future__ import annotations

import json
import string
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import RangeError
from .model import FactorModel, eval_points, lipschitz_bound
from .tensor import (TRCores, frequency_magnitudes, lowpass_cores, mode_k_dft,
                     tr_contract)

ENUMERATION_CAP = 10 ** 6


@dataclass
class ModeSpectralResult:
    mode: int
    cutoff: int
    epsilon: float  # measured out-of-band max of the core's mode-2 DFT
    c_k: float
    bins: list  # (frequency bin, max magnitude over remaining indices)
    bound_ok: list  # per out-of-band bin
    margin: float  # min over out-of-band bins of c_k*eps - observed


@dataclass
class SpectralReport:
    modes: list[ModeSpectralResult] = field(default_factory=list)

    @property
    def all_bounds_hold(self) -> bool:
        return all(all(m.bound_ok) for m in self.modes)


def _attenuation_constant(cores: TRCores, k: int) -> float:
    """c_k: max over all remaining index tuples of the entrywise l1 norm of the
    matrix product of the remaining cores (ring order k+1, ..., k-1)."""
    d = cores.order
    combos = 1
    for j in range(d):
        if j != k:
            combos *= cores.dims[j]
    if combos > ENUMERATION_CAP:
        raise RangeError(
            f"exhaustive c_k enumeration needs {combos} index combinations "
            f"(cap {ENUMERATION_CAP}); use smaller mode sizes")
    order = [(k + 1 + i) % d for i in range(d - 1)]
    if not order:  # d == 1: the ring closes on itself, M is the identity
        return float(cores.ranks[0])
    letters = string.ascii_lowercase
    bonds = letters[:d]
    data = letters[d:2 * d]
    terms = [bonds[j] + data[j] + bonds[(j + 1) % d] for j in order]
    out = bonds[order[0]] + "".join(data[j] for j in order) + bonds[k]
    m = np.einsum(",".join(terms) + "->" + out,
                  *[cores.cores[j] for j in order], optimize=True)
    # axes 0 and -1 are the (q, p) bond indices of M
    return float(np.max(np.sum(np.abs(m), axis=(0, m.ndim - 1))))


def spectral_bound_check(cores: TRCores, cutoffs) -> SpectralReport:
    """Verify the propagation bound: every out-of-band mode-k DFT bin of the
    reconstruction is bounded by c_k times the core's out-of-band maximum."""
    x = tr_contract(cores)
    report = SpectralReport()
    for k in range(cores.order):
        n = cores.dims[k]
        cutoff = int(cutoffs[k])
        if not 0 <= cutoff <= n // 2:
            raise RangeError(f"cutoff {cutoff} out of range [0, {n // 2}] at mode {k}")
        mags = frequency_magnitudes(n)
        out_band = mags > cutoff
        core_spec = np.abs(mode_k_dft(cores.cores[k], axis=1))
        eps = float(np.max(core_spec[:, out_band, :])) if out_band.any() else 0.0
        c_k = _attenuation_constant(cores, k)
        x_spec = np.abs(np.moveaxis(mode_k_dft(x, axis=k), k, 0))
        bin_max = x_spec.reshape(n, -1).max(axis=1)
        bins = [(int(w), float(bin_max[w])) for w in range(n)]
        slack = 1e-9
        bound_ok = [bool(bin_max[w] <= c_k * eps + slack)
                    for w in range(n) if out_band[w]]
        margins = [c_k * eps - bin_max[w] for w in range(n) if out_band[w]]
        report.modes.append(ModeSpectralResult(
            mode=k, cutoff=cutoff, epsilon=eps, c_k=c_k, bins=bins,
            bound_ok=bound_ok,
            margin=float(min(margins)) if margins else float("inf")))
    return report


def out_of_band_energy(x: np.ndarray, axis: int, cutoff: int) -> float:
    """Total squared magnitude of the DFT bins beyond the cutoff along one mode."""
    spec = np.moveaxis(mode_k_dft(x, axis=axis), axis, 0)
    out_band = frequency_magnitudes(x.shape[axis]) > cutoff
    return float(np.sum(np.abs(spec[out_band]) ** 2))


def lowpass_attenuation_experiment(cores: TRCores, mode: int,
                                   cutoff: int) -> dict:
    """Low-pass one core along its data mode and compare the reconstruction's
    out-of-band energy along that mode before and after."""
    cutoffs = [n // 2 for n in cores.dims]
    cutoffs[mode] = cutoff
    filtered = lowpass_cores(cores, cutoffs)
    before = out_of_band_energy(tr_contract(cores), mode, cutoff)
    after = out_of_band_energy(tr_contract(filtered), mode, cutoff)
    return {"mode": mode, "cutoff": cutoff, "energy_before": before,
            "energy_after": after,
            "drop_orders": float("inf") if after == 0.0
            else float(np.log10(before / after))}


# ---------------------------------------------------------------------------
# Gradient-ratio measurement (reparameterization effect)


@dataclass
class PairRatioResult:
    omega_low: int
    omega_high: int
    g_space_mean: float
    g_space_max: float
    c_space_mean: float
    c_space_max: float
    g_excluded: int
    c_excluded: int
    degenerate: bool
    c_mean_ge_g_mean: bool


@dataclass
class GradientRatioReport:
    pairs: list[PairRatioResult] = field(default_factory=list)
    denominator_floor: float = 1e-15


def _bin_loss(cores_nodes, target: np.ndarray, omega: int) -> ad.Node:
    """Squared magnitude of the omega-th mode-0 DFT bin of (X - target)."""
    x = ad.ring_contract(cores_nodes)
    err = ad.subtract(x, x.tape.constant(target))
    n = err.value.shape[0]
    t = np.arange(n)
    cos_row = np.cos(2 * np.pi * omega * t / n).reshape(1, n)
    sin_row = -np.sin(2 * np.pi * omega * t / n).reshape(1, n)
    flat = ad.reshape(err, (n, -1))
    re = ad.matmul(err.tape.constant(cos_row), flat)
    im = ad.matmul(err.tape.constant(sin_row), flat)
    return ad.add(ad.tensor_sum(ad.square(re)), ad.tensor_sum(ad.square(im)))


def _frequency_gradient(latents, bases, omega: int, reparameterized: bool):
    """Gradient of the bin loss w.r.t. the mode-0 factor (G- or C-space)."""
    tape = ad.Tape()
    if reparameterized:
        cores = [ad.mode3(tape.leaf(c, f"latent{k}"), b)
                 for k, (c, b) in enumerate(zip(latents, bases))]
    else:
        # G-space: the contracted cores themselves are the leaves
        cores = [tape.leaf(np.einsum("pns,js->pnj", c, b), f"core{k}")
                 for k, (c, b) in enumerate(zip(latents, bases))]
    dims = tuple(c.value.shape[1] for c in cores)
    t = np.linspace(0, 2 * np.pi, dims[0], endpoint=False)
    target = np.cos(omega * t).reshape(-1, *([1] * (len(dims) - 1)))
    target = np.broadcast_to(target, dims).copy()
    loss = _bin_loss(cores, target, omega)
    tape.backward(loss)
    name = "latent0" if reparameterized else "core0"
    return tape.leaves[name].grad


def _ratio_stats(gh: np.ndarray, gl: np.ndarray, floor: float):
    keep = np.abs(gl) >= floor
    excluded = int(np.sum(~keep))
    if not keep.any():
        return 0.0, 0.0, excluded
    ratios = np.abs(gh[keep]) / np.abs(gl[keep])
    return float(np.mean(ratios)), float(np.max(ratios)), excluded


def gradient_ratio_experiment(dims=(8, 8, 3), ranks=(2, 2, 2), beta: int = 10,
                              pairs=((1, 3),), seed: int = 0,
                              basis: str = "xavier",
                              floor: float = 1e-15) -> GradientRatioReport:
    """Measure high/low frequency gradient-magnitude ratios in the direct core
    parameterization versus the latent (reparameterized) one, at identical
    reconstruction states. This is a measurement, not a pass/fail check."""
    rng = np.random.default_rng(seed)
    d = len(dims)
    latents, bases = [], []
    for k in range(d):
        r_k, r_next = ranks[k], ranks[(k + 1) % d]
        R = beta * r_next
        latents.append(rng.standard_normal((r_k, dims[k], R)))
        if basis == "identity":
            b = np.zeros((r_next, R))
            b[:, :r_next] = np.eye(r_next)
        elif basis == "zero":
            b = np.zeros((r_next, R))
        else:
            a = np.sqrt(6.0 / (r_next + R))
            b = rng.uniform(-a, a, size=(r_next, R))
        bases.append(b)

    report = GradientRatioReport(denominator_floor=floor)
    for omega_low, omega_high in pairs:
        gh_g = _frequency_gradient(latents, bases, omega_high, reparameterized=False)
        gl_g = _frequency_gradient(latents, bases, omega_low, reparameterized=False)
        gh_c = _frequency_gradient(latents, bases, omega_high, reparameterized=True)
        gl_c = _frequency_gradient(latents, bases, omega_low, reparameterized=True)
        g_mean, g_max, g_exc = _ratio_stats(gh_g, gl_g, floor)
        c_mean, c_max, c_exc = _ratio_stats(gh_c, gl_c, floor)
        degenerate = (g_exc > 0.5 * gh_g.size) or (c_exc > 0.5 * gh_c.size)
        report.pairs.append(PairRatioResult(
            omega_low=omega_low, omega_high=omega_high,
            g_space_mean=g_mean, g_space_max=g_max,
            c_space_mean=c_mean, c_space_max=c_max,
            g_excluded=g_exc, c_excluded=c_exc,
            degenerate=degenerate,
            c_mean_ge_g_mean=bool(c_mean >= g_mean)))
    return report


# ---------------------------------------------------------------------------
# Variance preservation of the basis initialization


@dataclass
class VarianceReport:
    r: int
    R: int
    scheme: str
    trials: int
    forward_measured: float
    forward_predicted: float
    backward_measured: float
    backward_predicted: float

    @property
    def forward_ok(self) -> bool:
        return abs(self.forward_measured / self.forward_predicted - 1.0) <= 0.05

    @property
    def backward_ok(self) -> bool:
        return abs(self.backward_measured / self.backward_predicted - 1.0) <= 0.05


def basis_sigma_squared(r: int, R: int, scheme: str) -> float:
    if scheme == "xavier":
        return 2.0 / (r + R)
    if scheme == "kaiming":
        return 2.0 / R
    raise RangeError(f"unknown scheme {scheme!r}")


def variance_preservation_check(r: int, R: int, scheme: str = "xavier",
                                trials: int = 10 ** 6,
                                seed: int = 0) -> VarianceReport:
    """Monte-Carlo estimate of the forward Var(G)/Var(C) and backward
    Var(dL/dC)/Var(dL/dG) ratios against the derived predictions."""
    if trials < 10 ** 4:
        raise RangeError(f"need at least 1e4 trials, got {trials}")
    rng = np.random.default_rng(seed)
    sigma_b2 = basis_sigma_squared(r, R, scheme)
    a = np.sqrt(3.0 * sigma_b2)
    chunk = 100_000
    fwd_sum = fwd_sq = bwd_sum = bwd_sq = 0.0
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        c = rng.standard_normal((m, R))
        b = rng.uniform(-a, a, size=(m, R))
        g = np.sum(c * b, axis=1)  # one G entry per trial
        fwd_sum += g.sum()
        fwd_sq += (g * g).sum()
        u = rng.standard_normal((m, r))  # upstream grads dL/dG
        b_col = rng.uniform(-a, a, size=(m, r))  # one basis column per trial
        gc = np.sum(u * b_col, axis=1)  # dL/dC entry
        bwd_sum += gc.sum()
        bwd_sq += (gc * gc).sum()
        done += m
    fwd_var = fwd_sq / trials - (fwd_sum / trials) ** 2
    bwd_var = bwd_sq / trials - (bwd_sum / trials) ** 2
    return VarianceReport(
        r=r, R=R, scheme=scheme, trials=trials,
        forward_measured=float(fwd_var), forward_predicted=R * sigma_b2,
        backward_measured=float(bwd_var), backward_predicted=r * sigma_b2)


# ---------------------------------------------------------------------------
# Empirical Lipschitz verification


@dataclass
class LipschitzReport:
    delta: float
    delta_k: list
    pairs_checked: int
    violations: int
    max_quotient: float


def lipschitz_check(model: FactorModel, n_pairs: int = 10 ** 4,
                    seed: int = 0, slack: float = 1e-9) -> LipschitzReport:
    """Check |g(v) - g(v')| <= delta * ||v - v'|| over random coordinate pairs."""
    delta, delta_k = lipschitz_bound(model)
    rng = np.random.default_rng(seed)
    d = model.order
    va = rng.uniform(-1, 1, size=(n_pairs, d))
    vb = rng.uniform(-1, 1, size=(n_pairs, d))
    dist = np.linalg.norm(va - vb, axis=1)
    keep = dist > 0
    gap = np.abs(eval_points(model, va) - eval_points(model, vb))[keep]
    dist = dist[keep]
    violations = int(np.sum(gap > delta * dist + slack))
    max_q = float(np.max(gap / dist)) if dist.size else 0.0
    return LipschitzReport(delta=delta, delta_k=delta_k, pairs_checked=n_pairs,
                           violations=violations, max_quotient=max_q)


def write_report(report, path):
    """Serialize a report dataclass as one JSON object."""
    from .io import atomic_write_bytes

    payload = asdict(report)
    for name in ("all_bounds_hold", "forward_ok", "backward_ok"):
        if hasattr(type(report), name):
            payload[name] = getattr(report, name)
    atomic_write_bytes(path, (json.dumps(payload, indent=2) + "\n").encode("utf-8"))
