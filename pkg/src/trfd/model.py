"""Factor networks for tensor-ring functional decomposition.

A FactorModel maps scalar coordinates to ring-core slices through a shared
sinusoidal embedding and one MLP branch per mode. The "reptrfd" variant
routes each branch output (a widened latent slice) through a fixed basis
matrix; the "trfd" variant emits core slices directly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, FormatError, NumericError, RangeError, ShapeError
from .tensor import TRCores

VARIANTS = ("trfd", "reptrfd")
BASIS_SCHEMES = ("xavier", "kaiming", "explicit")

CHECKPOINT_MAGIC = b"RTRF"
CHECKPOINT_VERSION = 1


@dataclass
class SharedEmbedding:
    """Single sinusoidal layer z = sin(omega0 * (w*v + b)) applied to a scalar."""

    w: np.ndarray
    b: np.ndarray
    omega0: float


@dataclass
class BranchNetwork:
    """Per-mode MLP: sine after every layer except the last, linear output."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    out_rows: int
    out_cols: int


@dataclass
class FixedBasis:
    matrix: np.ndarray  # (r_next, R_next)
    trainable: bool = False


@dataclass
class ModelConfig:
    dims: tuple[int, ...]
    ranks: tuple[int, ...]
    variant: str = "reptrfd"
    beta: int = 10
    omega0: float = 90.0
    layers: tuple[int, ...] = ()  # branch layer counts, one per mode
    hidden: int = 256
    seed: int = 0
    shared_embedding: bool = True
    basis_scheme: str = "xavier"
    basis_scale: float | None = None
    basis_trainable: bool = False

    def validate(self):
        problems = []
        d = len(self.dims)
        if d < 1:
            problems.append("dims must contain at least one mode")
        if any(n < 1 for n in self.dims):
            problems.append(f"mode sizes must be positive, got {self.dims}")
        if len(self.ranks) != d:
            problems.append(f"need {d} ranks, got {len(self.ranks)}")
        if any(r < 1 for r in self.ranks):
            problems.append(f"ranks must be positive, got {self.ranks}")
        if self.variant not in VARIANTS:
            problems.append(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.beta < 1:
            problems.append(f"beta must be >= 1, got {self.beta}")
        if not self.omega0 > 0:
            problems.append(f"omega0 must be positive, got {self.omega0}")
        layers = self.layers or (1,) * d
        if len(layers) != d:
            problems.append(f"need {d} branch layer counts, got {len(layers)}")
        if any(L < 1 for L in layers):
            problems.append(f"branch layer counts must be >= 1, got {layers}")
        if self.hidden < 1:
            problems.append(f"hidden width must be >= 1, got {self.hidden}")
        if self.basis_scheme not in BASIS_SCHEMES:
            problems.append(
                f"basis scheme must be one of {BASIS_SCHEMES}, got {self.basis_scheme!r}")
        if self.basis_scheme == "explicit" and not self.basis_scale:
            problems.append("explicit basis scheme requires a positive basis_scale")
        if problems:
            raise ConfigError("; ".join(problems))


@dataclass
class FactorModel:
    config: ModelConfig
    embeddings: list[SharedEmbedding]
    branches: list[BranchNetwork]
    bases: list[FixedBasis] = field(default_factory=list)

    @property
    def order(self) -> int:
        return len(self.config.dims)

    @property
    def dims(self) -> tuple[int, ...]:
        return self.config.dims

    @property
    def ranks(self) -> tuple[int, ...]:
        return self.config.ranks

    @property
    def variant(self) -> str:
        return self.config.variant

    def embedding_for_mode(self, k: int) -> SharedEmbedding:
        return self.embeddings[0] if self.config.shared_embedding else self.embeddings[k]

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        """Trainable arrays in declaration order."""
        out = []
        for i, emb in enumerate(self.embeddings):
            out.append((f"embed{i}.w", emb.w))
            out.append((f"embed{i}.b", emb.b))
        for k, br in enumerate(self.branches):
            for l, (w, b) in enumerate(zip(br.weights, br.biases)):
                out.append((f"branch{k}.w{l}", w))
                out.append((f"branch{k}.b{l}", b))
        for k, basis in enumerate(self.bases):
            if basis.trainable:
                out.append((f"basis{k}", basis.matrix))
        return out

    def fixed_arrays(self) -> list[tuple[str, np.ndarray]]:
        return [(f"basis{k}", b.matrix)
                for k, b in enumerate(self.bases) if not b.trainable]

    def set_parameters(self, values: dict[str, np.ndarray]):
        for name, arr in self.parameters():
            arr[...] = values[name]


def embed(e: SharedEmbedding, v: float) -> np.ndarray:
    return np.sin(e.omega0 * (e.w * v + e.b))


def _branch_forward_np(model: FactorModel, k: int, coords: np.ndarray) -> np.ndarray:
    """Latent slices for a vector of coordinates: shape (n, r_k, out_cols)."""
    e = model.embedding_for_mode(k)
    x = np.sin(e.omega0 * (np.outer(coords, e.w) + e.b))
    br = model.branches[k]
    last = len(br.weights) - 1
    for l, (w, b) in enumerate(zip(br.weights, br.biases)):
        x = x @ w + b
        if l != last:
            x = np.sin(x)
    return x.reshape(len(coords), br.out_rows, br.out_cols)


def latent_slice(model: FactorModel, k: int, v: float) -> np.ndarray:
    """Branch output at one coordinate, shape (r_k, out_cols)."""
    if not 0 <= k < model.order:
        raise RangeError(f"mode {k} out of range for order {model.order}")
    return _branch_forward_np(model, k, np.array([float(v)]))[0]


def factor_slice(model: FactorModel, k: int, v: float) -> np.ndarray:
    """Core slice at one coordinate, shape (r_k, r_{k+1})."""
    latent = latent_slice(model, k, v)
    if model.variant == "trfd":
        return latent
    return latent @ model.bases[k].matrix.T


def build_cores(model: FactorModel, grids) -> TRCores:
    """Stack factor slices over coordinate grids into ring cores."""
    if len(grids) != model.order:
        raise ShapeError(f"need {model.order} grids, got {len(grids)}")
    cores = []
    for k, grid in enumerate(grids):
        grid = np.asarray(grid, dtype=np.float64)
        if grid.ndim != 1 or grid.size == 0:
            raise ShapeError(f"grid {k} must be a non-empty vector")
        latent = _branch_forward_np(model, k, grid)  # (n, r, cols)
        if model.variant == "reptrfd":
            latent = latent @ model.bases[k].matrix.T
        cores.append(np.ascontiguousarray(np.transpose(latent, (1, 0, 2))))
    return TRCores(tuple(cores))


def eval_point(model: FactorModel, v) -> float:
    """Reconstruction value at one continuous coordinate vector."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (model.order,):
        raise ShapeError(f"expected {model.order} coordinates, got shape {v.shape}")
    acc = factor_slice(model, 0, v[0])
    for k in range(1, model.order):
        acc = acc @ factor_slice(model, k, v[k])
    return float(np.trace(acc))


def eval_points(model: FactorModel, coords: np.ndarray) -> np.ndarray:
    """Batched eval_point over rows of coords, shape (N, d) -> (N,)."""
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != model.order:
        raise ShapeError(f"coords must be (N, {model.order}), got {coords.shape}")
    acc = None
    for k in range(model.order):
        latent = _branch_forward_np(model, k, coords[:, k])
        if model.variant == "reptrfd":
            latent = latent @ model.bases[k].matrix.T
        acc = latent if acc is None else acc @ latent
    return np.trace(acc, axis1=-2, axis2=-1)


def init_basis(r_next: int, R_next: int, scheme: str, rng: np.random.Generator,
               scale: float | None = None, trainable: bool = False) -> FixedBasis:
    """Uniform basis init; xavier bound sqrt(6/(r+R)), kaiming bound sqrt(6/R)."""
    if r_next < 1 or R_next < 1:
        raise RangeError(f"ranks must be positive, got ({r_next}, {R_next})")
    if R_next % r_next:
        raise RangeError(f"expanded rank {R_next} must be a multiple of {r_next}")
    if scheme == "xavier":
        a = np.sqrt(6.0 / (r_next + R_next))
    elif scheme == "kaiming":
        a = np.sqrt(6.0 / R_next)
    elif scheme == "explicit":
        if scale is None or scale <= 0:
            raise RangeError("explicit basis scheme needs a positive scale")
        a = float(scale)
    else:
        raise RangeError(f"unknown basis scheme {scheme!r}")
    matrix = rng.uniform(-a, a, size=(r_next, R_next))
    return FixedBasis(matrix=matrix, trainable=trainable)


def xavier_bound(r_next: int, R_next: int) -> float:
    return float(np.sqrt(6.0 / (r_next + R_next)))


def init_model(config: ModelConfig) -> FactorModel:
    """Deterministically initialize all parameters from the config seed."""
    config.validate()
    d = len(config.dims)
    layers = tuple(config.layers) if config.layers else (1,) * d
    config = replace(config, dims=tuple(config.dims), ranks=tuple(config.ranks),
                     layers=layers)
    rng = np.random.default_rng(config.seed)
    h = config.hidden
    first_bound = np.sqrt(6.0) / config.omega0  # fan_in 1, scaled by 1/omega0

    n_embeddings = 1 if config.shared_embedding else d
    embeddings = []
    for _ in range(n_embeddings):
        w = rng.uniform(-first_bound, first_bound, size=h)
        b = rng.uniform(-first_bound, first_bound, size=h)
        embeddings.append(SharedEmbedding(w=w, b=b, omega0=config.omega0))

    branches = []
    for k in range(d):
        r_k = config.ranks[k]
        r_next = config.ranks[(k + 1) % d]
        cols = config.beta * r_next if config.variant == "reptrfd" else r_next
        widths = [h] * layers[k] + [r_k * cols]
        weights, biases = [], []
        for l in range(layers[k]):
            fan_in = widths[l]
            bound = np.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, widths[l + 1])))
            biases.append(np.zeros(widths[l + 1]))
        branches.append(BranchNetwork(weights=weights, biases=biases,
                                      out_rows=r_k, out_cols=cols))

    bases = []
    if config.variant == "reptrfd":
        for k in range(d):
            r_next = config.ranks[(k + 1) % d]
            bases.append(init_basis(r_next, config.beta * r_next, config.basis_scheme,
                                    rng, scale=config.basis_scale,
                                    trainable=config.basis_trainable))
    return FactorModel(config=config, embeddings=embeddings, branches=branches,
                       bases=bases)


# ---------------------------------------------------------------------------
# Differentiable forward graphs


def param_nodes(model: FactorModel, tape: ad.Tape) -> dict[str, ad.Node]:
    """Register trainable parameters as leaves; fixed bases become constants."""
    nodes = {name: tape.leaf(arr, name) for name, arr in model.parameters()}
    for name, arr in model.fixed_arrays():
        nodes[name] = tape.constant(arr)
    return nodes


def _graph_branch(model: FactorModel, tape: ad.Tape, nodes, k: int,
                  coords: np.ndarray) -> ad.Node:
    """Latent slices for mode k at the given coordinates: Node (n, r, cols)."""
    e_idx = 0 if model.config.shared_embedding else k
    w = nodes[f"embed{e_idx}.w"]
    b = nodes[f"embed{e_idx}.b"]
    h = model.config.hidden
    coords_col = np.asarray(coords, dtype=np.float64).reshape(-1, 1)
    pre = ad.add(ad.matmul(tape.constant(coords_col), ad.reshape(w, (1, h))), b)
    x = ad.sin(ad.scale(pre, model.config.omega0))
    br = model.branches[k]
    last = len(br.weights) - 1
    for l in range(len(br.weights)):
        x = ad.add(ad.matmul(x, nodes[f"branch{k}.w{l}"]), nodes[f"branch{k}.b{l}"])
        if l != last:
            x = ad.sin(x)
    return ad.reshape(x, (len(coords_col), br.out_rows, br.out_cols))


def graph_cores(model: FactorModel, tape: ad.Tape, grids,
                nodes: dict[str, ad.Node] | None = None) -> list[ad.Node]:
    """Ring cores (r_k, n_k, r_{k+1}) as graph nodes over coordinate grids."""
    if nodes is None:
        nodes = param_nodes(model, tape)
    cores = []
    for k, grid in enumerate(grids):
        latent = _graph_branch(model, tape, nodes, k, np.asarray(grid))
        core = ad.transpose(latent, (1, 0, 2))
        if model.variant == "reptrfd":
            core = ad.mode3(core, nodes[f"basis{k}"])
        cores.append(core)
    return cores


def graph_reconstruction(model: FactorModel, tape: ad.Tape, grids,
                         nodes: dict[str, ad.Node] | None = None) -> ad.Node:
    return ad.ring_contract(graph_cores(model, tape, grids, nodes))


def graph_point_values(model: FactorModel, tape: ad.Tape, coords: np.ndarray,
                       nodes: dict[str, ad.Node] | None = None) -> ad.Node:
    """Reconstruction values at N continuous points, coords shape (N, d)."""
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != model.order:
        raise ShapeError(f"coords must be (N, {model.order}), got {coords.shape}")
    if nodes is None:
        nodes = param_nodes(model, tape)
    slices = []
    for k in range(model.order):
        latent = _graph_branch(model, tape, nodes, k, coords[:, k])  # (N, r, cols)
        if model.variant == "reptrfd":
            latent = ad.mode3(latent, nodes[f"basis{k}"])
        slices.append(latent)
    return ad.trace_chain(slices)


# ---------------------------------------------------------------------------
# Lipschitz bound


def spectral_norm(matrix: np.ndarray, rel_tol: float = 1e-8,
                  max_iter: int = 10_000) -> float:
    """Largest singular value by power iteration on AᵀA."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    if matrix.size == 0:
        return 0.0
    v = np.ones(matrix.shape[1]) / np.sqrt(matrix.shape[1])
    sigma = 0.0
    for _ in range(max_iter):
        u = matrix @ v
        nu = np.linalg.norm(u)
        if nu == 0.0:
            return 0.0
        v_new = matrix.T @ (u / nu)
        sigma_new = np.linalg.norm(v_new)
        if sigma_new == 0.0:
            return 0.0
        v = v_new / sigma_new
        if abs(sigma_new - sigma) <= rel_tol * max(sigma_new, 1e-300):
            return float(sigma_new)
        sigma = sigma_new
    raise NumericError(f"power iteration did not converge in {max_iter} iterations")


def lipschitz_delta(etas, layer_counts, basis_norms, c_consts, kappa: float = 1.0):
    """Assemble the per-mode and global Lipschitz constants from the bound formula."""
    d = len(etas)
    deltas = []
    for k in range(d):
        prod_c = 1.0
        for j in range(d):
            if j != k:
                prod_c *= c_consts[j]
        deltas.append((kappa * etas[k]) ** layer_counts[k] * basis_norms[k] * prod_c)
    return float(np.sqrt(sum(dk * dk for dk in deltas))), deltas


def lipschitz_bound(model: FactorModel, kappa: float = 1.0,
                    sample_points: int = 1001) -> tuple[float, list[float]]:
    """Computable global Lipschitz constant of the point-evaluation map.

    The sinusoidal frequency omega0 is absorbed into the first layer's
    spectral norm; C_j is estimated by dense sampling of [-1, 1].
    """
    d = model.order
    grid = np.linspace(-1.0, 1.0, sample_points)
    etas, layer_counts, basis_norms, c_consts = [], [], [], []
    for k in range(d):
        e = model.embedding_for_mode(k)
        norms = [spectral_norm(e.omega0 * e.w.reshape(-1, 1))]
        norms += [spectral_norm(w) for w in model.branches[k].weights]
        etas.append(max(norms))
        layer_counts.append(1 + len(model.branches[k].weights))
        if model.variant == "reptrfd":
            basis_norms.append(spectral_norm(model.bases[k].matrix))
        else:
            basis_norms.append(1.0)
        latent = _branch_forward_np(model, k, grid)
        if model.variant == "reptrfd":
            latent = latent @ model.bases[k].matrix.T
        c_consts.append(float(np.max(np.linalg.norm(latent, axis=(1, 2)))))
    return lipschitz_delta(etas, layer_counts, basis_norms, c_consts, kappa)


# ---------------------------------------------------------------------------
# Checkpoint format: magic "RTRF", version u32, JSON manifest, LE float64 arrays


def _manifest(model: FactorModel) -> dict:
    cfg = model.config
    arrays = [(name, list(arr.shape))
              for name, arr in model.parameters() + model.fixed_arrays()]
    return {
        "dims": list(cfg.dims),
        "ranks": list(cfg.ranks),
        "variant": cfg.variant,
        "beta": cfg.beta,
        "omega0": cfg.omega0,
        "layers": list(cfg.layers),
        "hidden": cfg.hidden,
        "seed": cfg.seed,
        "shared_embedding": cfg.shared_embedding,
        "basis_scheme": cfg.basis_scheme,
        "basis_scale": cfg.basis_scale,
        "basis_trainable": cfg.basis_trainable,
        "arrays": arrays,
    }


def checkpoint_bytes(model: FactorModel) -> bytes:
    manifest = json.dumps(_manifest(model), sort_keys=True).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION),
             struct.pack("<I", len(manifest)), manifest]
    for _, arr in model.parameters() + model.fixed_arrays():
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def save_checkpoint(model: FactorModel, path):
    from .io import atomic_write_bytes

    atomic_write_bytes(path, checkpoint_bytes(model))


def load_checkpoint(path) -> FactorModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a model checkpoint (bad magic)")
    version, man_len = struct.unpack_from("<II", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    if len(blob) < 12 + man_len:
        raise FormatError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(blob[12:12 + man_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt manifest: {exc}") from exc
    config = ModelConfig(
        dims=tuple(manifest["dims"]), ranks=tuple(manifest["ranks"]),
        variant=manifest["variant"], beta=manifest["beta"],
        omega0=manifest["omega0"], layers=tuple(manifest["layers"]),
        hidden=manifest["hidden"], seed=manifest["seed"],
        shared_embedding=manifest["shared_embedding"],
        basis_scheme=manifest["basis_scheme"],
        basis_scale=manifest["basis_scale"],
        basis_trainable=manifest["basis_trainable"],
    )
    model = init_model(config)
    offset = 12 + man_len
    declared = model.parameters() + model.fixed_arrays()
    names = [name for name, _ in declared]
    if names != [name for name, _ in manifest["arrays"]]:
        raise FormatError(f"{path}: manifest arrays do not match model structure")
    for (name, arr), (_, shape) in zip(declared, manifest["arrays"]):
        if list(arr.shape) != shape:
            raise FormatError(f"{path}: shape mismatch for {name}")
        nbytes = arr.size * 8
        if offset + nbytes > len(blob):
            raise FormatError(f"{path}: truncated payload at {name}")
        arr[...] = np.frombuffer(blob, dtype="<f8", count=arr.size,
                                 offset=offset).reshape(arr.shape)
        offset += nbytes
    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} trailing bytes")
    return model
