"""Spectral transport representation: global basis, latent grid, hypernet, flow net, decoder."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from .diffengine import (
    InitSpec,
    Jet,
    ParamTape,
    Tensor,
    Value,
    affine,
    cat,
    concat,
    linear,
    reshape,
    sparse_matmul,
    tanh,
    tsin,
    tsum,
)

DOMAIN_TOL = 1e-12


class DomainError(ValueError):
    """Coordinate outside [-1, 1]^d."""


def check_domain(xs: np.ndarray, dim: int) -> np.ndarray:
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    if xs.shape[1] != dim:
        raise DomainError(f"expected coordinates with {dim} columns, got shape {xs.shape}")
    if np.any(np.abs(xs) > 1.0 + DOMAIN_TOL) or not np.isfinite(xs).all():
        raise DomainError("coordinates must lie in [-1, 1]^d")
    return np.clip(xs, -1.0, 1.0)


def glorot(fan_in: int, fan_out: int) -> InitSpec:
    lim = float(np.sqrt(6.0 / (fan_in + fan_out)))
    return InitSpec.uniform(-lim, lim)


@dataclass
class NstrConfig:
    dim: int = 2
    channels: int = 1
    n_bases: int = 16
    grid_resolution: int | None = None
    latent_dim: int = 16
    hyper_hidden: list[int] = field(default_factory=lambda: [64])
    flow_hidden: list[int] = field(default_factory=lambda: [64, 64])
    decoder_hidden: list[int] = field(default_factory=lambda: [64, 64])
    scalar_bottleneck: bool = False
    train_basis: bool = True
    sample_resolution: int = 64
    omega_max: float | None = None
    grid_init_scale: float = 0.1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NstrConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def resolved_grid_resolution(self) -> int:
        """16 cells per axis in 2D; 128 in 1D, where 16 cells cannot follow a fast chirp."""
        if self.grid_resolution is not None:
            return int(self.grid_resolution)
        return 128 if self.dim == 1 else 16

    def resolved_omega_max(self) -> float:
        if self.omega_max is not None:
            return float(self.omega_max)
        return float(np.pi * self.sample_resolution / 4.0)


class Mlp:
    """Stack of affine layers with tanh between them, parameters on a shared tape."""

    def __init__(self, tape: ParamTape, prefix: str, widths: list[int], rng: np.random.Generator):
        self.prefix = prefix
        self.widths = list(widths)
        self.names = []
        for i, (fi, fo) in enumerate(zip(widths[:-1], widths[1:])):
            w, b = f"{prefix}.w{i}", f"{prefix}.b{i}"
            tape.register(w, (fo, fi), glorot(fi, fo), rng)
            tape.register(b, (fo,), InitSpec.constant(0.0), rng)
            self.names.append((w, b))

    @property
    def n_in(self) -> int:
        return self.widths[0]

    @property
    def n_out(self) -> int:
        return self.widths[-1]

    def __call__(self, tape: ParamTape, h: Value) -> Value:
        last = len(self.names) - 1
        for i, (w, b) in enumerate(self.names):
            h = affine(h, tape.tensor(w), tape.tensor(b))
            if i < last:
                h = tanh(h)
        return h

    def manual(self, tape: ParamTape, h: np.ndarray) -> np.ndarray:
        """Plain-numpy forward, independent of the tensor engine."""
        last = len(self.names) - 1
        for i, (w, b) in enumerate(self.names):
            h = h @ tape.view(w).T + tape.view(b)
            if i < last:
                h = np.tanh(h)
        return h


class GlobalBasis:
    """K frequency vectors and phases shared across the whole domain."""

    def __init__(self, tape: ParamTape, n_bases: int, dim: int, omega_max: float, rng: np.random.Generator, trainable: bool = True):
        if n_bases < 1:
            raise ValueError("need at least one basis frequency")
        self.n_bases = n_bases
        self.dim = dim
        tape.register("basis.omegas", (n_bases, dim), InitSpec.constant(0.0), rng, trainable=trainable)
        tape.register("basis.phases", (n_bases,), InitSpec.constant(0.0), rng, trainable=trainable)
        tape.view("basis.omegas")[:] = init_omegas(n_bases, dim, omega_max, rng)
        tape.view("basis.phases")[:] = rng.uniform(0.0, 2.0 * np.pi, size=n_bases)

    def omegas(self, tape: ParamTape) -> np.ndarray:
        return tape.view("basis.omegas")

    def phases(self, tape: ParamTape) -> np.ndarray:
        return tape.view("basis.phases")


def init_omegas(n_bases: int, dim: int, omega_max: float, rng: np.random.Generator) -> np.ndarray:
    """Directions uniform on the unit sphere, magnitudes log-uniform in [pi, omega_max]."""
    omega_max = max(omega_max, np.pi)
    dirs = rng.normal(size=(n_bases, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    mags = np.exp(rng.uniform(np.log(np.pi), np.log(omega_max), size=n_bases))
    return dirs * mags[:, None]


class LatentGrid:
    """Coarse learnable feature grid sampled by multilinear interpolation."""

    def __init__(self, tape: ParamTape, resolution, latent_dim: int, dim: int, rng: np.random.Generator, init_scale: float = 0.1):
        if np.isscalar(resolution):
            resolution = [int(resolution)] * dim
        self.resolution = tuple(int(r) for r in resolution)
        if len(self.resolution) != dim or min(self.resolution) < 1:
            raise ValueError(f"bad grid resolution {resolution} for dim {dim}")
        self.dim = dim
        self.latent_dim = latent_dim
        self.n_nodes = int(np.prod([r + 1 for r in self.resolution]))
        tape.register("grid.features", (self.n_nodes, latent_dim), InitSpec.uniform(-init_scale, init_scale), rng)

    def weights(self, xs: np.ndarray) -> tuple[sp.csr_matrix, list[sp.csr_matrix]]:
        """Interpolation matrix (N, nodes) and its derivative along each axis.

        At a cell boundary the cell to the right is used (right-limit
        convention), except at x = 1 where only the left cell exists.
        """
        xs = check_domain(xs, self.dim)
        n = xs.shape[0]
        cells, fracs, scales = [], [], []
        for k, r in enumerate(self.resolution):
            u = (xs[:, k] + 1.0) * 0.5 * r
            c = np.clip(np.floor(u), 0, r - 1).astype(np.int64)
            cells.append(c)
            fracs.append(u - c)
            scales.append(0.5 * r)
        strides = np.ones(self.dim, dtype=np.int64)
        for k in range(self.dim - 2, -1, -1):
            strides[k] = strides[k + 1] * (self.resolution[k + 1] + 1)

        rows, cols, vals = [], [], []
        dvals = [[] for _ in range(self.dim)]
        for corner in range(2**self.dim):
            bits = [(corner >> (self.dim - 1 - k)) & 1 for k in range(self.dim)]
            idx = np.zeros(n, dtype=np.int64)
            w1d = []
            dw1d = []
            for k, bit in enumerate(bits):
                idx += (cells[k] + bit) * strides[k]
                if bit:
                    w1d.append(fracs[k])
                    dw1d.append(np.full(n, scales[k]))
                else:
                    w1d.append(1.0 - fracs[k])
                    dw1d.append(np.full(n, -scales[k]))
            w = np.prod(w1d, axis=0)
            rows.append(np.arange(n))
            cols.append(idx)
            vals.append(w)
            for k in range(self.dim):
                parts = [dw1d[j] if j == k else w1d[j] for j in range(self.dim)]
                dvals[k].append(np.prod(parts, axis=0))
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        shape = (n, self.n_nodes)
        m = sp.csr_matrix((np.concatenate(vals), (rows, cols)), shape=shape)
        ds = [sp.csr_matrix((np.concatenate(dv), (rows, cols)), shape=shape) for dv in dvals]
        return m, ds

    def sample(self, tape: ParamTape, x: np.ndarray | Jet) -> Value:
        coords = x.val.data if isinstance(x, Jet) else np.asarray(x)
        m, ds = self.weights(coords)
        feats = tape.tensor("grid.features")
        z = sparse_matmul(m, feats)
        if not isinstance(x, Jet):
            return z
        n = z.shape[0]
        rows = [reshape(sparse_matmul(dk, feats), (n, 1, self.latent_dim)) for dk in ds]
        if not np.array_equal(x.tan.data, np.broadcast_to(np.eye(self.dim), x.tan.shape)):
            raise ValueError("grid sampling expects a Jet seeded with the identity tangent")
        return Jet(z, concat(rows, axis=1))


class NstrModel:
    """Composite model; every component registers its segments on one tape."""

    kind = "nstr"

    def __init__(self, config: NstrConfig | None = None, seed: int = 0):
        self.config = config = config or NstrConfig()
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.tape = ParamTape()
        d, k = config.dim, config.n_bases
        self.basis = GlobalBasis(self.tape, k, d, config.resolved_omega_max(), rng, trainable=config.train_basis)
        self.grid = LatentGrid(self.tape, config.resolved_grid_resolution(), config.latent_dim, d, rng, config.grid_init_scale)
        self.hyper = Mlp(self.tape, "hyper", [config.latent_dim + d] + list(config.hyper_hidden) + [k], rng)
        self.flow = Mlp(self.tape, "flow", [d + k] + list(config.flow_hidden) + [k * d], rng)
        dec_in = 1 if config.scalar_bottleneck else k
        self.decoder = Mlp(self.tape, "decoder", [dec_in] + list(config.decoder_hidden) + [config.channels], rng)

    @property
    def dim(self) -> int:
        return self.config.dim

    @property
    def n_bases(self) -> int:
        return self.config.n_bases

    def grid_sample(self, x) -> Value:
        return self.grid.sample(self.tape, x)

    def spectrum(self, x) -> Value:
        """S(x) = hypernet(concat(z(x), x)); pass a Jet to also get dS/dx."""
        if isinstance(x, Jet):
            check_domain(x.val.data, self.dim)
            z = self.grid_sample(x)
            return self.hyper(self.tape, cat([z, x]))
        xs = check_domain(x.data if isinstance(x, Tensor) else x, self.dim)
        z = self.grid_sample(xs)
        return self.hyper(self.tape, concat([z, Tensor(xs)], axis=1))

    def modulation_terms(self, xs: np.ndarray, s: Tensor | None = None) -> Tensor:
        """Per-basis terms S_i(x) * sin(omega_i . x + b_i), shape (N, K)."""
        xs = check_domain(xs, self.dim)
        if s is None:
            s = self.spectrum(xs)
        phase = linear(Tensor(xs), self.tape.tensor("basis.omegas"), self.tape.tensor("basis.phases"))
        return s * tsin(phase)

    def modulated_features(self, xs: np.ndarray, s: Tensor | None = None, summed: bool | None = None) -> Tensor:
        terms = self.modulation_terms(xs, s)
        if summed is None:
            summed = self.config.scalar_bottleneck
        if summed:
            return reshape(tsum(terms, axis=1), (terms.shape[0], 1))
        return terms

    def forward(self, xs: np.ndarray, s: Tensor | None = None) -> Tensor:
        return self.decoder(self.tape, self.modulated_features(xs, s))

    def flow_eval(self, xs: np.ndarray, s: Tensor) -> Tensor:
        """F(x, S) reshaped to (N, K, d)."""
        xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
        out = self.flow(self.tape, concat([Tensor(xs), s], axis=1))
        return reshape(out, (xs.shape[0], self.n_bases, self.dim))

    def predict(self, xs: np.ndarray, chunk: int = 8192) -> np.ndarray:
        xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
        return np.concatenate([self.forward(xs[i : i + chunk]).data for i in range(0, len(xs), chunk)], axis=0)

    def spectrum_values(self, xs: np.ndarray) -> np.ndarray:
        return self.spectrum(xs).data

    def spectrum_jacobian(self, xs: np.ndarray) -> np.ndarray:
        """Exact dS/dx at each point, shape (N, K, d)."""
        return self.spectrum(Jet.seed(check_domain(xs, self.dim))).jacobian()

    def param_count(self) -> int:
        return self.tape.trainable_count()

    def to_header(self) -> dict:
        return {"kind": self.kind, "config": self.config.to_dict(), "seed": self.seed}


__all__ = [
    "DomainError",
    "GlobalBasis",
    "LatentGrid",
    "Mlp",
    "NstrConfig",
    "NstrModel",
    "check_domain",
    "init_omegas",
]
