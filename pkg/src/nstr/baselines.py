"""Fourier-feature MLP and SIREN baselines on the same tape/optimizer machinery."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .diffengine import InitSpec, ParamTape, Tensor, concat, linear, relu, tsin
from .model import check_domain, glorot


@dataclass
class FourierMlpConfig:
    dim: int = 2
    channels: int = 1
    n_features: int = 64
    sigma: float = 10.0
    hidden: list[int] = field(default_factory=lambda: [256, 256, 256, 256])

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FourierMlpConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class SirenConfig:
    dim: int = 2
    channels: int = 1
    hidden: list[int] = field(default_factory=lambda: [256, 256, 256])
    omega0: float = 30.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SirenConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


def fourier_embed(xs: np.ndarray | Tensor, freq_matrix: np.ndarray | Tensor) -> Tensor:
    """[sin(2 pi B x), cos(2 pi B x)] for B of shape (M, d); result (N, 2M)."""
    x = xs if isinstance(xs, Tensor) else Tensor(np.atleast_2d(np.asarray(xs, dtype=np.float64)))
    b = freq_matrix if isinstance(freq_matrix, Tensor) else Tensor(np.asarray(freq_matrix, dtype=np.float64))
    proj = linear(x, b * (2.0 * np.pi))
    return concat([tsin(proj), tsin(proj + 0.5 * np.pi)], axis=1)


class FourierMlp:
    """ReLU MLP fed with fixed Gaussian Fourier features (B ~ N(0, sigma^2))."""

    kind = "fourier_mlp"

    def __init__(self, config: FourierMlpConfig | None = None, seed: int = 0):
        self.config = config = config or FourierMlpConfig()
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.tape = ParamTape()
        self.tape.register("fourier.B", (config.n_features, config.dim), InitSpec.normal(config.sigma), rng, trainable=False)
        widths = [2 * config.n_features] + list(config.hidden) + [config.channels]
        self.layers = []
        for i, (fi, fo) in enumerate(zip(widths[:-1], widths[1:])):
            lim = float(np.sqrt(1.0 / fi))
            self.tape.register(f"mlp.w{i}", (fo, fi), InitSpec.uniform(-lim, lim), rng)
            self.tape.register(f"mlp.b{i}", (fo,), InitSpec.uniform(-lim, lim), rng)
            self.layers.append((f"mlp.w{i}", f"mlp.b{i}"))

    @property
    def dim(self) -> int:
        return self.config.dim

    def forward(self, xs: np.ndarray) -> Tensor:
        xs = check_domain(xs, self.dim)
        h = fourier_embed(xs, self.tape.view("fourier.B"))
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            h = linear(h, self.tape.tensor(w), self.tape.tensor(b))
            if i < last:
                h = relu(h)
        return h

    def predict(self, xs: np.ndarray, chunk: int = 8192) -> np.ndarray:
        xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
        return np.concatenate([self.forward(xs[i : i + chunk]).data for i in range(0, len(xs), chunk)], axis=0)

    def param_count(self) -> int:
        return self.tape.trainable_count()

    def to_header(self) -> dict:
        return {"kind": self.kind, "config": self.config.to_dict(), "seed": self.seed}


class Siren:
    """Sine-activated MLP: h <- sin(omega0 * (W h + b)) on every hidden layer, linear output."""

    kind = "siren"

    def __init__(self, config: SirenConfig | None = None, seed: int = 0):
        self.config = config = config or SirenConfig()
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.tape = ParamTape()
        widths = [config.dim] + list(config.hidden) + [config.channels]
        self.layers = []
        for i, (fi, fo) in enumerate(zip(widths[:-1], widths[1:])):
            init = InitSpec.siren(fi, config.omega0, first=(i == 0))
            blim = float(np.sqrt(1.0 / fi))
            self.tape.register(f"siren.w{i}", (fo, fi), init, rng)
            self.tape.register(f"siren.b{i}", (fo,), InitSpec.uniform(-blim, blim), rng)
            self.layers.append((f"siren.w{i}", f"siren.b{i}"))

    @property
    def dim(self) -> int:
        return self.config.dim

    def forward(self, xs: np.ndarray) -> Tensor:
        xs = check_domain(xs, self.dim)
        h = Tensor(xs)
        last = len(self.layers) - 1
        w0 = self.config.omega0
        for i, (w, b) in enumerate(self.layers):
            h = linear(h, self.tape.tensor(w), self.tape.tensor(b))
            if i < last:
                h = tsin(h * w0)
        return h

    def predict(self, xs: np.ndarray, chunk: int = 8192) -> np.ndarray:
        xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
        return np.concatenate([self.forward(xs[i : i + chunk]).data for i in range(0, len(xs), chunk)], axis=0)

    def param_count(self) -> int:
        return self.tape.trainable_count()

    def to_header(self) -> dict:
        return {"kind": self.kind, "config": self.config.to_dict(), "seed": self.seed}


def param_count(model) -> int:
    """Trainable scalars; frozen segments (fixed Fourier matrix, frozen basis) excluded."""
    return model.tape.trainable_count()


def mlp_param_count(widths: list[int]) -> int:
    return int(sum(fi * fo + fo for fi, fo in zip(widths[:-1], widths[1:])))


def match_width(target: int, count_for_width: Callable[[int], int], lo: int = 2, hi: int = 4096) -> int:
    """Smallest-error integer width whose parameter count is closest to ``target``."""
    best, best_err = lo, abs(count_for_width(lo) - target)
    while lo < hi:
        mid = (lo + hi) // 2
        if count_for_width(mid) < target:
            lo = mid + 1
        else:
            hi = mid
    for w in (lo - 1, lo, lo + 1):
        if w >= 2:
            err = abs(count_for_width(w) - target)
            if err < best_err:
                best, best_err = w, err
    return best


def matched_fourier_config(target: int, dim: int, channels: int, sigma: float, n_features: int = 64, layers: int = 4) -> FourierMlpConfig:
    def count(w: int) -> int:
        return mlp_param_count([2 * n_features] + [w] * layers + [channels])

    w = match_width(target, count)
    return FourierMlpConfig(dim=dim, channels=channels, n_features=n_features, sigma=sigma, hidden=[w] * layers)


def matched_siren_config(target: int, dim: int, channels: int, omega0: float = 30.0, layers: int = 3) -> SirenConfig:
    def count(w: int) -> int:
        return mlp_param_count([dim] + [w] * layers + [channels])

    w = match_width(target, count)
    return SirenConfig(dim=dim, channels=channels, hidden=[w] * layers, omega0=omega0)


def within_tolerance(counts: list[int], reference: int, tol: float = 0.05) -> bool:
    return all(abs(c - reference) <= tol * reference for c in counts)
