"""Signal fixtures and file I/O, all mapped onto the [-1, 1]^d domain."""
from __future__ import annotations

import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image


class FormatError(ValueError):
    """Unsupported or corrupt input file."""


@dataclass
class SignalDataset:
    """Coordinate/value pairs; grid data is stored row-major.

    ``meta`` records where the data came from and how to undo the value
    normalization (``value_offset``/``value_scale``: raw = v * scale + offset).
    """

    coords: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coords = np.atleast_2d(np.asarray(self.coords, dtype=np.float64))
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if len(self.coords) != len(self.values):
            raise ValueError("coords and values differ in length")
        if np.any(np.abs(self.coords) > 1.0):
            raise ValueError("coords must lie in [-1, 1]")

    def __len__(self) -> int:
        return len(self.coords)

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    @property
    def resolution(self) -> tuple[int, ...]:
        return tuple(self.meta.get("resolution", (len(self),)))

    def denormalize(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values) * self.meta.get("value_scale", 1.0) + self.meta.get("value_offset", 0.0)

    def as_grid(self, values: np.ndarray | None = None) -> np.ndarray:
        """Reassemble values onto the native grid: (R,) / (R, C) or (H, W) / (H, W, C)."""
        v = self.values if values is None else np.asarray(values)
        shape = self.resolution
        if v.ndim == 1 or v.shape[-1] == 1:
            return v.reshape(shape)
        return v.reshape(shape + (v.shape[-1],))

    def with_noise(self, sigma: float, seed: int = 0) -> "SignalDataset":
        rng = np.random.default_rng(seed)
        noisy = np.clip(self.values + rng.normal(0.0, sigma, self.values.shape), -1.0, 1.0)
        meta = dict(self.meta, noise_sigma=sigma, source=f"{self.meta.get('source', 'signal')}+noise")
        return SignalDataset(self.coords.copy(), noisy, meta)


def cell_centers(n: int) -> np.ndarray:
    """Cell-center coordinates of n samples spanning [-1, 1]."""
    return (np.arange(n) + 0.5) / n * 2.0 - 1.0


def grid_coords(resolution: tuple[int, ...]) -> np.ndarray:
    axes = [cell_centers(r) for r in resolution]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


# ---------------------------------------------------------------- synthetic fixtures


def make_chirp(duration_samples: int, f0: float, f1: float) -> SignalDataset:
    """Linear chirp y(t) = sin(2 pi (f0 t + (f1 - f0) t^2 / 2)), t in [0, 1].

    Frequencies are in cycles per domain; sample i sits at t = i / (N - 1),
    so t = 0 maps to x = -1 and y there is exactly 0.
    """
    n = int(duration_samples)
    if n < 2:
        raise ValueError("need at least two samples")
    nyquist = (n - 1) / 2.0
    if max(abs(f0), abs(f1)) >= nyquist:
        raise ValueError(f"chirp frequency above Nyquist ({nyquist} cycles/domain)")
    t = np.arange(n) / (n - 1)
    y = np.sin(2 * np.pi * (f0 * t + 0.5 * (f1 - f0) * t**2))
    x = 2.0 * t - 1.0
    meta = {"source": "chirp", "resolution": (n,), "f0": f0, "f1": f1, "sample_rate": n - 1}
    return SignalDataset(x[:, None], y, meta)


def chirp_frequency(t: np.ndarray, f0: float, f1: float) -> np.ndarray:
    """Instantaneous frequency (cycles/domain) of ``make_chirp`` at t in [0, 1]."""
    return f0 + (f1 - f0) * np.asarray(t)


def warp_phase(xs: np.ndarray, base_freq: float, warp_strength: float) -> np.ndarray:
    """Phase field of the warped grating; its gradient is the local frequency."""
    x, y = xs[:, 0], xs[:, 1]
    w = 2.0 * np.pi * base_freq
    s = warp_strength
    return w * (x + 0.5 * y + s * (0.5 / np.pi * np.sin(np.pi * x) + 0.25 * x**2 + 0.25 / np.pi * np.cos(np.pi * y)))


def warp_frequency(xs: np.ndarray, base_freq: float, warp_strength: float) -> np.ndarray:
    """Analytic gradient of ``warp_phase`` in radians per unit coordinate, (N, 2)."""
    x, y = xs[:, 0], xs[:, 1]
    w = 2.0 * np.pi * base_freq
    s = warp_strength
    gx = w * (1.0 + s * (0.5 * np.cos(np.pi * x) + 0.5 * x))
    gy = w * (0.5 - 0.25 * s * np.sin(np.pi * y))
    return np.stack([gx, gy], axis=1)


def make_warped_texture(resolution: int, base_freq: float = 3.0, warp_strength: float = 0.8) -> SignalDataset:
    """Grating y = sin(phi(x)) whose local frequency grad(phi) drifts smoothly.

    ``base_freq`` is in cycles per unit coordinate along the first axis. The
    analytic local frequency at every pixel is stored in ``meta['omega']``.
    """
    if resolution < 16:
        raise ValueError("resolution must be at least 16")
    res = (int(resolution), int(resolution))
    xs = grid_coords(res)
    y = np.sin(warp_phase(xs, base_freq, warp_strength))
    meta = {
        "source": "warped_texture",
        "resolution": res,
        "base_freq": base_freq,
        "warp_strength": warp_strength,
        "omega": warp_frequency(xs, base_freq, warp_strength),
    }
    return SignalDataset(xs, y, meta)


def make_checkerboard(resolution: int, cells: int = 8) -> SignalDataset:
    """Checkerboard in the upper-left half blended into a smooth diagonal ramp."""
    res = (int(resolution), int(resolution))
    xs = grid_coords(res)
    u, v = xs[:, 0], xs[:, 1]
    board = np.sign(np.sin(np.pi * cells / 2 * (u + 1)) * np.sin(np.pi * cells / 2 * (v + 1)))
    ramp = 0.5 * (u + v)
    blend = 1.0 / (1.0 + np.exp(-6.0 * (v - u)))
    y = np.clip(0.8 * (blend * board + (1 - blend) * ramp), -1.0, 1.0)
    return SignalDataset(xs, y, {"source": "checkerboard", "resolution": res, "cells": cells})


# ---------------------------------------------------------------- images


def _image_array(img: Image.Image) -> tuple[np.ndarray, int]:
    mode = img.mode
    if mode in ("I;16", "I;16B", "I;16L", "I"):
        arr = np.asarray(img, dtype=np.float64)
        return arr, 65535
    if mode == "L":
        return np.asarray(img, dtype=np.float64), 255
    if mode in ("RGB", "RGBA", "P", "LA"):
        return np.asarray(img.convert("RGB"), dtype=np.float64), 255
    raise FormatError(f"unsupported image mode {mode}")


def load_image(path: str | Path, resolution: int | None = None) -> SignalDataset:
    """PNG or PGM (8 or 16 bit) to a dataset with values scaled to [-1, 1].

    Optionally resamples (box filter) to ``resolution`` x ``resolution``.
    """
    path = Path(path)
    if path.suffix.lower() not in (".png", ".pgm"):
        raise FormatError(f"unsupported image format {path.suffix}")
    try:
        with Image.open(path) as img:
            img.load()
            if resolution is not None and img.size != (resolution, resolution):
                img = img.convert("RGB" if img.mode in ("RGB", "RGBA", "P") else "L").resize(
                    (resolution, resolution), Image.Resampling.BOX
                )
            arr, peak = _image_array(img)
    except (OSError, SyntaxError) as exc:
        raise FormatError(f"cannot read image {path}: {exc}") from exc
    h, w = arr.shape[:2]
    channels = 1 if arr.ndim == 2 else arr.shape[2]
    values = arr.reshape(h * w, channels) / peak * 2.0 - 1.0
    xs = grid_coords((h, w))
    meta = {
        "source": str(path),
        "resolution": (h, w),
        "bit_depth": 16 if peak == 65535 else 8,
        "value_scale": peak / 2.0,
        "value_offset": peak / 2.0,
    }
    return SignalDataset(xs, values, meta)


def to_uint(values: np.ndarray, bit_depth: int = 8) -> np.ndarray:
    peak = 2**bit_depth - 1
    v = np.clip((np.asarray(values, dtype=np.float64) + 1.0) * 0.5, 0.0, 1.0)
    return np.round(v * peak).astype(np.uint16 if bit_depth == 16 else np.uint8)


def save_image(path: str | Path, grid: np.ndarray, bit_depth: int = 8) -> None:
    """Write values in [-1, 1] shaped (H, W) or (H, W, 3) as PNG/PGM."""
    arr = to_uint(grid, bit_depth)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if bit_depth == 16:
        if arr.ndim != 2:
            raise FormatError("16-bit output supports grayscale only")
        img = Image.fromarray(arr.astype(np.uint16))
    else:
        img = Image.fromarray(arr)
    img.save(str(path))


# ---------------------------------------------------------------- audio


def load_audio(path: str | Path) -> SignalDataset:
    """16-bit PCM mono WAV; sample times at cell centers, peak-normalized values."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            if wf.getnchannels() != 1 or wf.getsampwidth() != 2:
                raise FormatError("only 16-bit PCM mono WAV is supported")
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError) as exc:
        raise FormatError(f"cannot read WAV {path}: {exc}") from exc
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64)
    if pcm.size == 0:
        raise FormatError("empty WAV file")
    peak = float(np.max(np.abs(pcm))) or 1.0
    xs = cell_centers(pcm.size)[:, None]
    meta = {"source": str(path), "resolution": (pcm.size,), "sample_rate": rate, "value_scale": peak, "value_offset": 0.0}
    return SignalDataset(xs, pcm / peak, meta)


def save_audio(path: str | Path, values: np.ndarray, sample_rate: int = 44100, scale: float = 32767.0) -> None:
    pcm = np.clip(np.round(np.asarray(values, dtype=np.float64).ravel() * scale), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(sample_rate))
        wf.writeframes(pcm.tobytes())
