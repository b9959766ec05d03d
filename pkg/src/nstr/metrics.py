"""Reconstruction metrics and the local-frequency diagnostic."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window

DB_CAP = 99.0


@dataclass(frozen=True)
class StftConfig:
    window: int = 256
    hop: int = 64


@dataclass
class EvalReport:
    mse: float
    psnr_db: float
    snr_db: float | None = None
    spectral_convergence: float | None = None
    param_count: int = 0
    wall_ms: float = 0.0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))


def _pair(pred, target) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64).ravel()
    t = np.asarray(target, dtype=np.float64).ravel()
    if p.size == 0 or t.size == 0:
        raise ValueError("empty input")
    if p.size != t.size:
        raise ValueError(f"length mismatch: {p.size} vs {t.size}")
    return p, t


def mse(pred, target) -> float:
    p, t = _pair(pred, target)
    return float(np.mean((p - t) ** 2))


def psnr(pred, target, peak: float = 1.0) -> float:
    """10 log10(peak^2 / mse), capped at 99 dB."""
    err = mse(pred, target)
    if err == 0.0:
        return DB_CAP
    return min(DB_CAP, 10.0 * math.log10(peak**2 / err))


def snr(pred, target) -> float:
    """10 log10(||target||^2 / ||target - pred||^2), capped at 99 dB."""
    p, t = _pair(pred, target)
    signal = float(np.sum(t**2))
    if signal == 0.0:
        raise ValueError("target has zero energy")
    noise = float(np.sum((t - p) ** 2))
    if noise == 0.0:
        return DB_CAP
    return min(DB_CAP, 10.0 * math.log10(signal / noise))


def stft_magnitude(wave: np.ndarray, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """|STFT| with a periodic Hann window over full frames only, (frames, bins)."""
    x = np.asarray(wave, dtype=np.float64).ravel()
    if x.size < cfg.window:
        raise ValueError(f"signal shorter than the STFT window ({x.size} < {cfg.window})")
    frames = sliding_window_view(x, cfg.window)[:: cfg.hop]
    return np.abs(np.fft.rfft(frames * get_window("hann", cfg.window), axis=1))


def spectral_convergence(pred_wave, target_wave, cfg: StftConfig = StftConfig()) -> float:
    """|| |STFT(t)| - |STFT(p)| ||_F / || |STFT(t)| ||_F."""
    p, t = _pair(pred_wave, target_wave)
    mt = stft_magnitude(t, cfg)
    mp = stft_magnitude(p, cfg)
    denom = np.linalg.norm(mt)
    if denom == 0.0:
        raise ValueError("target spectrogram is all zero")
    return float(np.linalg.norm(mt - mp) / denom)


def estimate_local_frequency(model, xs: np.ndarray, tol: float = 1e-8, fold_sign: bool = False) -> np.ndarray:
    """Spectrum-weighted mean of the basis frequencies, (N, d).

    Weights are |S_i(x)| / sum_j |S_j(x)|, so the estimate is a convex
    combination of basis rows. ``fold_sign`` first maps each row to the half
    space whose first nonzero coordinate is positive (omega and -omega give
    the same oscillation up to phase), so opposite rows do not cancel.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    s = np.abs(model.spectrum_values(xs))
    total = s.sum(axis=1, keepdims=True)
    if np.any(total <= tol):
        raise ValueError("spectrum is (near) zero; dominant frequency undefined")
    omegas = np.array(model.basis.omegas(model.tape))
    if fold_sign:
        omegas = fold_half_space(omegas)
    return (s / total) @ omegas


def fold_half_space(omegas: np.ndarray) -> np.ndarray:
    out = np.array(omegas, dtype=np.float64)
    for row in out:
        nz = np.flatnonzero(row)
        if nz.size and row[nz[0]] < 0:
            row *= -1.0
    return out


def evaluate(model, data, param_count: int | None = None, wall_ms: float = 0.0, stft: StftConfig = StftConfig()) -> tuple[EvalReport, np.ndarray]:
    """Metrics of ``model`` on the full dataset; returns the report and predictions.

    Values live in [-1, 1], so PSNR uses a peak-to-peak range of 2.
    """
    pred = model.predict(data.coords)
    target = data.values
    spec = None
    if data.dim == 1 and data.channels == 1 and len(data) >= stft.window:
        spec = spectral_convergence(pred, target, stft)
    try:
        snr_db = snr(pred, target)
    except ValueError:
        snr_db = None
    report = EvalReport(
        mse=mse(pred, target),
        psnr_db=psnr(pred, target, peak=2.0),
        snr_db=snr_db,
        spectral_convergence=spec,
        param_count=model.tape.trainable_count() if param_count is None else param_count,
        wall_ms=wall_ms,
    )
    return report, pred
