"""Probe-grid export of S(x), dS/dx, F(x, S(x)) and the transport residual."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .data import grid_coords
from .diffengine import Tensor


@dataclass
class FieldDump:
    xs: np.ndarray  # (P, d)
    spectrum: np.ndarray  # (P, K)
    jacobian: np.ndarray  # (P, K, d)
    flow: np.ndarray  # (P, K, d)
    residual: np.ndarray  # (P,)
    probe_resolution: int

    def __len__(self) -> int:
        return len(self.xs)

    @property
    def grad_norm(self) -> np.ndarray:
        return np.sqrt((self.jacobian**2).sum(axis=(1, 2)))

    @property
    def flow_norm(self) -> np.ndarray:
        return np.sqrt((self.flow**2).sum(axis=(1, 2)))


def probe_fields(model, probe_resolution: int, chunk: int = 4096) -> FieldDump:
    """Evaluate every field on a uniform cell-centred probe grid."""
    if not hasattr(model, "spectrum"):
        raise TypeError("field export needs an NSTR model")
    xs = grid_coords((probe_resolution,) * model.dim)
    specs, jacs, flows = [], [], []
    for i in range(0, len(xs), chunk):
        part = xs[i : i + chunk]
        s = model.spectrum_values(part)
        specs.append(s)
        jacs.append(model.spectrum_jacobian(part))
        flows.append(model.flow_eval(part, Tensor(s)).data)
    spectrum = np.concatenate(specs)
    jac = np.concatenate(jacs)
    flow = np.concatenate(flows)
    residual = ((jac - flow) ** 2).sum(axis=(1, 2))
    if not np.isfinite(residual).all():
        raise FloatingPointError("non-finite residual map")
    return FieldDump(xs, spectrum, jac, flow, residual, probe_resolution)


def _heatmap(values: np.ndarray, shape: tuple) -> tuple[np.ndarray, float, float]:
    lo, hi = float(values.min()), float(values.max())
    scaled = np.zeros_like(values) if hi == lo else (values - lo) / (hi - lo)
    return np.round(scaled * 255).astype(np.uint8).reshape(shape), lo, hi


def write_dump(dump: FieldDump, out_dir: str | Path) -> dict:
    """fields.csv plus one 8-bit grayscale PNG per channel and a bounds sidecar."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n, k = dump.spectrum.shape
    d = dump.xs.shape[1]
    header = [f"x{j}" for j in range(d)] + [f"S{i}" for i in range(k)]
    header += [f"dS{i}_dx{j}" for i in range(k) for j in range(d)]
    header += [f"F{i}_{j}" for i in range(k) for j in range(d)]
    header += ["residual"]
    rows = np.concatenate(
        [dump.xs, dump.spectrum, dump.jacobian.reshape(n, -1), dump.flow.reshape(n, -1), dump.residual[:, None]], axis=1
    )
    with open(out / "fields.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows([[repr(float(v)) for v in row] for row in rows])

    shape = (dump.probe_resolution,) * d if d == 2 else (1, dump.probe_resolution)
    maps = {f"S{i}": dump.spectrum[:, i] for i in range(k)}
    maps.update(grad_norm=dump.grad_norm, flow_norm=dump.flow_norm, residual=dump.residual)
    bounds = {}
    for name, vals in maps.items():
        img, lo, hi = _heatmap(vals, shape)
        fname = f"{name}.png"
        Image.fromarray(img, mode="L").save(out / fname)
        bounds[name] = {"file": fname, "min": lo, "max": hi}
    bounds["_summary"] = {
        "probe_resolution": dump.probe_resolution,
        "records": n,
        "mean_residual": float(dump.residual.mean()),
        "mean_grad_norm": float(dump.grad_norm.mean()),
    }
    (out / "bounds.json").write_text(json.dumps(bounds, indent=2, sort_keys=True))
    return bounds
