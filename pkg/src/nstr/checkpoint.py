"""Binary checkpoints: u32 LE header length, UTF-8 JSON header, f32 LE payload.

The payload holds every tape parameter rounded to float32, in registry order.
By default a second float32 block of the same length follows it with the
rounding residual (param - f32(param)); loading adds it back, which keeps
reloaded models within ~1e-12 of the saved ones even for large basis
frequencies. ``residual=False`` writes the plain single-precision payload.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .baselines import FourierMlp, FourierMlpConfig, Siren, SirenConfig
from .model import NstrConfig, NstrModel

SCHEMA_VERSION = 1
MAGIC = "nstr-checkpoint"


class CheckpointError(ValueError):
    """Corrupt checkpoint or schema mismatch."""


def _header(model, run_config: dict | None, residual: bool) -> dict:
    return {
        "format": MAGIC,
        "schema": SCHEMA_VERSION,
        "kind": model.kind,
        "model_config": model.config.to_dict(),
        "seed": model.seed,
        "run_config": run_config,
        "segments": model.tape.registry(),
        "payload_count": len(model.tape),
        "residual": residual,
    }


def to_bytes(model, run_config: dict | None = None, residual: bool = True) -> bytes:
    head = json.dumps(_header(model, run_config, residual), sort_keys=True, separators=(",", ":")).encode("utf-8")
    params = model.tape.params
    hi = params.astype("<f4")
    blob = struct.pack("<I", len(head)) + head + hi.tobytes()
    if residual:
        blob += (params - hi.astype(np.float64)).astype("<f4").tobytes()
    return blob


def save(path: str | Path, model, run_config: dict | None = None, residual: bool = True) -> None:
    Path(path).write_bytes(to_bytes(model, run_config, residual))


def read_header(blob: bytes) -> tuple[dict, int]:
    if len(blob) < 4:
        raise CheckpointError("checkpoint truncated")
    (n,) = struct.unpack("<I", blob[:4])
    if 4 + n > len(blob):
        raise CheckpointError("checkpoint header length exceeds file size")
    try:
        header = json.loads(blob[4 : 4 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint header: {exc}") from exc
    if not isinstance(header, dict) or header.get("format") != MAGIC:
        raise CheckpointError("not an nstr checkpoint")
    if header.get("schema") != SCHEMA_VERSION:
        raise CheckpointError(f"schema {header.get('schema')} does not match {SCHEMA_VERSION}")
    return header, 4 + n


def build_from_header(header: dict):
    kind = header["kind"]
    seed = int(header.get("seed", 0))
    if kind == NstrModel.kind:
        return NstrModel(NstrConfig.from_dict(header["model_config"]), seed=seed)
    if kind == FourierMlp.kind:
        return FourierMlp(FourierMlpConfig.from_dict(header["model_config"]), seed=seed)
    if kind == Siren.kind:
        return Siren(SirenConfig.from_dict(header["model_config"]), seed=seed)
    raise CheckpointError(f"unknown model kind {kind!r}")


def from_bytes(blob: bytes):
    """Rebuild the model and restore its parameters; returns (model, header)."""
    header, offset = read_header(blob)
    count = int(header["payload_count"])
    blocks = 2 if header.get("residual") else 1
    if len(blob) - offset != 4 * count * blocks:
        raise CheckpointError(f"payload is {len(blob) - offset} bytes, expected {4 * count * blocks}")
    model = build_from_header(header)
    if model.tape.registry() != header["segments"]:
        raise CheckpointError("segment registry does not match the rebuilt model")
    if len(model.tape) != count:
        raise CheckpointError("payload length differs from registry total")
    values = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).astype(np.float64)
    if blocks == 2:
        values = values + np.frombuffer(blob, dtype="<f4", count=count, offset=offset + 4 * count).astype(np.float64)
    if not np.isfinite(values).all():
        raise CheckpointError("checkpoint payload contains non-finite values")
    model.tape.params[:] = values
    return model, header


def load(path: str | Path):
    try:
        blob = Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise CheckpointError(f"checkpoint not found: {path}") from exc
    return from_bytes(blob)
