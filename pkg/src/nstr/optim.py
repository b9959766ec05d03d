"""Adam and the shared training loop used by every model kind."""
from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .diffengine import NonFiniteError, ParamTape
from .transport import MODES, TASKS, LossWeights, total_loss

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_tape(cls, tape: ParamTape, lr: float = 1e-4, **kw) -> "AdamState":
        return cls(np.zeros(len(tape)), np.zeros(len(tape)), lr=lr, **kw)


def adam_step(tape: ParamTape, state: AdamState) -> np.ndarray:
    """Bias-corrected Adam update in place on trainable segments; zeroes grads."""
    if len(state.m) != len(tape):
        raise ValueError("Adam state does not match the tape size")
    g = tape.grads
    if not np.isfinite(g).all():
        raise NonFiniteError("non-finite gradient")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * g
    state.v *= b2
    state.v += (1.0 - b2) * (g * g)
    mhat = state.m / (1.0 - b1**state.t)
    vhat = state.v / (1.0 - b2**state.t)
    update = state.lr * mhat / (np.sqrt(vhat) + state.eps)
    mask = tape.trainable_mask()
    if not mask.all():
        update = np.where(mask, update, 0.0)
    if not np.isfinite(update).all():
        raise NonFiniteError("non-finite Adam update")
    tape.params -= update
    tape.zero_grad()
    return tape.params


@dataclass
class TrainConfig:
    iterations: int = 8000
    batch_size: int = 1024
    seed: int = 0
    lr: float = 1e-4
    weights: LossWeights = field(default_factory=LossWeights)
    grad_mode: str = "fd"
    log_every: int = 100
    task: str = "l2"
    residual_samples: bool = True
    divergence_factor: float = 100.0
    divergence_patience: int = 500

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.grad_mode not in MODES:
            raise ValueError(f"grad_mode must be one of {MODES}")
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainReport:
    records: list[dict]
    final_mse: float
    initial_mse: float
    param_count: int
    wall_ms: float
    sample_trace: str

    def task_curve(self) -> np.ndarray:
        return np.array([r["L_task"] for r in self.records])

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)


def full_mse(model, data) -> float:
    pred = model.predict(data.coords)
    return float(np.mean((pred - data.values) ** 2))


def train(model, data, cfg: TrainConfig, on_record: Callable[[dict], None] | None = None) -> TrainReport:
    """Minibatch Adam on ``total_loss``; deterministic given ``cfg.seed``.

    Batches are drawn uniformly with replacement. When ``residual_samples``
    is set, an equal count of uniform domain points is drawn every step for
    the regularizers; the draw happens for every model kind so the RNG
    stream is identical across methods.
    """
    if len(data) == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(cfg.seed)
    state = AdamState.for_tape(model.tape, lr=cfg.lr)
    model.tape.zero_grad()
    trace = hashlib.sha256()
    records: list[dict] = []
    best = np.inf
    over = 0
    initial = full_mse(model, data)
    t0 = time.perf_counter()
    n = len(data)
    for step in range(cfg.iterations + 1):
        idx = rng.integers(0, n, size=cfg.batch_size)
        extra = rng.uniform(-1.0, 1.0, size=(cfg.batch_size, data.dim)) if cfg.residual_samples else None
        trace.update(idx.tobytes())
        xs, ys = data.coords[idx], data.values[idx]
        logging_step = step % cfg.log_every == 0 or step == cfg.iterations
        try:
            loss, parts = total_loss(
                model, xs, ys, cfg.weights, cfg.task, cfg.grad_mode,
                residual_xs=extra, all_terms=logging_step,
            )
        except NonFiniteError as exc:
            raise TrainingDiverged(f"step {step}: {exc}") from exc
        if logging_step:
            rec = {"step": step, **parts.as_dict(), "wall_ms": (time.perf_counter() - t0) * 1e3}
            records.append(rec)
            if on_record is not None:
                on_record(rec)
            log.debug("step %d L=%.4g task=%.4g", step, parts.total, parts.task)
        if parts.total < best:
            best = parts.total
            over = 0
        elif parts.total > cfg.divergence_factor * best:
            over += 1
            if over >= cfg.divergence_patience:
                raise TrainingDiverged(f"step {step}: loss stayed {cfg.divergence_factor}x above its minimum")
        else:
            over = 0
        if step == cfg.iterations:
            break
        if loss.requires_grad:
            loss.backward()
        try:
            adam_step(model.tape, state)
        except NonFiniteError as exc:
            raise TrainingDiverged(f"step {step}: {exc}") from exc
    wall = (time.perf_counter() - t0) * 1e3
    return TrainReport(
        records=records,
        final_mse=full_mse(model, data),
        initial_mse=initial,
        param_count=model.tape.trainable_count(),
        wall_ms=wall,
        sample_trace=trace.hexdigest(),
    )
