"""Frequency-transport residual, smoothness penalty and the combined training loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffengine import (
    Jet,
    NonFiniteError,
    Tensor,
    concat,
    fd_stencil,
    mean,
    reshape,
    square,
    tabs,
    transpose,
    tsum,
)
from .model import check_domain

FD_EPS = 1e-3
MODES = ("fd", "analytic")
TASKS = ("l2", "l1")


@dataclass(frozen=True)
class LossWeights:
    lambda_pde: float = 0.1
    lambda_smooth: float = 0.0

    def __post_init__(self):
        if self.lambda_pde < 0 or self.lambda_smooth < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class SpatialJacobianField:
    """dS/dx sampled at a set of points: ``jac`` is (N, K, d)."""

    xs: np.ndarray
    jac: np.ndarray

    def __post_init__(self):
        if not np.isfinite(self.jac).all():
            raise NonFiniteError("non-finite spatial Jacobian")

    def frobenius_sq(self) -> np.ndarray:
        return (self.jac**2).sum(axis=(1, 2))


@dataclass
class LossBreakdown:
    total: float
    task: float
    pde: float
    smooth: float

    def as_dict(self) -> dict:
        return {"L": self.total, "L_task": self.task, "L_PDE": self.pde, "L_smooth": self.smooth}


def spectrum_and_jacobian(model, xs: np.ndarray, mode: str = "fd", eps: float = FD_EPS) -> tuple[Tensor, Tensor]:
    """S(x) as (N, K) and dS/dx as (N, K, d), both differentiable in the parameters.

    ``fd`` uses central differences with the stencil clamped into the domain
    (one-sided at the edges); ``analytic`` propagates exact tangents.
    """
    xs = check_domain(xs, model.dim)
    n, d = xs.shape
    k = model.n_bases
    if mode == "analytic":
        jet = model.spectrum(Jet.seed(xs))
        return jet.val, transpose(jet.tan, (0, 2, 1))
    if mode != "fd":
        raise ValueError(f"unknown gradient mode {mode!r}")
    stencils = [xs]
    steps = []
    for axis in range(d):
        xp, xm, step = fd_stencil(xs, axis, eps)
        stencils += [xp, xm]
        steps.append(step)
    s_all = model.spectrum(np.concatenate(stencils, axis=0))
    s = s_all[0:n]
    cols = []
    for axis in range(d):
        lo = (1 + 2 * axis) * n
        diff = s_all[lo : lo + n] - s_all[lo + n : lo + 2 * n]
        cols.append(reshape(diff * (1.0 / steps[axis])[:, None], (n, k, 1)))
    return s, concat(cols, axis=2)


def jacobian_field(model, xs: np.ndarray, mode: str = "analytic", eps: float = FD_EPS) -> SpatialJacobianField:
    _, jac = spectrum_and_jacobian(model, xs, mode, eps)
    return SpatialJacobianField(np.asarray(xs, dtype=np.float64), jac.data.copy())


def _residual_from(model, xs: np.ndarray, s: Tensor, jac: Tensor) -> Tensor:
    diff = jac - model.flow_eval(xs, s)
    return mean(tsum(reshape(square(diff), (diff.shape[0], -1)), axis=1))


def pde_residual(model, xs: np.ndarray, mode: str = "fd", eps: float = FD_EPS) -> Tensor:
    """Mean over the batch of ||dS/dx - F(x, S(x))||_F^2."""
    s, jac = spectrum_and_jacobian(model, xs, mode, eps)
    out = _residual_from(model, np.atleast_2d(xs), s, jac)
    if not np.isfinite(out.data):
        raise NonFiniteError("non-finite PDE residual")
    return out


def smoothness_penalty(model, xs: np.ndarray, mode: str = "fd", eps: float = FD_EPS) -> Tensor:
    """Mean over the batch of ||dS/dx||_F^2."""
    _, jac = spectrum_and_jacobian(model, xs, mode, eps)
    return mean(tsum(reshape(square(jac), (jac.shape[0], -1)), axis=1))


def task_loss(pred: Tensor, ys: np.ndarray, task: str = "l2") -> Tensor:
    diff = pred - np.asarray(ys, dtype=np.float64).reshape(pred.shape)
    if task == "l2":
        return mean(square(diff))
    if task == "l1":
        return mean(tabs(diff))
    raise ValueError(f"unknown task loss {task!r}")


def total_loss(
    model,
    xs: np.ndarray,
    ys: np.ndarray,
    weights: LossWeights = LossWeights(),
    task: str = "l2",
    mode: str = "fd",
    residual_xs: np.ndarray | None = None,
    eps: float = FD_EPS,
    all_terms: bool = True,
) -> tuple[Tensor, LossBreakdown]:
    """L = L_task + lambda_pde * L_PDE + lambda_smooth * L_smooth.

    Regularizers are evaluated at ``residual_xs`` (default: ``xs``). Terms
    whose weight is zero stay out of the graph; with ``all_terms=False`` they
    are not evaluated at all and reported as 0. Models without a spectrum
    field (the baselines) only have the task term.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    ys = np.asarray(ys, dtype=np.float64)
    if len(xs) != len(ys):
        raise ValueError(f"xs and ys differ in length: {len(xs)} vs {len(ys)}")
    rxs = xs if residual_xs is None else np.atleast_2d(np.asarray(residual_xs, dtype=np.float64))

    has_field = hasattr(model, "spectrum")
    need_reg = has_field and (all_terms or weights.lambda_pde > 0 or weights.lambda_smooth > 0)
    if not need_reg:
        l_task = task_loss(model.forward(xs), ys, task)
        total = l_task
        return total, LossBreakdown(float(total.data), float(l_task.data), 0.0, 0.0)

    n = len(xs)
    same = residual_xs is None
    pts = xs if same else np.concatenate([xs, rxs], axis=0)
    s_all, jac = spectrum_and_jacobian(model, pts, mode, eps)
    s_task = s_all if same else s_all[0:n]
    l_task = task_loss(model.forward(xs, s_task), ys, task)

    l_pde = _residual_from(model, pts, s_all, jac)
    l_smooth = mean(tsum(reshape(square(jac), (jac.shape[0], -1)), axis=1))
    if not (np.isfinite(l_pde.data) and np.isfinite(l_smooth.data)):
        raise NonFiniteError("non-finite regularizer")

    total = l_task
    if weights.lambda_pde > 0:
        total = total + l_pde * weights.lambda_pde
    if weights.lambda_smooth > 0:
        total = total + l_smooth * weights.lambda_smooth
    breakdown = LossBreakdown(float(total.data), float(l_task.data), float(l_pde.data), float(l_smooth.data))
    return total, breakdown
