import numpy as np
import pytest

from nstr.diffengine import Tensor, grad_of_loss
from nstr.model import NstrConfig, NstrModel
from nstr.transport import (
    LossWeights,
    jacobian_field,
    pde_residual,
    smoothness_penalty,
    spectrum_and_jacobian,
    total_loss,
)

from conftest import fd_param_grad, rel_err, small_nstr, small_siren


def _zero(m, mlp, bias=None):
    for w, b in mlp.names:
        m.tape.view(w)[:] = 0.0
        m.tape.view(b)[:] = 0.0
    if bias is not None:
        m.tape.view(mlp.names[-1][1])[:] = bias


def _interior(rng, n, res=4, dim=2):
    xs = rng.uniform(-0.95, 0.95, size=(4 * n, dim))
    cells = (xs + 1) * 0.5 * res
    keep = np.all(np.abs(cells - np.round(cells)) > 0.01, axis=1)
    return xs[keep][:n]


def test_residual_zero_when_flow_matches(rng, monkeypatch):
    m = small_nstr(seed=1)
    xs = rng.uniform(-1, 1, size=(16, 2))
    for mode in ("fd", "analytic"):
        _, jac = spectrum_and_jacobian(m, xs, mode)
        monkeypatch.setattr(m, "flow_eval", lambda x, s, j=jac: Tensor(j.data))
        assert pde_residual(m, xs, mode).data == 0.0
        monkeypatch.undo()


def test_residual_zero_for_constant_field(rng):
    m = small_nstr()
    _zero(m, m.hyper, bias=rng.normal(size=m.n_bases))
    _zero(m, m.flow)
    xs = rng.uniform(-1, 1, size=(16, 2))
    for mode in ("fd", "analytic"):
        assert pde_residual(m, xs, mode).data == 0.0
        assert smoothness_penalty(m, xs, mode).data == 0.0


def test_residual_modes_agree(rng):
    m = small_nstr(seed=2)
    xs = _interior(rng, 8)
    fd = float(pde_residual(m, xs, "fd", eps=1e-5).data)
    an = float(pde_residual(m, xs, "analytic").data)
    assert abs(fd - an) < 1e-4


def test_smoothness_identity_field():
    cfg = NstrConfig(dim=1, n_bases=1, grid_resolution=1, latent_dim=1, hyper_hidden=[], sample_resolution=8)
    m = NstrModel(cfg)
    w, b = m.hyper.names[0]
    m.tape.view(w)[:] = [[0.0, 1.0]]  # S(x) = x
    m.tape.view(b)[:] = 0.0
    xs = np.linspace(-0.9, 0.9, 11)[:, None]
    for mode in ("fd", "analytic"):
        assert float(smoothness_penalty(m, xs, mode).data) == pytest.approx(1.0, abs=1e-9)


def test_smoothness_matches_exported_field(rng):
    m = small_nstr(seed=3)
    xs = rng.uniform(-1, 1, size=(40, 2))
    field = jacobian_field(m, xs, "analytic")
    assert float(smoothness_penalty(m, xs, "analytic").data) == pytest.approx(field.frobenius_sq().mean(), rel=1e-12)


def test_total_loss_zero_weights_is_task(rng):
    m = small_nstr()
    xs = rng.uniform(-1, 1, size=(10, 2))
    ys = rng.normal(size=(10, 1))
    loss, parts = total_loss(m, xs, ys, LossWeights(0.0, 0.0))
    assert parts.total == parts.task == float(np.mean((m.predict(xs) - ys) ** 2))


def test_total_loss_perfect_reconstruction(rng):
    m = small_nstr()
    xs = rng.uniform(-1, 1, size=(10, 2))
    loss, _ = total_loss(m, xs, m.predict(xs), LossWeights(0.0, 0.0))
    assert float(loss.data) == 0.0


def test_total_loss_weighted_sum(rng):
    m = small_nstr(seed=4)
    xs = rng.uniform(-1, 1, size=(10, 2))
    ys = rng.normal(size=(10, 1))
    _, p = total_loss(m, xs, ys, LossWeights(0.1, 0.01))
    assert p.total == p.task + 0.1 * p.pde + 0.01 * p.smooth


def test_total_loss_l1_and_nonnegative(rng):
    m = small_nstr()
    xs = rng.uniform(-1, 1, size=(10, 2))
    ys = rng.normal(size=(10, 1))
    _, p = total_loss(m, xs, ys, LossWeights(0.0, 0.0), task="l1")
    assert p.task == pytest.approx(np.mean(np.abs(m.predict(xs) - ys)))
    _, q = total_loss(m, xs, ys, LossWeights(0.3, 0.2))
    assert q.total >= 0


def test_total_loss_length_mismatch():
    m = small_nstr()
    with pytest.raises(ValueError):
        total_loss(m, np.zeros((3, 2)), np.zeros((4, 1)))


def test_zero_pde_weight_leaves_flow_grads_zero(rng):
    m = small_nstr(seed=5)
    xs = rng.uniform(-1, 1, size=(10, 2))
    ys = rng.normal(size=(10, 1))
    grad_of_loss(lambda t: total_loss(m, xs, ys, LossWeights(0.0, 0.1))[0], m.tape)
    for w, b in m.flow.names:
        assert not m.tape.grad_view(w).any() and not m.tape.grad_view(b).any()
    assert m.tape.grad_view("grid.features").any()


@pytest.mark.parametrize("mode", ["fd", "analytic"])
def test_total_loss_grad_every_segment(rng, mode):
    m = small_nstr(seed=6)
    xs = rng.uniform(-1, 1, size=(8, 2))
    ys = rng.normal(size=(8, 1))
    extra = rng.uniform(-1, 1, size=(8, 2))
    w = LossWeights(0.1, 0.01)
    f = lambda: total_loss(m, xs, ys, w, mode=mode, residual_xs=extra)[0]
    m.tape.zero_grad()
    grad_of_loss(lambda t: f(), m.tape)
    for seg in m.tape.registry():
        idx = seg["offset"] + rng.choice(int(np.prod(seg["shape"])), min(4, int(np.prod(seg["shape"]))), replace=False)
        fd = fd_param_grad(f, m.tape, idx)
        assert rel_err(m.tape.grads[idx], fd, floor=1e-7).max() < 1e-3, seg["name"]


def test_baseline_gets_task_term_only(rng):
    m = small_siren()
    xs = rng.uniform(-1, 1, size=(10, 2))
    ys = rng.normal(size=(10, 1))
    _, p = total_loss(m, xs, ys, LossWeights(0.1, 0.1))
    assert p.pde == 0.0 and p.smooth == 0.0 and p.total == p.task


def test_fd_stencil_clamped_at_edges():
    cfg = NstrConfig(dim=1, n_bases=1, grid_resolution=1, latent_dim=1, hyper_hidden=[], sample_resolution=8)
    m = NstrModel(cfg)
    w, b = m.hyper.names[0]
    m.tape.view(w)[:] = [[0.0, 2.0]]
    m.tape.view(b)[:] = 0.0
    _, jac = spectrum_and_jacobian(m, np.array([[-1.0], [1.0]]), "fd")
    np.testing.assert_allclose(jac.data[:, 0, 0], 2.0, atol=1e-12)
