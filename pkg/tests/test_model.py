import numpy as np
import pytest

from nstr.diffengine import Jet, ParamTape, Tensor
from nstr.model import DomainError, GlobalBasis, LatentGrid, NstrConfig, NstrModel
from nstr.optim import TrainConfig, train
from nstr.data import SignalDataset

from conftest import small_nstr


def _grid_1d_two_nodes(v0, v1):
    tape = ParamTape()
    g = LatentGrid(tape, 1, 1, 1, np.random.default_rng(0))
    tape.view("grid.features")[:, 0] = [v0, v1]
    return tape, g


def test_grid_linear_midpoint():
    tape, g = _grid_1d_two_nodes(0.0, 4.0)
    assert g.sample(tape, np.array([[0.0]])).data[0, 0] == pytest.approx(2.0)


def test_grid_exact_node_2d(rng):
    tape = ParamTape()
    g = LatentGrid(tape, 4, 3, 2, rng)
    feats = tape.view("grid.features")
    # node (i, j) sits at (-1 + i/2, -1 + j/2); row-major index i*5 + j
    z = g.sample(tape, np.array([[-0.5, 0.5]])).data
    np.testing.assert_array_equal(z[0], feats[1 * 5 + 3])


def test_grid_cell_center_bilinear():
    tape = ParamTape()
    g = LatentGrid(tape, 1, 1, 2, np.random.default_rng(0))
    tape.view("grid.features")[:, 0] = [1.0, 2.0, 3.0, 4.0]
    assert g.sample(tape, np.array([[0.0, 0.0]])).data[0, 0] == pytest.approx(2.5)


def test_grid_partition_of_unity(rng):
    tape = ParamTape()
    g = LatentGrid(tape, (5, 7), 2, 2, rng)
    tape.view("grid.features")[:] = 3.25
    xs = rng.uniform(-1, 1, size=(500, 2))
    np.testing.assert_allclose(g.sample(tape, xs).data, 3.25, rtol=0, atol=1e-13)
    m, _ = g.weights(xs)
    np.testing.assert_allclose(np.asarray(m.sum(axis=1)).ravel(), 1.0)


def test_grid_rejects_out_of_domain():
    tape, g = _grid_1d_two_nodes(0.0, 1.0)
    with pytest.raises(DomainError):
        g.sample(tape, np.array([[1.5]]))


def test_grid_right_limit_at_boundary():
    tape = ParamTape()
    g = LatentGrid(tape, 2, 1, 1, np.random.default_rng(0))
    tape.view("grid.features")[:, 0] = [0.0, 1.0, 5.0]
    jet = g.sample(tape, Jet.seed(np.array([[0.0], [1.0]])))
    # x=0 is the shared node: slope of the right cell; x=1 has only the left cell
    np.testing.assert_allclose(jet.tan.data[:, 0, 0], [4.0, 4.0])


def _zero_mlp(tape, mlp):
    for w, b in mlp.names:
        tape.view(w)[:] = 0.0
        tape.view(b)[:] = 0.0


def test_spectrum_constant_from_zero_hypernet(rng):
    m = small_nstr()
    _zero_mlp(m.tape, m.hyper)
    beta = rng.normal(size=m.n_bases)
    m.tape.view(m.hyper.names[-1][1])[:] = beta
    s = m.spectrum_values(rng.uniform(-1, 1, size=(10, 2)))
    np.testing.assert_array_equal(s, np.tile(beta, (10, 1)))


def test_spectrum_tracks_grid_with_identity_hypernet():
    cfg = NstrConfig(dim=1, n_bases=1, grid_resolution=1, latent_dim=1, hyper_hidden=[], sample_resolution=8)
    m = NstrModel(cfg)
    m.tape.view("grid.features")[:, 0] = [0.0, 4.0]
    w, b = m.hyper.names[0]
    m.tape.view(w)[:] = [[1.0, 0.0]]
    m.tape.view(b)[:] = 0.0
    xs = np.array([[-1.0], [0.0], [0.5]])
    np.testing.assert_allclose(m.spectrum_values(xs)[:, 0], [0.0, 2.0, 3.0])


def test_spectrum_lipschitz_probe(rng):
    """Empirical Lipschitz constant of S; reported, only sanity-bounded."""
    m = small_nstr(seed=2)
    xs = rng.uniform(-0.9, 0.9, size=(200, 2))
    dx = rng.normal(size=(200, 2)) * 1e-3
    ds = np.linalg.norm(m.spectrum_values(xs + dx) - m.spectrum_values(xs), axis=1)
    lip = float(np.max(ds / np.linalg.norm(dx, axis=1)))
    print(f"empirical Lipschitz constant of S: {lip:.3f}")
    assert np.isfinite(lip)


def _set_basis(m, omegas, phases):
    m.tape.view("basis.omegas")[:] = np.asarray(omegas, dtype=float).reshape(m.n_bases, m.dim)
    m.tape.view("basis.phases")[:] = phases


def test_modulation_zero_spectrum():
    m = small_nstr(dim=1)
    xs = np.linspace(-1, 1, 7)[:, None]
    out = m.modulated_features(xs, Tensor(np.zeros((7, m.n_bases))))
    np.testing.assert_array_equal(out.data, 0.0)


def test_modulation_single_basis_phase():
    m = small_nstr(dim=1, n_bases=1)
    _set_basis(m, [0.0], [np.pi / 2])
    out = m.modulated_features(np.array([[0.3]]), Tensor(np.ones((1, 1))))
    assert out.data[0, 0] == pytest.approx(1.0)


def test_modulation_two_bases_sum():
    m = small_nstr(dim=1, n_bases=2)
    _set_basis(m, [np.pi, 2 * np.pi], [0.0, 0.0])
    out = m.modulated_features(np.array([[0.5]]), Tensor(np.array([[1.0, 2.0]])), summed=True)
    assert out.data[0, 0] == pytest.approx(1.0)


def test_modulation_linear_in_spectrum(rng):
    m = small_nstr()
    xs = rng.uniform(-1, 1, size=(9, 2))
    s = rng.normal(size=(9, m.n_bases))
    a = m.modulated_features(xs, Tensor(s)).data
    b = m.modulated_features(xs, Tensor(2.5 * s)).data
    np.testing.assert_allclose(b, 2.5 * a)


def _identity_decoder(**kw):
    m = small_nstr(dim=1, n_bases=1, decoder_hidden=[], **kw)
    w, b = m.decoder.names[0]
    m.tape.view(w)[:] = 1.0
    m.tape.view(b)[:] = 0.0
    return m


def test_forward_identity_decoder():
    m = _identity_decoder()
    _set_basis(m, [0.0], [np.pi / 2])
    out = m.forward(np.array([[0.1]]), Tensor(np.ones((1, 1))))
    assert out.data[0, 0] == pytest.approx(1.0)


def test_forward_constant_decoder(rng):
    m = small_nstr()
    _zero_mlp(m.tape, m.decoder)
    m.tape.view(m.decoder.names[-1][1])[:] = 0.75
    np.testing.assert_array_equal(m.predict(rng.uniform(-1, 1, size=(20, 2))), 0.75)


@pytest.mark.parametrize("bottleneck", [False, True])
def test_forward_matches_numpy_reimplementation(rng, bottleneck):
    m = small_nstr(seed=5, scalar_bottleneck=bottleneck)
    xs = rng.uniform(-1, 1, size=(30, 2))
    t = m.tape
    wmat, _ = m.grid.weights(xs)
    z = wmat @ t.view("grid.features")
    s = m.hyper.manual(t, np.concatenate([z, xs], axis=1))
    terms = s * np.sin(xs @ t.view("basis.omegas").T + t.view("basis.phases"))
    feats = terms.sum(axis=1, keepdims=True) if bottleneck else terms
    ref = m.decoder.manual(t, feats)
    np.testing.assert_allclose(m.predict(xs), ref, rtol=1e-12, atol=1e-12)


def test_forward_deterministic(rng):
    m = small_nstr(seed=4)
    xs = rng.uniform(-1, 1, size=(50, 2))
    assert np.array_equal(m.predict(xs), m.predict(xs))
    assert np.array_equal(m.predict(xs), small_nstr(seed=4).predict(xs))


def test_flow_zero_and_bias(rng):
    m = small_nstr()
    _zero_mlp(m.tape, m.flow)
    xs = rng.uniform(-1, 1, size=(5, 2))
    s = Tensor(rng.normal(size=(5, m.n_bases)))
    np.testing.assert_array_equal(m.flow_eval(xs, s).data, 0.0)
    beta = rng.normal(size=m.n_bases * 2)
    m.tape.view(m.flow.names[-1][1])[:] = beta
    np.testing.assert_array_equal(m.flow_eval(xs, s).data, np.tile(beta.reshape(m.n_bases, 2), (5, 1, 1)))


def test_flow_matches_manual(rng):
    m = small_nstr(seed=7)
    xs = rng.uniform(-1, 1, size=(12, 2))
    s = rng.normal(size=(12, m.n_bases))
    ref = m.flow.manual(m.tape, np.concatenate([xs, s], axis=1)).reshape(12, m.n_bases, 2)
    np.testing.assert_allclose(m.flow_eval(xs, Tensor(s)).data, ref, rtol=1e-12, atol=1e-13)


def test_frozen_basis_unchanged_by_training(rng):
    m = small_nstr(dim=1, train_basis=False)
    before = m.tape.view("basis.omegas").copy(), m.tape.view("basis.phases").copy()
    xs = np.linspace(-1, 1, 64)[:, None]
    data = SignalDataset(xs, np.sin(4 * xs))
    train(m, data, TrainConfig(iterations=30, batch_size=16, lr=1e-2, log_every=10))
    np.testing.assert_array_equal(m.tape.view("basis.omegas"), before[0])
    np.testing.assert_array_equal(m.tape.view("basis.phases"), before[1])


def test_basis_init_ranges():
    tape = ParamTape()
    GlobalBasis(tape, 200, 2, 50.0, np.random.default_rng(0))
    mags = np.linalg.norm(tape.view("basis.omegas"), axis=1)
    assert mags.min() >= np.pi - 1e-12 and mags.max() <= 50.0 + 1e-12
    ph = tape.view("basis.phases")
    assert ph.min() >= 0 and ph.max() < 2 * np.pi


def test_default_config_hand_count():
    m = NstrModel(NstrConfig())
    k, d, L = 16, 2, 16
    basis = k * d + k
    grid = 17 * 17 * L
    hyper = (L + d) * 64 + 64 + 64 * k + k
    flow = (d + k) * 64 + 64 + 64 * 64 + 64 + 64 * (k * d) + k * d
    dec = k * 64 + 64 + 64 * 64 + 64 + 64 * 1 + 1
    assert m.param_count() == basis + grid + hyper + flow + dec


def test_frozen_basis_excluded_from_count():
    a = NstrModel(NstrConfig(train_basis=True))
    b = NstrModel(NstrConfig(train_basis=False))
    assert a.param_count() - b.param_count() == 16 * 2 + 16


def test_default_grid_resolution():
    assert NstrConfig(dim=2).resolved_grid_resolution() == 16
    assert NstrConfig(dim=1).resolved_grid_resolution() == 128
    assert NstrConfig(dim=2, sample_resolution=64).resolved_omega_max() == pytest.approx(16 * np.pi)
