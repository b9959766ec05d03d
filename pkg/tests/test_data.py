import wave

import numpy as np
import pytest
from PIL import Image
from scipy.signal import stft

from nstr.data import (
    FormatError,
    SignalDataset,
    cell_centers,
    chirp_frequency,
    grid_coords,
    load_audio,
    load_image,
    make_checkerboard,
    make_chirp,
    make_warped_texture,
    save_audio,
    save_image,
)


def test_chirp_pure_tone():
    ds = make_chirp(512, 7.0, 7.0)
    t = (ds.coords[:, 0] + 1) / 2
    np.testing.assert_allclose(ds.values[:, 0], np.sin(2 * np.pi * 7.0 * t), atol=1e-12)
    np.testing.assert_array_equal(chirp_frequency(t, 7.0, 7.0), 7.0)


@pytest.mark.parametrize("f0,f1", [(5, 60), (1, 2), (30, 3)])
def test_chirp_starts_at_zero(f0, f1):
    assert make_chirp(256, f0, f1).values[0, 0] == 0.0


def test_chirp_rejects_aliasing():
    with pytest.raises(ValueError):
        make_chirp(100, 5, 60)


def test_chirp_ridge_matches_instantaneous_frequency():
    n = 2048
    ds = make_chirp(n, 5.0, 60.0)
    rate = n - 1  # samples per unit t
    f, tt, z = stft(ds.values[:, 0], fs=rate, window="hann", nperseg=256, noverlap=224, nfft=8192, boundary=None, padded=False)
    ridge = f[np.argmax(np.abs(z), axis=0)]
    truth = chirp_frequency(tt, 5.0, 60.0)
    # frames fully inside the signal; bin spacing after padding is 0.25 cycles
    assert np.max(np.abs(ridge - truth)) < 1.0


def test_warped_texture_stationary_without_warp():
    ds = make_warped_texture(32, base_freq=2.0, warp_strength=0.0)
    x, y = ds.coords[:, 0], ds.coords[:, 1]
    w = 2 * np.pi * 2.0
    np.testing.assert_allclose(ds.values[:, 0], np.sin(w * (x + 0.5 * y)), atol=1e-12)
    np.testing.assert_allclose(ds.meta["omega"], np.tile([w, 0.5 * w], (len(ds), 1)))


def test_warped_texture_bounded():
    ds = make_warped_texture(64, 5.0, 1.0)
    assert np.abs(ds.values).max() <= 1.0


def _phase_gradient(img, h, axis, half=2):
    """Local frequency along one axis from y[i-1] + y[i+1] = 2 cos(w h) y[i], least squares over a window."""
    a = np.moveaxis(img, axis, -1)
    mid, side = a[..., 1:-1], a[..., :-2] + a[..., 2:]
    num = side * mid
    den = 2 * mid * mid
    k = np.ones(2 * half + 1)
    conv = lambda v: np.apply_along_axis(lambda r: np.convolve(r, k, mode="same"), -1, v)
    c = np.clip(conv(num) / conv(den), -1, 1)
    est = np.arccos(c) / h
    return np.moveaxis(est[..., half:-half], -1, axis)


def test_warped_texture_stored_frequency_matches_phase_gradient():
    r = 64
    ds = make_warped_texture(r, 3.0, 0.8)
    img = ds.as_grid()
    om = ds.meta["omega"].reshape(r, r, 2)
    h = 2.0 / r
    nyquist = np.pi / h
    errs = []
    for axis in (0, 1):
        est = _phase_gradient(img, h, axis)
        sl = [slice(None), slice(None)]
        sl[axis] = slice(3, r - 3)
        truth = np.abs(om[..., axis][tuple(sl)])
        errs.append(np.mean(np.abs(est - truth)))
    assert max(errs) < 0.02 * nyquist, errs


def test_checkerboard_shape_and_range():
    ds = make_checkerboard(64)
    assert len(ds) == 64 * 64 and ds.resolution == (64, 64)
    assert np.abs(ds.values).max() <= 1.0


def test_grid_coords_row_major_unique():
    xs = grid_coords((4, 3))
    assert len(np.unique(xs, axis=0)) == 12
    np.testing.assert_allclose(xs[:3, 0], cell_centers(4)[0])
    np.testing.assert_allclose(xs[:3, 1], cell_centers(3))
    np.testing.assert_allclose(cell_centers(4), [-0.75, -0.25, 0.25, 0.75])


def test_load_png_affine_normalization(tmp_path):
    p = tmp_path / "g.png"
    Image.fromarray(np.array([[0, 85], [170, 255]], dtype=np.uint8)).save(p)
    ds = load_image(p)
    np.testing.assert_allclose(ds.values[:, 0], [-1, -1 / 3, 1 / 3, 1])
    assert ds.resolution == (2, 2)


@pytest.mark.parametrize("suffix,depth", [(".png", 8), (".png", 16), (".pgm", 8)])
def test_image_round_trip(tmp_path, rng, suffix, depth):
    vals = rng.uniform(-1, 1, size=(8, 8))
    p = tmp_path / f"r{suffix}"
    save_image(p, vals, bit_depth=depth)
    back = load_image(p).as_grid()
    step = 2.0 / (2**depth - 1)
    assert np.abs(back - vals).max() <= step
    np.testing.assert_allclose(load_image(p).denormalize(back), np.round((vals + 1) / 2 * (2**depth - 1)), atol=1e-9)


def test_rgb_png(tmp_path, rng):
    p = tmp_path / "c.png"
    save_image(p, rng.uniform(-1, 1, size=(4, 4, 3)))
    assert load_image(p).channels == 3


def test_image_errors(tmp_path):
    bad = tmp_path / "x.png"
    bad.write_bytes(b"not a png")
    with pytest.raises(FormatError):
        load_image(bad)
    with pytest.raises(FormatError):
        load_image(tmp_path / "x.bmp")


def test_photo_fixture_resolution():
    from pathlib import Path

    ds = load_image(Path(__file__).parent / "fixtures" / "photo64.png")
    assert ds.resolution == (64, 64) and ds.channels == 1


def test_wav_counting(tmp_path):
    p = tmp_path / "a.wav"
    save_audio(p, np.sin(np.linspace(0, 200, 44100)) * 0.5)
    ds = load_audio(p)
    assert len(ds) == 44100 and ds.dim == 1
    assert np.abs(ds.coords).max() < 1
    np.testing.assert_allclose(np.diff(ds.coords[:, 0]), 2 / 44100)
    assert np.abs(ds.values).max() == 1.0


def test_wav_rejects_stereo(tmp_path):
    p = tmp_path / "s.wav"
    with wave.open(str(p), "wb") as wf:
        wf.setnchannels(2)
        wf.setsampwidth(2)
        wf.setframerate(8000)
        wf.writeframes(b"\0\0" * 20)
    with pytest.raises(FormatError):
        load_audio(p)


def test_dataset_rejects_out_of_domain():
    with pytest.raises(ValueError):
        SignalDataset(np.array([[2.0]]), np.array([0.0]))
