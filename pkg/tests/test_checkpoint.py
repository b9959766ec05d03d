import struct

import numpy as np
import pytest

from nstr import checkpoint as ckpt
from nstr.model import NstrConfig, NstrModel

from conftest import small_fourier, small_nstr, small_siren


@pytest.mark.parametrize("make", [small_nstr, small_siren, small_fourier])
def test_round_trip_forward(tmp_path, rng, make):
    m = make(seed=3)
    m.tape.params[:] += rng.normal(size=len(m.tape)) * 0.01
    p = tmp_path / "m.ckpt"
    ckpt.save(p, m, run_config={"a": 1})
    back, header = ckpt.load(p)
    xs = rng.uniform(-1, 1, size=(100, 2))
    assert np.abs(back.predict(xs) - m.predict(xs)).max() <= 1e-6
    assert header["kind"] == m.kind and header["run_config"] == {"a": 1}
    assert back.tape.registry() == m.tape.registry()


def test_single_precision_payload_within_tolerance(rng):
    m = NstrModel(NstrConfig(sample_resolution=64), seed=1)
    blob = ckpt.to_bytes(m, residual=False)
    back, _ = ckpt.from_bytes(blob)
    xs = rng.uniform(-1, 1, size=(100, 2))
    assert np.abs(back.predict(xs) - m.predict(xs)).max() <= 1e-6
    (n,) = struct.unpack("<I", blob[:4])
    assert len(blob) == 4 + n + 4 * len(m.tape)


def test_bytes_deterministic():
    assert ckpt.to_bytes(small_nstr(seed=2)) == ckpt.to_bytes(small_nstr(seed=2))


def test_header_layout():
    m = small_nstr()
    blob = ckpt.to_bytes(m)
    header, offset = ckpt.read_header(blob)
    assert header["schema"] == ckpt.SCHEMA_VERSION and header["format"] == ckpt.MAGIC
    assert header["payload_count"] == len(m.tape)
    assert len(blob) - offset == 8 * len(m.tape)


@pytest.mark.parametrize("mutate", [
    lambda b: b[:3],
    lambda b: b[:-4],
    lambda b: struct.pack("<I", 10**9) + b[4:],
    lambda b: b[:4] + b"x" + b[5:],
])
def test_corrupt_rejected(mutate):
    with pytest.raises(ckpt.CheckpointError):
        ckpt.from_bytes(mutate(ckpt.to_bytes(small_nstr())))


def test_schema_mismatch(monkeypatch):
    blob = ckpt.to_bytes(small_nstr())
    monkeypatch.setattr(ckpt, "SCHEMA_VERSION", 99)
    with pytest.raises(ckpt.CheckpointError, match="schema"):
        ckpt.from_bytes(blob)


def test_nonfinite_payload_rejected():
    m = small_nstr()
    blob = bytearray(ckpt.to_bytes(m, residual=False))
    blob[-4:] = np.array([np.inf], dtype="<f4").tobytes()
    with pytest.raises(ckpt.CheckpointError):
        ckpt.from_bytes(bytes(blob))


def test_missing_file(tmp_path):
    with pytest.raises(ckpt.CheckpointError):
        ckpt.load(tmp_path / "none.ckpt")
