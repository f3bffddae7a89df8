import struct

import numpy as np
import pytest

from edit_kernels import weights as wio
from edit_kernels.config import AttentionConfig, MECHANISMS
from edit_kernels.errors import (
    BadMagicError,
    DuplicateNameError,
    MissingWeightError,
    ShapeError,
    TruncatedFileError,
    VersionMismatchError,
    WeightFormatError,
)
from edit_kernels.mechanisms import build_runner, manifest, seeded_store, validate_store
from edit_kernels.weights import WeightStore


def _random_store(rng):
    store = WeightStore()
    for i in range(int(rng.integers(0, 6))):
        ndim = int(rng.integers(0, 5))
        shape = tuple(int(s) for s in rng.integers(0, 4, size=ndim))
        name = f"t{i}." + "".join(rng.choice(list("abcxyzé_"), size=int(rng.integers(1, 8))))
        store.add(name, rng.standard_normal(shape) * 10)
    return store


def _bytes(store, tmp_path):
    p = tmp_path / "w.edtw"
    wio.save(store, p)
    return p.read_bytes()


def test_round_trip_bit_identical(rng, tmp_path):
    for _ in range(20):
        store = _random_store(rng)
        p = tmp_path / "rt.edtw"
        wio.save(store, p)
        back = wio.load(p)
        assert list(back) == list(store)
        for name in store:
            assert back[name].shape == store[name].shape
            assert back[name].tobytes() == store[name].tobytes()
        assert back.provenance == ("loaded", str(p))


def test_special_values_survive(tmp_path):
    store = WeightStore({"x": np.array([np.nan, np.inf, -0.0, 1e-45], np.float32)})
    back = wio.loads(_bytes(store, tmp_path))
    assert back["x"].tobytes() == store["x"].tobytes()


def test_header_layout(tmp_path):
    store = WeightStore({"ab": np.arange(6, dtype=np.float32).reshape(2, 3)})
    buf = _bytes(store, tmp_path)
    assert buf[:4] == b"EDTW"
    assert struct.unpack("<II", buf[4:12]) == (1, 1)
    assert struct.unpack("<H", buf[12:14]) == (2,)
    assert buf[14:16] == b"ab"
    assert struct.unpack("<BII", buf[16:25]) == (2, 2, 3)
    assert np.frombuffer(buf[25:], "<f4").tolist() == [0, 1, 2, 3, 4, 5]


def test_every_truncation_is_typed(tmp_path):
    store = WeightStore({"a": np.ones((2, 2)), "b": np.zeros(3)})
    buf = _bytes(store, tmp_path)
    for cut in range(len(buf)):
        with pytest.raises(TruncatedFileError):
            wio.loads(buf[:cut])


def test_bad_magic(tmp_path):
    buf = _bytes(WeightStore({"a": [1.0]}), tmp_path)
    with pytest.raises(BadMagicError):
        wio.loads(b"EDTX" + buf[4:])


def test_version_mismatch(tmp_path):
    buf = _bytes(WeightStore({"a": [1.0]}), tmp_path)
    with pytest.raises(VersionMismatchError):
        wio.loads(buf[:4] + struct.pack("<I", 2) + buf[8:])


def test_duplicate_name_in_file(tmp_path):
    buf = _bytes(WeightStore({"a": [1.0]}), tmp_path)
    body = buf[12:]
    with pytest.raises(DuplicateNameError):
        wio.loads(buf[:8] + struct.pack("<I", 2) + body + body)


def test_trailing_bytes_rejected(tmp_path):
    buf = _bytes(WeightStore({"a": [1.0]}), tmp_path)
    with pytest.raises(WeightFormatError):
        wio.loads(buf + b"\0")


def test_random_corruption_never_crashes(rng, tmp_path):
    buf = bytearray(_bytes(seeded_store(AttentionConfig("edit", d=8), 0), tmp_path))
    for _ in range(200):
        bad = bytearray(buf)
        for pos in rng.integers(0, len(bad), size=3):
            bad[pos] = int(rng.integers(0, 256))
        try:
            wio.loads(bytes(bad))
        except WeightFormatError:
            pass


def test_store_is_read_only_and_rejects_duplicates():
    store = WeightStore({"a": np.ones(2)})
    with pytest.raises(ValueError):
        store["a"][0] = 5
    with pytest.raises(DuplicateNameError):
        store.add("a", np.ones(2))


def test_missing_weight_names_tensor():
    store = WeightStore()
    with pytest.raises(MissingWeightError, match="cf.compress.weight"):
        store.get_for("cf.compress.weight", "edit")
    with pytest.raises(KeyError):
        store["nope"]


def test_seeded_stores_are_deterministic():
    cfg = AttentionConfig("hybrid", d=16)
    a, b, c = seeded_store(cfg, 3), seeded_store(cfg, 3), seeded_store(cfg, 4)
    assert all(a[n].tobytes() == b[n].tobytes() for n in a)
    assert any(a[n].tobytes() != c[n].tobytes() for n in a if a[n].std() > 0)
    assert a.provenance == ("seeded", 3)


def test_seeded_tensor_bounds():
    t = wio.seeded_tensor(0, "x", (200, 50), fan_in=25)
    assert np.all(np.abs(t) <= 0.2) and t.std() > 0.05


@pytest.mark.parametrize("mech", MECHANISMS)
def test_manifests_cover_runners(mech):
    cfg = AttentionConfig.for_mechanism(mech, d=8, heads=2, height=4, width=4, n_prompt=3)
    store = seeded_store(cfg, 0)
    assert set(store) == set(manifest(cfg))
    build_runner(cfg, store)


def test_validate_store_reports_missing_and_shape():
    cfg = AttentionConfig("edit", d=8)
    full = seeded_store(cfg, 0)
    partial = WeightStore((n, full[n]) for n in full if n != "sc.dw.weight")
    with pytest.raises(MissingWeightError, match="sc.dw.weight"):
        validate_store(cfg, partial)
    reshaped = WeightStore((n, full[n] if n != "out.bias" else np.zeros(3)) for n in full)
    with pytest.raises(ShapeError, match="out.bias"):
        validate_store(cfg, reshaped)
