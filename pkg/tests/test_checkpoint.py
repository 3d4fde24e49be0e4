import numpy as np
import pytest

from plateattn import checkpoint as ckpt


def test_round_trip_byte_exact(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {
        "enc.w": rng.standard_normal((4, 3)).astype(np.float32),
        "enc.b": rng.standard_normal(4).astype(np.float32),
        "dec.embed": rng.standard_normal((10, 6)).astype(np.float32),
    }
    header = {"model": "test", "config": {"layers": 15}, "vocabulary": ["a", "b"]}
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    ckpt.save(p1, header, arrays)
    h, loaded = ckpt.load(p1)
    assert h["config"] == {"layers": 15}
    assert [m["name"] for m in h["params"]] == list(arrays)
    for name in arrays:
        np.testing.assert_array_equal(loaded[name], arrays[name])
    ckpt.save(p2, header, loaded)
    assert p1.read_bytes() == p2.read_bytes()


def test_bad_magic(tmp_path):
    p = tmp_path / "x.ckpt"
    p.write_bytes(b"JUNKJUNKJUNK")
    with pytest.raises(ValueError, match="magic"):
        ckpt.load(p)


def test_truncation_detected(tmp_path):
    p = tmp_path / "t.ckpt"
    ckpt.save(p, {}, {"w": np.zeros(5, dtype=np.float32)})
    data = p.read_bytes()
    p.write_bytes(data + b"\x00\x00")
    with pytest.raises(ValueError, match="trailing"):
        ckpt.load(p)
