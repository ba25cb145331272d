import json

import numpy as np
import pytest

from obd.errors import ManifestError
from obd.manifest import MANIFEST_NAME, read_manifest, write_manifest


def test_empty_manifest(tmp_path):
    write_manifest(tmp_path, {})
    assert json.loads((tmp_path / MANIFEST_NAME).read_text()) == []
    assert read_manifest(tmp_path) == {}


def test_round_trip_is_bit_exact(tmp_path, rng):
    tensors = {"a": rng.standard_normal((3, 4)), "b.c": rng.standard_normal(5), "s": np.array(2.5)}
    write_manifest(tmp_path, tensors)
    back = read_manifest(tmp_path)
    assert list(back) == list(tensors)
    for name, value in tensors.items():
        assert back[name].tobytes() == np.asarray(value, dtype="<f8").tobytes()
        assert back[name].shape == np.shape(value)


def test_f32_widening(tmp_path, rng):
    w = rng.standard_normal((2, 3))
    write_manifest(tmp_path, {"w": w, "v": w}, dtype={"w": "f32"})
    back = read_manifest(tmp_path)
    np.testing.assert_array_equal(back["w"], w.astype(np.float32).astype(np.float64))
    np.testing.assert_array_equal(back["v"], w)
    entry = json.loads((tmp_path / MANIFEST_NAME).read_text())[0]
    assert entry["dtype"] == "f32" and entry["byte_order"] == "little-endian"


def test_corrupted_length_names_tensor(tmp_path, rng):
    write_manifest(tmp_path, {"fc1.c_x": rng.standard_normal((3, 4))})
    entry = json.loads((tmp_path / MANIFEST_NAME).read_text())[0]
    blob = tmp_path / entry["file"]
    blob.write_bytes(blob.read_bytes()[:-8])
    with pytest.raises(ManifestError, match="fc1.c_x"):
        read_manifest(tmp_path)


@pytest.mark.parametrize(
    "mutate",
    [
        lambda e: e.append(dict(e[0])),  # duplicate name
        lambda e: e[0].update(dtype="i8"),
        lambda e: e[0].update(byte_order="big-endian"),
        lambda e: e[0].update(file="missing.bin"),
        lambda e: e[0].pop("shape"),
        lambda e: e[0].update(shape=[-1, 2]),
    ],
)
def test_malformed_entries(tmp_path, mutate):
    write_manifest(tmp_path, {"w": np.ones((2, 2))})
    entries = json.loads((tmp_path / MANIFEST_NAME).read_text())
    mutate(entries)
    (tmp_path / MANIFEST_NAME).write_text(json.dumps(entries))
    with pytest.raises(ManifestError):
        read_manifest(tmp_path)


def test_missing_or_garbled_manifest(tmp_path):
    with pytest.raises(ManifestError, match="no manifest"):
        read_manifest(tmp_path)
    (tmp_path / MANIFEST_NAME).write_text("{not json")
    with pytest.raises(ManifestError, match="malformed"):
        read_manifest(tmp_path)
    (tmp_path / MANIFEST_NAME).write_text("{}")
    with pytest.raises(ManifestError, match="list"):
        read_manifest(tmp_path)


def test_bad_dtype_on_write(tmp_path):
    with pytest.raises(ManifestError):
        write_manifest(tmp_path, {"w": np.ones(2)}, dtype="f16")
