import json
import struct

import jsonschema
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wickpressure import io
from wickpressure.torus import TorusGrid

SCHEMAS = [
    "manifest",
    "fit_report",
    "solve_report",
    "gmc_prediction",
    "ensemble_manifest",
    "family_sidecar",
    "verification_report",
    "summary",
    "report",
]


@pytest.mark.parametrize("name", SCHEMAS)
def test_shipped_schemas_are_valid(name):
    jsonschema.Draft202012Validator.check_schema(io.load_schema(name))


def test_header_layout(tmp_path):
    grid = TorusGrid(2, 8)
    io.write_tgf(tmp_path / "a.tgf", grid, np.arange(64.0).reshape(8, 8))
    blob = (tmp_path / "a.tgf").read_bytes()
    assert blob[:4] == b"TGF1"
    assert struct.unpack("<BIB", blob[4:10]) == (2, 8, 0)
    assert len(blob) == 10 + 64 * 8
    assert struct.unpack("<d", blob[10 + 8 * 9 : 10 + 8 * 10])[0] == 9.0


@given(st.sampled_from([TorusGrid(1, 8), TorusGrid(2, 8), TorusGrid(3, 8)]), st.integers(1, 3), st.booleans(), st.integers(0, 999))
def test_round_trip(tmp_path_factory, grid, count, cplx, seed):
    rng = np.random.default_rng(seed)
    data = rng.standard_normal((count,) + grid.shape)
    if cplx:
        data = data + 1j * rng.standard_normal(data.shape)
    path = tmp_path_factory.mktemp("tgf") / "f.tgf"
    sha = io.write_tgf(path, grid, data)
    g, back = io.read_tgf(path, sha)
    assert g == grid
    np.testing.assert_array_equal(back, data)
    assert back.dtype == (np.complex128 if cplx else np.float64)


def test_bad_files(tmp_path):
    grid = TorusGrid(1, 8)
    path = tmp_path / "f.tgf"
    sha = io.write_tgf(path, grid, np.zeros(8))
    blob = bytearray(path.read_bytes())
    blob[12] ^= 1
    path.write_bytes(bytes(blob))
    with pytest.raises(io.ChecksumError):
        io.read_tgf(path, sha)
    path.write_bytes(b"XXXX" + bytes(blob[4:]))
    with pytest.raises(io.FormatError):
        io.read_tgf(path)
    path.write_bytes(bytes(blob[:-3]))
    with pytest.raises(io.FormatError):
        io.read_tgf(path)
    with pytest.raises(ValueError):
        io.write_tgf(path, grid, np.zeros(9))


def test_manifest_tracks_and_verifies(tmp_path):
    m = io.Manifest(tmp_path)
    m.write_tgf("x.tgf", TorusGrid(1, 8), np.ones(8))
    m.write_json("fit.json", {"a": 1.5})
    m.save()
    m2 = io.Manifest.load(tmp_path)
    assert m2.verify() == []
    _, v = m2.read_tgf("x.tgf")
    assert v.shape == (1, 8)
    (tmp_path / "fit.json").write_text('{"a": 2}')
    assert m2.verify() == ["fit.json"]
    (tmp_path / "x.tgf").unlink()
    assert m2.verify() == ["fit.json", "x.tgf"]
    with pytest.raises(io.ChecksumError):
        m2.read_tgf("missing.tgf")


def test_json_emission_is_validated_and_stable(tmp_path):
    with pytest.raises(jsonschema.ValidationError):
        io.write_json(tmp_path / "s.json", {"experiment": "x"}, "summary")
    with pytest.raises(ValueError):
        io.write_json(tmp_path / "n.json", {"v": float("nan")})
    io.write_json(tmp_path / "o.json", {"b": 1, "a": [1, 2]})
    text = (tmp_path / "o.json").read_text()
    assert text.index('"a"') < text.index('"b"')
    assert json.loads(text) == {"a": [1, 2], "b": 1}


def test_csv_rows(tmp_path):
    io.write_csv(tmp_path / "e.csv", ["realization_id", "mass"], [(0, 0.1), (1, np.float64(2.5))])
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines == ["realization_id,mass", "0,0.1", "1,2.5"]
