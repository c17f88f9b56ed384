import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from wickpressure import io
from wickpressure.config import RunConfig
from wickpressure.pipeline import aggregate, from_stack, pick_targets, to_stack
from wickpressure.torus import TorusGrid


@given(st.sampled_from([(1, 16, 8), (1, 32, 16), (2, 16, 8)]), st.integers(0, 10**6))
def test_stack_round_trip(dims, seed):
    d, ny, nz = dims
    yg, zg = TorusGrid(d, ny), TorusGrid(d, nz)
    t = np.random.default_rng(seed).standard_normal(yg.shape + zg.shape)
    s = to_stack(t, yg, zg)
    assert s.shape == (zg.size,) + yg.shape
    # slice k of the stack is the y-field for the k-th z node
    k = np.unravel_index(3, zg.shape)
    np.testing.assert_array_equal(s[3], t[(...,) + k])
    np.testing.assert_array_equal(from_stack(s, yg, zg), t)


def test_targets_deterministic_and_on_coarse_nodes():
    cfg = RunConfig(grid_y=16, grid_z=8, seed=5, targets=12)
    a, b = pick_targets(cfg), pick_targets(cfg)
    assert a == b and len(a) == 12
    for y, z in a:
        assert y != z
        assert all(v % 2 == 0 for v in z)


def test_aggregate_flags_tampering(tmp_path):
    m = io.Manifest(tmp_path)
    m.write_json("summary.json", {"experiment": "t", "status": "pass", "config": {}, "checks": {}}, "summary")
    m.write_tgf("x.tgf", TorusGrid(1, 8), np.zeros(8))
    m.save()
    code, rep = aggregate(tmp_path)
    assert code == 0 and rep["status"] == "pass"
    (tmp_path / "x.tgf").write_bytes(b"junk")
    code, rep = aggregate(tmp_path)
    assert code == 3 and rep["checksum_failures"] == ["x.tgf"]
