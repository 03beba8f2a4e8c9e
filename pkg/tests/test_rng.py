import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from backlund import rng as rn


@pytest.mark.parametrize("counter,key,expected", [
    ([0, 0, 0, 0], [0, 0], [0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8]),
    ([0xFFFFFFFF] * 4, [0xFFFFFFFF] * 2, [0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD]),
    ([0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344], [0xA4093822, 0x299F31D0],
     [0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1]),
])
def test_philox_known_answers(counter, key, expected):
    out = rn.philox4x32(np.array(counter, dtype=np.uint64), key)
    assert [int(v) for v in out] == expected


def test_seed_range():
    with pytest.raises(ValueError):
        rn.path_normals(-1, [0], 0, 4)
    with pytest.raises(ValueError):
        rn.path_normals(1 << 64, [0], 0, 4)
    rn.path_normals((1 << 64) - 1, [0], 0, 4)


def test_uniforms_open_interval_and_uniform():
    u = rn.block_uniforms(7, np.arange(2000), np.arange(10)[:, None]).ravel()
    assert np.all((u > 0) & (u < 1))
    assert stats.kstest(u, "uniform").pvalue > 0.01


def test_normals_standard():
    z = rn.path_normals(42, np.arange(100), 0, 400).ravel()
    assert stats.kstest(z, "norm").pvalue > 0.01
    assert abs(z.mean()) < 5 / np.sqrt(z.size)


def test_identical_triples_reproduce():
    a = rn.path_normals(5, [3, 9], 10, 50)
    b = rn.path_normals(5, [3, 9], 10, 50)
    np.testing.assert_array_equal(a, b)


@settings(max_examples=50, deadline=None)
@given(start=st.integers(0, 1000), n=st.integers(1, 60), cut=st.integers(0, 60))
def test_windows_are_consistent(start, n, cut):
    cut = min(cut, n)
    whole = rn.path_normals(9, [4], start, n)
    left = rn.path_normals(9, [4], start, cut) if cut else np.empty((1, 0))
    right = rn.path_normals(9, [4], start + cut, n - cut) if n - cut else np.empty((1, 0))
    np.testing.assert_array_equal(whole, np.concatenate([left, right], axis=1))


def test_path_order_independence():
    paths = np.array([0, 1, 2, 3, 4, 5])
    full = rn.path_normals(1, paths, 0, 20)
    perm = np.array([4, 0, 5, 2])
    np.testing.assert_array_equal(rn.path_normals(1, paths[perm], 0, 20), full[perm])


def test_distinct_streams_uncorrelated():
    z = rn.path_normals(11, np.arange(50), 0, 2000)
    c = np.corrcoef(z)
    off = c[~np.eye(50, dtype=bool)]
    assert np.max(np.abs(off)) < 5 / np.sqrt(2000)
    z2 = rn.path_normals(12, np.arange(50), 0, 2000)
    assert abs(np.corrcoef(z.ravel(), z2.ravel())[0, 1]) < 5 / np.sqrt(z.size)


def test_reserved_blocks_distinct_from_noise():
    u0 = rn.path_uniforms(3, np.arange(1000))
    b = rn.path_bridge_uniforms(3, np.arange(1000), 0, 1)[:, 0]
    z = rn.block_uniforms(3, np.arange(1000), 0)[:, 0]
    assert not np.any(u0 == z) and not np.any(b == z) and not np.any(u0 == b)


def test_stream_matches_block_functions():
    s = rn.RngStream(8, path_index=3)
    first = s.normal(6)
    np.testing.assert_array_equal(first, rn.path_normals(8, [3], 0, 6)[0])
    assert s.counter == 3
    nxt = s.random(2)
    np.testing.assert_array_equal(nxt, rn.block_uniforms(8, np.uint64(3), np.uint64(3)))
    assert isinstance(s.random(), float)
