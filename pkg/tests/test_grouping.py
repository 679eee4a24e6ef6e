import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from givf.grouping import (
    ConstQuantizer,
    assign_subcentroid,
    learn_alpha,
    neighbor_centroids,
    subcentroids_for_region,
    train_const_quantizer,
)
from givf.kmeans import CoarseCodebook


def oracle_alpha(points, centroid, neighbors):
    """Literal two-pass fit in plain float64 loops.

    Pass 1: each point projects onto every direction s_l - c with the
    projection clamped to [0, 1] and keeps the direction with the smallest
    residual (lowest index on ties). Pass 2: a single least-squares alpha over
    the chosen directions, clamped to [0, 1].
    """
    c = np.asarray(centroid, dtype=np.float64)
    dirs = [np.asarray(s, dtype=np.float64) - c for s in neighbors]
    chosen = []
    for x in np.asarray(points, dtype=np.float64):
        best = None
        for idx, g in enumerate(dirs):
            nsq = float(g @ g)
            if nsq == 0.0:
                continue
            t = min(max(float((x - c) @ g) / nsq, 0.0), 1.0)
            resid = float((x - c - t * g) @ (x - c - t * g))
            if best is None or resid < best[0] - 1e-15:
                best = (resid, idx)
        if best is not None:
            chosen.append(best[1])
    if not chosen:
        return 0.0
    num = sum(float((p - c) @ dirs[i]) for p, i in zip(np.asarray(points, np.float64), chosen))
    den = sum(float(dirs[i] @ dirs[i]) for i in chosen)
    if den <= 0:
        return 0.0
    return min(max(num / den, 0.0), 1.0)


def test_neighbor_centroids_collinear():
    book = CoarseCodebook(np.array([[0.0], [1.0], [10.0]], dtype=np.float32))
    got = neighbor_centroids(book, l=2)
    assert got[0].tolist() == [1, 2]
    assert got[1].tolist() == [0, 2]
    assert got[2].tolist() == [1, 0]


def test_neighbor_centroids_tie_breaks_to_lower_id():
    # unit square: both side neighbors of a corner are equidistant
    book = CoarseCodebook(
        np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=np.float32)
    )
    got = neighbor_centroids(book, l=2)
    assert got[0].tolist() == [1, 2]
    assert got[3].tolist() == [1, 2]


def test_neighbor_centroids_validation():
    book = CoarseCodebook(np.zeros((3, 2), dtype=np.float32))
    with pytest.raises(ValueError, match="0 < l"):
        neighbor_centroids(book, l=3)
    with pytest.raises(ValueError, match="0 < l"):
        neighbor_centroids(book, l=0)


def test_alpha_zero_when_points_sit_on_centroid():
    c = np.array([2.0, 3.0], dtype=np.float32)
    pts = np.tile(c, (10, 1))
    nbrs = np.array([[4.0, 3.0], [2.0, 9.0]], dtype=np.float32)
    assert learn_alpha(pts, c, nbrs) == 0.0


def test_alpha_half_when_points_sit_at_midpoints():
    c = np.zeros(2, dtype=np.float32)
    nbrs = np.array([[2.0, 0.0], [0.0, 4.0]], dtype=np.float32)
    pts = np.array([[1.0, 0.0], [0.0, 2.0]], dtype=np.float32)
    assert learn_alpha(pts, c, nbrs) == pytest.approx(0.5, abs=1e-12)


def test_alpha_one_when_points_sit_on_neighbors():
    c = np.zeros(3, dtype=np.float32)
    nbrs = np.array([[1.0, 0, 0], [0, 2.0, 0]], dtype=np.float32)
    assert learn_alpha(nbrs, c, nbrs) == pytest.approx(1.0, abs=1e-12)


def test_alpha_matches_literal_oracle():
    rng = np.random.default_rng(0)
    for trial in range(30):
        dim = int(rng.integers(2, 8))
        l = int(rng.integers(1, 6))
        n = int(rng.integers(1, 40))
        c = rng.standard_normal(dim).astype(np.float32)
        nbrs = (c + rng.standard_normal((l, dim))).astype(np.float32)
        pts = (c + 0.7 * rng.standard_normal((n, dim))).astype(np.float32)
        got = learn_alpha(pts, c, nbrs)
        want = oracle_alpha(pts, c, nbrs)
        assert got == pytest.approx(want, abs=1e-6)
        assert 0.0 <= got <= 1.0


def test_alpha_degenerate_directions():
    c = np.array([1.0, 1.0], dtype=np.float32)
    nbrs = np.tile(c, (3, 1))  # all directions have zero length
    pts = np.array([[2.0, 2.0]], dtype=np.float32)
    assert learn_alpha(pts, c, nbrs) == 0.0
    with pytest.raises(ValueError, match="at least one point"):
        learn_alpha(np.zeros((0, 2), dtype=np.float32), c, nbrs)


def test_subcentroids_interpolate():
    c = np.array([1.0, 0.0], dtype=np.float32)
    nbrs = np.array([[3.0, 0.0], [1.0, 4.0]], dtype=np.float32)
    got = subcentroids_for_region(c, nbrs, alpha=0.25)
    np.testing.assert_allclose(got, [[1.5, 0.0], [1.0, 1.0]], atol=1e-7)
    assert np.array_equal(subcentroids_for_region(c, nbrs, 0.0), np.tile(c, (2, 1)))
    assert np.array_equal(subcentroids_for_region(c, nbrs, 1.0), nbrs)


def test_assign_subcentroid_alpha_zero_is_group_zero():
    rng = np.random.default_rng(1)
    c = rng.standard_normal(4).astype(np.float32)
    nbrs = rng.standard_normal((5, 4)).astype(np.float32)
    pts = rng.standard_normal((50, 4)).astype(np.float32)
    # alpha 0 collapses every anchor onto the centroid; ties go to group 0
    assert np.all(assign_subcentroid(pts, c, nbrs, 0.0) == 0)


def test_assign_subcentroid_recovers_planted_group():
    rng = np.random.default_rng(2)
    c = rng.standard_normal(6).astype(np.float32)
    nbrs = (c + 3.0 * rng.standard_normal((8, 6))).astype(np.float32)
    x = c + 0.6 * (nbrs[3] - c)  # exactly on anchor 3 at alpha 0.6
    assert int(assign_subcentroid(x, c, nbrs, 0.6)) == 3


def test_assign_subcentroid_matches_brute_force():
    rng = np.random.default_rng(3)
    c = rng.standard_normal(5).astype(np.float32)
    nbrs = (c + rng.standard_normal((6, 5))).astype(np.float32)
    pts = (c + rng.standard_normal((80, 5))).astype(np.float32)
    alpha = 0.37
    anchors = subcentroids_for_region(c, nbrs, alpha)
    want = np.array(
        [int(np.argmin(((anchors - p) ** 2).sum(axis=1))) for p in pts]
    )
    got = assign_subcentroid(pts, c, nbrs, alpha)
    assert np.array_equal(got, want)


def test_const_quantizer_bounds_map_to_edge_buckets():
    q = train_const_quantizer(np.linspace(-3.0, 5.0, 10_000))
    assert q.quantize(np.array([q.lo])).tolist() == [0]
    assert q.quantize(np.array([np.nextafter(q.hi, -np.inf)])).tolist() == [255]
    # clamping: far outside values hit the edge buckets
    assert q.quantize(np.array([-1e9])).tolist() == [0]
    assert q.quantize(np.array([1e9])).tolist() == [255]


@given(st.floats(-10, 10), st.floats(0.01, 20), st.integers(0, 2**32 - 1))
def test_const_quantizer_half_bucket_roundtrip(lo, width, seed):
    q = ConstQuantizer(lo=lo, hi=lo + width)
    rng = np.random.default_rng(seed)
    v = rng.uniform(lo, lo + width, size=64)
    err = np.abs(q.dequantize(q.quantize(v)).astype(np.float64) - v)
    assert err.max() <= q.step / 2 + 1e-7 * max(abs(lo), abs(lo + width), 1.0)


def test_const_quantizer_degenerate_and_table():
    q = ConstQuantizer(lo=2.0, hi=2.0)
    assert q.step == 0.0
    assert np.all(q.quantize(np.array([1.0, 2.0, 3.0])) == 0)
    q2 = ConstQuantizer(lo=0.0, hi=256.0)
    table = q2.table()
    assert table.shape == (256,)
    np.testing.assert_allclose(table, np.arange(256) + 0.5, rtol=1e-6)


def test_train_const_quantizer_is_float32_exact():
    rng = np.random.default_rng(4)
    q = train_const_quantizer(rng.standard_normal(5000))
    assert q.lo == float(np.float32(q.lo))
    assert q.hi == float(np.float32(q.hi))
    assert q.lo < q.hi
    with pytest.raises(ValueError, match="zero values"):
        train_const_quantizer(np.array([]))
    with pytest.raises(ValueError, match="non-finite"):
        train_const_quantizer(np.array([1.0, np.nan]))
