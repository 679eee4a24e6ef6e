import numpy as np
import pytest

from givf.errors import InvariantError
from givf.graph import build_graph
from givf.index import build_index
from givf.kmeans import train_kmeans
from givf.pq import build_lookup_table, pq_decode
from givf.search import (
    SearchParams,
    SweepRow,
    decomposed_distance,
    recall_at_r,
    search,
    sweep,
    verify_results,
    write_sweep_csv,
)

from conftest import stored_layout

EXHAUSTIVE = SearchParams(nprobe=48, tau=1.0, candidates=10**9)


def oracle_distances(index, q):
    """Expanded-form distance of every stored point, aligned with point_ids."""
    region, grp = stored_layout(index)
    c = index.coarse.centroids.astype(np.float64)
    q64 = np.asarray(q, dtype=np.float64)
    qc2 = ((q64 - c) ** 2).sum(axis=1)
    if index.params.grouping:
        a = index.alphas[region].astype(np.float64)
        s_ids = index.neighbor_ids[region, grp]
        base = (1.0 - a) * qc2[region] + a * qc2[s_ids]
    else:
        base = qc2[region]
    recon = pq_decode(index.pq, index.codes).astype(np.float64)
    ip = recon @ q64
    const = index.const_quant.table().astype(np.float64)[index.const_bytes]
    return base - 2.0 * ip + const


def test_exhaustive_search_matches_oracle(small_index, small_data):
    queries = small_data[2]
    for q in queries[:20]:
        res = search(small_index, q, EXHAUSTIVE)
        assert res.stats.codes_scanned == small_index.n
        oracle = oracle_distances(small_index, q)
        slot_of = {int(pid): j for j, pid in enumerate(small_index.point_ids)}
        got = res.distances.astype(np.float64)
        want = oracle[[slot_of[int(i)] for i in res.ids]]
        np.testing.assert_allclose(got, want, rtol=1e-4, atol=1e-4)
        # the head of the ranking agrees up to float32 ties
        kth = np.partition(oracle, 99)[99]
        assert np.all(want[:100] <= kth + 1e-4 * max(kth, 1.0))


def test_tau_one_equals_pruning_disabled(small_index, small_data):
    queries = small_data[2]
    for nprobe, cand in ((4, 500), (16, 10**9), (48, 2500)):
        on = SearchParams(nprobe=nprobe, tau=1.0, candidates=cand, prune=True)
        off = SearchParams(nprobe=nprobe, tau=1.0, candidates=cand, prune=False)
        for q in queries[:25]:
            assert search(small_index, q, on).signature() == search(
                small_index, q, off
            ).signature()


def test_pruning_keeps_best_scored_groups(small_index, small_data):
    idx = small_index
    q = small_data[2][3]
    tau = 0.4
    res = search(idx, q, SearchParams(nprobe=48, tau=tau, candidates=10**9))
    # oracle: score every (region, group) pair globally, keep the best ceil
    c = idx.coarse.centroids.astype(np.float64)
    q64 = q.astype(np.float64)
    qc2 = ((q64 - c) ** 2).sum(axis=1)
    a = idx.alphas.astype(np.float64)[:, None]
    scores = (1 - a) * qc2[:, None] + a * qc2[idx.neighbor_ids] + idx.norm_terms
    # regions are ranked exactly at nprobe == k, so the candidate pool is all
    # groups; ties cannot occur in this data
    kept = int(np.ceil(tau * scores.size))
    flat = np.sort(scores.ravel())
    cut = flat[kept - 1]
    want_ids = set()
    region, grp = stored_layout(idx)
    keep_mask = scores <= cut
    for slot in range(idx.n):
        if keep_mask[region[slot], grp[slot]]:
            want_ids.add(int(idx.point_ids[slot]))
    assert set(res.ids.tolist()) == want_ids
    assert res.stats.subregions_pruned == scores.size - kept


def test_candidate_budget_truncates_scan(small_index, small_data):
    q = small_data[2][0]
    for budget in (1, 137, 5000):
        res = search(small_index, q, SearchParams(nprobe=48, tau=1.0, candidates=budget))
        assert res.stats.codes_scanned == budget
        assert res.ids.shape == (budget,)
    res = search(small_index, q, EXHAUSTIVE)
    assert res.stats.codes_scanned == small_index.n


def test_results_pass_invariants(small_index, small_data):
    queries = small_data[2]
    grids = [
        SearchParams(nprobe=8, tau=0.5, candidates=300),
        SearchParams(nprobe=4, tau=1.0, candidates=50, rerank=False),
        EXHAUSTIVE,
    ]
    for params in grids:
        results = [search(small_index, q, params) for q in queries[:20]]
        assert verify_results(results)


def test_verify_results_catches_violations(small_index, small_data):
    res = search(small_index, small_data[2][0], SearchParams(nprobe=4, candidates=100))
    res.distances = res.distances[::-1].copy()
    with pytest.raises(InvariantError, match="not sorted"):
        verify_results([res])
    res2 = search(small_index, small_data[2][0], SearchParams(nprobe=4, candidates=100))
    res2.stats.codes_scanned += 1
    with pytest.raises(InvariantError, match="codes_scanned"):
        verify_results([res2])


def test_rerank_off_reports_group_scores(small_index, small_data):
    q = small_data[2][5]
    res = search(small_index, q, SearchParams(nprobe=8, tau=0.6, candidates=2000, rerank=False))
    d = res.distances
    assert np.all(np.diff(d) >= 0)  # groups are visited best first
    # same candidate set as the reranked run, different order
    rr = search(small_index, q, SearchParams(nprobe=8, tau=0.6, candidates=2000))
    assert set(res.ids.tolist()) == set(rr.ids.tolist())
    assert res.stats.codes_scanned == rr.stats.codes_scanned


def test_search_is_deterministic(small_index, small_data):
    q = small_data[2][7]
    params = SearchParams(nprobe=12, tau=0.7, candidates=900)
    assert search(small_index, q, params).signature() == search(
        small_index, q, params
    ).signature()


def test_flat_index_reduces_to_plain_ivf(small_index_flat, small_data):
    # with grouping off the expanded form is centroid + displacement
    q = small_data[2][2]
    res = search(small_index_flat, q, EXHAUSTIVE)
    oracle = oracle_distances(small_index_flat, q)
    slot_of = {int(pid): j for j, pid in enumerate(small_index_flat.point_ids)}
    want = oracle[[slot_of[int(i)] for i in res.ids]]
    np.testing.assert_allclose(res.distances.astype(np.float64), want, rtol=1e-4, atol=1e-4)


def test_exactly_representable_point_comes_back_first():
    # one point per centroid with zero displacement: codes reconstruct the
    # point exactly, the constant quantizer degenerates to a single value,
    # and the stored point must come back at distance exactly 0
    rng = np.random.default_rng(0)
    centers = rng.random((300, 6)).astype(np.float32)
    coarse = train_kmeans(centers, 300, iters=3, seed=1)
    graph = build_graph(coarse, max_links=6, ef_construction=24, seed=2)
    idx = build_index(centers, coarse, graph, centers, l=3, m=2, seed=3)
    assert idx.const_quant.step == 0.0
    for i in (0, 111, 299):
        res = search(idx, centers[i], SearchParams(nprobe=300, tau=1.0, candidates=300))
        assert int(res.ids[0]) == i
        assert float(res.distances[0]) == 0.0


def test_decomposed_distance_alpha_zero_is_centroid_form():
    rng = np.random.default_rng(1)
    book = _tiny_pq(rng)
    c = rng.standard_normal(8)
    q = rng.standard_normal(8)
    code = rng.integers(0, 256, size=4).astype(np.uint8)
    r = pq_decode(book, code[None, :])[0].astype(np.float64)
    const = ((c + r) ** 2).sum() - (c**2).sum()
    tables = build_lookup_table(book, q.astype(np.float32), "inner")
    got = decomposed_distance(q, c, np.zeros(8), 0.0, code, tables, const)
    want = ((q - c - r) ** 2).sum()
    assert got == pytest.approx(want, rel=1e-4, abs=1e-4)


def test_decomposed_distance_random_tuples():
    rng = np.random.default_rng(2)
    book = _tiny_pq(rng)
    for _ in range(100):
        c = rng.standard_normal(8)
        s = rng.standard_normal(8)
        a = float(rng.uniform(0, 1))
        q = rng.standard_normal(8)
        code = rng.integers(0, 256, size=4).astype(np.uint8)
        r = pq_decode(book, code[None, :])[0].astype(np.float64)
        t = c + a * (s - c)
        const = ((t + r) ** 2).sum() - (1 - a) * (c**2).sum() - a * (s**2).sum()
        tables = build_lookup_table(book, q.astype(np.float32), "inner")
        got = decomposed_distance(q, c, s, a, code, tables, const)
        want = ((q - t - r) ** 2).sum()
        assert got == pytest.approx(want, rel=1e-4, abs=1e-4)


def test_decomposed_distance_zero_query():
    rng = np.random.default_rng(3)
    book = _tiny_pq(rng)
    c = rng.standard_normal(8)
    s = rng.standard_normal(8)
    a = 0.35
    code = rng.integers(0, 256, size=4).astype(np.uint8)
    r = pq_decode(book, code[None, :])[0].astype(np.float64)
    t = c + a * (s - c)
    const = ((t + r) ** 2).sum() - (1 - a) * (c**2).sum() - a * (s**2).sum()
    tables = build_lookup_table(book, np.zeros(8, np.float32), "inner")
    got = decomposed_distance(np.zeros(8), c, s, a, code, tables, const)
    assert got == pytest.approx(((t + r) ** 2).sum(), rel=1e-4, abs=1e-4)


def test_decomposed_distance_rejects_squared_tables():
    rng = np.random.default_rng(4)
    book = _tiny_pq(rng)
    tables = build_lookup_table(book, np.zeros(8, np.float32), "squared")
    with pytest.raises(ValueError, match="inner"):
        decomposed_distance(
            np.zeros(8), np.zeros(8), np.zeros(8), 0.0,
            np.zeros(4, np.uint8), tables, 0.0,
        )


def _tiny_pq(rng):
    from givf.pq import train_pq

    data = rng.standard_normal((400, 8)).astype(np.float32)
    return train_pq(data, m=4, iters=4, seed=0)


def test_recall_trivial_cases():
    truth = np.array([[3, 1], [5, 2]], dtype=np.int32)
    perfect = [np.array([3, 9]), np.array([5, 0])]
    assert recall_at_r(perfect, truth, 1) == 1.0
    missing = [np.array([9, 8]), np.array([0, 1])]
    assert recall_at_r(missing, truth, 2) == 0.0
    half = [np.array([9, 3]), np.array([0, 1])]
    assert recall_at_r(half, truth, 2) == 0.5
    assert recall_at_r(half, truth, 1) == 0.0
    # flat truth vector works the same
    assert recall_at_r(perfect, truth[:, 0], 1) == 1.0
    with pytest.raises(ValueError, match="length mismatch"):
        recall_at_r(perfect, truth[:1], 1)


def test_recall_monotone_in_r_and_nprobe(small_index, small_data):
    _, _, queries, gt = small_data
    by_nprobe = []
    for nprobe in (1, 4, 16, 48):
        results = [
            search(small_index, q, SearchParams(nprobe=nprobe, candidates=4000))
            for q in queries
        ]
        r_curve = [recall_at_r(results, gt, r) for r in (1, 10, 100)]
        assert r_curve == sorted(r_curve)  # monotone in R
        by_nprobe.append(r_curve[2])
    for lo, hi in zip(by_nprobe, by_nprobe[1:]):
        assert hi >= lo - 0.011  # wider probes cannot meaningfully hurt
    assert by_nprobe[-1] >= by_nprobe[0]


def test_sweep_rows_and_csv(tmp_path, small_index, small_data):
    _, _, queries, gt = small_data
    grid = [
        SearchParams(nprobe=4, tau=1.0, candidates=600),
        SearchParams(nprobe=4, tau=0.5, candidates=600),
    ]
    rows = sweep(small_index, queries[:10], gt[:10], grid, r_values=(1, 10), latency_runs=0)
    assert len(rows) == 4
    assert [r.tau for r in rows] == [1.0, 1.0, 0.5, 0.5]
    assert all(r.latency_ms == 0.0 for r in rows)
    again = sweep(small_index, queries[:10], gt[:10], grid, r_values=(1, 10), latency_runs=0)
    assert rows == again  # byte-determinism with timing off
    text = write_sweep_csv(rows, tmp_path / "s.csv")
    assert text == (tmp_path / "s.csv").read_text()
    lines = text.strip().split("\n")
    assert lines[0] == "nprobe,tau,candidates,R,recall,latency_ms,codes_scanned"
    assert len(lines) == 5
    assert lines[1].startswith("4,1,600,1,")


def test_sweep_empty_grid(small_index, small_data):
    _, _, queries, gt = small_data
    assert sweep(small_index, queries[:2], gt[:2], []) == []


def test_csv_golden_format(tmp_path):
    rows = [SweepRow(nprobe=8, tau=0.5, candidates=1000, r=10,
                     recall=0.987654321, latency_ms=1.23456, codes_scanned=812.345)]
    text = write_sweep_csv(rows, tmp_path / "g.csv")
    assert text == (
        "nprobe,tau,candidates,R,recall,latency_ms,codes_scanned\n"
        "8,0.5,1000,10,0.987654,1.2346,812.3\n"
    )


def test_param_validation(small_index, small_data):
    q = small_data[2][0]
    for params, msg in [
        (SearchParams(nprobe=0), "nprobe"),
        (SearchParams(nprobe=49), "nprobe"),
        (SearchParams(tau=0.0), "tau"),
        (SearchParams(tau=1.5), "tau"),
        (SearchParams(candidates=0), "candidates"),
        (SearchParams(ef_search=0), "ef_search"),
    ]:
        with pytest.raises(ValueError, match=msg):
            search(small_index, q, params)
    with pytest.raises(ValueError, match="query dim"):
        search(small_index, q[:-1], SearchParams())
