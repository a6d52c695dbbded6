import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_graph
from dynwalk.graph_store import (
    Event, GraphFormatError, GraphSnapshot, NodeIndex, SnapshotSequence, apply_delta, bucket_stream,
    compute_delta, ingest_snapshot, read_events, read_snapshot, write_snapshot,
)


def brute_delta(prev, cur, include_change=True):
    """Label-level set algebra, written without the canonical edge form."""
    def key(g, e):
        a, b = g.label(e[0]), g.label(e[1])
        return (a, b) if g.directed else frozenset((a, b))

    pe = {key(prev, e): w for e, w in prev.edges.items()}
    ce = {key(cur, e): w for e, w in cur.edges.items()}
    pv = {prev.label(v) for v in prev.nodes}
    cv = {cur.label(v) for v in cur.nodes}
    e_add = set(ce) - set(pe)
    e_del = set(pe) - set(ce)
    e_chg = {e for e in set(ce) & set(pe) if ce[e] != pe[e]}
    ev = set(cv - pv)
    for e in e_add | e_del | (e_chg if include_change else set()):
        ev.update(e)
    return cv - pv, pv - cv, e_add, e_del, e_chg, ev & cv


def labelled(g, delta):
    def key(e):
        a, b = g.label(e[0]), g.label(e[1])
        return (a, b) if g.directed else frozenset((a, b))
    lab = lambda s: {g.label(v) for v in s}
    return (lab(delta.v_add), lab(delta.v_del), {key(e) for e in delta.e_add}, {key(e) for e in delta.e_del},
            {key(e) for e, _, _ in delta.e_change}, lab(delta.evolving))


def perturb(rng, g, n, t=2):
    """Copy of ``g`` with some edges dropped, added and re-weighted, plus node churn."""
    labels = [f"n{i}" for i in range(n)]
    edges = {}
    for (u, v), w in g.edges.items():
        r = rng.random()
        if r < 0.15:
            continue
        if r < 0.3:
            w = w + 1.0
        edges[(g.label(u), g.label(v))] = w
    for _ in range(int(rng.integers(0, 8))):
        a, b = rng.choice(n, 2, replace=False)
        edges[(labels[a], labels[b])] = 1.0
    iso = [labels[i] for i in rng.choice(n, size=2, replace=False)]
    return GraphSnapshot.from_edges([(a, b, w) for (a, b), w in edges.items()], timestamp=t,
                                    directed=g.directed, interner=g.interner, nodes=iso)


class TestIngest:
    def test_default_weight(self):
        g = ingest_snapshot("a\tb\n")
        assert {g.label(v) for v in g.nodes} == {"a", "b"}
        assert list(g.edges.values()) == [1.0]

    def test_last_duplicate_wins(self):
        g = ingest_snapshot("a\tb\t2.5\na\tb\t4.0\n")
        assert g.num_edges == 1
        assert g.weight(g.interner.index("a"), g.interner.index("b")) == 4.0

    def test_reversed_duplicate_is_same_undirected_edge(self):
        g = ingest_snapshot("a\tb\t2\nb\ta\t3\n")
        assert g.num_edges == 1 and list(g.edges.values()) == [3.0]

    @pytest.mark.parametrize("text", ["a\tb\t-1\n", "a\tb\t0\n", "a\tb\tnan\n", "a\tb\tinf\n"])
    def test_bad_weight(self, text):
        with pytest.raises(GraphFormatError, match="weight"):
            ingest_snapshot(text)

    def test_malformed_line_reports_line_number(self):
        with pytest.raises(GraphFormatError, match=":2"):
            ingest_snapshot("a\tb\nonlyone\n")

    def test_empty_input(self):
        with pytest.raises(GraphFormatError):
            ingest_snapshot("# nothing here\n\n")

    def test_comments_skipped(self):
        g = ingest_snapshot("# header\na\tb\t2\n")
        assert g.num_edges == 1

    def test_canonical_storage(self):
        g = ingest_snapshot("b\ta\na\tc\n")
        assert all(u <= v for u, v in g.edges)

    def test_directed_keeps_both_directions(self):
        g = ingest_snapshot("a\tb\nb\ta\t2\n", directed=True)
        assert g.num_edges == 2

    def test_roundtrip(self, tmp_path, rng):
        g = random_graph(rng, 20, 0.2)
        write_snapshot(g, tmp_path / "s.tsv")
        h = read_snapshot(tmp_path / "s.tsv", interner=g.interner)
        assert h.edges == g.edges

    def test_stable_index_across_snapshots(self):
        idx = NodeIndex()
        g1 = ingest_snapshot("a\tb\n", interner=idx)
        g2 = ingest_snapshot("c\tb\n", interner=idx, timestamp=2)
        g3 = ingest_snapshot("a\tc\n", interner=idx, timestamp=3)
        assert idx.index("a") == 0 and idx.index("b") == 1 and idx.index("c") == 2
        assert g1.interner is g2.interner is g3.interner
        assert idx.labels == ["a", "b", "c"]


class TestSnapshotSequence:
    def test_lazy_directory(self, tmp_path, rng):
        idx = NodeIndex()
        for t in (1, 2, 3):
            write_snapshot(random_graph(rng, 10, 0.3, interner=idx, timestamp=t), tmp_path / f"snapshot_{t}.tsv")
        seq = SnapshotSequence(tmp_path)
        assert len(seq) == 3
        assert [g.timestamp for g in seq] == [1, 2, 3]
        assert len(seq._loaded) <= 2

    def test_gap_rejected(self, tmp_path):
        (tmp_path / "snapshot_1.tsv").write_text("a\tb\n")
        (tmp_path / "snapshot_3.tsv").write_text("a\tb\n")
        with pytest.raises(GraphFormatError, match="gaps"):
            SnapshotSequence(tmp_path)


class TestBucketStream:
    def events(self, rng, n=100):
        times = np.sort(rng.uniform(0, 1000, n))
        return [Event(f"u{rng.integers(30)}", f"v{rng.integers(30)}", 1.0, float(t)) for t in times]

    def test_partition(self, rng):
        evs = self.events(rng)
        snaps = bucket_stream(evs, buckets=4)
        assert len(snaps) == 4
        t0, t1 = evs[0].time, evs[-1].time
        width = (t1 - t0) / 4
        for k, g in enumerate(snaps):
            expect = {frozenset((e.u, e.v)) for e in evs if min(int((e.time - t0) / width), 3) == k}
            got = {frozenset((g.label(u), g.label(v))) for u, v in g.edges}
            assert got == expect

    def test_cumulative_is_prefix_union(self, rng):
        evs = self.events(rng)
        per = bucket_stream(evs, buckets=4)
        cum = bucket_stream(evs, buckets=4, cumulative=True)
        seen = set()
        for a, b in zip(per, cum):
            seen |= {frozenset((a.label(u), a.label(v))) for u, v in a.edges}
            assert {frozenset((b.label(u), b.label(v))) for u, v in b.edges} == seen

    def test_empty_buckets_allowed(self):
        evs = [Event("a", "b", 1.0, 0.0), Event("b", "c", 1.0, 100.0)]
        snaps = bucket_stream(evs, buckets=5)
        assert len(snaps) == 5
        assert [g.num_edges for g in snaps] == [1, 0, 0, 0, 1]

    def test_duration(self):
        evs = [Event("a", "b", 1.0, 0.0), Event("b", "c", 1.0, 25.0)]
        assert len(bucket_stream(evs, duration=10.0)) == 3

    def test_errors(self):
        with pytest.raises(ValueError):
            bucket_stream([Event("a", "b", 1.0, 0.0)], buckets=0)
        with pytest.raises(GraphFormatError):
            bucket_stream([], buckets=3)
        with pytest.raises(GraphFormatError, match="timestamp"):
            read_events("a b 1 yesterday\n")

    def test_read_events(self):
        evs = read_events("a\tb\t2\t10\nb c 1 5\n")
        assert evs[0] == Event("a", "b", 2.0, 10.0)


class TestDelta:
    def g(self, edges, idx, t=1):
        return GraphSnapshot.from_edges(edges, timestamp=t, interner=idx)

    def test_identity(self, rng):
        g = random_graph(rng, 15, 0.3)
        d = compute_delta(g, g)
        assert d.is_empty() and not d.evolving

    def test_edge_added(self):
        idx = NodeIndex()
        prev, cur = self.g([("a", "b")], idx), self.g([("a", "b"), ("b", "c")], idx, 2)
        d = compute_delta(prev, cur)
        lab = lambda s: {idx.label(v) for v in s}
        assert lab(d.v_add) == {"c"} and lab(d.evolving) == {"b", "c"}
        assert {tuple(sorted(map(idx.label, e))) for e in d.e_add} == {("b", "c")}

    def test_edge_deleted_excludes_deleted_node(self):
        idx = NodeIndex()
        prev, cur = self.g([("a", "b"), ("b", "c")], idx), self.g([("a", "b")], idx, 2)
        d = compute_delta(prev, cur)
        lab = lambda s: {idx.label(v) for v in s}
        assert lab(d.v_del) == {"c"} and lab(d.evolving) == {"b"}

    def test_weight_change_flag(self):
        idx = NodeIndex()
        prev, cur = self.g([("a", "b", 1.0), ("c", "d")], idx), self.g([("a", "b", 2.0), ("c", "d")], idx, 2)
        lab = lambda s: {idx.label(v) for v in s}
        assert lab(compute_delta(prev, cur).evolving) == {"a", "b"}
        literal = compute_delta(prev, cur, include_change=False)
        assert not literal.evolving and len(literal.e_change) == 1

    def test_isolated_added_node_is_evolving(self):
        idx = NodeIndex()
        prev = self.g([("a", "b")], idx)
        cur = GraphSnapshot.from_edges([("a", "b")], timestamp=2, interner=idx, nodes=["z"])
        assert {idx.label(v) for v in compute_delta(prev, cur).evolving} == {"z"}

    def test_directedness_mismatch(self):
        idx = NodeIndex()
        a = GraphSnapshot.from_edges([("a", "b")], interner=idx)
        b = GraphSnapshot.from_edges([("a", "b")], interner=idx, directed=True, timestamp=2)
        with pytest.raises(ValueError):
            compute_delta(a, b)

    @pytest.mark.parametrize("directed", [False, True])
    def test_against_brute_force(self, rng, directed):
        for _ in range(50):
            n = int(rng.integers(2, 51))
            prev = random_graph(rng, n, float(rng.uniform(0.02, 0.3)), directed=directed, isolated=2)
            cur = perturb(rng, prev, n)
            for flag in (True, False):
                d = compute_delta(prev, cur, include_change=flag)
                assert labelled(cur, d) == brute_delta(prev, cur, flag)

    def test_invariants(self, rng):
        for _ in range(30):
            prev = random_graph(rng, 30, 0.15)
            cur = perturb(rng, prev, 30)
            d = compute_delta(prev, cur)
            assert not d.v_add & d.v_del and not d.e_add & d.e_del
            assert d.v_add <= cur.nodes and not d.v_add & prev.nodes
            assert d.v_del <= prev.nodes and not d.v_del & cur.nodes
            assert d.evolving <= cur.nodes


edge_lists = st.lists(
    st.tuples(st.integers(0, 12), st.integers(0, 12), st.sampled_from([0.5, 1.0, 2.0])).filter(lambda e: e[0] != e[1]),
    max_size=40,
)


@settings(max_examples=80, deadline=None)
@given(edge_lists, edge_lists, st.booleans())
def test_apply_delta_reconstructs(a, b, directed):
    idx = NodeIndex()
    prev = GraphSnapshot.from_edges([(str(u), str(v), w) for u, v, w in a] or [("0", "1")], interner=idx,
                                    directed=directed)
    cur = GraphSnapshot.from_edges([(str(u), str(v), w) for u, v, w in b] or [("2", "3")], interner=idx,
                                   directed=directed, timestamp=2)
    rebuilt = apply_delta(prev, compute_delta(prev, cur))
    assert rebuilt.edges == cur.edges and rebuilt.nodes == cur.nodes


@settings(max_examples=80, deadline=None)
@given(edge_lists, edge_lists, st.tuples(st.integers(13, 20), st.integers(0, 20)).filter(lambda e: e[0] != e[1]))
def test_extra_changed_edge_never_shrinks_evolving(a, b, extra):
    idx = NodeIndex()
    prev = GraphSnapshot.from_edges([(str(u), str(v), w) for u, v, w in a] or [("0", "1")], interner=idx)
    edges = [(str(u), str(v), w) for u, v, w in b] or [("2", "3")]
    cur = GraphSnapshot.from_edges(edges, interner=idx, timestamp=2)
    more = GraphSnapshot.from_edges(edges + [(str(extra[0]), str(extra[1]))], interner=idx, timestamp=2)
    assert compute_delta(prev, cur).evolving <= compute_delta(prev, more).evolving
