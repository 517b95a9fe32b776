import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from obftunnel.errors import InstanceTooLarge, InvalidInput, InvalidParameter
from obftunnel.graph_core import (
    KIND_DECORATION,
    KIND_ENTRANCE,
    KIND_EXIT,
    KIND_TUNNEL,
    BuildParams,
    MultiGraph,
    TreeSpec,
    attach_trees,
    build_complete_tree,
    build_instance,
    build_path,
    check_symmetry,
    decorate,
    decorated_count,
    disjoint_union,
    forecast_counts,
    obfuscate,
    plain_layout,
    with_terminal_loops,
)


def test_path_degenerate_and_small():
    g = build_path(1)
    assert g.vertex_count == 1 and g.edge_count == 0
    g = build_path(3)
    assert sorted(zip(g.edge_u.tolist(), g.edge_v.tolist())) == [(0, 1), (1, 2)]
    assert g.degrees.tolist() == [1, 2, 1]


def test_path_spectrum():
    g = build_path(5)
    assert g.edge_count == 4
    w = np.sort(np.linalg.eigvalsh(g.to_dense()))
    want = np.sort(2 * np.cos(np.arange(1, 6) * np.pi / 6))
    assert np.allclose(w, want, atol=1e-12)


def test_path_rejects_zero():
    with pytest.raises(InvalidParameter):
        build_path(0)


@pytest.mark.parametrize("b,d,n,e", [(2, 2, 7, 6), (3, 1, 4, 3), (4, 3, 85, 84)])
def test_complete_tree_counts(b, d, n, e):
    g = build_complete_tree(TreeSpec(b, d))
    assert g.vertex_count == n == sum(TreeSpec(b, d).level_sizes())
    assert g.edge_count == e
    assert g.degree(0) == (b if d > 0 else 0)


@given(st.integers(1, 5), st.integers(0, 4))
def test_tree_shape(b, d):
    spec = TreeSpec(b, d)
    g = build_complete_tree(spec)
    expected = d + 1 if b == 1 else (b ** (d + 1) - 1) // (b - 1)
    assert g.vertex_count == expected
    _, depth = spec.local_structure()
    deg = g.degrees
    leaves = np.flatnonzero(depth == d)
    inner = np.flatnonzero((depth > 0) & (depth < d))
    if d > 0:
        assert np.all(deg[leaves] == 1)
        assert np.all(deg[inner] == b + 1)
        # BFS distance from the root equals the recorded depth
        dist = np.full(g.vertex_count, -1)
        dist[0] = 0
        frontier = [0]
        while frontier:
            nxt = []
            for v in frontier:
                for u in g.neighbors(v):
                    if dist[u] < 0:
                        dist[u] = dist[v] + 1
                        nxt.append(int(u))
            frontier = nxt
        assert np.array_equal(dist, depth)


def test_obfuscate_cluster_sizes(small_instance):
    p, g, layout = small_instance
    assert layout.cluster_sizes().tolist() == [1, 4, 16, 16, 16, 4, 1]
    assert g.vertex_count == 58
    assert check_symmetry(g)


def test_entrance_bag(small_instance):
    p, g, layout = small_instance
    ent = layout.entrance
    bag = g.neighbors(ent).tolist()
    assert bag.count(ent) == 2 * p.m
    assert len(bag) - bag.count(ent) == p.m**2
    assert layout.kind[ent] == KIND_ENTRANCE and layout.kind[layout.exit] == KIND_EXIT


@pytest.mark.parametrize("m,k,ell", [(2, 2, 7), (3, 1, 7), (2, 1, 9), (4, 2, 9)])
def test_tunnel_is_4m_regular(m, k, ell):
    p = BuildParams(m=m, k=k, ell=ell, rounds=0, expander_threshold=math.inf, seed=3)
    g, layout = obfuscate(p)
    tunnel = layout.kind == KIND_TUNNEL
    assert tunnel.sum() == (ell - 2 * k - 2) * m ** (2 * k)
    assert np.all(g.degrees[tunnel] == 4 * m)
    assert g.loop_counts()[tunnel].sum() == 0


def test_exactly_two_loop_vertices(small_instance):
    p, g, layout = small_instance
    loops = g.loop_counts()
    assert np.flatnonzero(loops).tolist() == [0, g.vertex_count - 1]
    assert loops[0] == loops[-1] == 2 * p.m


def test_collapse_structure_edges_only_between_neighbors(small_instance):
    _, g, layout = small_instance
    cu, cv = layout.cluster[g.edge_u], layout.cluster[g.edge_v]
    assert np.all(np.abs(cu - cv) <= 1)


def test_same_seed_same_digest():
    p = BuildParams(m=2, k=1, ell=5, rounds=1, delta=0.0, depth_override=(1,), expander_threshold=math.inf, seed=9)
    g1, _ = build_instance(p)
    g2, _ = build_instance(p)
    assert g1.digest() == g2.digest()
    g3, _ = build_instance(BuildParams.from_dict({**p.to_dict(), "seed": 10}))
    assert g3.digest() != g1.digest()


def test_one_round_on_single_vertex():
    g = MultiGraph(1, [], [])
    g2, lay = attach_trees(g, plain_layout(1), 1, TreeSpec(2, 1), level=1)
    assert g2.vertex_count == 4 and g2.edge_count == 3
    assert lay.kind[1:].tolist() == [KIND_DECORATION] * 3
    assert lay.leaf.tolist() == [False, False, True, True]


def _brute_force_count(levels):
    # explicit vertex lists: each round hangs its trees on every vertex present
    vertices = [("root",)]
    for h, spec in levels:
        fresh = []
        for v in vertices:
            for c in range(h):
                fresh.extend((v, c, i) for i in range(spec.vertex_count))
        vertices = vertices + fresh
    return len(vertices)


def test_two_rounds_against_brute_force():
    levels = [(1, TreeSpec(2, 2)), (1, TreeSpec(2, 1))]
    g, lay = MultiGraph(1, [], []), plain_layout(1)
    for j, (h, spec) in zip((2, 1), levels):
        g, lay = attach_trees(g, lay, h, spec, level=j)
    assert g.vertex_count == _brute_force_count(levels) == decorated_count(1, 1, [s for _, s in levels]) == 32
    assert check_symmetry(g)


def test_forecast_examples():
    p = BuildParams(m=2, k=2, ell=7, rounds=0)
    assert forecast_counts(p).vertex_count == 58
    assert decorated_count(58, 1, [TreeSpec(2, 1)]) == 232
    g, lay = build_path(7), plain_layout(7)
    g = disjoint_union(*(build_path(1) for _ in range(58)))
    g2, _ = attach_trees(g, plain_layout(58), 1, TreeSpec(2, 1), level=1)
    assert g2.vertex_count == 232


@given(
    m=st.integers(2, 3),
    k=st.integers(1, 2),
    extra=st.integers(0, 1),
    rounds=st.integers(0, 2),
    h=st.integers(1, 2),
    depth=st.integers(0, 1),
)
def test_forecast_matches_build(m, k, extra, rounds, h, depth):
    ell = 2 * k + 1 + 2 * extra
    p = BuildParams(
        m=m, k=k, ell=ell, rounds=rounds, trees_per_round=h, depth_override=(depth,) * rounds,
        expander_threshold=math.inf, seed=m * 100 + k,
    )
    g, layout = build_instance(p)
    fc = forecast_counts(p)
    assert fc.vertex_count == g.vertex_count
    assert fc.max_degree == int(g.degrees.max())
    assert int(np.count_nonzero(layout.kind == KIND_DECORATION)) == fc.per_kind["decoration"]
    assert check_symmetry(g)
    # original vertices stay an induced subgraph with unchanged bags
    base, _ = obfuscate(p.with_rounds(0))
    u, v = g.subgraph_edges(layout.original)
    assert sorted(zip(u.tolist(), v.tolist())) == sorted(zip(base.edge_u.tolist(), base.edge_v.tolist()))


def test_default_schedule_gives_5m_on_tunnel():
    # m=4, delta=1/2: r = 2 rounds of h = 2 trees, 4m + r h = 5m
    p = BuildParams(m=4, k=1, ell=5, delta=0.5, depth_override=(1, 1), expander_threshold=math.inf)
    assert (p.r, p.h) == (2, 2)
    g, layout = build_instance(p)
    tunnel = layout.kind == KIND_TUNNEL
    assert np.all(g.degrees[tunnel] == 5 * p.m)
    # interior vertices of level-j trees: b_j + 1 + (j-1) h
    for j in (1, 2):
        sel = (layout.level == j) & (layout.tree_depth == 0)
        assert np.all(g.degrees[sel] == p.arity(j) + 1 + (j - 1) * p.h)


def test_param_validation():
    with pytest.raises(InvalidParameter):
        BuildParams(m=2, k=1, ell=4)
    with pytest.raises(InvalidParameter):
        BuildParams(m=2, k=3, ell=5)
    with pytest.raises(InvalidParameter):
        BuildParams(m=2, k=1, ell=5, rounds=3, trees_per_round=5)
    with pytest.raises(InvalidParameter):
        BuildParams(m=2, k=1, ell=5, rounds=2, depth_override=(1,))


def test_memory_cap():
    p = BuildParams(m=16, k=1, ell=5, rounds=1, depth_override=(4,), expander_threshold=math.inf, memory_cap=10**6)
    g, lay = obfuscate(p)
    with pytest.raises(InstanceTooLarge) as err:
        decorate(g, lay, p)
    assert err.value.forecast == forecast_counts(p).vertex_count


@given(st.integers(1, 8), st.lists(st.tuples(st.integers(0, 7), st.integers(0, 7)), max_size=30))
def test_adjacency_round_trip(n, edges):
    edges = [(a % n, b % n) for a, b in edges]
    g = MultiGraph(n, [a for a, _ in edges], [b for _, b in edges])
    assert check_symmetry(g)
    h = MultiGraph.from_adjacency(g.adjacency_lists())
    assert h.digest() == g.digest()
    assert h.adjacency_lists() == g.adjacency_lists()
    assert np.array_equal(h.to_dense(), g.to_dense())
    # a loop adds one slot and 1 on the diagonal
    loops = sum(a == b for a, b in edges)
    assert int(np.trace(g.to_dense())) == loops


def test_from_adjacency_rejects_asymmetry():
    with pytest.raises(InvalidInput):
        MultiGraph.from_adjacency([[1], []])


def test_with_terminal_loops():
    g = with_terminal_loops(build_path(4), 3)
    assert g.loop_counts().tolist() == [3, 0, 0, 3]
    assert g.degrees.tolist() == [4, 2, 2, 4]
