"""Seeded construction of the path, the obfuscated graph and its decorations.

Vertices are integers ``0..n-1``.  The ENTRANCE is always vertex 0 and the EXIT
is the last vertex of the obfuscated graph; decoration only appends vertices,
so both keep their indices through every round.
"""

from __future__ import annotations

import hashlib
import math
from collections import deque
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np
import scipy.sparse as sp

from .errors import InstanceTooLarge, InvalidInput, InvalidParameter
from .rng import STREAM_EXPANDER, STREAM_MATCHING, substream

DEFAULT_MEMORY_CAP = 20_000_000

KIND_ENTRANCE = 0
KIND_EXIT = 1
KIND_FUNNEL = 2
KIND_TUNNEL = 3
KIND_DECORATION = 4
KIND_NAMES = ("entrance", "exit", "funnel", "tunnel", "decoration")


class MultiGraph:
    """Undirected multigraph with self-loops, stored as CSR adjacency bags.

    Each edge instance ``e`` has endpoints ``edge_u[e], edge_v[e]``.  A non-loop
    edge occupies one slot in each endpoint's bag, a self-loop occupies one slot
    in its vertex's bag, so ``degree(v) == len(bag(v))`` and the adjacency
    matrix has diagonal entry equal to the number of loops.
    """

    __slots__ = ("vertex_count", "edge_u", "edge_v", "indptr", "indices", "slot_edge", "_hash")

    def __init__(self, vertex_count: int, edge_u, edge_v):
        n = int(vertex_count)
        u = np.ascontiguousarray(edge_u, dtype=np.int64).ravel()
        v = np.ascontiguousarray(edge_v, dtype=np.int64).ravel()
        if u.shape != v.shape:
            raise InvalidInput("edge endpoint arrays differ in length")
        if u.size and (min(u.min(), v.min()) < 0 or max(u.max(), v.max()) >= n):
            raise InvalidInput("edge endpoint out of range")
        eid = np.arange(u.size, dtype=np.int64)
        nonloop = u != v
        src = np.concatenate([u, v[nonloop]])
        dst = np.concatenate([v, u[nonloop]])
        sid = np.concatenate([eid, eid[nonloop]])
        order = np.lexsort((sid, src))
        self.vertex_count = n
        self.edge_u = u
        self.edge_v = v
        self.indices = dst[order]
        self.slot_edge = sid[order]
        counts = np.bincount(src, minlength=n)
        self.indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(counts, out=self.indptr[1:])
        for arr in (self.edge_u, self.edge_v, self.indices, self.slot_edge, self.indptr):
            arr.flags.writeable = False
        self._hash = None

    @classmethod
    def from_adjacency(cls, bags: list[list[int]]) -> "MultiGraph":
        """Rebuild a graph from per-vertex neighbor bags, preserving bag order.

        The i-th occurrence of ``v`` in ``bags[u]`` is paired with the i-th
        occurrence of ``u`` in ``bags[v]``; each loop entry is its own edge.
        """
        n = len(bags)
        open_edges: dict[tuple[int, int], deque[int]] = {}
        edge_u: list[int] = []
        edge_v: list[int] = []
        slot_edge: list[int] = []
        for u, bag in enumerate(bags):
            for v in bag:
                if not 0 <= v < n:
                    raise InvalidInput(f"vertex {u} lists out-of-range neighbor {v}")
                waiting = open_edges.get((v, u))
                if v != u and waiting:
                    slot_edge.append(waiting.popleft())
                    continue
                slot_edge.append(len(edge_u))
                if v != u:
                    open_edges.setdefault((u, v), deque()).append(len(edge_u))
                edge_u.append(u)
                edge_v.append(v)
        for (a, b), waiting in open_edges.items():
            if waiting:
                raise InvalidInput(f"asymmetric adjacency between {a} and {b}")
        g = cls(n, edge_u, edge_v)
        g.indices = np.fromiter((x for bag in bags for x in bag), dtype=np.int64, count=int(g.indptr[-1]))
        g.slot_edge = np.asarray(slot_edge, dtype=np.int64)
        g.indices.flags.writeable = False
        g.slot_edge.flags.writeable = False
        return g

    @property
    def edge_count(self) -> int:
        return int(self.edge_u.size)

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def degree(self, v: int) -> int:
        return int(self.indptr[v + 1] - self.indptr[v])

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v] : self.indptr[v + 1]]

    def adjacency_lists(self) -> list[list[int]]:
        ind = self.indices.tolist()
        ptr = self.indptr.tolist()
        return [ind[ptr[i] : ptr[i + 1]] for i in range(self.vertex_count)]

    def loop_counts(self) -> np.ndarray:
        loops = self.edge_u[self.edge_u == self.edge_v]
        return np.bincount(loops, minlength=self.vertex_count)

    def to_sparse(self) -> sp.csr_matrix:
        """Adjacency matrix; parallel edges add up, a loop adds 1 to the diagonal."""
        n = self.vertex_count
        rows = np.repeat(np.arange(n, dtype=np.int64), self.degrees)
        mat = sp.csr_matrix((np.ones(rows.size), (rows, self.indices)), shape=(n, n))
        mat.sum_duplicates()
        return mat

    def to_dense(self) -> np.ndarray:
        return self.to_sparse().toarray()

    def subgraph_edges(self, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        keep = mask[self.edge_u] & mask[self.edge_v]
        return self.edge_u[keep], self.edge_v[keep]

    def digest(self) -> str:
        if self._hash is None:
            h = hashlib.sha256()
            h.update(np.int64(self.vertex_count).tobytes())
            h.update(self.indptr.tobytes())
            h.update(self.indices.tobytes())
            self._hash = h.hexdigest()
        return self._hash

    def __repr__(self) -> str:
        return f"MultiGraph(n={self.vertex_count}, edges={self.edge_count})"


def check_symmetry(g: MultiGraph) -> bool:
    """True iff u appears in v's bag exactly as often as v in u's (loops once)."""
    n = g.vertex_count
    rows = np.repeat(np.arange(n, dtype=np.int64), g.degrees)
    cols = g.indices
    mat = sp.coo_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n)).tocsr()
    diff = mat - mat.T
    return diff.nnz == 0 or not np.any(diff.data)


def disjoint_union(*graphs: MultiGraph) -> MultiGraph:
    us, vs, off = [], [], 0
    for g in graphs:
        us.append(g.edge_u + off)
        vs.append(g.edge_v + off)
        off += g.vertex_count
    return MultiGraph(off, np.concatenate(us or [[]]), np.concatenate(vs or [[]]))


# ---------------------------------------------------------------------------
# elementary graphs


@dataclass(frozen=True)
class TreeSpec:
    arity: int
    depth: int

    def __post_init__(self):
        if self.arity < 1:
            raise InvalidParameter(f"tree arity must be >= 1, got {self.arity}")
        if self.depth < 0:
            raise InvalidParameter(f"tree depth must be >= 0, got {self.depth}")

    def level_sizes(self) -> list[int]:
        return [self.arity**j for j in range(self.depth + 1)]

    @property
    def vertex_count(self) -> int:
        b, d = self.arity, self.depth
        if b == 1:
            return d + 1
        return (b ** (d + 1) - 1) // (b - 1)

    def local_structure(self) -> tuple[np.ndarray, np.ndarray]:
        """(parent, depth) arrays for the BFS numbering; parent[0] = -1."""
        size = self.vertex_count
        idx = np.arange(size, dtype=np.int64)
        parent = np.where(idx > 0, (idx - 1) // self.arity, -1)
        depth = np.zeros(size, dtype=np.int64)
        start = 0
        for j, width in enumerate(self.level_sizes()):
            depth[start : start + width] = j
            start += width
        return parent, depth


def build_path(ell: int) -> MultiGraph:
    if ell < 1:
        raise InvalidParameter(f"path length must be >= 1, got {ell}")
    j = np.arange(ell - 1, dtype=np.int64)
    return MultiGraph(ell, j, j + 1)


def build_complete_tree(spec: TreeSpec) -> MultiGraph:
    """Complete ``arity``-ary tree of the given depth, rooted at vertex 0."""
    parent, _ = spec.local_structure()
    child = np.arange(1, spec.vertex_count, dtype=np.int64)
    return MultiGraph(spec.vertex_count, parent[1:], child)


def with_terminal_loops(g: MultiGraph, loops: int, terminals=(0, -1)) -> MultiGraph:
    """Copy of ``g`` with ``loops`` self-loops added at each terminal vertex."""
    ts = [t % g.vertex_count for t in terminals]
    extra = np.repeat(np.asarray(ts, dtype=np.int64), loops)
    return MultiGraph(g.vertex_count, np.concatenate([g.edge_u, extra]), np.concatenate([g.edge_v, extra]))


# ---------------------------------------------------------------------------
# parameters


def _nearest_power(m: int, exponent: float) -> int:
    return max(1, int(round(m**exponent)))


@dataclass(frozen=True)
class BuildParams:
    """Instance parameters.

    ``rounds`` and ``trees_per_round`` default to ``m**delta`` and
    ``m**(1-delta)`` rounded to the nearest integer >= 1.  ``depth_override``
    lists the tree depth for levels ``1..rounds`` (index 0 is level 1).
    """

    m: int
    k: int
    ell: int
    delta: float = 1 / 16
    rounds: int | None = None
    trees_per_round: int | None = None
    depth_override: tuple[int, ...] | None = None
    seed: int = 0
    expander_threshold: float | None = None
    expander_attempts: int = 1000
    terminal_loops: int | None = None
    memory_cap: int = DEFAULT_MEMORY_CAP

    def __post_init__(self):
        if self.m < 2:
            raise InvalidParameter("m must be >= 2 (clusters need at least 3 vertices for expanders)")
        if self.k < 1:
            raise InvalidParameter("funnel depth k must be >= 1")
        if self.ell % 2 == 0 or self.ell < 2 * self.k + 1:
            raise InvalidParameter(f"ell must be odd and >= 2k+1, got ell={self.ell}, k={self.k}")
        if not 0 <= float(Fraction(self.delta)) <= 1:
            raise InvalidParameter("delta must lie in [0, 1]")
        if self.depth_override is not None:
            object.__setattr__(self, "depth_override", tuple(int(x) for x in self.depth_override))
            if len(self.depth_override) < self.r:
                raise InvalidParameter(f"depth_override needs {self.r} entries, got {len(self.depth_override)}")
        for j in range(1, self.r + 1):
            if self.arity(j) < 1:
                raise InvalidParameter(f"level-{j} arity 5m-(j-1)h-1 = {self.arity(j)} is not positive")

    @property
    def r(self) -> int:
        return self.rounds if self.rounds is not None else _nearest_power(self.m, self.delta)

    @property
    def h(self) -> int:
        if self.trees_per_round is not None:
            return self.trees_per_round
        return _nearest_power(self.m, 1 - self.delta)

    @property
    def loops(self) -> int:
        return 2 * self.m if self.terminal_loops is None else self.terminal_loops

    @property
    def threshold(self) -> float:
        return float(self.m) if self.expander_threshold is None else float(self.expander_threshold)

    def arity(self, j: int) -> int:
        return 5 * self.m - (j - 1) * self.h - 1

    def depth(self, j: int) -> int:
        if self.depth_override is not None:
            return self.depth_override[j - 1]
        return math.ceil(j * self.m ** (3 * self.delta) - 1e-12)

    def tree(self, j: int) -> TreeSpec:
        return TreeSpec(self.arity(j), self.depth(j))

    def cluster_sizes(self) -> list[int]:
        return [self.m ** (2 * min(_distance(j, self.ell), self.k)) for j in range(1, self.ell + 1)]

    def with_rounds(self, rounds: int) -> "BuildParams":
        return replace(self, rounds=rounds)

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "k": self.k,
            "ell": self.ell,
            "delta": self.delta,
            "rounds": self.rounds,
            "trees_per_round": self.trees_per_round,
            "depth_override": list(self.depth_override) if self.depth_override is not None else None,
            "seed": self.seed,
            "expander_threshold": "inf" if self.expander_threshold is not None and math.isinf(self.expander_threshold) else self.expander_threshold,
            "expander_attempts": self.expander_attempts,
            "terminal_loops": self.terminal_loops,
            "memory_cap": self.memory_cap,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BuildParams":
        d = dict(d)
        if d.get("depth_override") is not None:
            d["depth_override"] = tuple(d["depth_override"])
        if d.get("expander_threshold") == "inf":
            d["expander_threshold"] = math.inf
        return cls(**d)


def _distance(j: int, ell: int) -> int:
    """Distance of 1-based cluster j from the nearer terminal."""
    return min(j - 1, ell - j)


# ---------------------------------------------------------------------------
# layout


@dataclass(frozen=True, eq=False)
class InstanceLayout:
    """Ground-truth annotations; adversaries never see this.

    ``cluster`` is 1-based (0 for decoration vertices).  For decoration
    vertices ``anchor`` is the vertex their tree hangs from, ``tree_depth`` the
    depth inside that tree and ``level`` the decoration level of the tree.
    """

    m: int
    k: int
    ell: int
    cluster: np.ndarray
    kind: np.ndarray
    level: np.ndarray
    tree_depth: np.ndarray
    anchor: np.ndarray
    leaf: np.ndarray
    top_level: int = 0
    rounds_applied: tuple[int, ...] = field(default_factory=tuple)

    @property
    def vertex_count(self) -> int:
        return int(self.cluster.size)

    @property
    def entrance(self) -> int:
        return 0

    @property
    def exit(self) -> int:
        return int(np.flatnonzero(self.kind == KIND_EXIT)[0])

    @property
    def original(self) -> np.ndarray:
        return self.kind != KIND_DECORATION

    @property
    def is_root(self) -> np.ndarray:
        return self.tree_depth == 0

    @property
    def top_level_leaf(self) -> np.ndarray:
        if self.top_level == 0:
            return np.zeros(self.vertex_count, dtype=bool)
        return self.leaf & (self.level == self.top_level)

    def cluster_members(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.cluster == j)

    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(self.cluster, minlength=self.ell + 1)[1:]

    def traversal_region(self) -> np.ndarray:
        """Mask of vertices in clusters k+1..ell-k (the matched region)."""
        c = self.cluster
        return (c >= self.k + 1) & (c <= self.ell - self.k)


def _orig_layout(params: BuildParams) -> InstanceLayout:
    sizes = params.cluster_sizes()
    cluster = np.repeat(np.arange(1, params.ell + 1, dtype=np.int64), sizes)
    kind = np.full(cluster.size, KIND_TUNNEL, dtype=np.int8)
    for j in range(1, params.ell + 1):
        if 1 <= _distance(j, params.ell) <= params.k:
            kind[cluster == j] = KIND_FUNNEL
    kind[0] = KIND_ENTRANCE
    kind[-1] = KIND_EXIT
    n = cluster.size
    return InstanceLayout(
        m=params.m,
        k=params.k,
        ell=params.ell,
        cluster=cluster,
        kind=kind,
        level=np.zeros(n, dtype=np.int64),
        tree_depth=np.full(n, -1, dtype=np.int64),
        anchor=np.full(n, -1, dtype=np.int64),
        leaf=np.zeros(n, dtype=bool),
    )


def plain_layout(n: int, m: int = 1) -> InstanceLayout:
    """Layout for an arbitrary graph: every vertex original, one cluster."""
    return InstanceLayout(
        m=m,
        k=0,
        ell=1,
        cluster=np.ones(n, dtype=np.int64),
        kind=np.full(n, KIND_TUNNEL, dtype=np.int8),
        level=np.zeros(n, dtype=np.int64),
        tree_depth=np.full(n, -1, dtype=np.int64),
        anchor=np.full(n, -1, dtype=np.int64),
        leaf=np.zeros(n, dtype=bool),
    )


# ---------------------------------------------------------------------------
# obfuscation


def obfuscate(params: BuildParams, rng: np.random.Generator | None = None) -> tuple[MultiGraph, InstanceLayout]:
    """Blow the path up into funnels, a matched tunnel and per-cluster expanders.

    Randomness comes from ``params.seed`` unless an explicit generator is
    passed, in which case a seed is drawn from it once.
    """
    from .expanders import sample_conditioned

    seed = params.seed if rng is None else int(rng.integers(0, 2**63))
    m, k, ell = params.m, params.k, params.ell
    sizes = params.cluster_sizes()
    start = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    n = int(start[-1])
    us: list[np.ndarray] = []
    vs: list[np.ndarray] = []

    # funnel trees: cluster at distance d-1 -> distance d, each parent gets m^2 children
    m2 = m * m
    for d in range(1, k + 1):
        for parent_c, child_c in ((d, d + 1), (ell - d + 1, ell - d)):
            n_parent = sizes[parent_c - 1]
            parents = start[parent_c - 1] + np.repeat(np.arange(n_parent, dtype=np.int64), m2)
            children = start[child_c - 1] + np.arange(n_parent * m2, dtype=np.int64)
            us.append(parents)
            vs.append(children)

    # m uniform perfect matchings between consecutive clusters at distance >= k
    for j in range(1, ell):
        if _distance(j, ell) >= k and _distance(j + 1, ell) >= k:
            size = sizes[j - 1]
            gen = substream(seed, STREAM_MATCHING, j)
            left = start[j - 1] + np.arange(size, dtype=np.int64)
            for _ in range(m):
                us.append(left)
                vs.append(start[j] + gen.permutation(size))

    loops = np.repeat(np.array([0, n - 1], dtype=np.int64), params.loops)
    us.append(loops)
    vs.append(loops)

    for j in range(2, ell):
        sample = sample_conditioned(
            sizes[j - 1],
            m,
            threshold=params.threshold,
            max_attempts=params.expander_attempts,
            rng=substream(seed, STREAM_EXPANDER, j),
        )
        us.append(sample.graph.edge_u + start[j - 1])
        vs.append(sample.graph.edge_v + start[j - 1])

    g = MultiGraph(n, np.concatenate(us), np.concatenate(vs))
    return g, _orig_layout(params)


# ---------------------------------------------------------------------------
# decoration


def attach_trees(
    g: MultiGraph, layout: InstanceLayout, copies: int, tree: TreeSpec, level: int
) -> tuple[MultiGraph, InstanceLayout]:
    """Hang ``copies`` fresh copies of ``tree`` from every vertex of ``g``."""
    n = g.vertex_count
    size = tree.vertex_count
    parent, depth = tree.local_structure()
    n_new = n * copies * size
    anchors = np.repeat(np.arange(n, dtype=np.int64), copies)
    offsets = n + np.arange(n * copies, dtype=np.int64) * size
    root_u = anchors
    root_v = offsets
    inner_u = (offsets[:, None] + parent[None, 1:]).ravel()
    inner_v = (offsets[:, None] + np.arange(1, size, dtype=np.int64)[None, :]).ravel()
    new_g = MultiGraph(
        n + n_new,
        np.concatenate([g.edge_u, root_u, inner_u]),
        np.concatenate([g.edge_v, root_v, inner_v]),
    )
    reps = n * copies
    new_layout = replace(
        layout,
        cluster=np.concatenate([layout.cluster, np.zeros(n_new, dtype=np.int64)]),
        kind=np.concatenate([layout.kind, np.full(n_new, KIND_DECORATION, dtype=np.int8)]),
        level=np.concatenate([layout.level, np.full(n_new, level, dtype=np.int64)]),
        tree_depth=np.concatenate([layout.tree_depth, np.tile(depth, reps)]),
        anchor=np.concatenate([layout.anchor, np.repeat(anchors, size)]),
        leaf=np.concatenate([layout.leaf, np.tile(depth == tree.depth, reps)]),
        top_level=max(layout.top_level, level),
        rounds_applied=layout.rounds_applied + (level,),
    )
    return new_g, new_layout


def decorate(
    g: MultiGraph, layout: InstanceLayout, params: BuildParams, rng: np.random.Generator | None = None
) -> tuple[MultiGraph, InstanceLayout]:
    """Apply level-r, then level-(r-1), ..., then level-1 decoration.

    The construction is deterministic; ``rng`` is accepted for interface
    symmetry with ``obfuscate`` and ignored.
    """
    forecast = forecast_counts(params, base_vertices=g.vertex_count)
    if forecast.vertex_count > params.memory_cap:
        raise InstanceTooLarge(
            f"decorated instance would have {forecast.vertex_count} vertices (cap {params.memory_cap})",
            forecast.vertex_count,
            params.memory_cap,
        )
    for j in range(params.r, 0, -1):
        g, layout = attach_trees(g, layout, params.h, params.tree(j), level=j)
    return g, layout


def build_instance(params: BuildParams) -> tuple[MultiGraph, InstanceLayout]:
    g, layout = obfuscate(params)
    return decorate(g, layout, params)


# ---------------------------------------------------------------------------
# closed-form forecasts


@dataclass(frozen=True)
class Forecast:
    vertex_count: int
    max_degree: int
    per_kind: dict[str, int]
    per_level: dict[int, int]
    degree_by_role: dict[str, int]
    saturated: bool


def decorated_count(base: int, h: int, trees: list[TreeSpec]) -> int:
    """Vertex count after hanging ``h`` copies of each tree in turn on every vertex."""
    n = base
    for t in trees:
        n += n * h * t.vertex_count
    return n


def forecast_counts(params: BuildParams, base_vertices: int | None = None) -> Forecast:
    """Exact vertex counts from n_j = n_{j+1} (1 + h |tree_j|), plus degrees.

    Python integers never overflow; ``saturated`` flags counts beyond int64.
    """
    m, k, h, r = params.m, params.k, params.h, params.r
    sizes = params.cluster_sizes()
    n0 = sum(sizes) if base_vertices is None else base_vertices
    per_kind = {"entrance": 1, "exit": 1, "funnel": 0, "tunnel": 0, "decoration": 0}
    for j, s in enumerate(sizes, start=1):
        dist = _distance(j, params.ell)
        if 1 <= dist <= k:
            per_kind["funnel"] += s
        elif dist > k:
            per_kind["tunnel"] += s
    n = n0
    per_level: dict[int, int] = {}
    for j in range(r, 0, -1):
        added = n * h * params.tree(j).vertex_count
        per_level[j] = added
        n += added
    per_kind["decoration"] = n - n0

    loops = params.loops
    roles = {"entrance": m * m + loops + r * h}
    if params.ell == 2 * k + 1:
        # middle cluster is fed by both funnels and has no matchings
        inner_k = 2 + 2 * m
    else:
        inner_k = 1 + m + 2 * m
    for d in range(1, k):
        roles[f"funnel_{d}"] = 1 + m * m + 2 * m + r * h
    roles[f"funnel_{k}"] = inner_k + r * h
    if per_kind["tunnel"]:
        roles["tunnel"] = 4 * m + r * h
    for j in range(1, r + 1):
        t = params.tree(j)
        below = (j - 1) * h
        if t.depth == 0:
            roles[f"tree_{j}_root"] = 1 + below
        else:
            roles[f"tree_{j}_root"] = 1 + t.arity + below
            roles[f"tree_{j}_leaf"] = 1 + below
    return Forecast(
        vertex_count=n,
        max_degree=max(roles.values()),
        per_kind=per_kind,
        per_level=per_level,
        degree_by_role=roles,
        saturated=n > np.iinfo(np.int64).max,
    )
