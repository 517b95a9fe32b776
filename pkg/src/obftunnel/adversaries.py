"""Classical query algorithms against the labeled oracle, with event audit.

Adversaries see only labels and the oracle; classification against the
hidden layout happens afterwards from the query transcript.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .errors import ConstructionFailed, InvalidInput, InvalidParameter
from .graph_core import BuildParams, InstanceLayout, MultiGraph, build_instance
from .oracle import LabeledOracle, QueryTranscript, make_oracle
from .rng import STREAM_INSTANCE, STREAM_TRIAL, substream

LEAF_FOUND = "leaf_found"
TUNNEL_CYCLE = "tunnel_cycle_found"
TUNNEL_TRAVERSED = "tunnel_traversed"
EVENTS = (LEAF_FOUND, TUNNEL_CYCLE, TUNNEL_TRAVERSED)


class _OutOfBudget(Exception):
    pass


class _ExitFound(Exception):
    pass


class _Session:
    """Budget guard: refuses to issue query number ``budget + 1``."""

    def __init__(self, oracle: LabeledOracle, budget: int):
        if budget < 1:
            raise InvalidParameter("budget must be >= 1")
        self.oracle = oracle
        self.limit = oracle.queries_used + budget

    def q(self, v: int, k: int) -> int | None:
        if self.oracle.queries_used >= self.limit:
            raise _OutOfBudget
        return self.oracle.query(v, k)


@dataclass(frozen=True)
class TrialOutcome:
    found_exit: bool
    queries: int
    events: frozenset[str]
    deepest_cluster_reached: int | None


# ---------------------------------------------------------------------------
# adversaries


def random_walk_trial(o: LabeledOracle, budget: int, rng, layout: InstanceLayout | None = None) -> TrialOutcome:
    """Simple random walk from the ENTRANCE.

    On first visit a vertex's bag is probed index by index up to the first
    star (every probe charged); each step then queries one uniform index.
    A self-loop answer at any vertex but the ENTRANCE identifies the EXIT.
    """
    sess = _Session(o, budget)
    start_count = o.queries_used
    entrance = cur = o.entrance_label
    bag_size: dict[int, int] = {}
    found = False
    try:
        while True:
            deg = bag_size.get(cur)
            if deg is None:
                deg = 0
                for k in range(1, o.degree_bound + 1):
                    r = sess.q(cur, k)
                    if r is None:
                        break
                    deg += 1
                    if r == cur and cur != entrance:
                        raise _ExitFound
                bag_size[cur] = deg
            if deg == 0:
                break
            cur = sess.q(cur, int(rng.integers(1, deg + 1)))
    except _ExitFound:
        found = True
    except _OutOfBudget:
        pass
    return _outcome(o, found, o.queries_used - start_count, layout)


def bfs_trial(o: LabeledOracle, budget: int, layout: InstanceLayout | None = None) -> TrialOutcome:
    """Breadth-first search from the ENTRANCE, one query per (vertex, index) probe."""
    sess = _Session(o, budget)
    start_count = o.queries_used
    entrance = o.entrance_label
    seen = {entrance}
    queue = deque([entrance])
    found = False
    try:
        while queue and not found:
            v = queue.popleft()
            for k in range(1, o.degree_bound + 1):
                r = sess.q(v, k)
                if r is None:
                    break
                if r == v and v != entrance:
                    found = True
                    break
                if r not in seen:
                    seen.add(r)
                    queue.append(r)
    except _OutOfBudget:
        pass
    return _outcome(o, found, o.queries_used - start_count, layout)


def tunnel_walk_trial(
    o: LabeledOracle, start: int, steps: int, degree: int, rng, layout: InstanceLayout | None = None
) -> TrialOutcome:
    """Walk of ``steps`` queries from ``start``, each at a uniform index in [degree].

    Models an explorer already inside the tunnel that knows the tunnel degree,
    so every query is a step; used to measure how fast cycles are found.
    """
    if steps < 0 or not 1 <= degree <= o.degree_bound:
        raise InvalidParameter("need steps >= 0 and 1 <= degree <= oracle degree bound")
    start_count = o.queries_used
    cur = start
    for _ in range(steps):
        r = o.query(cur, int(rng.integers(1, degree + 1)))
        if r is None:
            break
        cur = r
    return _outcome(o, False, o.queries_used - start_count, layout)


def nonbacktracking_probe(
    o: LabeledOracle, from_: int, via: int, depth: int, rng, budget: int | None = None
) -> str:
    """Continue a walk that just crossed ``from_ -> via`` without stepping back.

    Returns ``"leaf_hit"`` if a vertex whose only neighbor is the one just
    left is reached within ``depth`` further steps, ``"cycle_hit"`` if the
    walk revisits a vertex, else ``"survived"``.
    """
    if depth < 1:
        raise InvalidParameter("depth must be >= 1")
    sess = _Session(o, budget if budget is not None else 2**62)
    prev, cur = from_, via
    visited = {from_, via}
    for step in range(depth + 1):
        nbrs = []
        for k in range(1, o.degree_bound + 1):
            r = sess.q(cur, k)
            if r is None:
                break
            nbrs.append(r)
        forward = list(nbrs)
        if prev in forward:
            forward.remove(prev)
        if not forward:
            return "leaf_hit"
        if step == depth:
            return "survived"
        nxt = forward[int(rng.integers(len(forward)))]
        if nxt in visited:
            return "cycle_hit"
        visited.add(nxt)
        prev, cur = cur, nxt
    return "survived"


# ---------------------------------------------------------------------------
# ground-truth classification


def _find(parent: dict[int, int], x: int) -> int:
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        parent[x], x = root, parent[x]
    return root


def classify(t: QueryTranscript, layout: InstanceLayout) -> frozenset[str]:
    """Events observed in a transcript, judged against the hidden layout.

    The tunnel region is clusters ``k+1 .. ell-k`` (everything joined by
    matchings).  A cycle counts if distinct discovered edge instances with
    both endpoints in the region close a loop; traversal means discovered
    region edges connect cluster ``k+1`` to cluster ``ell-k``.
    """
    disc = t.discovered_vertices()
    if any(v is None or v >= layout.vertex_count for v in disc):
        raise InvalidInput("transcript refers to vertices outside the layout")
    events = set()
    tll = layout.top_level_leaf
    if any(tll[v] for v in disc):
        events.add(LEAF_FOUND)

    region = layout.traversal_region()
    parent = {v: v for v in disc if region[v]}
    for u, v in t.discovered_edges().values():
        if not (region[u] and region[v]):
            continue
        ru, rv = _find(parent, u), _find(parent, v)
        if ru == rv:
            events.add(TUNNEL_CYCLE)
        else:
            parent[ru] = rv
    lo, hi = layout.k + 1, layout.ell - layout.k
    left = {_find(parent, v) for v in parent if layout.cluster[v] == lo}
    right = {_find(parent, v) for v in parent if layout.cluster[v] == hi}
    if left & right:
        events.add(TUNNEL_TRAVERSED)
    return frozenset(events)


def _outcome(o: LabeledOracle, found: bool, used: int, layout: InstanceLayout | None) -> TrialOutcome:
    if layout is None or not o.record:
        return TrialOutcome(found, used, frozenset(), None)
    tr = o.transcript
    events = classify(tr, layout)
    clusters = [int(layout.cluster[v]) for v in tr.discovered_vertices() if layout.cluster[v] > 0]
    return TrialOutcome(found, used, events, max(clusters) if clusters else None)


# ---------------------------------------------------------------------------
# suites


@dataclass(frozen=True)
class SuiteConfig:
    adversary: str
    params: BuildParams
    budget: int
    trials: int
    master_seed: int = 0
    label_bits: int | None = None
    fresh_instance: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["params"] = self.params.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SuiteConfig":
        d = dict(d)
        d["params"] = BuildParams.from_dict(d["params"])
        return cls(**d)


def binomial_ci(hits: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    """Normal-approximation interval with continuity correction, clipped to [0, 1]."""
    if n == 0:
        return (0.0, 1.0)
    p = hits / n
    half = z * math.sqrt(p * (1 - p) / n) + 0.5 / n
    return (max(0.0, p - half), min(1.0, p + half))


@dataclass
class TrialStats:
    trials: int = 0
    hits: int = 0
    failures: int = 0
    event_counts: dict[str, int] = field(default_factory=lambda: {e: 0 for e in EVENTS})
    uncovered_hits: int = 0
    queries: list[int] = field(default_factory=list)
    found: list[bool] = field(default_factory=list)

    @property
    def hit_rate(self) -> float:
        return self.hits / self.trials if self.trials else 0.0

    @property
    def ci(self) -> tuple[float, float]:
        return binomial_ci(self.hits, self.trials)

    @property
    def event_frequencies(self) -> dict[str, float]:
        return {e: (c / self.trials if self.trials else 0.0) for e, c in self.event_counts.items()}

    def add(self, out: TrialOutcome) -> None:
        self.trials += 1
        self.hits += out.found_exit
        for e in out.events:
            self.event_counts[e] += 1
        if out.found_exit and not out.events:
            self.uncovered_hits += 1
        self.queries.append(out.queries)
        self.found.append(out.found_exit)

    def merge(self, other: "TrialStats") -> "TrialStats":
        out = TrialStats(
            trials=self.trials + other.trials,
            hits=self.hits + other.hits,
            failures=self.failures + other.failures,
            event_counts={e: self.event_counts[e] + other.event_counts[e] for e in EVENTS},
            uncovered_hits=self.uncovered_hits + other.uncovered_hits,
            queries=self.queries + other.queries,
            found=self.found + other.found,
        )
        return out

    def histogram(self, bins: int = 20, budget: int | None = None) -> dict:
        if not self.queries:
            return {"edges": [], "counts": []}
        top = budget if budget is not None else max(self.queries)
        counts, edges = np.histogram(self.queries, bins=bins, range=(0, max(top, 1)))
        return {"edges": edges.tolist(), "counts": counts.tolist()}

    def to_dict(self, budget: int | None = None) -> dict:
        lo, hi = self.ci
        q = np.asarray(self.queries) if self.queries else np.zeros(0)
        hit_q = [x for x, f in zip(self.queries, self.found) if f]
        return {
            "trials": self.trials,
            "hits": self.hits,
            "hit_rate": self.hit_rate,
            "ci95": [lo, hi],
            "failures": self.failures,
            "event_counts": dict(self.event_counts),
            "event_frequencies": self.event_frequencies,
            "uncovered_hits": self.uncovered_hits,
            "mean_queries": float(q.mean()) if q.size else None,
            "median_queries_to_exit": float(np.median(hit_q)) if hit_q else None,
            "query_histogram": self.histogram(budget=budget),
        }


def one_sided_drop_pvalue(before: TrialStats, after: TrialStats) -> float:
    """P-value for H1: hit rate ``before`` > hit rate ``after`` (Fisher exact)."""
    table = [[before.hits, before.trials - before.hits], [after.hits, after.trials - after.hits]]
    return float(stats.fisher_exact(table, alternative="greater").pvalue)


def run_trial(name: str, o: LabeledOracle, budget: int, rng, layout: InstanceLayout | None) -> TrialOutcome:
    if name == "random_walk":
        return random_walk_trial(o, budget, rng, layout)
    if name == "bfs":
        return bfs_trial(o, budget, layout)
    raise InvalidParameter(f"unknown adversary {name!r}")


def run_suite(config: SuiteConfig, instance: tuple[MultiGraph, InstanceLayout] | None = None) -> TrialStats:
    """Independent trials, each with its own oracle labeling and RNG stream."""
    stats_ = TrialStats()
    if config.trials == 0:
        return stats_
    if instance is None and not config.fresh_instance:
        instance = build_instance(config.params)
    for t in range(config.trials):
        if config.fresh_instance:
            seed = int(substream(config.master_seed, STREAM_INSTANCE, t).integers(0, 2**63))
            try:
                g, layout = build_instance(_reseed(config.params, seed))
            except ConstructionFailed:
                stats_.failures += 1
                continue
        else:
            g, layout = instance
        oracle = make_oracle(g, config.label_bits, substream(config.master_seed, STREAM_TRIAL, t, 0))
        rng = substream(config.master_seed, STREAM_TRIAL, t, 1)
        stats_.add(run_trial(config.adversary, oracle, config.budget, rng, layout))
    return stats_


def _reseed(p: BuildParams, seed: int) -> BuildParams:
    from dataclasses import replace

    return replace(p, seed=seed)


# ---------------------------------------------------------------------------
# empirical checks of the hardness lemmas


def derailing_trial(o: LabeledOracle, target_depth: np.ndarray, distance: int, rng) -> bool:
    """Non-backtracking walk from the root of a decorated tree.

    Success means reaching a vertex of the undecorated tree at distance
    ``distance`` before stepping on any degree-1 vertex.  ``target_depth``
    gives, per internal vertex, its depth in the undecorated tree (-1 for
    decoration vertices); it is used only to judge the outcome.
    """
    prev = None
    cur = o.entrance_label
    while True:
        v = o.vertex_of(cur)
        if target_depth[v] >= distance:
            return True
        nbrs = []
        for k in range(1, o.degree_bound + 1):
            r = o.query(cur, k)
            if r is None:
                break
            nbrs.append(r)
        if prev is not None:
            nbrs.remove(prev)
        if not nbrs:
            return False
        prev, cur = cur, nbrs[int(rng.integers(len(nbrs)))]
