"""Query-metered adjacency-list oracle over randomly labeled vertices.

``query(v, k)`` returns the label of the k-th neighbor of ``v`` (1-based), or
``None`` standing for the star symbol: ``v`` has fewer than ``k`` neighbor
slots or is not a vertex at all.  Every call is charged, including star
responses and repeats.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field
from typing import IO, Iterable

import numpy as np

from .errors import InvalidParameter
from .graph_core import MultiGraph
from .rng import STREAM_SHUFFLE, ensure_rng, substream

STAR = None


def default_label_bits(n: int) -> int:
    return max(16, math.ceil(math.log2(4 * max(n, 1))) + 8)


@dataclass
class QueryTranscript:
    """Ordered record of queries.

    ``vertex_of`` and the per-record edge ids are ground truth the oracle
    fills in for later classification; they are not visible to adversaries.
    """

    records: list[tuple[str | int, int, int | None]] = field(default_factory=list)
    vertex_of: dict[int, int] = field(default_factory=dict)
    edge_ids: list[int] = field(default_factory=list)
    entrance: int | None = None

    def __len__(self) -> int:
        return len(self.records)

    def discovered_labels(self) -> set[int]:
        found = {self.entrance} if self.entrance is not None else set()
        for v, _, r in self.records:
            if r is not None:
                found.add(v)
                found.add(r)
        return found

    def discovered_vertices(self) -> set[int]:
        return {self.vertex_of[lab] for lab in self.discovered_labels()}

    def discovered_edges(self) -> dict[int, tuple[int, int]]:
        """Distinct edge instances seen, keyed by edge id."""
        out: dict[int, tuple[int, int]] = {}
        for (v, _, r), e in zip(self.records, self.edge_ids):
            if r is not None:
                out[e] = (self.vertex_of[v], self.vertex_of[r])
        return out

    def write_jsonl(self, fh: IO[str]) -> None:
        for t, (v, k, r) in enumerate(self.records):
            fh.write(json.dumps({"t": t, "v": v, "k": k, "resp": r}) + "\n")


class LabeledOracle:
    """Adjacency-list access to ``graph`` through opaque labels.

    Labels are distinct uniform draws from ``[0, 2**label_bits)``.  Neighbor
    slots are shuffled independently per vertex once, at construction.
    """

    def __init__(self, graph: MultiGraph, label_bits: int | None = None, rng=None, record: bool = True):
        n = graph.vertex_count
        if label_bits is None:
            label_bits = default_label_bits(n)
        if label_bits > 62:
            raise InvalidParameter("label_bits must be <= 62")
        if 2**label_bits < 4 * n:
            raise InvalidParameter(f"label space 2^{label_bits} is smaller than 4*n = {4 * n}")
        rng = ensure_rng(rng)
        seed = int(rng.integers(0, 2**63))
        self.graph = graph
        self.label_bits = label_bits
        # floor of 1 keeps index 1 valid on edgeless graphs
        self.degree_bound = max(1, int(graph.degrees.max())) if n else 1
        self._seed = seed
        self._labels = _draw_labels(n, label_bits, substream(seed, 0))
        self._index = dict(zip(self._labels.tolist(), range(n)))
        self._shuffle(substream(seed, STREAM_SHUFFLE))
        self._lock = threading.Lock()
        self._count = 0
        self.record = record
        self.transcript = QueryTranscript(entrance=int(self._labels[0]) if n else None)
        if n:
            self.transcript.vertex_of[int(self._labels[0])] = 0

    def _shuffle(self, gen: np.random.Generator) -> None:
        g = self.graph
        # row index plus a uniform fraction sorts slots by row, randomly within a row
        keys = np.repeat(np.arange(g.vertex_count, dtype=np.float64), g.degrees)
        keys += gen.random(keys.size)
        order = np.argsort(keys)
        self._slots = g.indices[order]
        self._slot_edges = g.slot_edge[order]
        self._slot_labels = self._labels[self._slots].tolist()
        self._slot_list = self._slots.tolist()
        self._slot_edge_list = self._slot_edges.tolist()
        self._ptr = g.indptr.tolist()

    @property
    def entrance_label(self) -> int:
        return int(self._labels[0])

    @property
    def queries_used(self) -> int:
        return self._count

    def query(self, v: int, k: int) -> int | None:
        if not 1 <= k <= self.degree_bound:
            raise InvalidParameter(f"neighbor index {k} outside [1, {self.degree_bound}]")
        with self._lock:
            self._count += 1
            i = self._index.get(v)
            resp = None
            edge = -1
            if i is not None:
                slot = self._ptr[i] + k - 1
                if slot < self._ptr[i + 1]:
                    resp = self._slot_labels[slot]
                    edge = self._slot_edge_list[slot]
            if self.record:
                tr = self.transcript
                tr.records.append((v, k, resp))
                tr.edge_ids.append(edge)
                if resp is not None:
                    tr.vertex_of[v] = i
                    tr.vertex_of[resp] = self._slot_list[slot]
            return resp

    def clone(self, rng=None) -> "LabeledOracle":
        """Same graph, fresh labels and shuffles, zeroed counter."""
        return LabeledOracle(self.graph, self.label_bits, rng, record=self.record)

    def relabeled(self, rng=None) -> "LabeledOracle":
        """Fresh labels but the same slot order: an isomorphic oracle."""
        other = LabeledOracle.__new__(LabeledOracle)
        other.__dict__.update({k: v for k, v in self.__dict__.items() if k not in ("_lock", "transcript")})
        rng = ensure_rng(rng)
        other._labels = _draw_labels(self.graph.vertex_count, self.label_bits, rng)
        other._index = dict(zip(other._labels.tolist(), range(self.graph.vertex_count)))
        other._slot_labels = other._labels[self._slots].tolist()
        other._lock = threading.Lock()
        other._count = 0
        other.transcript = QueryTranscript(entrance=int(other._labels[0]))
        other.transcript.vertex_of[int(other._labels[0])] = 0
        return other

    def label_of(self, vertex: int) -> int:
        """Ground truth; for analysis and tests only."""
        return int(self._labels[vertex])

    def vertex_of(self, label: int) -> int | None:
        """Ground truth; for analysis and tests only."""
        return self._index.get(label)


def _draw_labels(n: int, bits: int, gen: np.random.Generator) -> np.ndarray:
    labels = gen.integers(0, 2**bits, size=n, dtype=np.int64)
    while True:
        uniq, first = np.unique(labels, return_index=True)
        if uniq.size == n:
            return labels
        dup = np.ones(n, dtype=bool)
        dup[first] = False
        labels[dup] = gen.integers(0, 2**bits, size=int(dup.sum()), dtype=np.int64)


def make_oracle(g: MultiGraph, label_bits: int | None = None, rng=None, record: bool = True) -> LabeledOracle:
    return LabeledOracle(g, label_bits, rng, record=record)


def query(o: LabeledOracle, v: int, k: int) -> int | None:
    return o.query(v, k)


def queries_used(o: LabeledOracle) -> int:
    return o.queries_used


def probe_all(o: LabeledOracle, v: int) -> list[int]:
    """Query indices 1, 2, ... until the first star; returns the neighbor labels."""
    out = []
    for k in range(1, o.degree_bound + 1):
        r = o.query(v, k)
        if r is None:
            break
        out.append(r)
    return out


def read_transcript_jsonl(lines: Iterable[str]) -> list[dict]:
    return [json.loads(line) for line in lines if line.strip()]
