"""Text serialization of graphs (TWG1) and their layout sidecars.

Graph file::

    TWG1 <vertex_count> <seed>
    0: 1 2 0 0
    1: 0
    ...

One line per vertex in index order, neighbors in bag order with repeats for
parallel edges and one entry per self-loop.  The layout goes to a JSON
document keyed by vertex index.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import IO

import numpy as np
import scipy.sparse as sp

from .errors import ParseError
from .graph_core import KIND_NAMES, InstanceLayout, MultiGraph

MAGIC = "TWG1"


def dump_graph(g: MultiGraph, fh: IO[str], seed: int = 0) -> None:
    fh.write(f"{MAGIC} {g.vertex_count} {int(seed)}\n")
    for i, bag in enumerate(g.adjacency_lists()):
        fh.write(f"{i}:" + "".join(f" {x}" for x in bag) + "\n")


def parse_graph(lines) -> tuple[MultiGraph, int]:
    """Inverse of ``dump_graph``; returns ``(graph, seed)``."""
    it = iter(lines)
    try:
        header = next(it)
    except StopIteration:
        raise ParseError("empty file, expected TWG1 header", 1) from None
    parts = header.split()
    if len(parts) != 3 or parts[0] != MAGIC:
        raise ParseError(f"bad header {header.strip()!r}", 1)
    try:
        n, seed = int(parts[1]), int(parts[2])
    except ValueError:
        raise ParseError("header counts are not integers", 1) from None
    if n < 0:
        raise ParseError("negative vertex count", 1)
    bags: list[list[int]] = []
    for lineno, raw in enumerate(it, start=2):
        line = raw.rstrip("\n")
        if not line.strip():
            continue
        head, sep, rest = line.partition(":")
        if not sep:
            raise ParseError("missing ':' after vertex index", lineno)
        try:
            idx = int(head)
            nbrs = [int(x) for x in rest.split()]
        except ValueError:
            raise ParseError("non-integer token", lineno) from None
        if idx != len(bags):
            raise ParseError(f"expected vertex {len(bags)}, found {idx}", lineno)
        if idx >= n:
            raise ParseError(f"vertex {idx} beyond declared count {n}", lineno)
        for x in nbrs:
            if not 0 <= x < n:
                raise ParseError(f"neighbor {x} out of range", lineno)
        bags.append(nbrs)
    if len(bags) != n:
        raise ParseError(f"file ends after {len(bags)} of {n} vertices", len(bags) + 2)
    bad = _first_asymmetric(bags, n)
    if bad is not None:
        raise ParseError(f"adjacency of vertex {bad} is not mirrored by its neighbors", bad + 2)
    return MultiGraph.from_adjacency(bags), seed


def _first_asymmetric(bags: list[list[int]], n: int) -> int | None:
    rows = np.repeat(np.arange(n), [len(b) for b in bags])
    cols = np.fromiter((x for b in bags for x in b), dtype=np.int64, count=rows.size)
    mat = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
    diff = (mat - mat.T).tocoo()
    nz = diff.row[diff.data != 0]
    return int(nz.min()) if nz.size else None


def layout_to_json(layout: InstanceLayout) -> dict:
    vertices = {}
    for i in range(layout.vertex_count):
        vertices[str(i)] = {
            "cluster": int(layout.cluster[i]),
            "kind": KIND_NAMES[int(layout.kind[i])],
            "level": int(layout.level[i]),
            "tree_depth": int(layout.tree_depth[i]),
            "anchor": int(layout.anchor[i]),
            "leaf": bool(layout.leaf[i]),
        }
    return {
        "format": f"{MAGIC}-layout",
        "m": layout.m,
        "k": layout.k,
        "ell": layout.ell,
        "top_level": layout.top_level,
        "rounds_applied": list(layout.rounds_applied),
        "vertices": vertices,
    }


def layout_from_json(doc: dict) -> InstanceLayout:
    verts = doc["vertices"]
    n = len(verts)
    rec = [verts[str(i)] for i in range(n)]
    kinds = {name: code for code, name in enumerate(KIND_NAMES)}
    return InstanceLayout(
        m=int(doc["m"]),
        k=int(doc["k"]),
        ell=int(doc["ell"]),
        cluster=np.array([r["cluster"] for r in rec], dtype=np.int64),
        kind=np.array([kinds[r["kind"]] for r in rec], dtype=np.int8),
        level=np.array([r["level"] for r in rec], dtype=np.int64),
        tree_depth=np.array([r["tree_depth"] for r in rec], dtype=np.int64),
        anchor=np.array([r["anchor"] for r in rec], dtype=np.int64),
        leaf=np.array([r["leaf"] for r in rec], dtype=bool),
        top_level=int(doc["top_level"]),
        rounds_applied=tuple(int(x) for x in doc["rounds_applied"]),
    )


def sidecar_path(path: str | os.PathLike) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".layout.json")


def save_instance(path: str | os.PathLike, g: MultiGraph, layout: InstanceLayout | None = None, seed: int = 0) -> None:
    with open(path, "w", encoding="ascii") as fh:
        dump_graph(g, fh, seed)
    if layout is not None:
        with open(sidecar_path(path), "w", encoding="ascii") as fh:
            json.dump(layout_to_json(layout), fh, sort_keys=True)


def load_instance(path: str | os.PathLike) -> tuple[MultiGraph, InstanceLayout | None, int]:
    """Returns ``(graph, layout or None, seed)``."""
    with open(path, encoding="ascii") as fh:
        g, seed = parse_graph(fh)
    side = sidecar_path(path)
    layout = None
    if side.exists():
        with open(side, encoding="ascii") as fh:
            layout = layout_from_json(json.load(fh))
        if layout.vertex_count != g.vertex_count:
            raise ParseError("layout sidecar vertex count differs from the graph", 1)
    return g, layout, seed
