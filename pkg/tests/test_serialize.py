import io
import math

import numpy as np
import pytest

from obftunnel.errors import ParseError
from obftunnel.graph_core import KIND_DECORATION, BuildParams, MultiGraph, build_instance, build_path, forecast_counts
from obftunnel.serialize import dump_graph, load_instance, parse_graph, save_instance, sidecar_path


def _text(g, seed=0):
    buf = io.StringIO()
    dump_graph(g, buf, seed)
    return buf.getvalue()


def test_dump_format():
    g = MultiGraph(3, [0, 1, 2], [1, 2, 2])
    lines = _text(g, 7).splitlines()
    assert lines[0] == "TWG1 3 7"
    assert lines[1] == "0: 1"
    # a self-loop appears once in its own bag
    assert sorted(map(int, lines[3].split(":")[1].split())) == [1, 2]


def test_round_trip_with_sidecar(tmp_path):
    p = BuildParams(m=2, k=1, ell=5, rounds=1, depth_override=(1,), expander_threshold=math.inf, seed=3)
    g, layout = build_instance(p)
    path = tmp_path / "inst.twg"
    save_instance(path, g, layout, seed=p.seed)
    assert sidecar_path(path).exists()
    g2, layout2, seed = load_instance(path)
    assert seed == 3
    assert g2.digest() == g.digest()
    assert np.array_equal(layout2.kind, layout.kind)
    assert np.array_equal(layout2.cluster, layout.cluster)
    assert (layout2.entrance, layout2.exit) == (layout.entrance, layout.exit)
    fc = forecast_counts(p)
    assert g2.vertex_count == fc.vertex_count
    assert int(np.count_nonzero(layout2.kind == KIND_DECORATION)) == fc.per_kind["decoration"]


def test_round_trip_without_sidecar(tmp_path):
    g = build_path(6)
    path = tmp_path / "p.twg"
    save_instance(path, g)
    g2, layout, _ = load_instance(path)
    assert layout is None and g2.digest() == g.digest()


def test_empty_graph():
    g, seed = parse_graph(_text(MultiGraph(0, [], [])).splitlines())
    assert g.vertex_count == 0 and seed == 0


def test_truncated_file_reports_line():
    lines = _text(build_path(5)).splitlines()[:4]
    with pytest.raises(ParseError) as e:
        parse_graph(lines)
    # three vertex lines read, the fourth would be on line 5
    assert e.value.line == 5


@pytest.mark.parametrize("header", ["", "TWG2 3 0", "TWG1 x 0", "TWG1 -1 0"])
def test_bad_header(header):
    with pytest.raises(ParseError) as e:
        parse_graph([header] if header else [])
    assert e.value.line == 1


def test_asymmetric_adjacency():
    lines = ["TWG1 3 0", "0: 1", "1: 0 2", "2:"]
    with pytest.raises(ParseError) as e:
        parse_graph(lines)
    assert e.value.line in (3, 4)


@pytest.mark.parametrize(
    "body,line",
    [(["0 1"], 2), (["0: a"], 2), (["1: 0"], 2), (["0: 5"], 2)],
)
def test_malformed_vertex_lines(body, line):
    with pytest.raises(ParseError) as e:
        parse_graph(["TWG1 1 0", *body])
    assert e.value.line == line


def test_sidecar_size_mismatch(tmp_path):
    p = BuildParams(m=2, k=1, ell=3, rounds=0, expander_threshold=math.inf, seed=0)
    g, layout = build_instance(p)
    path = tmp_path / "a.twg"
    save_instance(path, g, layout)
    with open(path, "w") as fh:
        dump_graph(build_path(2), fh)
    with pytest.raises(ParseError):
        load_instance(path)
