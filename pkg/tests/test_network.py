import json
from importlib import resources

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridpart.network import (NetworkError, check_topology, incidence_matrix, load_fixture,
                              load_network, partition_graph, reduced_incidence)
from oracles import DSU


def bus(bid, gf=False, dp=0.0):
    return {"id": bid, "dp": dp, "dq": 0.0, "gp": 1.0 if gf else 0.0, "gq": 0.0, "qmin": 0.0,
            "grid_forming": gf}


def line(a, b):
    return {"from": a, "to": b, "r": 0.01, "x": 0.01, "pmax": 1.0, "qmax": 1.0,
            "normally_open": False}


def doc(bus_ids, edges, gf=(), sub=None):
    return {"base_mva": 1.0, "substation": sub or bus_ids[0],
            "buses": [bus(b, b in gf) for b in bus_ids],
            "lines": [line(a, b) for a, b in edges]}


def test_two_bus_document():
    net = load_network(doc(["S", "A"], [("S", "A")], gf={"A"}))
    assert len(net.buses) == 2 and len(net.lines) == 1


def test_json_text_and_dict_agree():
    d = doc(["S", "A"], [("S", "A")], gf={"A"})
    assert load_network(json.dumps(d)) == load_network(d)


@pytest.mark.parametrize("d, msg", [
    (doc(["S", "A", "B", "C"], [("S", "A"), ("B", "C")], gf={"A"}), "disconnected base graph"),
    (doc(["S", "A"], [("S", "A"), ("A", "S")], gf={"A"}), "duplicate edge"),
    (doc(["S", "A"], [("S", "A")], gf={"A"}, sub="Z"), "missing substation"),
    (doc(["S", "A"], [("S", "A")]), "no grid-forming bus"),
    ({"buses": [], "lines": []}, "schema violation"),
])
def test_invalid_documents(d, msg):
    with pytest.raises(NetworkError, match=msg):
        load_network(d)


def test_error_names_offending_bus():
    d = doc(["S", "A", "B", "C"], [("S", "A"), ("B", "C")], gf={"A"})
    with pytest.raises(NetworkError, match="'B'"):
        load_network(d)


def test_negative_capacity_rejected():
    d = doc(["S", "A"], [("S", "A")], gf={"A"})
    d["buses"][1]["gp"] = -1.0
    with pytest.raises(NetworkError, match="bus A"):
        load_network(d)


def test_ieee37_fixture():
    net = load_fixture("ieee37")
    gf = {b.id for b in net.buses if b.grid_forming}
    assert gf == {"742", "718", "710"}
    pv = {b.id for b in net.buses if b.gen_cap_p > 0 and not b.grid_forming}
    assert pv == {"702", "705", "707", "709", "737"}
    assert len(net.tie_lines) == 4
    assert sum(b.nominal_demand_p > 0 for b in net.buses) == 22
    load = sum(b.nominal_demand_p for b in net.buses)
    assert sum(net.bus(b).gen_cap_p for b in gf) == pytest.approx(0.13 * load, rel=1e-3)
    assert sum(net.bus(b).gen_cap_p for b in pv) == pytest.approx(0.29 * load, rel=1e-3)


def test_ieee37_partition_graph_size():
    net = load_fixture("ieee37")
    g = partition_graph(net)
    raw = json.loads(resources.files("gridpart.data").joinpath("ieee37.json").read_text())
    assert g.n_vertices == len(raw["buses"]) - 1 == 36
    assert net.substation_id not in g.vertices


def test_partition_graph_drops_substation_edges():
    net = load_network(doc(["0", "A", "B"], [("0", "A"), ("A", "B")], gf={"A"}))
    g = partition_graph(net)
    assert g.vertices == ("A", "B") and g.edges == (("A", "B"),)
    star = load_network(doc(["0", "A"], [("0", "A")], gf={"A"}))
    assert partition_graph(star).edges == () and partition_graph(star).vertices == ("A",)


def _path():
    net = load_network(doc(["S", "A", "B", "C"], [("S", "A"), ("A", "B"), ("B", "C")], gf={"A"}))
    return partition_graph(net)


def test_incidence_examples():
    g = _path()
    A = incidence_matrix(g).toarray()
    assert A.tolist() == [[1, -1, 0], [0, 1, -1]]
    assert (A.sum(axis=1) == 0).all()
    assert reduced_incidence(incidence_matrix(g), 0).toarray().tolist() == [[-1, 0], [1, -1]]
    single = partition_graph(load_network(doc(["S", "A", "B"], [("S", "A"), ("A", "B")], gf={"A"})))
    assert incidence_matrix(single).toarray().tolist() == [[1, -1]]
    assert reduced_incidence(incidence_matrix(single)).toarray().tolist() == [[-1]]


def test_reduced_incidence_shape_and_range():
    g = partition_graph(load_fixture("ieee37"))
    R = reduced_incidence(incidence_matrix(g))
    assert R.shape == (g.n_edges, g.n_vertices - 1)
    with pytest.raises(IndexError):
        reduced_incidence(incidence_matrix(g), g.n_vertices)


def test_incidence_is_deterministic():
    net = load_fixture("ieee37")
    a = reduced_incidence(incidence_matrix(partition_graph(net)))
    b = reduced_incidence(incidence_matrix(partition_graph(net)))
    assert (a != b).nnz == 0


def test_incidence_rows_have_one_plus_one_minus():
    A = incidence_matrix(partition_graph(load_fixture("ieee37"))).toarray()
    assert ((A == 1).sum(axis=1) == 1).all() and ((A == -1).sum(axis=1) == 1).all()


def _triangle():
    net = load_network(doc(["S", "A", "B", "C"], [("S", "A"), ("A", "B"), ("B", "C"), ("A", "C")],
                           gf={"A"}))
    return partition_graph(net)


def test_triangle_is_not_a_forest():
    rep = check_topology(_triangle(), [1, 1, 1], [1, 1, 1], {"A"})
    assert not rep.is_forest


def test_two_paths_each_with_grid_former():
    ids = ["S", "A", "B", "C", "D"]
    net = load_network(doc(ids, [("S", "A"), ("A", "B"), ("S", "C"), ("C", "D")], gf={"A", "C"}))
    rep = check_topology(partition_graph(net), [1, 1, 1, 1], [1, 1], {"A", "C"})
    assert rep.is_forest and rep.components_without_grid_former == []
    assert rep.components == [{"A", "B"}, {"C", "D"}]


def test_dangling_edge_reported():
    rep = check_topology(_triangle(), [1, 0, 1], [1, 0, 0], {"A"})
    assert rep.dangling_energized_edges == ["A-B"]
    assert not rep.ok


def test_size_mismatch():
    with pytest.raises(ValueError, match="size mismatch"):
        check_topology(_triangle(), [1, 1], [1, 1, 1], {"A"})


def _random_graph(data, n):
    pairs = [(a, b) for a in range(n) for b in range(a + 1, n)]
    edges = data.draw(st.lists(st.sampled_from(pairs), unique=True, max_size=len(pairs)))
    return edges


@settings(max_examples=1000, deadline=None)
@given(st.data())
def test_is_forest_matches_union_find(data):
    n = data.draw(st.integers(2, 8))
    edges = _random_graph(data, n)
    ids = ["S"] + [f"v{k}" for k in range(n)]
    d = doc(ids, [("S", f"v{k}") for k in range(n)] + [(f"v{a}", f"v{b}") for a, b in edges],
            gf={"v0"})
    g = partition_graph(load_network(d))
    bn = np.array(data.draw(st.lists(st.booleans(), min_size=n, max_size=n)))
    be = np.array(data.draw(st.lists(st.booleans(), min_size=len(edges), max_size=len(edges))),
                  dtype=bool)
    rep = check_topology(g, bn, be, {"v0"})
    dsu = DSU(n)
    acyclic = all(dsu.union(a, b) for (a, b), on in zip(edges, be) if on and bn[a] and bn[b])
    assert rep.is_forest == acyclic
