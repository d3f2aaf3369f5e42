import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from archpredict.graph import (
    SchemaError,
    TopologyError,
    VocabularyError,
    build_graph,
    derive_masks,
    extend_masks,
    make_node,
    masks_from_adjacency,
    parse_architecture,
    validate_dag,
)
from archpredict.data import FAMILIES, random_architecture

from conftest import brute_force_masks, random_dag, rows_as_sets


def doc(nodes, edges):
    return json.dumps({"name": "t", "nodes": nodes, "edges": edges})


CHAIN = [
    {"id": 0, "op": "Conv", "category": "ParamL", "attrs": [3]},
    {"id": 1, "op": "ReLU", "category": "ParamN", "attrs": []},
    {"id": 2, "op": "FC", "category": "ParamL", "attrs": [512, 10]},
]


def test_parse_single_node():
    g = parse_architecture(doc([CHAIN[0]], []))
    assert g.n == 1
    assert not g.adjacency().any()


def test_parse_chain():
    g = parse_architecture(doc(CHAIN, [[0, 1], [1, 2]]))
    assert g.topo_order == (0, 1, 2)
    assert set(zip(*np.nonzero(g.adjacency()))) == {(0, 1), (1, 2)}


def test_parse_cycle_is_topology_error():
    with pytest.raises(TopologyError):
        parse_architecture(doc(CHAIN, [[0, 1], [1, 2], [2, 0]]))


def test_parse_unknown_op():
    bad = [{"id": 0, "op": "FancyOp", "category": "ParamL", "attrs": [7]}]
    with pytest.raises(VocabularyError):
        parse_architecture(doc(bad, []))


def test_parse_dangling_edge():
    with pytest.raises(SchemaError):
        parse_architecture(doc(CHAIN, [[0, 5]]))


@pytest.mark.parametrize(
    "nodes,edges",
    [
        ([{"id": 0, "op": "Conv", "category": "ParamL", "attrs": []}], []),
        ([{"id": 0, "op": "Conv", "category": "ParamN", "attrs": [3]}], []),
        ([{"id": 1, "op": "ReLU", "category": "ParamN", "attrs": []}], []),
        (CHAIN, [[0, 1], [0, 1]]),
    ],
)
def test_parse_schema_errors(nodes, edges):
    with pytest.raises(SchemaError):
        parse_architecture(doc(nodes, edges))


def test_parse_reindexes_to_topological_positions():
    # stored order 0: FC, 1: Conv, 2: ReLU with Conv -> ReLU -> FC
    nodes = [CHAIN[2] | {"id": 0}, CHAIN[0] | {"id": 1}, CHAIN[1] | {"id": 2}]
    g = parse_architecture(doc(nodes, [[1, 2], [2, 0]]))
    assert g.topo_order == (1, 2, 0)
    assert [nd.op for nd in g.nodes] == ["Conv", "ReLU", "FC"]
    assert g.edges == ((0, 1), (1, 2))


def test_topological_ties_by_ascending_id():
    nodes = [make_node(i, "ReLU") for i in range(4)]
    g = build_graph(nodes, [(3, 0)])
    assert g.topo_order == (1, 2, 3, 0)


def test_validate_dag_chain_ok():
    assert validate_dag(3, [(0, 1), (1, 2)]) == [0, 1, 2]


def test_validate_dag_two_cycle_names_both_edges():
    with pytest.raises(TopologyError) as info:
        validate_dag(2, [(0, 1), (1, 0)])
    assert set(info.value.cycle_edges) == {(0, 1), (1, 0)}


def test_validate_dag_cycle_with_tail():
    with pytest.raises(TopologyError) as info:
        validate_dag(4, [(0, 1), (1, 2), (2, 1), (2, 3)])
    assert set(info.value.cycle_edges) == {(1, 2), (2, 1)}


def test_generator_graphs_are_dags():
    rng = np.random.default_rng(0)
    fams = list(FAMILIES)
    for seed in range(1000):
        g = random_architecture(fams[seed % len(fams)], rng)
        assert validate_dag(g.n, g.edges) == list(range(g.n))


def test_masks_chain():
    nodes = [make_node(i, "ReLU") for i in range(3)]
    m = derive_masks(build_graph(nodes, [(0, 1), (1, 2)]))
    assert set(zip(*np.nonzero(m.son))) == {(0, 1), (1, 2)}
    assert set(zip(*np.nonzero(m.father))) == {(1, 0), (2, 1)}
    assert set(zip(*np.nonzero(m.grandfather))) == {(2, 0)}


def test_masks_diamond_binarizes_path_count():
    nodes = [make_node(i, "ReLU") for i in range(4)]
    g = build_graph(nodes, [(0, 1), (0, 2), (1, 3), (2, 3)])
    m = derive_masks(g)
    assert set(zip(*np.nonzero(m.grandfather))) == {(3, 0)}
    assert m.grandfather[3, 0] == 1
    assert (g.adjacency().T @ g.adjacency().T)[3, 0] == 2


def test_masks_empty_graph():
    m = derive_masks(build_graph([make_node(i, "ReLU") for i in range(4)], []))
    for arr in (m.son, m.father, m.grandfather):
        assert not arr.any()


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_masks_match_reachability(n, seed):
    g = random_dag(np.random.default_rng(seed), n)
    m = derive_masks(g)
    succ, pred, two = brute_force_masks(n, g.edges)
    assert rows_as_sets(m.son) == succ
    assert rows_as_sets(m.father) == pred
    assert rows_as_sets(m.grandfather) == two
    np.testing.assert_array_equal(m.father, m.son.T)
    for arr in (m.son, m.father, m.grandfather):
        assert not np.diag(arr).any()


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 10), st.integers(0, 2**32 - 1))
def test_masks_relabeling_equivariance(n, seed):
    rng = np.random.default_rng(seed)
    g = random_dag(rng, n)
    perm = rng.permutation(n)
    P = np.eye(n, dtype=np.int64)[perm]
    m = derive_masks(g)
    r = masks_from_adjacency(P @ g.adjacency() @ P.T)
    np.testing.assert_array_equal(r.son, P @ m.son @ P.T)
    np.testing.assert_array_equal(r.father, P @ m.father @ P.T)
    np.testing.assert_array_equal(r.grandfather, P @ m.grandfather @ P.T)


def test_extend_masks_adds_platform_row_and_column():
    m = np.zeros((3, 2, 2), dtype=np.int64)
    e = extend_masks(m)
    assert e.shape == (3, 3, 3)
    assert (e[:, 2, :] == 1).all() and (e[:, :, 2] == 1).all()
    assert not e[:, :2, :2].any()
