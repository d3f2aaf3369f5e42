import numpy as np
import pytest

from archpredict.graph import build_graph, make_node

OPS = [("Conv", [3]), ("ReLU", []), ("Add", []), ("Pool", [2]), ("FC", [64, 10]), ("BN", [])]


def random_dag(rng: np.random.Generator, n: int, p: float = 0.35):
    """Random DAG on n nodes with ids shuffled so storage order is not topological."""
    perm = rng.permutation(n)
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < p:
                edges.append((int(perm[i]), int(perm[j])))
    nodes = []
    for i in range(n):
        op, attrs = OPS[int(rng.integers(len(OPS)))]
        nodes.append(make_node(i, op, attrs))
    return build_graph(nodes, edges)


def brute_force_masks(n, edges):
    """Per-node sets: successors, predecessors, two-hop predecessors."""
    succ = {i: {d for s, d in edges if s == i} for i in range(n)}
    pred = {i: {s for s, d in edges if d == i} for i in range(n)}
    two = {i: {k for j in pred[i] for k in pred[j]} for i in range(n)}
    return succ, pred, two


def rows_as_sets(m):
    return {i: set(np.flatnonzero(m[i]).tolist()) for i in range(m.shape[0])}


@pytest.fixture
def chain_graph():
    nodes = [make_node(0, "Conv", [3]), make_node(1, "ReLU"), make_node(2, "FC", [512, 10])]
    return build_graph(nodes, [(0, 1), (1, 2)])


# acceptance criteria report one line each in the terminal summary
_CRITERIA: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    def record(number: int, ok: bool, detail: str) -> bool:
        _CRITERIA[number] = (bool(ok), detail)
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        ok, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
