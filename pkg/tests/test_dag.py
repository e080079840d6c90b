import json

import networkx as nx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqtransport.dag import DagSpec, check_order, parents_of, topological_order, validate
from seqtransport.errors import (
    CycleDetected,
    EdgeFromOutcome,
    EdgeIntoTreatment,
    InvalidDag,
    MultipleTreatments,
    UnknownNode,
)


def chain():
    return DagSpec.build(
        [("A", "treatment"), ("X1", "mediator-numeric"), ("X2", "mediator-numeric")],
        [("A", "X1"), ("X1", "X2")],
    )


def compas():
    return DagSpec.build(
        [
            ("race", "treatment"),
            ("age", "mediator-numeric"),
            ("priors_count", "mediator-numeric"),
            ("charge_degree", "mediator-categorical"),
            ("two_year_recid", "outcome"),
        ],
        [
            ("race", "age"), ("race", "priors_count"), ("race", "charge_degree"),
            ("age", "priors_count"), ("age", "charge_degree"),
            ("age", "two_year_recid"), ("priors_count", "two_year_recid"),
            ("charge_degree", "two_year_recid"), ("race", "two_year_recid"),
        ],
    )


class TestValidate:
    def test_chain_is_valid(self):
        spec = chain()
        assert validate(spec) is spec

    def test_two_cycle_detected(self):
        spec = DagSpec.build(
            [("A", "treatment"), ("X1", "numeric"), ("X2", "numeric")],
            [("A", "X1"), ("X1", "X2"), ("X2", "X1")],
        )
        with pytest.raises(CycleDetected) as info:
            validate(spec)
        assert set(info.value.cycle) == {"X1", "X2"}

    def test_compas_graph_is_valid(self):
        validate(compas())

    def test_unknown_node(self):
        spec = DagSpec.build([("A", "treatment"), ("X1", "numeric")], [("A", "X9")])
        with pytest.raises(UnknownNode):
            validate(spec)

    def test_multiple_treatments(self):
        spec = DagSpec.build([("A", "treatment"), ("B", "treatment"), ("X1", "numeric")])
        with pytest.raises(MultipleTreatments):
            validate(spec)

    def test_edge_into_treatment(self):
        spec = DagSpec.build([("A", "treatment"), ("X1", "numeric")], [("X1", "A")])
        with pytest.raises(EdgeIntoTreatment):
            validate(spec)

    def test_edge_from_outcome(self):
        spec = DagSpec.build([("A", "treatment"), ("X1", "numeric"), ("Y", "outcome")], [("Y", "X1")])
        with pytest.raises(EdgeFromOutcome):
            validate(spec)

    def test_self_loop(self):
        spec = DagSpec.build([("A", "treatment"), ("X1", "numeric")], [("X1", "X1")])
        with pytest.raises(CycleDetected):
            validate(spec)

    def test_unknown_kind(self):
        with pytest.raises(InvalidDag):
            DagSpec.build([("A", "confounder")])

    def test_idempotent(self):
        spec = compas()
        assert validate(validate(spec)) == validate(spec)


class TestOrder:
    def test_chain(self):
        assert list(topological_order(chain())) == ["X1", "X2"]

    def test_compas(self):
        assert list(topological_order(compas())) == ["age", "priors_count", "charge_degree"]

    def test_incomparable_follow_declaration(self):
        spec = DagSpec.build([("A", "treatment"), ("X1", "numeric"), ("X2", "numeric")],
                             [("A", "X1"), ("A", "X2")])
        assert list(topological_order(spec)) == ["X1", "X2"]
        swapped = DagSpec.build([("A", "treatment"), ("X2", "numeric"), ("X1", "numeric")],
                                [("A", "X1"), ("A", "X2")])
        assert list(topological_order(swapped)) == ["X2", "X1"]

    def test_check_order_rejects_parent_after_child(self):
        with pytest.raises(InvalidDag):
            check_order(chain(), ["X2", "X1"])
        assert list(check_order(chain(), ["X1", "X2"])) == ["X1", "X2"]


class TestParents:
    def test_root(self):
        assert parents_of(chain(), "X1") == []

    def test_child(self):
        assert parents_of(chain(), "X2") == ["X1"]

    def test_compas(self):
        assert parents_of(compas(), "priors_count") == ["age"]
        assert parents_of(compas(), "charge_degree") == ["age"]

    def test_unknown(self):
        with pytest.raises(UnknownNode):
            parents_of(chain(), "Z")


def test_json_round_trip(tmp_path):
    payload = {
        "nodes": [{"name": "X1", "kind": "mediator-numeric"}, {"name": "X2", "kind": "mediator-categorical"}],
        "edges": [["A", "X1"], ["X1", "X2"], ["X2", "Y"]],
        "treatment": "A",
        "outcome": "Y",
    }
    path = tmp_path / "dag.json"
    path.write_text(json.dumps(payload))
    spec = validate(DagSpec.from_json(path))
    assert spec.treatment == "A" and spec.outcome == "Y"
    assert list(spec.mediators) == ["X1", "X2"]
    assert spec.is_categorical("X2")
    assert DagSpec.from_dict(spec.to_dict()) == spec


# --- properties -------------------------------------------------------------------------


@st.composite
def random_dags(draw, allow_cycles=False):
    d = draw(st.integers(1, 7))
    names = [f"M{i}" for i in range(d)]
    rank = draw(st.permutations(list(range(d))))
    edges = []
    for i in range(d):
        for j in range(d):
            if i != j and draw(st.booleans()) and draw(st.booleans()):
                if allow_cycles or rank[i] < rank[j]:
                    edges.append((names[i], names[j]))
    declared = draw(st.permutations(names))
    nodes = [("A", "treatment")] + [(n, "numeric") for n in declared]
    return DagSpec.build(nodes, [("A", n) for n in names] + edges)


def mediator_graph(spec):
    g = nx.DiGraph()
    g.add_nodes_from(spec.mediators)
    g.add_edges_from(spec.mediator_edges())
    return g


@settings(max_examples=200, deadline=None)
@given(random_dags(allow_cycles=True))
def test_cycle_detection_agrees_with_networkx(spec):
    g = mediator_graph(spec)
    if nx.is_directed_acyclic_graph(g):
        validate(spec)
        assert len(topological_order(spec)) == len(spec.mediators)
    else:
        with pytest.raises(CycleDetected) as info:
            validate(spec)
        cycle = info.value.cycle
        # the named cycle is closed: first node repeated at the end
        assert cycle[0] == cycle[-1]
        assert all(g.has_edge(a, b) for a, b in zip(cycle, cycle[1:]))


@settings(max_examples=200, deadline=None)
@given(random_dags())
def test_prefix_contains_ancestors(spec):
    order = list(topological_order(validate(spec)))
    g = mediator_graph(spec)
    assert sorted(order) == sorted(spec.mediators)
    for j, name in enumerate(order):
        assert nx.ancestors(g, name) <= set(order[:j])


@settings(max_examples=100, deadline=None)
@given(random_dags(), st.randoms(use_true_random=False))
def test_declaration_permutation_only_moves_incomparable_nodes(spec, rnd):
    order = list(topological_order(spec))
    g = mediator_graph(spec)
    reordered = list(spec.nodes[1:])
    rnd.shuffle(reordered)
    other = DagSpec((spec.nodes[0], *reordered), spec.edges)
    order2 = list(topological_order(other))
    assert sorted(order2) == sorted(order)
    # comparable pairs keep their relative position
    for a in order:
        for b in nx.descendants(g, a):
            assert order2.index(a) < order2.index(b)
