"""Mediator graphs: validation, topological ordering and parent lookup.

The treatment node is an implicit parent of every mediator, so the
sequential recursion only ever needs the mediator-to-mediator edges.
Edges that touch the treatment or the outcome are kept in the spec (they
document the graph) but are ignored when ordering mediators.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import (
    CycleDetected,
    EdgeFromOutcome,
    EdgeIntoTreatment,
    InvalidDag,
    MultipleTreatments,
    UnknownNode,
)

TREATMENT = "treatment"
OUTCOME = "outcome"
NUMERIC = "mediator-numeric"
CATEGORICAL = "mediator-categorical"

_KIND_ALIASES = {
    "treatment": TREATMENT,
    "outcome": OUTCOME,
    "mediator-numeric": NUMERIC,
    "numeric": NUMERIC,
    "mediator-categorical": CATEGORICAL,
    "categorical": CATEGORICAL,
}


@dataclass(frozen=True)
class Node:
    name: str
    kind: str


@dataclass(frozen=True)
class DagSpec:
    """Declared nodes and directed edges of a mediator graph.

    Declaration order matters: it breaks ties in :func:`topological_order`.
    """

    nodes: tuple[Node, ...]
    edges: tuple[tuple[str, str], ...]

    @classmethod
    def build(
        cls,
        nodes: Iterable[tuple[str, str] | Node],
        edges: Iterable[Sequence[str]] = (),
    ) -> "DagSpec":
        parsed = []
        for node in nodes:
            if isinstance(node, Node):
                name, kind = node.name, node.kind
            else:
                name, kind = node
            if kind not in _KIND_ALIASES:
                raise InvalidDag(f"node {name!r} has unknown kind {kind!r}")
            parsed.append(Node(str(name), _KIND_ALIASES[kind]))
        parsed_edges = []
        for edge in edges:
            if len(edge) != 2:
                raise InvalidDag(f"edge {edge!r} must have exactly two endpoints")
            parsed_edges.append((str(edge[0]), str(edge[1])))
        return cls(tuple(parsed), tuple(parsed_edges))

    @classmethod
    def from_dict(cls, payload: dict) -> "DagSpec":
        nodes = [(n["name"], n["kind"]) for n in payload.get("nodes", [])]
        declared = {name for name, _ in nodes}
        # "treatment"/"outcome" keys may name nodes that are not listed
        treatment = payload.get("treatment")
        if treatment is not None and treatment not in declared:
            nodes.insert(0, (treatment, TREATMENT))
        outcome = payload.get("outcome")
        if outcome is not None and outcome not in declared:
            nodes.append((outcome, OUTCOME))
        spec = cls.build(nodes, payload.get("edges", []))
        if treatment is not None and spec.treatment != treatment:
            raise InvalidDag(f"'treatment' key names {treatment!r} but node kinds disagree")
        if outcome is not None and spec.outcome != outcome:
            raise InvalidDag(f"'outcome' key names {outcome!r} but node kinds disagree")
        return spec

    @classmethod
    def from_json(cls, path: str | Path) -> "DagSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        payload: dict = {
            "nodes": [{"name": n.name, "kind": n.kind} for n in self.nodes],
            "edges": [list(e) for e in self.edges],
        }
        if self.treatment is not None:
            payload["treatment"] = self.treatment
        if self.outcome is not None:
            payload["outcome"] = self.outcome
        return payload

    # -- lookups ---------------------------------------------------------------

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n.name for n in self.nodes)

    def kind(self, name: str) -> str:
        for node in self.nodes:
            if node.name == name:
                return node.kind
        raise UnknownNode(f"unknown node {name!r}")

    @property
    def treatment(self) -> str | None:
        found = [n.name for n in self.nodes if n.kind == TREATMENT]
        return found[0] if found else None

    @property
    def outcome(self) -> str | None:
        found = [n.name for n in self.nodes if n.kind == OUTCOME]
        return found[0] if found else None

    @property
    def mediators(self) -> tuple[str, ...]:
        return tuple(n.name for n in self.nodes if n.kind in (NUMERIC, CATEGORICAL))

    def is_categorical(self, name: str) -> bool:
        return self.kind(name) == CATEGORICAL

    def mediator_edges(self) -> list[tuple[str, str]]:
        mediators = set(self.mediators)
        return [(a, b) for a, b in self.edges if a in mediators and b in mediators]


@dataclass(frozen=True)
class TopologicalOrder:
    order: tuple[str, ...]

    def __iter__(self):
        return iter(self.order)

    def __len__(self) -> int:
        return len(self.order)

    def __getitem__(self, j):
        return self.order[j]

    def index(self, name: str) -> int:
        return self.order.index(name)


def validate(spec: DagSpec) -> DagSpec:
    """Check the structural invariants of ``spec`` and return it unchanged."""
    names = [n.name for n in spec.nodes]
    seen: set[str] = set()
    for name in names:
        if name in seen:
            raise InvalidDag(f"node {name!r} declared twice")
        seen.add(name)

    treatments = [n.name for n in spec.nodes if n.kind == TREATMENT]
    if len(treatments) > 1:
        raise MultipleTreatments(f"expected one treatment node, got {treatments}")
    if not treatments:
        raise InvalidDag("no treatment node declared")
    outcomes = [n.name for n in spec.nodes if n.kind == OUTCOME]
    if len(outcomes) > 1:
        raise InvalidDag(f"at most one outcome node allowed, got {outcomes}")

    treatment = treatments[0]
    outcome = outcomes[0] if outcomes else None
    for a, b in spec.edges:
        for end in (a, b):
            if end not in seen:
                raise UnknownNode(f"edge ({a!r}, {b!r}) references undeclared node {end!r}")
        if a == b:
            raise CycleDetected([a, a])
        if b == treatment:
            raise EdgeIntoTreatment(f"edge ({a!r}, {b!r}) points into the treatment node")
        if outcome is not None and a == outcome:
            raise EdgeFromOutcome(f"edge ({a!r}, {b!r}) leaves the outcome node")

    cycle = _find_cycle(spec.mediators, spec.mediator_edges())
    if cycle:
        raise CycleDetected(cycle)
    return spec


def topological_order(spec: DagSpec) -> TopologicalOrder:
    """Kahn's algorithm over the mediators, ties broken by declaration order."""
    mediators = spec.mediators
    rank = {name: i for i, name in enumerate(mediators)}
    indegree = {name: 0 for name in mediators}
    children: dict[str, list[str]] = {name: [] for name in mediators}
    for a, b in spec.mediator_edges():
        children[a].append(b)
        indegree[b] += 1

    ready = [rank[name] for name in mediators if indegree[name] == 0]
    heapq.heapify(ready)
    order: list[str] = []
    while ready:
        name = mediators[heapq.heappop(ready)]
        order.append(name)
        for child in children[name]:
            indegree[child] -= 1
            if indegree[child] == 0:
                heapq.heappush(ready, rank[child])

    if len(order) != len(mediators):
        remaining = [m for m in mediators if m not in set(order)]
        edges = [(a, b) for a, b in spec.mediator_edges() if a in remaining and b in remaining]
        raise CycleDetected(_find_cycle(remaining, edges) or remaining)
    return TopologicalOrder(tuple(order))


def check_order(spec: DagSpec, order: Sequence[str]) -> TopologicalOrder:
    """Validate a user-supplied ordering of the mediators."""
    order = tuple(order)
    mediators = set(spec.mediators)
    if len(order) != len(mediators) or set(order) != mediators:
        raise InvalidDag(f"order {list(order)} is not a permutation of {sorted(mediators)}")
    position = {name: i for i, name in enumerate(order)}
    for a, b in spec.mediator_edges():
        if position[a] > position[b]:
            raise InvalidDag(f"order places {b!r} before its parent {a!r}")
    return TopologicalOrder(order)


def parents_of(spec: DagSpec, node: str) -> list[str]:
    """Mediator parents of ``node`` in declaration order (treatment excluded)."""
    if node not in spec.names:
        raise UnknownNode(f"unknown node {node!r}")
    if node not in spec.mediators:
        raise InvalidDag(f"{node!r} is not a mediator")
    parents = {a for a, b in spec.mediator_edges() if b == node}
    return [m for m in spec.mediators if m in parents]


def _find_cycle(nodes: Sequence[str], edges: Sequence[tuple[str, str]]) -> list[str] | None:
    adjacency: dict[str, list[str]] = {n: [] for n in nodes}
    for a, b in edges:
        adjacency[a].append(b)
    state: dict[str, int] = {}  # 1 = on stack, 2 = finished
    stack: list[str] = []

    def visit(node: str) -> list[str] | None:
        state[node] = 1
        stack.append(node)
        for child in adjacency[node]:
            if state.get(child) == 1:
                return stack[stack.index(child):] + [child]
            if child not in state:
                found = visit(child)
                if found:
                    return found
        stack.pop()
        state[node] = 2
        return None

    for node in nodes:
        if node not in state:
            found = visit(node)
            if found:
                return found
    return None
