"""Composition plans: a DAG of service invocations.

Plan files are line oriented::

    # comment
    node DS1 service=DS1 k=3 input=const:city=lyon
    node DS2 service=DS2 k=2 input=parent
    edge DS1 DS2
    alpha=5 consent=off
"""

from __future__ import annotations

import hashlib
import shlex
from dataclasses import dataclass, field
from graphlib import CycleError, TopologicalSorter
from pathlib import Path

from .errors import NoParentsError, PlanError


@dataclass(frozen=True)
class PlanNode:
    node_id: str
    service: str
    k: int = 1
    const: dict[str, str] | None = None  # None means the input is an identifier from the parents
    identifier_attr: str = "ssn"

    @property
    def binds_parent(self) -> bool:
        return self.const is None


@dataclass
class CompositionPlan:
    nodes: dict[str, PlanNode]
    edges: list[tuple[str, str]]
    params: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for a, b in self.edges:
            for n in (a, b):
                if n not in self.nodes:
                    raise PlanError(f"edge {a}->{b} references unknown node {n!r}")
        for node in self.nodes.values():
            if node.k < 1:
                raise PlanError(f"node {node.node_id}: k must be >= 1")
        self._parents: dict[str, list[str]] = {n: [] for n in self.nodes}
        for a, b in self.edges:
            if a not in self._parents[b]:
                self._parents[b].append(a)
        for n in self._parents:
            self._parents[n].sort()
        try:
            self._order = self._topo()
        except CycleError as exc:
            raise PlanError(f"plan has a cycle: {' -> '.join(exc.args[1])}") from exc
        for node in self.nodes.values():
            has_parents = bool(self._parents[node.node_id])
            if has_parents and not node.binds_parent:
                raise PlanError(f"node {node.node_id} has parents but binds a constant")
            if not has_parents and node.binds_parent:
                raise PlanError(f"root node {node.node_id} must bind an end-user constant")

    def _topo(self) -> list[str]:
        sorter = TopologicalSorter({n: self._parents[n] for n in sorted(self.nodes)})
        sorter.prepare()
        order: list[str] = []
        while sorter.is_active():
            ready = sorted(sorter.get_ready())
            order.extend(ready)
            sorter.done(*ready)
        return order

    def layers(self) -> list[list[str]]:
        """Topological layers; nodes within a layer are independent."""
        depth: dict[str, int] = {}
        for n in self._order:
            depth[n] = max((depth[p] + 1 for p in self._parents[n]), default=0)
        out: list[list[str]] = [[] for _ in range(max(depth.values(), default=-1) + 1)]
        for n in self._order:
            out[depth[n]].append(n)
        return out

    @property
    def order(self) -> list[str]:
        return list(self._order)

    def parents(self, node_id: str) -> list[str]:
        return list(self._parents[node_id])

    def children(self, node_id: str) -> list[str]:
        return sorted({b for a, b in self.edges if a == node_id})

    def ancestors(self, node_id: str) -> set[str]:
        seen: set[str] = set()
        stack = list(self._parents[node_id])
        while stack:
            n = stack.pop()
            if n not in seen:
                seen.add(n)
                stack.extend(self._parents[n])
        return seen

    @property
    def roots(self) -> list[str]:
        return [n for n in self._order if not self._parents[n]]

    @property
    def leaves(self) -> list[str]:
        with_children = {a for a, _ in self.edges}
        return sorted(n for n in self.nodes if n not in with_children)

    def edge_label(self, node_id: str) -> str:
        parents = self._parents[node_id]
        return "+".join(parents) if parents else "user"

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:16]

    def to_text(self) -> str:
        lines = []
        for n in sorted(self.nodes):
            node = self.nodes[n]
            if node.const is None:
                binding = "parent"
            else:
                binding = "const:" + ",".join(f"{a}={v}" for a, v in node.const.items())
            extra = "" if node.identifier_attr == "ssn" else f" id={node.identifier_attr}"
            lines.append(f"node {n} service={node.service} k={node.k} input={binding}{extra}")
        for a, b in sorted(self.edges):
            lines.append(f"edge {a} {b}")
        if self.params:
            lines.append(" ".join(f"{k}={v}" for k, v in sorted(self.params.items())))
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> CompositionPlan:
        nodes: dict[str, PlanNode] = {}
        edges: list[tuple[str, str]] = []
        params: dict[str, str] = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            words = shlex.split(line)
            head = words[0]
            if head == "node":
                if len(words) < 2:
                    raise PlanError(f"line {lineno}: node needs an id")
                node_id = words[1]
                if node_id in nodes:
                    raise PlanError(f"line {lineno}: duplicate node {node_id}")
                nodes[node_id] = _parse_node(node_id, words[2:], lineno)
            elif head == "edge":
                if len(words) != 3:
                    raise PlanError(f"line {lineno}: edge needs two node ids")
                edges.append((words[1], words[2]))
            elif all("=" in w for w in words):
                for w in words:
                    k, _, v = w.partition("=")
                    params[k] = v
            else:
                raise PlanError(f"line {lineno}: cannot parse {raw!r}")
        return cls(nodes, edges, params)

    @classmethod
    def load(cls, path: str | Path) -> CompositionPlan:
        return cls.parse(Path(path).read_text(encoding="utf-8"))


def _parse_node(node_id: str, words: list[str], lineno: int) -> PlanNode:
    fields: dict[str, str] = {}
    for w in words:
        key, sep, value = w.partition("=")
        if not sep:
            raise PlanError(f"line {lineno}: expected key=value, got {w!r}")
        fields[key] = value
    binding = fields.get("input", "parent")
    const = None
    if binding.startswith("const:"):
        const = {}
        for pair in binding[len("const:") :].split(","):
            attr, sep, val = pair.partition("=")
            if not sep or not attr:
                raise PlanError(f"line {lineno}: bad constant binding {binding!r}")
            const[attr] = val
    elif binding != "parent":
        raise PlanError(f"line {lineno}: input must be parent or const:<attr>=<val>")
    try:
        k = int(fields.get("k", "1"))
    except ValueError as exc:
        raise PlanError(f"line {lineno}: k must be an integer") from exc
    return PlanNode(
        node_id=node_id,
        service=fields.get("service", node_id),
        k=k,
        const=const,
        identifier_attr=fields.get("id", "ssn"),
    )


def effective_k(plan: CompositionPlan, node_id: str) -> int:
    """Largest protection factor among the node's direct and indirect parents."""
    ancestors = plan.ancestors(node_id)
    if not ancestors:
        raise NoParentsError(f"node {node_id} is a root and has no parents")
    return max(plan.nodes[a].k for a in ancestors)
