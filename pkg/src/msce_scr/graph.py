"""Prefix-shared search graph over command emission-state sequences.

For a finite command list with one pronunciation each, a trie is the
deterministic, prefix-minimal machine accepting exactly those state
sequences. Node 0 is the root; other nodes consume one emission state and
may loop on it. Nodes are numbered breadth-first with children ordered by
emission state, so every parent id is smaller than its children's.
"""

from collections import deque
from dataclasses import dataclass

import numpy as np

START = -1


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class GraphNode:
    id: int
    emit_state: int
    arcs: tuple
    is_final: bool
    final_command: int
    depth: int


class DecodingGraph:
    """Immutable trie plus flat CSR arrays consumed by the decoder kernels."""

    def __init__(self, nodes, command_count):
        self.nodes = tuple(nodes)
        self.command_count = command_count
        self.max_command_states = max(n.depth for n in self.nodes)
        self.emit = np.array([n.emit_state for n in self.nodes], dtype=np.int64)
        self.depth = np.array([n.depth for n in self.nodes], dtype=np.int64)
        self.final_cmd = np.array(
            [n.final_command if n.is_final else -1 for n in self.nodes], dtype=np.int64
        )
        ptr = [0]
        idx = []
        for n in self.nodes:
            idx.extend(n.arcs)
            ptr.append(len(idx))
        self.child_ptr = np.array(ptr, dtype=np.int64)
        self.child_idx = np.array(idx, dtype=np.int64)
        self.final_node = {n.final_command: n.id for n in self.nodes if n.is_final}

    def __len__(self):
        return len(self.nodes)

    def dump(self):
        """Debug text: ``node_id emit_state [final:command_id] -> child,child``."""
        lines = []
        for n in self.nodes:
            fin = f" final:{n.final_command}" if n.is_final else ""
            emit = "START" if n.emit_state == START else str(n.emit_state)
            lines.append(f"{n.id} {emit}{fin} -> {','.join(map(str, n.arcs))}")
        return "\n".join(lines) + "\n"


def build_graph(command_set):
    commands = list(command_set.commands) if hasattr(command_set, "commands") else list(command_set)
    if not commands:
        raise GraphError("empty command set")
    seen = {}
    for c in commands:
        if c.states in seen:
            raise GraphError(
                f"commands {seen[c.states]} and {c.id} have identical state sequences"
            )
        seen[c.states] = c.id
    for c in commands:
        for k in range(1, len(c.states)):
            other = seen.get(c.states[:k])
            if other is not None:
                raise GraphError(
                    f"command {other} is a strict prefix of command {c.id}; "
                    "a final node would need an outgoing arc"
                )

    # nested dict trie keyed by emission state
    root = {}
    finals = {}
    for c in commands:
        node = root
        for s in c.states:
            node = node.setdefault(s, {})
        finals[id(node)] = c.id

    nodes = []
    queue = deque([(root, START, 0)])
    pending = []
    while queue:
        children, emit, depth = queue.popleft()
        pending.append((children, emit, depth))
        for s in sorted(children):
            queue.append((children[s], s, depth + 1))
    # children are enqueued in order, so ids follow BFS numbering
    next_id = 1
    for nid, (children, emit, depth) in enumerate(pending):
        arcs = tuple(range(next_id, next_id + len(children)))
        next_id += len(children)
        cmd = finals.get(id(children), -1)
        nodes.append(GraphNode(nid, emit, arcs, cmd >= 0, cmd, depth))
    return DecodingGraph(nodes, len(commands))


def graph_stats(graph):
    total = 1 + sum(n.depth for n in graph.nodes if n.is_final)
    return {
        "nodes": len(graph.nodes),
        "finals": sum(n.is_final for n in graph.nodes),
        "max_depth": graph.max_command_states,
        "sharing_ratio": 1.0 - len(graph.nodes) / total,
    }


def enumerate_paths(graph):
    """All root-to-final state sequences with their command ids, sorted."""
    paths = []
    stack = [(0, ())]
    while stack:
        nid, prefix = stack.pop()
        n = graph.nodes[nid]
        if nid != 0:
            prefix = prefix + (n.emit_state,)
        if n.is_final:
            paths.append((prefix, n.final_command))
        for c in n.arcs:
            stack.append((c, prefix))
    return sorted(paths)
