"""DOT emission with popularity filtering.

Output is deterministic byte-for-byte: nodes sort by canonical path,
edges follow import-table order within each source node. Hiding the few
hyper-popular libraries is what turns the full-system hairball into
something a human can read.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from depex.elf import FileKind
from depex.metrics import popularity
from depex.store import DependencyGraph


@dataclass
class DotOptions:
    hide_top_k: int = 0
    hide_names: list[str] = field(default_factory=list)
    roots: list[int] | None = None


def _quote(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def _node_attrs(kind: FileKind) -> str:
    if kind is FileKind.EXECUTABLE_BINARY:
        return "shape=box"
    return "shape=ellipse"


def emit_dot(graph: DependencyGraph, options: DotOptions | None = None) -> str:
    options = options or DotOptions()

    visible = set(graph.nodes)
    if options.roots is not None:
        keep: set[int] = set()
        for root in options.roots:
            graph.require(root)
            keep.add(root)
            keep |= graph.reachable_from(root)
        visible &= keep

    if options.hide_top_k > 0:
        pop = popularity(graph)
        ranked = sorted(
            graph.nodes,
            key=lambda n: (-pop[n], graph.nodes[n].canonical_path),
        )
        visible -= set(ranked[: options.hide_top_k])

    if options.hide_names:
        visible = {
            n for n in visible
            if not any(s in graph.nodes[n].canonical_path for s in options.hide_names)
        }

    lines = ["digraph dependencies {"]
    for node_id in sorted(visible, key=lambda n: graph.nodes[n].canonical_path):
        node = graph.nodes[node_id]
        lines.append(f"    {_quote(node.canonical_path)} [{_node_attrs(node.kind)}];")

    # one synthetic node per distinct unresolved name keeps breakage visible
    missing_shown = sorted({
        name for from_id, name in graph.missing_names if from_id in visible
    })
    for name in missing_shown:
        lines.append(
            f"    {_quote('missing:' + name)} "
            f"[label={_quote(name)}, shape=ellipse, style=dashed, color=red];")

    for node_id in sorted(visible, key=lambda n: graph.nodes[n].canonical_path):
        src = _quote(graph.nodes[node_id].canonical_path)
        for edge in graph.out_edges(node_id):
            if edge.resolved:
                if edge.to_node not in visible:
                    continue
                dst = _quote(graph.nodes[edge.to_node].canonical_path)
            else:
                dst = _quote("missing:" + edge.needed_name)
            lines.append(f"    {src} -> {dst};")
    lines.append("}")
    return "\n".join(lines) + "\n"
