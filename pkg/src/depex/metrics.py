"""Coupling, popularity and health statistics over a loaded graph.

Direct coupling is what a developer sees in the import table; recursive
coupling is the whole iceberg underneath it. Everything here is read-only
over an immutable graph and safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from depex.elf import ElfSummary, FileKind
from depex.store import DependencyGraph


def direct_coupling(graph: DependencyGraph, node_id: int) -> int:
    """Number of libraries the file names explicitly, resolved or not."""
    return len(graph.out_edges(node_id))


def recursive_coupling(graph: DependencyGraph, node_id: int) -> int:
    """Distinct files reachable through resolved edges, excluding the file itself.

    Cycles are fine: each node counts once and the start node never counts.
    """
    return len(graph.reachable_from(node_id))


def popularity(graph: DependencyGraph) -> dict[int, int]:
    """Per node: how many distinct files import it directly."""
    return {
        node_id: len({e.from_node for e in graph.in_edges(node_id)})
        for node_id in graph.nodes
    }


@dataclass
class HealthReport:
    missing_names: set[str]
    directly_impacted: set[int]
    unused_libraries: set[int]


def health(graph: DependencyGraph) -> HealthReport:
    resolved_names = {e.needed_name for e in graph.edges() if e.resolved}
    missing_names = {name for _, name in graph.missing_names
                     if name not in resolved_names}
    directly_impacted = {node_id for node_id, _ in graph.missing_names}
    unused = {
        node_id for node_id, node in graph.nodes.items()
        if node.kind is FileKind.SHARED_LIBRARY and not graph.in_edges(node_id)
    }
    return HealthReport(missing_names, directly_impacted, unused)


@dataclass
class CoverageRow:
    """How much of one library's export surface one dependent actually uses."""

    satisfied: set[str]
    satisfied_count: int
    library_export_count: int
    coverage_ratio: float | None  # None when the library exports nothing


@dataclass
class CoverageReport:
    rows: dict[tuple[int, int], CoverageRow] = field(default_factory=dict)
    # imports no resolved library of the file satisfies
    unsatisfied_symbols: dict[int, set[str]] = field(default_factory=dict)
    # the weak subset of those; the loader tolerates their absence
    unsatisfied_optional: dict[int, set[str]] = field(default_factory=dict)


def coverage(graph: DependencyGraph,
             summaries: dict[str, ElfSummary]) -> CoverageReport:
    """Symbol-level reliance per resolved edge.

    A symbol exported by several of the file's libraries counts toward each
    of them; the loader's first-wins choice is deliberately not modeled.
    """
    report = CoverageReport()
    for node_id, node in graph.nodes.items():
        summary = summaries.get(node.canonical_path)
        if summary is None or not summary.undefined_symbols:
            continue
        imports = summary.undefined_symbols
        satisfied_anywhere: set[str] = set()
        for edge in graph.out_edges(node_id):
            if not edge.resolved:
                continue
            target = graph.nodes[edge.to_node]
            target_summary = summaries.get(target.canonical_path)
            if target_summary is None:
                continue
            exports = target_summary.exported_symbols
            satisfied = set(imports & exports)
            satisfied_anywhere |= satisfied
            report.rows[(node_id, edge.to_node)] = CoverageRow(
                satisfied=satisfied,
                satisfied_count=len(satisfied),
                library_export_count=len(exports),
                coverage_ratio=len(satisfied) / len(exports) if exports else None,
            )
        unsatisfied = set(imports - satisfied_anywhere)
        if unsatisfied:
            report.unsatisfied_symbols[node_id] = unsatisfied
            optional = unsatisfied & summary.weak_undefined_symbols
            if optional:
                report.unsatisfied_optional[node_id] = optional
    return report


@dataclass
class StatsSummary:
    executables: int
    libraries: int
    dependencies: int
    missing: int
    unused: int
    avg_direct: float
    avg_recursive: float
    max_direct: int
    max_recursive: int


def stats_summary(graph: DependencyGraph) -> StatsSummary:
    """Snapshot-level aggregate; averages span executables and libraries."""
    population = [
        node_id for node_id, node in graph.nodes.items()
        if node.kind in (FileKind.EXECUTABLE_BINARY, FileKind.SHARED_LIBRARY)
    ]
    executables = sum(
        1 for n in population
        if graph.nodes[n].kind is FileKind.EXECUTABLE_BINARY)
    libraries = len(population) - executables
    dependencies = sum(len(graph.out_edges(n)) for n in graph.nodes)
    report = health(graph)
    directs = [direct_coupling(graph, n) for n in population]
    recursives = [recursive_coupling(graph, n) for n in population]
    count = len(population)
    return StatsSummary(
        executables=executables,
        libraries=libraries,
        dependencies=dependencies,
        missing=len(report.missing_names),
        unused=len(report.unused_libraries),
        avg_direct=round(sum(directs) / count, 2) if count else 0.0,
        avg_recursive=round(sum(recursives) / count, 2) if count else 0.0,
        max_direct=max(directs, default=0),
        max_recursive=max(recursives, default=0),
    )
