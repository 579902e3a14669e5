from __future__ import annotations

import hashlib
import os
import subprocess
import sys
import textwrap

import pytest

from depex.elf import FileKind
from depex.resolver import Origin, SearchConfig
from depex.scanner import ScanOptions, scan_tree
from depex.store import (DependencyEdge, DependencyGraph, DuplicateLabel,
                         FileNode, StorageFailure, UnknownLabel, UnknownNode,
                         list_snapshots, load_graph, save_snapshot)
from graphbuild import EXE, LIB, build_graph


class FakeResult:
    """Duck-typed stand-in for a ScanResult when no tree is needed."""

    def __init__(self, nodes, edges, root="/fake"):
        self.nodes = nodes
        self.edges = edges
        self.root = root


def db_file(tmp_path) -> str:
    return str(tmp_path / "corpus.db")


def file_hash(path: str) -> str:
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()


def small_result():
    nodes = [
        FileNode(0, None, "/bin/app", ["/alias/app"], FileKind.EXECUTABLE_BINARY, None, 100),
        FileNode(1, None, "/lib/liba.so", [], FileKind.SHARED_LIBRARY, "liba.so", 200),
        FileNode(2, None, "/lib/libb.so", [], FileKind.SHARED_LIBRARY, "libb.so", 300),
    ]
    edges = [
        DependencyEdge(0, None, 0, "liba.so", 1, Origin.DEFAULT_DIR),
        DependencyEdge(1, None, 0, "libmissing.so", None, None),
        DependencyEdge(2, None, 1, "libb.so", 2, Origin.LDSO_CONF),
    ]
    return FakeResult(nodes, edges)


def test_roundtrip(tmp_path):
    db = db_file(tmp_path)
    save_snapshot(small_result(), "s1", db)
    graph = load_graph("s1", db)
    assert sorted(n.canonical_path for n in graph.nodes.values()) == \
        ["/bin/app", "/lib/liba.so", "/lib/libb.so"]
    app = next(n for n in graph.nodes.values() if n.canonical_path == "/bin/app")
    assert app.alias_paths == ["/alias/app"]
    assert app.kind is FileKind.EXECUTABLE_BINARY
    assert app.size_bytes == 100
    out = graph.out_edges(app.id)
    assert [(e.needed_name, e.resolved) for e in out] == \
        [("liba.so", True), ("libmissing.so", False)]
    assert out[0].origin is Origin.DEFAULT_DIR
    assert graph.missing_names == {(app.id, "libmissing.so")}


def test_scan_roundtrip_preserves_graph(demo_sysroot, tmp_path):
    db = db_file(tmp_path)
    result = scan_tree(ScanOptions(SearchConfig(demo_sysroot.root)))
    save_snapshot(result, "demo", db)
    graph = load_graph("demo", db)
    assert len(graph.nodes) == len(result.nodes)
    scan_edges = {(result.nodes[e.from_node].canonical_path, e.needed_name,
                   None if e.to_node is None else result.nodes[e.to_node].canonical_path)
                  for e in result.edges}
    db_edges = {(graph.nodes[e.from_node].canonical_path, e.needed_name,
                 None if e.to_node is None else graph.nodes[e.to_node].canonical_path)
                for e in graph.edges()}
    assert scan_edges == db_edges


def test_duplicate_label(tmp_path):
    db = db_file(tmp_path)
    save_snapshot(small_result(), "s1", db)
    with pytest.raises(DuplicateLabel):
        save_snapshot(small_result(), "s1", db)


def test_unknown_label(tmp_path):
    db = db_file(tmp_path)
    save_snapshot(small_result(), "s1", db)
    with pytest.raises(UnknownLabel):
        load_graph("nope", db)


def test_cycle_roundtrips(tmp_path):
    nodes = [
        FileNode(0, None, "/lib/liba.so", [], FileKind.SHARED_LIBRARY, "liba.so"),
        FileNode(1, None, "/lib/libb.so", [], FileKind.SHARED_LIBRARY, "libb.so"),
    ]
    edges = [
        DependencyEdge(0, None, 0, "libb.so", 1, Origin.DEFAULT_DIR),
        DependencyEdge(1, None, 1, "liba.so", 0, Origin.DEFAULT_DIR),
    ]
    db = db_file(tmp_path)
    save_snapshot(FakeResult(nodes, edges), "cyc", db)
    graph = load_graph("cyc", db)
    assert len(list(graph.edges())) == 2
    a = next(n.id for n in graph.nodes.values() if n.canonical_path == "/lib/liba.so")
    assert graph.reachable_from(a) == {n for n in graph.nodes} - {a}


def test_edge_to_unknown_node_is_storage_failure(tmp_path):
    nodes = [FileNode(0, None, "/bin/app", [], FileKind.EXECUTABLE_BINARY)]
    edges = [DependencyEdge(0, None, 0, "liba.so", 99, Origin.DEFAULT_DIR)]
    db = db_file(tmp_path)
    save_snapshot(small_result(), "keep", db)
    before = file_hash(db)
    with pytest.raises(StorageFailure):
        save_snapshot(FakeResult(nodes, edges), "bad", db)
    assert [s.label for s in list_snapshots(db)] == ["keep"]
    graph = load_graph("keep", db)
    assert len(graph.nodes) == 3
    assert file_hash(db) == before


def test_failed_save_leaves_db_unchanged(tmp_path):
    db = db_file(tmp_path)
    save_snapshot(small_result(), "s1", db)
    with pytest.raises(DuplicateLabel):
        save_snapshot(small_result(), "s1", db)
    assert [s.label for s in list_snapshots(db)] == ["s1"]


def test_duplicate_needed_name_rejected(tmp_path):
    nodes = [
        FileNode(0, None, "/bin/app", [], FileKind.EXECUTABLE_BINARY),
        FileNode(1, None, "/lib/liba.so", [], FileKind.SHARED_LIBRARY, "liba.so"),
    ]
    edges = [
        DependencyEdge(0, None, 0, "liba.so", 1, Origin.DEFAULT_DIR),
        DependencyEdge(1, None, 0, "liba.so", 1, Origin.DEFAULT_DIR),
    ]
    with pytest.raises(StorageFailure):
        save_snapshot(FakeResult(nodes, edges), "dup", db_file(tmp_path))


def test_not_elf_kind_rejected(tmp_path):
    nodes = [FileNode(0, None, "/etc/motd", [], FileKind.NOT_ELF)]
    with pytest.raises(StorageFailure):
        save_snapshot(FakeResult(nodes, []), "bad", db_file(tmp_path))


def test_kill_during_write_leaves_db_readable(tmp_path):
    db = db_file(tmp_path)
    save_snapshot(small_result(), "committed", db)
    # a writer that dies mid-transaction must leave no trace
    script = textwrap.dedent(f"""
        import os, sqlite3
        con = sqlite3.connect({db!r}, isolation_level=None)
        con.execute("BEGIN IMMEDIATE")
        cur = con.execute(
            "INSERT INTO snapshots(label, root_path, scanned_at, tool_version)"
            " VALUES ('doomed', '/', 'now', '0')")
        sid = cur.lastrowid
        for i in range(50):
            con.execute(
                "INSERT INTO files(snapshot_id, canonical_path, kind, size_bytes)"
                " VALUES (?, ?, 'library', 0)", (sid, f'/lib/lib{{i}}.so'))
        os._exit(1)
    """)
    proc = subprocess.run([sys.executable, "-c", script])
    assert proc.returncode == 1
    assert [s.label for s in list_snapshots(db)] == ["committed"]
    graph = load_graph("committed", db)
    assert len(graph.nodes) == 3


def test_list_snapshots_natural_order(tmp_path):
    db = db_file(tmp_path)
    for label in ["23.04", "5.04", "9.10"]:
        save_snapshot(small_result(), label, db)
    assert [s.label for s in list_snapshots(db)] == ["5.04", "9.10", "23.04"]


def test_list_snapshots_mixed_labels(tmp_path):
    db = db_file(tmp_path)
    for label in ["a", "5.04"]:
        save_snapshot(small_result(), label, db)
    assert [s.label for s in list_snapshots(db)] == ["5.04", "a"]


def test_list_snapshots_prefixed_versions(tmp_path):
    db = db_file(tmp_path)
    for label in ["ubuntu-23.04", "ubuntu-5.04", "ubuntu-9.10"]:
        save_snapshot(small_result(), label, db)
    assert [s.label for s in list_snapshots(db)] == \
        ["ubuntu-5.04", "ubuntu-9.10", "ubuntu-23.04"]


def test_list_snapshots_empty(tmp_path):
    db = db_file(tmp_path)
    assert list_snapshots(db) == []


def test_unknown_node_raises():
    graph = build_graph([("/a", EXE)], [])
    with pytest.raises(UnknownNode):
        graph.require(42)


def test_reverse_adjacency_is_exact_transpose():
    graph = build_graph(
        [("/a", EXE), ("/b", LIB), ("/c", LIB)],
        [(0, "b", 1), (0, "c", 2), (1, "c", 2), (2, "ghost", None)])
    forward = {(e.from_node, e.to_node) for e in graph.edges() if e.resolved}
    transposed = {(e.from_node, e.to_node)
                  for edges in graph.reverse_adjacency.values() for e in edges}
    assert forward == transposed
