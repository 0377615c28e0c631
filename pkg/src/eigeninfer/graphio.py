"""Edge-list loading for user-supplied graphs.

The edge file holds one edge per line as two integer vertex ids
separated by whitespace or commas; blank lines and lines starting with
'#' or '%' are skipped.  Vertex labels, when available, live in a
sibling file (same stem, '.node_labels' or '.labels' suffix) with
either one label per line in vertex order or 'vertex label' pairs.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import ObservedMatrix

LABEL_SUFFIXES = (".node_labels", ".labels")


@dataclass(frozen=True)
class LabeledGraph:
    adjacency: ObservedMatrix
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.labels is not None and len(self.labels) != self.adjacency.n:
            raise ValueError(
                f"label count {len(self.labels)} does not match "
                f"{self.adjacency.n} vertices"
            )

    @property
    def n(self) -> int:
        return self.adjacency.n


def _parse_int_fields(line: str, lineno: int, path, want: int):
    parts = line.replace(",", " ").split()
    if len(parts) < want:
        raise ValueError(f"{path}:{lineno}: expected {want} integers, got '{line.strip()}'")
    try:
        return [int(p) for p in parts[:want]]
    except ValueError as exc:
        raise ValueError(f"{path}:{lineno}: malformed integer in '{line.strip()}'") from exc


def _iter_data_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith(("#", "%")):
                continue
            yield lineno, line


def _load_labels(label_path, n: int, index_base: int) -> np.ndarray:
    rows = list(_iter_data_lines(label_path))
    labels = np.full(n, -1, dtype=int)
    pairwise = all(len(line.replace(",", " ").split()) >= 2 for _, line in rows)
    if pairwise and rows:
        for lineno, line in rows:
            v, lab = _parse_int_fields(line, lineno, label_path, 2)
            v -= index_base
            if not (0 <= v < n):
                raise ValueError(f"{label_path}:{lineno}: vertex {v + index_base} out of range")
            labels[v] = lab
    else:
        if len(rows) != n:
            raise ValueError(
                f"{label_path}: {len(rows)} labels for {n} vertices"
            )
        for k, (lineno, line) in enumerate(rows):
            labels[k] = _parse_int_fields(line, lineno, label_path, 1)[0]
    if (labels == -1).any():
        missing = int(np.argmax(labels == -1))
        raise ValueError(f"{label_path}: no label for vertex {missing + index_base}")
    return labels


def load_edge_list(path, n_hint: int | None = None, index_base: int = 1) -> LabeledGraph:
    """Build a 0/1 symmetric adjacency matrix from an edge-list file.

    Duplicate and reciprocal edges are idempotent.  ``n_hint`` fixes the
    vertex count (indexes outside it are errors); otherwise the largest
    vertex id seen determines it.
    """
    if index_base not in (0, 1):
        raise ValueError("index_base must be 0 or 1")
    edges = []
    max_id = -1
    for lineno, line in _iter_data_lines(path):
        u, v = _parse_int_fields(line, lineno, path, 2)
        u -= index_base
        v -= index_base
        if u < 0 or v < 0:
            raise ValueError(f"{path}:{lineno}: vertex id below index base")
        if n_hint is not None and (u >= n_hint or v >= n_hint):
            raise ValueError(
                f"{path}:{lineno}: vertex {max(u, v) + index_base} out of range "
                f"for n={n_hint}"
            )
        edges.append((u, v))
        max_id = max(max_id, u, v)
    n = n_hint if n_hint is not None else max_id + 1
    if n <= 0:
        raise ValueError(f"{path}: no vertices found")
    A = np.zeros((n, n))
    for u, v in edges:
        A[u, v] = 1.0
        A[v, u] = 1.0

    labels = None
    stem, _ = os.path.splitext(str(path))
    for suffix in LABEL_SUFFIXES:
        candidate = stem + suffix
        if os.path.exists(candidate):
            labels = _load_labels(candidate, n, index_base)
            break
    return LabeledGraph(adjacency=ObservedMatrix(A=A), labels=labels)
