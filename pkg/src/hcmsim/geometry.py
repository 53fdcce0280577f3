"""Square-lattice shapes: canonical forms, rigid placements and target graphs.

Cells are ``(x, y)`` integer pairs, one cell per module edge. Shapes are
compared up to translation and the four planar rotations; reflections are
deliberately not identified because a module is never flipped over.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable

from .errors import (
    CellNotAdjacent,
    DegreeExceeded,
    Disconnected,
    DuplicateCell,
    EmbeddingMismatch,
    InvalidShape,
    TargetError,
)

Cell = tuple[int, int]

MAX_SHAPE_CELLS = 25
NEIGHBOR_STEPS: tuple[Cell, ...] = ((1, 0), (0, 1), (-1, 0), (0, -1))


def rotate_cell(cell: Cell, quarter_turns: int) -> Cell:
    x, y = cell
    q = quarter_turns % 4
    if q == 0:
        return (x, y)
    if q == 1:
        return (-y, x)
    if q == 2:
        return (-x, -y)
    return (y, -x)


def neighbors(cell: Cell) -> list[Cell]:
    x, y = cell
    return [(x + dx, y + dy) for dx, dy in NEIGHBOR_STEPS]


def is_adjacent(a: Cell, b: Cell) -> bool:
    return abs(a[0] - b[0]) + abs(a[1] - b[1]) == 1


def is_connected(cells: Iterable[Cell]) -> bool:
    cells = set(cells)
    if not cells:
        return False
    start = min(cells)
    seen = {start}
    stack = [start]
    while stack:
        for n in neighbors(stack.pop()):
            if n in cells and n not in seen:
                seen.add(n)
                stack.append(n)
    return len(seen) == len(cells)


@dataclass(frozen=True)
class Shape:
    """A non-empty, 4-connected set of lattice cells."""

    cells: frozenset

    def __init__(self, cells: Iterable[Cell]):
        cs = frozenset((int(x), int(y)) for x, y in cells)
        if not cs:
            raise InvalidShape("shape is empty")
        if len(cs) > MAX_SHAPE_CELLS:
            raise InvalidShape(f"shape has {len(cs)} cells, limit is {MAX_SHAPE_CELLS}")
        if not is_connected(cs):
            raise InvalidShape("shape is not 4-connected")
        object.__setattr__(self, "cells", cs)

    def __len__(self) -> int:
        return len(self.cells)

    def __iter__(self):
        return iter(sorted(self.cells))


@dataclass(frozen=True)
class CanonicalShape:
    cells: tuple[Cell, ...]
    symmetry_count: int

    def __len__(self) -> int:
        return len(self.cells)


@dataclass(frozen=True)
class Placement:
    """Rotate ``sub`` by ``rotation`` quarter-turns, then translate by ``offset``."""

    rotation: int
    offset: Cell

    def apply(self, cell: Cell) -> Cell:
        x, y = rotate_cell(cell, self.rotation)
        return (x + self.offset[0], y + self.offset[1])


def _normalized(cells: Iterable[Cell]) -> tuple[Cell, ...]:
    cells = list(cells)
    mx = min(c[0] for c in cells)
    my = min(c[1] for c in cells)
    return tuple(sorted((x - mx, y - my) for x, y in cells))


@lru_cache(maxsize=65536)
def _canonical(cells: frozenset) -> CanonicalShape:
    forms = [_normalized(rotate_cell(c, q) for c in cells) for q in range(4)]
    best = min(forms)
    return CanonicalShape(best, sum(1 for f in forms if f == best))


def _as_cells(shape) -> frozenset:
    if isinstance(shape, (Shape,)):
        return shape.cells
    if isinstance(shape, CanonicalShape):
        return frozenset(shape.cells)
    return Shape(shape).cells


def canonicalize(shape) -> CanonicalShape:
    """Translation- and rotation-invariant normal form of ``shape``."""
    return _canonical(_as_cells(shape))


@lru_cache(maxsize=65536)
def _placements(sub: frozenset, target: frozenset) -> tuple[Placement, ...]:
    if len(sub) > len(target):
        return ()
    out = []
    for q in range(4):
        rotated = [rotate_cell(c, q) for c in sub]
        anchor = min(rotated)
        for t in sorted(target):
            dx, dy = t[0] - anchor[0], t[1] - anchor[1]
            if all((x + dx, y + dy) in target for x, y in rotated):
                out.append(Placement(q, (dx, dy)))
    return tuple(out)


def placements_in(sub, target) -> list[Placement]:
    """Every rigid placement (rotation + translation) of ``sub`` inside ``target``."""
    return list(_placements(_as_cells(sub), _as_cells(target)))


def has_placement(sub, target) -> bool:
    sub = _as_cells(sub)
    target = _as_cells(target)
    if len(sub) > len(target):
        return False
    # bounding-box scan, independent of the anchor enumeration in _placements
    tx = [c[0] for c in target]
    ty = [c[1] for c in target]
    for q in range(4):
        rotated = [rotate_cell(c, q) for c in sub]
        sx = [c[0] for c in rotated]
        sy = [c[1] for c in rotated]
        for dx in range(min(tx) - min(sx), max(tx) - max(sx) + 1):
            for dy in range(min(ty) - min(sy), max(ty) - max(sy) + 1):
                if all((x + dx, y + dy) in target for x, y in rotated):
                    return True
    return False


def grow_options(sub, attach_cell: Cell, target) -> bool:
    """True iff ``sub`` plus ``attach_cell`` still fits somewhere in ``target``."""
    cells = _as_cells(sub)
    attach_cell = (int(attach_cell[0]), int(attach_cell[1]))
    if attach_cell in cells or not any(is_adjacent(attach_cell, c) for c in cells):
        raise CellNotAdjacent(f"{attach_cell} is not a free neighbor of the shape")
    return has_placement(cells | {attach_cell}, _as_cells(target))


def exact_cover(sub, target) -> bool:
    sub = _as_cells(sub)
    target = _as_cells(target)
    return len(sub) == len(target) and canonicalize(sub) == canonicalize(target)


@dataclass(frozen=True)
class TargetAssembly:
    node_count: int
    edges: frozenset
    embedding: tuple[Cell, ...]

    @property
    def shape(self) -> Shape:
        return Shape(self.embedding)

    @property
    def canonical(self) -> CanonicalShape:
        return canonicalize(self.shape)

    def to_json(self) -> dict:
        return {
            "nodes": self.node_count,
            "edges": sorted([list(sorted(e)) for e in self.edges]),
            "cells": [list(c) for c in self.embedding],
        }


def validate_target(node_count: int, edges, cells) -> TargetAssembly:
    if node_count < 1:
        raise TargetError("node_count must be at least 1")
    cells = [(int(c[0]), int(c[1])) for c in cells]
    if len(cells) != node_count:
        raise TargetError(f"expected {node_count} cells, got {len(cells)}")
    if len(set(cells)) != len(cells):
        raise DuplicateCell("two nodes share a lattice cell")
    edge_set = set()
    degree = [0] * node_count
    for e in edges:
        u, v = int(e[0]), int(e[1])
        if not (0 <= u < node_count and 0 <= v < node_count) or u == v:
            raise TargetError(f"bad edge {e!r}")
        key = frozenset((u, v))
        if key in edge_set:
            continue
        edge_set.add(key)
        degree[u] += 1
        degree[v] += 1
    if max(degree) > 4:
        raise DegreeExceeded("a node has more than four bonds")
    lattice_edges = {
        frozenset((u, v))
        for u in range(node_count)
        for v in range(u + 1, node_count)
        if is_adjacent(cells[u], cells[v])
    }
    if lattice_edges != edge_set:
        raise EmbeddingMismatch("edge set differs from the adjacency of the embedded cells")
    if not is_connected(cells):
        raise Disconnected("target graph is not connected")
    return TargetAssembly(node_count, frozenset(edge_set), tuple(cells))


def target_from_json(data: dict) -> TargetAssembly:
    return validate_target(int(data["nodes"]), data.get("edges", []), data["cells"])


def load_target(path) -> TargetAssembly:
    return target_from_json(json.loads(Path(path).read_text()))


def target_from_cells(cells: Iterable[Cell]) -> TargetAssembly:
    """Build the induced target graph of a lattice shape."""
    cells = list(cells)
    edges = [
        (u, v)
        for u in range(len(cells))
        for v in range(u + 1, len(cells))
        if is_adjacent(cells[u], cells[v])
    ]
    return validate_target(len(cells), edges, cells)


# named targets used by the experiments
NAMED_TARGETS: dict[str, tuple[Cell, ...]] = {
    "line-1": ((0, 0),),
    "line-2": ((0, 0), (1, 0)),
    "line-3": ((0, 0), (1, 0), (2, 0)),
    "l-tromino": ((0, 0), (1, 0), (0, 1)),
    "square-4": ((0, 0), (1, 0), (0, 1), (1, 1)),
    "line-5": ((0, 0), (1, 0), (2, 0), (3, 0), (4, 0)),
    "rect-2x3": ((0, 0), (1, 0), (2, 0), (0, 1), (1, 1), (2, 1)),
}


def named_target(name: str) -> TargetAssembly:
    return target_from_cells(NAMED_TARGETS[name])
