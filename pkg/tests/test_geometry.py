import pytest
from hypothesis import given, settings, strategies as st

from hcmsim.errors import (
    CellNotAdjacent,
    DegreeExceeded,
    Disconnected,
    DuplicateCell,
    EmbeddingMismatch,
    InvalidShape,
)
from hcmsim.geometry import (
    NAMED_TARGETS,
    Shape,
    canonicalize,
    exact_cover,
    grow_options,
    has_placement,
    named_target,
    placements_in,
    rotate_cell,
    target_from_cells,
    validate_target,
)


def fixed_polyominoes(n):
    """All translation-normalized polyominoes of n cells, by growth."""
    shapes = {frozenset({(0, 0)})}
    for _ in range(n - 1):
        grown = set()
        for s in shapes:
            for x, y in s:
                for c in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
                    if c not in s:
                        t = s | {c}
                        mx = min(a for a, _ in t)
                        my = min(b for _, b in t)
                        grown.add(frozenset((a - mx, b - my) for a, b in t))
        shapes = grown
    return shapes


@pytest.mark.parametrize("n, fixed, one_sided", [(1, 1, 1), (2, 2, 1), (3, 6, 2),
                                                 (4, 19, 7), (5, 63, 18), (6, 216, 60)])
def test_canonical_classes_match_polyomino_counts(n, fixed, one_sided):
    shapes = fixed_polyominoes(n)
    assert len(shapes) == fixed
    assert len({canonicalize(s) for s in shapes}) == one_sided


def test_reflections_are_distinct():
    s = [(0, 0), (1, 0), (2, 0), (2, 1)]
    mirror = [(-x, y) for x, y in s]
    assert canonicalize(s) != canonicalize(mirror)


@pytest.mark.parametrize("cells, sym", [([(0, 0)], 4), ([(0, 0), (1, 0)], 2),
                                        ([(0, 0), (1, 0), (0, 1), (1, 1)], 4),
                                        ([(0, 0), (1, 0), (0, 1)], 1)])
def test_symmetry_count(cells, sym):
    assert canonicalize(cells).symmetry_count == sym


cell_sets = st.sets(st.tuples(st.integers(-3, 3), st.integers(-3, 3)), min_size=1, max_size=8)


def connected(cells):
    try:
        Shape(cells)
        return True
    except InvalidShape:
        return False


@settings(max_examples=200, deadline=None)
@given(cell_sets.filter(connected), st.integers(0, 3), st.integers(-5, 5), st.integers(-5, 5))
def test_canonical_invariant_under_rigid_motion(cells, q, dx, dy):
    moved = [(x + dx, y + dy) for x, y in (rotate_cell(c, q) for c in cells)]
    assert canonicalize(cells) == canonicalize(moved)


@settings(max_examples=200, deadline=None)
@given(cell_sets.filter(connected), cell_sets.filter(connected))
def test_placement_enumeration_agrees_with_scan(sub, target):
    found = placements_in(sub, target)
    assert bool(found) == has_placement(sub, target)
    for p in found:
        assert {p.apply(c) for c in sub} <= set(target)


def test_shape_rejects_bad_input():
    with pytest.raises(InvalidShape):
        Shape([])
    with pytest.raises(InvalidShape):
        Shape([(0, 0), (2, 0)])
    with pytest.raises(InvalidShape):
        Shape([(i, 0) for i in range(26)])


def test_placements_of_domino_in_square():
    square = NAMED_TARGETS["square-4"]
    # 4 seats for a domino, each reachable by two rotations
    assert len(placements_in([(0, 0), (1, 0)], square)) == 8
    assert not has_placement([(0, 0), (1, 0), (2, 0)], square)


def test_grow_options():
    line5 = NAMED_TARGETS["line-5"]
    assert grow_options([(0, 0), (1, 0)], (2, 0), line5)
    assert not grow_options([(0, 0), (1, 0)], (0, 1), line5)
    with pytest.raises(CellNotAdjacent):
        grow_options([(0, 0)], (5, 5), line5)
    with pytest.raises(CellNotAdjacent):
        grow_options([(0, 0)], (0, 0), line5)


def test_exact_cover():
    assert exact_cover([(5, 5), (5, 6), (5, 7)], NAMED_TARGETS["line-3"])
    assert not exact_cover([(0, 0), (1, 0), (1, 1)], NAMED_TARGETS["line-3"])


def test_target_validation():
    t = named_target("rect-2x3")
    assert t.node_count == 6 and len(t.edges) == 7
    with pytest.raises(Disconnected):
        validate_target(2, [], [(0, 0), (3, 0)])
    with pytest.raises(DuplicateCell):
        validate_target(2, [(0, 1)], [(0, 0), (0, 0)])
    with pytest.raises(EmbeddingMismatch):
        validate_target(3, [(0, 1)], [(0, 0), (1, 0), (2, 0)])
    with pytest.raises(DegreeExceeded):
        validate_target(6, [(0, k) for k in range(1, 6)],
                        [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1), (1, 1)])


def test_target_roundtrip():
    t = target_from_cells(NAMED_TARGETS["l-tromino"])
    d = t.to_json()
    assert validate_target(d["nodes"], d["edges"], d["cells"]) == t
