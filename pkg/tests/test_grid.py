import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mlgmsfem.errors import ConfigError
from mlgmsfem.grid import (build_hierarchy, contained_neighborhoods, neighborhood, neighborhoods,
                           overlapping_neighborhoods, oversample, sub_hierarchy,
                           transfer_indices)


def test_level_dims_and_sizes():
    h = build_hierarchy((200, 160), [(5, 4), (4, 4), (2, 2), (5, 5)], (1.0, 0.8))
    assert h.level_count == 4
    assert h.level_dims(1) == (5, 4)
    assert h.level_dims(2) == (20, 16)
    assert h.level_dims(3) == (40, 32)
    assert h.level_dims(4) == (200, 160)
    assert h.cell_size(1) == (40, 40)
    assert h.mesh_size(1) == pytest.approx((0.2, 0.2))
    assert h.h == pytest.approx((0.005, 0.005))


@pytest.mark.parametrize("dims,factors", [
    ((30, 30), [(4, 4), (5, 5)]),        # 20 != 30
    ((20, 20), [(4, 4)]),                 # one level
    ((20, 20), [(1, 4), (20, 5)]),        # factor < 2
    ((21, 20), [(3, 4), (5, 5)]),         # 21 not divisible by 5
])
def test_invalid_hierarchy(dims, factors):
    with pytest.raises(ConfigError):
        build_hierarchy(dims, factors)


def test_sub_hierarchy_merges_factors():
    h = build_hierarchy((200, 160), [(5, 4), (4, 4), (2, 2), (5, 5)])
    s = sub_hierarchy(h, [1, 4])
    assert s.coarsening == ((5, 4), (40, 40))
    s = sub_hierarchy(h, [1, 3, 4])
    assert s.coarsening == ((5, 4), (8, 8), (5, 5))
    with pytest.raises(ConfigError):
        sub_hierarchy(h, [2, 4])


def test_neighborhood_shapes(hier2):
    # corner vertex: one cell, interior: 2x2 cells
    assert neighborhood(hier2, 1, 0).rect == (0, 5, 0, 5)
    v = hier2.vertex_id(1, 2, 1)
    assert neighborhood(hier2, 1, v).rect == (5, 15, 0, 10)
    assert len(neighborhoods(hier2, 1)) == 25


def test_vertex_ids_row_major(hier2):
    for v in range(hier2.vertex_count(1)):
        ix, iy = hier2.vertex_coords(1, v)
        assert v == iy * 5 + ix
    with pytest.raises(IndexError):
        hier2.vertex_coords(1, 25)


def test_oversample_clips_to_domain(hier2):
    nb = neighborhood(hier2, 1, 0)
    o = oversample(nb, 4)
    assert o.rect == (0, 9, 0, 9)
    nb = neighborhood(hier2, 1, hier2.vertex_id(1, 2, 2))
    assert oversample(nb, 2).rect == (3, 17, 3, 17)


def _brute_contained(hier, region, level):
    sx, sy = hier.cell_size(level)
    vx, vy = hier.vertex_dims(level)
    out = []
    for k in range(vx * vy):
        ix, iy = k % vx, k // vx
        px, py = ix * sx, iy * sy
        if region.x0 < px < region.x1 and region.y0 < py < region.y1:
            out.append(k)
    return out


def _brute_overlapping(hier, region, level):
    out = []
    for k in range(hier.vertex_count(level)):
        nb = neighborhood(hier, level, k)
        if nb.x0 < region.x1 and region.x0 < nb.x1 and nb.y0 < region.y1 and region.y0 < nb.y1:
            out.append(k)
    return out


def test_containment_matches_enumeration(hier3):
    # every level-1 region against every level-2 vertex
    for region in neighborhoods(hier3, 1):
        got = sorted(contained_neighborhoods(hier3, region).tolist())
        assert got == _brute_contained(hier3, region, 2)
        for k in got:
            assert region.contains(neighborhood(hier3, 2, k))
        got = sorted(overlapping_neighborhoods(hier3, region).tolist())
        assert got == _brute_overlapping(hier3, region, 2)


def test_level2_neighborhoods_in_exactly_one_to_four_parents(hier3):
    counts = np.zeros(hier3.vertex_count(2), dtype=int)
    for region in neighborhoods(hier3, 1):
        counts[contained_neighborhoods(hier3, region)] += 1
    # vertices on level-1 grid lines lie on some region edge; the rest are inside >= 1
    assert counts.max() <= 4


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 24), st.integers(0, 24), st.integers(0, 3), st.integers(0, 3))
def test_transfer_indices_roundtrip(va, vb, la, lb):
    h = build_hierarchy((20, 20), [(4, 4), (5, 5)])
    a = oversample(neighborhood(h, 1, va), la)
    b = oversample(neighborhood(h, 1, vb), lb)
    s, d = transfer_indices(a, b)
    assert np.array_equal(a.fine_nodes[s], b.fine_nodes[d])
    common = np.intersect1d(a.fine_nodes, b.fine_nodes)
    assert s.size == common.size
