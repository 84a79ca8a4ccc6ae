import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lodbs.mesh import (GAMMA_BOTTOM, GAMMA_FULL, MeshError, build_bulk_mesh, element_patch,
                        refine_boundary, restrict_to_boundary)


def _bfs_patch(n_seg, closed, T, m):
    # vertex adjacency expansion, written independently of element_patch
    def nodes(e):
        return {e, (e + 1) % n_seg if closed else e + 1}
    patch = {T}
    for _ in range(m):
        touched = set().union(*(nodes(e) for e in patch))
        patch |= {e for e in range(n_seg) if nodes(e) & touched}
    return sorted(patch)


@pytest.mark.parametrize("n,nodes,cells,segs", [(1, 4, 1, 4), (4, 25, 16, 16)])
def test_bulk_counts(n, nodes, cells, segs):
    mesh = build_bulk_mesh(n)
    assert mesh.node_coords.shape[0] == nodes
    assert mesh.cells.shape[0] == cells
    assert mesh.boundary_segments.shape[0] == segs


def test_reference_resolution_node_count():
    assert build_bulk_mesh(2**10).n_nodes == 1_050_625


def test_zero_cells_rejected():
    with pytest.raises(MeshError):
        build_bulk_mesh(0)


def test_cells_counterclockwise_with_area():
    mesh = build_bulk_mesh(3)
    xy = mesh.node_coords[mesh.cells]
    x, y = xy[..., 0], xy[..., 1]
    area = 0.5 * np.sum(x * np.roll(y, -1, axis=1) - np.roll(x, -1, axis=1) * y, axis=1)
    assert np.allclose(area, 1.0 / 9.0)


def test_boundary_starts_at_origin_counterclockwise():
    mesh = build_bulk_mesh(2)
    first = mesh.node_coords[mesh.boundary_segments[:, 0]]
    assert np.allclose(first[0], [0, 0])
    assert np.allclose(first[1], [0.5, 0])
    assert np.allclose(first[2], [1, 0])
    assert np.allclose(first[3], [1, 0.5])


def test_boundary_parent_cells_touch_segment():
    mesh = build_bulk_mesh(5)
    for seg, cell in zip(mesh.boundary_segments, mesh.boundary_parent_cells):
        assert set(seg) <= set(mesh.cells[cell])


def test_restrict_full_and_bottom():
    full = restrict_to_boundary(build_bulk_mesh(4))
    assert full.closed and full.n_segments == 16 and full.n_nodes == 16
    bottom = restrict_to_boundary(build_bulk_mesh(4, GAMMA_BOTTOM))
    assert not bottom.closed
    assert bottom.n_segments == 4 and bottom.n_nodes == 5
    assert bottom.endpoint_dirichlet == (True, True)


@pytest.mark.parametrize("n", [1, 3, 8])
@pytest.mark.parametrize("gamma", [GAMMA_FULL, GAMMA_BOTTOM])
def test_restrict_mesh_size_and_bitexact_trace(n, gamma):
    mesh = build_bulk_mesh(n, gamma)
    bm = restrict_to_boundary(mesh)
    s0, s1 = bm.segment_bounds()
    assert np.max(s1 - s0) == pytest.approx(1.0 / n, abs=1e-15)
    assert np.array_equal(bm.coordinates(), mesh.node_coords[bm.bulk_nodes])
    assert np.unique(bm.bulk_nodes).size == bm.n_nodes


def test_bottom_restriction_needs_bottom_mesh():
    with pytest.raises(MeshError):
        restrict_to_boundary(build_bulk_mesh(4), GAMMA_BOTTOM)


def test_refine_identity_and_counts():
    bm = restrict_to_boundary(build_bulk_mesh(1))
    same = refine_boundary(bm, 0)
    assert same.parent is bm and np.array_equal(same.positions, bm.positions)
    fine = refine_boundary(bm, 2)
    assert fine.n_segments == 16
    assert fine.h == pytest.approx(bm.h / 4)


def test_refine_abscissa_sequence():
    bm = restrict_to_boundary(build_bulk_mesh(8, GAMMA_BOTTOM))
    hs = [refine_boundary(bm, k).h for k in range(5)]
    assert hs == [0.125 / 2**k for k in range(5)]


def test_refine_positions_dyadic():
    fine = refine_boundary(restrict_to_boundary(build_bulk_mesh(3)), 3)
    scaled = fine.positions * 24
    assert np.array_equal(scaled, np.round(scaled))


@given(a=st.integers(0, 3), b=st.integers(0, 3), n=st.integers(1, 6),
       bottom=st.booleans())
@settings(max_examples=40, deadline=None)
def test_refinement_nested(a, b, n, bottom):
    mesh = build_bulk_mesh(n, GAMMA_BOTTOM if bottom else GAMMA_FULL)
    bm = restrict_to_boundary(mesh)
    direct = refine_boundary(bm, a + b)
    twice = refine_boundary(refine_boundary(bm, a), b)
    assert np.array_equal(direct.positions, twice.positions)
    assert set(np.round(bm.positions * 2**(a + b) * n).astype(int)) <= \
        set(np.round(direct.positions * 2**(a + b) * n).astype(int))


def test_patch_examples():
    loop = restrict_to_boundary(build_bulk_mesh(4))
    assert element_patch(loop, 5, 0).tolist() == [5]
    interval = restrict_to_boundary(build_bulk_mesh(8, GAMMA_BOTTOM))
    assert element_patch(interval, 4, 1).tolist() == [3, 4, 5]
    N = loop.n_segments
    assert element_patch(loop, 3, (N - 1 + 1) // 2).tolist() == list(range(N))


@given(n=st.integers(1, 8), closed=st.booleans(), data=st.data())
@settings(max_examples=60, deadline=None)
def test_patch_matches_bruteforce(n, closed, data):
    mesh = build_bulk_mesh(n, GAMMA_FULL if closed else GAMMA_BOTTOM)
    bm = restrict_to_boundary(mesh)
    T = data.draw(st.integers(0, bm.n_segments - 1))
    m = data.draw(st.integers(0, bm.n_segments))
    got = element_patch(bm, T, m).tolist()
    assert got == _bfs_patch(bm.n_segments, closed, T, m)
    if m:
        assert set(element_patch(bm, T, m - 1)) <= set(got)
    if not closed:
        assert len(got) <= 2 * m + 1
