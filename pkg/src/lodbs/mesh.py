"""Uniform bulk grids on the unit square and 1D meshes on its boundary.

The boundary of the unit square is parameterized by counterclockwise
arclength ``s`` in ``[0, 4)`` starting at the origin, so the bottom edge
is ``s in [0, 1]`` and ``s`` coincides with the x-coordinate there.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

GAMMA_FULL = "full"
GAMMA_BOTTOM = "bottom"
_GAMMA_KINDS = (GAMMA_FULL, GAMMA_BOTTOM)

CLOSED = "closed"
INTERVAL = "interval"


class MeshError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class BulkMesh:
    """Uniform quadrilateral grid with ``n`` cells per side.

    Node ``(i, j)`` sits at ``(i/n, j/n)`` and has index ``j*(n+1) + i``.
    ``gamma_dyn`` says which part of the boundary carries the dynamic
    condition; every other boundary node is homogeneous Dirichlet.
    """

    n: int
    node_coords: np.ndarray
    cells: np.ndarray
    boundary_nodes: np.ndarray
    boundary_segments: np.ndarray
    boundary_parent_cells: np.ndarray
    dirichlet_mask: np.ndarray
    gamma_dyn: str = GAMMA_FULL

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def n_nodes(self) -> int:
        return (self.n + 1) ** 2

    @property
    def n_cells(self) -> int:
        return self.n * self.n

    @property
    def free_nodes(self) -> np.ndarray:
        return np.flatnonzero(~self.dirichlet_mask)

    def node_index(self, i, j):
        return np.asarray(j) * (self.n + 1) + np.asarray(i)


def _boundary_loop(n: int) -> np.ndarray:
    """Bulk node indices of the boundary, counterclockwise from (0, 0)."""
    i = np.arange(n)
    bottom = i
    right = n + (n + 1) * i
    top = (n + 1) * (n + 1) - 1 - i
    left = (n + 1) * (n - i)
    return np.concatenate([bottom, right, top, left])


def build_bulk_mesh(n: int, gamma_dyn: str = GAMMA_FULL) -> BulkMesh:
    if int(n) != n or n < 1:
        raise MeshError(f"cells per side must be a positive integer, got {n!r}")
    if gamma_dyn not in _GAMMA_KINDS:
        raise MeshError(f"unknown dynamic boundary part {gamma_dyn!r}")
    n = int(n)
    grid = np.arange(n + 1) / n
    xx, yy = np.meshgrid(grid, grid, indexing="xy")
    coords = np.column_stack([xx.ravel(), yy.ravel()])

    jj, ii = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    base = (jj * (n + 1) + ii).ravel()
    cells = np.column_stack([base, base + 1, base + n + 2, base + n + 1])

    loop = _boundary_loop(n)
    segments = np.column_stack([loop, np.roll(loop, -1)])
    k = np.arange(n)
    parents = np.concatenate([
        k,                          # bottom row, cell (k, 0)
        k * n + (n - 1),            # right column, cell (n-1, k)
        (n - 1) * n + (n - 1 - k),  # top row, cell (n-1-k, n-1)
        (n - 1 - k) * n,            # left column, cell (0, n-1-k)
    ])

    mask = np.zeros(coords.shape[0], dtype=bool)
    if gamma_dyn == GAMMA_BOTTOM:
        mask[loop] = True
        mask[np.arange(1, n)] = False
    return BulkMesh(n=n, node_coords=coords, cells=cells, boundary_nodes=loop,
                    boundary_segments=segments, boundary_parent_cells=parents,
                    dirichlet_mask=mask, gamma_dyn=gamma_dyn)


@dataclass(frozen=True, eq=False)
class BoundaryMesh:
    """Uniform P1 mesh on the boundary or on the bottom edge.

    Closed loops have as many nodes as segments; segment ``e`` runs from
    node ``e`` to node ``e+1`` (modulo the node count).  ``bulk_nodes`` is
    only set for meshes obtained by restricting a bulk grid.
    """

    topology: str
    start: float
    length: float
    n_segments: int
    positions: np.ndarray
    segments: np.ndarray
    endpoint_dirichlet: tuple = (False, False)
    parent: Optional["BoundaryMesh"] = None
    parent_ratio: int = 1
    bulk_nodes: Optional[np.ndarray] = None
    bulk_n: Optional[int] = None

    @property
    def h(self) -> float:
        return self.length / self.n_segments

    @property
    def n_nodes(self) -> int:
        return self.positions.shape[0]

    @property
    def closed(self) -> bool:
        return self.topology == CLOSED

    @property
    def dirichlet_nodes(self) -> np.ndarray:
        if self.closed:
            return np.zeros(0, dtype=int)
        out = []
        if self.endpoint_dirichlet[0]:
            out.append(0)
        if self.endpoint_dirichlet[1]:
            out.append(self.n_nodes - 1)
        return np.asarray(out, dtype=int)

    @property
    def free_nodes(self) -> np.ndarray:
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.dirichlet_nodes] = False
        return np.flatnonzero(mask)

    def segment_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Arclength of both ends of every segment (the last closed-loop
        segment ends at ``start + length``, not at the first node)."""
        e = np.arange(self.n_segments)
        s0 = self.start + e * self.length / self.n_segments
        s1 = self.start + (e + 1) * self.length / self.n_segments
        return s0, s1

    def coordinates(self) -> np.ndarray:
        """Node coordinates; exact ``i/n`` values whenever every edge of the
        square holds a whole number of segments (matches the bulk grid)."""
        per = self.n_segments / self.length
        k0 = self.start * per
        if per != round(per) or k0 != round(k0):
            return arclength_to_point(self.positions)
        per, k = int(per), int(k0) + np.arange(self.n_nodes)
        edge, j = np.divmod(k % (4 * per), per)
        up, down = j / per, (per - j) / per
        zero, one = np.zeros(k.size), np.ones(k.size)
        x = np.choose(edge, [up, one, down, zero])
        y = np.choose(edge, [zero, up, one, down])
        return np.column_stack([x, y])

    def refinement_ratio(self, coarse: "BoundaryMesh") -> int:
        """Number of own segments per segment of ``coarse``; raises if this
        mesh is not a dyadic refinement of ``coarse``."""
        if (self.topology != coarse.topology or self.start != coarse.start
                or self.length != coarse.length or self.endpoint_dirichlet != coarse.endpoint_dirichlet):
            raise MeshError("boundary meshes cover different arcs")
        ratio, rem = divmod(self.n_segments, coarse.n_segments)
        if rem or ratio < 1 or ratio & (ratio - 1):
            raise MeshError(
                f"{self.n_segments} segments is not a dyadic refinement of {coarse.n_segments}")
        return ratio


def arclength_to_point(s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    t = np.mod(s, 4.0)
    edge = np.minimum(np.floor(t).astype(int), 3)
    x = np.choose(edge, [t, np.ones_like(t), 3.0 - t, np.zeros_like(t)])
    y = np.choose(edge, [np.zeros_like(t), t - 1.0, np.ones_like(t), 4.0 - t])
    return np.stack([x, y], axis=-1)


def _make_boundary(topology, start, length, n_segments, endpoint_dirichlet,
                   parent=None, ratio=1, bulk_nodes=None, bulk_n=None):
    n_nodes = n_segments if topology == CLOSED else n_segments + 1
    k = np.arange(n_nodes)
    positions = start + k * length / n_segments
    seg = np.arange(n_segments)
    segments = np.column_stack([seg, (seg + 1) % n_nodes])
    return BoundaryMesh(topology=topology, start=float(start), length=float(length),
                        n_segments=int(n_segments), positions=positions, segments=segments,
                        endpoint_dirichlet=tuple(endpoint_dirichlet), parent=parent,
                        parent_ratio=ratio, bulk_nodes=bulk_nodes, bulk_n=bulk_n)


def restrict_to_boundary(mesh: BulkMesh, selector: Optional[str] = None) -> BoundaryMesh:
    """Trace of the bulk grid on the full boundary or on the bottom edge."""
    selector = mesh.gamma_dyn if selector is None else selector
    if selector not in _GAMMA_KINDS:
        raise MeshError(f"unknown boundary selector {selector!r}")
    if selector == GAMMA_BOTTOM and mesh.gamma_dyn != GAMMA_BOTTOM:
        raise MeshError("bottom-edge restriction needs a mesh with dynamic bottom edge")
    n = mesh.n
    if selector == GAMMA_FULL:
        return _make_boundary(CLOSED, 0.0, 4.0, 4 * n, (False, False),
                              bulk_nodes=mesh.boundary_nodes.copy(), bulk_n=n)
    return _make_boundary(INTERVAL, 0.0, 1.0, n, (True, True),
                          bulk_nodes=np.arange(n + 1), bulk_n=n)


def refine_boundary(bm: BoundaryMesh, levels: int) -> BoundaryMesh:
    if levels < 0:
        raise MeshError("refinement levels must be non-negative")
    ratio = 2 ** int(levels)
    return _make_boundary(bm.topology, bm.start, bm.length, bm.n_segments * ratio,
                          bm.endpoint_dirichlet, parent=bm, ratio=ratio)


def element_patch(bm: BoundaryMesh, element: int, m: int) -> np.ndarray:
    """Elements of the ``m``-layer vertex patch around ``element``, sorted."""
    if not 0 <= element < bm.n_segments:
        raise MeshError(f"element {element} out of range")
    if m < 0:
        raise MeshError("patch layers must be non-negative")
    N = bm.n_segments
    if bm.closed:
        if 2 * m + 1 >= N:
            return np.arange(N)
        return np.sort(np.mod(np.arange(element - m, element + m + 1), N))
    return np.arange(max(element - m, 0), min(element + m, N - 1) + 1)
