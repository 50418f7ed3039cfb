"""Structured P1 triangulation of the unit-square wave guide."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np


class BoundaryTag(str, Enum):
    DIRICHLET = "Dirichlet"
    ROBIN = "Robin"


@dataclass(frozen=True)
class Mesh:
    """Uniform triangulation of (0, 1)^2 with ``n_glob`` points per direction.

    Vertex ``i + j * n_glob`` sits at ``(i * h, j * h)`` (x fastest).
    ``boundary_edges`` is an ``(m, 2)`` vertex-index array and ``boundary_tags``
    holds the matching :class:`BoundaryTag` for each row.
    """

    n_glob: int
    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: tuple[BoundaryTag, ...]

    @property
    def h(self) -> float:
        return 1.0 / (self.n_glob - 1)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def edges_with_tag(self, tag: BoundaryTag) -> np.ndarray:
        mask = np.array([t == tag for t in self.boundary_tags], dtype=bool)
        return self.boundary_edges[mask]

    def dirichlet_vertices(self) -> np.ndarray:
        """Sorted indices of vertices on x = 0 or x = 1 (corners included)."""
        i = np.arange(self.n_vertices) % self.n_glob
        return np.flatnonzero((i == 0) | (i == self.n_glob - 1))

    def write(self, path: str | Path) -> None:
        """Dump as text: ``v x y`` / ``t i j k`` / ``b i j TAG`` lines."""
        with open(path, "w") as fh:
            for x, y in self.vertices:
                fh.write(f"v {float(x)!r} {float(y)!r}\n")
            for a, b, c in self.triangles:
                fh.write(f"t {a} {b} {c}\n")
            for (a, b), tag in zip(self.boundary_edges, self.boundary_tags):
                fh.write(f"b {a} {b} {tag.value}\n")


def _perimeter_edges(n: int) -> np.ndarray:
    idx = np.arange(n - 1)
    bottom = np.column_stack([idx, idx + 1])
    right = np.column_stack([idx * n + n - 1, (idx + 1) * n + n - 1])
    top = np.column_stack([(n - 1) * n + idx + 1, (n - 1) * n + idx])
    left = np.column_stack([(idx + 1) * n, idx * n])
    return np.vstack([bottom, right, top, left])


def classify_boundary(mesh: Mesh) -> list[tuple[tuple[int, int], BoundaryTag]]:
    """Tag every boundary edge of ``mesh``.

    An edge is Dirichlet when both endpoints lie on the same vertical side
    (x = 0 or x = 1), Robin otherwise. The edge from a corner to its
    neighbour along y = 0 or y = 1 is therefore Robin.
    """
    return [
        ((int(a), int(b)), _tag_edge(mesh.vertices[a], mesh.vertices[b]))
        for a, b in mesh.boundary_edges
    ]


def _tag_edge(pa: np.ndarray, pb: np.ndarray) -> BoundaryTag:
    for side in (0.0, 1.0):
        if pa[0] == side and pb[0] == side:
            return BoundaryTag.DIRICHLET
    return BoundaryTag.ROBIN


def build_unit_square_mesh(n_glob: int) -> Mesh:
    """Triangulate the unit square with alternating diagonals.

    Cell ``(i, j)`` (lower-left vertex ``(i h, j h)``) is cut along the
    bottom-left to top-right diagonal when ``i + j`` is even and along the
    other diagonal when it is odd. All triangles are counter-clockwise.
    """
    if int(n_glob) != n_glob or n_glob < 2:
        raise ValueError(f"n_glob must be an integer >= 2, got {n_glob!r}")
    n = int(n_glob)
    h = 1.0 / (n - 1)
    ii, jj = np.meshgrid(np.arange(n), np.arange(n))
    # exact 0 and 1 on the sides
    coords = np.arange(n) * h
    coords[-1] = 1.0
    vertices = np.column_stack([coords[ii.ravel()], coords[jj.ravel()]])

    ci, cj = np.meshgrid(np.arange(n - 1), np.arange(n - 1))
    ci, cj = ci.ravel(), cj.ravel()
    bl = ci + cj * n
    br = bl + 1
    tl = bl + n
    tr = tl + 1
    even = (ci + cj) % 2 == 0
    tri_a = np.where(even[:, None], np.column_stack([bl, br, tr]), np.column_stack([bl, br, tl]))
    tri_b = np.where(even[:, None], np.column_stack([bl, tr, tl]), np.column_stack([br, tr, tl]))
    triangles = np.empty((2 * len(bl), 3), dtype=np.int64)
    triangles[0::2] = tri_a
    triangles[1::2] = tri_b

    edges = _perimeter_edges(n)
    mesh = Mesh(n, vertices, triangles, edges, ())
    tags = tuple(tag for _, tag in classify_boundary(mesh))
    return Mesh(n, vertices, triangles, edges, tags)
