"""Wave-number media and P1 assembly of the Helmholtz wave-guide system.

The discrete operator is

    A = K - k^2 M + i k M_R

with K the stiffness matrix, M the mass matrix and M_R the boundary mass on
the Robin edges. Dirichlet vertices (x = 0 and x = 1) are eliminated, so A
acts on the free degrees of freedom only and stays complex symmetric.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.io
import scipy.sparse as sp

from .mesh import BoundaryTag, Mesh


class MediumKind(str, Enum):
    HOMOGENEOUS = "homogeneous"
    ALTERNATING = "alternating"
    DIAGONAL = "diagonal"


@dataclass(frozen=True)
class MediumSpec:
    """Wave-number field on the unit square.

    Homogeneous media carry a constant ``k``. Layered media carry an angular
    frequency ``omega`` and a contrast ``rho > 1``; the wave speed ``c`` is
    piecewise constant and ``k = omega / c``.
    """

    kind: MediumKind
    k: float | None = None
    omega: float | None = None
    rho: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", MediumKind(self.kind))
        if self.kind is MediumKind.HOMOGENEOUS:
            if self.k is None or not self.k > 0:
                raise ValueError(f"homogeneous medium needs k > 0, got {self.k!r}")
        else:
            if self.omega is None or not self.omega > 0:
                raise ValueError(f"layered medium needs omega > 0, got {self.omega!r}")
            if self.rho is None or not self.rho > 1:
                raise ValueError(f"layered medium needs rho > 1, got {self.rho!r}")

    @classmethod
    def homogeneous(cls, k: float) -> "MediumSpec":
        return cls(MediumKind.HOMOGENEOUS, k=k)

    @classmethod
    def alternating_layers(cls, omega: float, rho: float) -> "MediumSpec":
        return cls(MediumKind.ALTERNATING, omega=omega, rho=rho)

    @classmethod
    def diagonal_layers(cls, omega: float, rho: float) -> "MediumSpec":
        return cls(MediumKind.DIAGONAL, omega=omega, rho=rho)

    @property
    def frequency(self) -> float:
        """k for homogeneous media, omega otherwise."""
        return self.k if self.kind is MediumKind.HOMOGENEOUS else self.omega

    def wave_speed(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind is MediumKind.HOMOGENEOUS:
            return np.ones(len(pts))
        rho = self.rho
        if self.kind is MediumKind.ALTERNATING:
            # bands bottom to top: rho, 1, rho, 1
            band = np.clip(np.floor(4.0 * pts[:, 1]), 0, 3).astype(int)
            return np.array([rho, 1.0, rho, 1.0])[band]
        s = pts[:, 0] + pts[:, 1]
        band = np.clip(np.floor(2.0 * s), 0, 3).astype(int)
        return np.array([1.0, rho / 4.0, rho / 2.0, rho])[band]

    def wavenumber(self, points: np.ndarray) -> np.ndarray:
        """Vectorised k at ``points`` of shape ``(m, 2)``; no domain check."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind is MediumKind.HOMOGENEOUS:
            return np.full(len(pts), float(self.k))
        return self.omega / self.wave_speed(pts)


def wavenumber_at(medium: MediumSpec, point) -> float:
    x, y = (float(v) for v in point)
    if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
        raise ValueError(f"point {point!r} lies outside the unit square")
    return float(medium.wavenumber(np.array([[x, y]]))[0])


@dataclass(frozen=True)
class DofMap:
    """Free (non-Dirichlet) vertices and their dof numbering."""

    free_vertices: np.ndarray
    vertex_to_dof: np.ndarray  # -1 on Dirichlet vertices

    @property
    def n_free(self) -> int:
        return len(self.free_vertices)

    @classmethod
    def from_mesh(cls, mesh: Mesh) -> "DofMap":
        is_dir = np.zeros(mesh.n_vertices, dtype=bool)
        is_dir[mesh.dirichlet_vertices()] = True
        free = np.flatnonzero(~is_dir)
        v2d = np.full(mesh.n_vertices, -1, dtype=np.int64)
        v2d[free] = np.arange(len(free))
        return cls(free, v2d)


@dataclass(frozen=True)
class ElementData:
    """Per-element complex matrices, reused by global and subdomain assembly."""

    triangle_matrices: np.ndarray  # (n_tri, 3, 3) complex, K_T - k_T^2 M_T
    triangle_k: np.ndarray  # (n_tri,) centroid wave number
    robin_edges: np.ndarray  # (n_r, 2) vertex indices
    robin_matrices: np.ndarray  # (n_r, 2, 2) complex, i k_e M_e
    robin_edge_triangle: np.ndarray  # (n_r,) owning triangle of each Robin edge


def p1_stiffness_mass(mesh: Mesh, triangles: np.ndarray | None = None):
    """Return element stiffness and mass matrices, both ``(n, 3, 3)``."""
    tri = mesh.triangles if triangles is None else triangles
    p = mesh.vertices[tri]
    # edge opposite vertex a is p[b] - p[c] with (a, b, c) cyclic
    e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
    area = 0.5 * (e[:, 1, 0] * e[:, 2, 1] - e[:, 1, 1] * e[:, 2, 0])
    stiff = np.einsum("tad,tbd->tab", e, e) / (4.0 * area)[:, None, None]
    mass = (area / 12.0)[:, None, None] * (np.ones((3, 3)) + np.eye(3))
    return stiff, mass


def edge_mass(mesh: Mesh, edges: np.ndarray) -> np.ndarray:
    """1D P1 mass matrices ``(n, 2, 2)`` for ``edges``."""
    d = mesh.vertices[edges[:, 1]] - mesh.vertices[edges[:, 0]]
    length = np.hypot(d[:, 0], d[:, 1])
    return (length / 6.0)[:, None, None] * np.array([[2.0, 1.0], [1.0, 2.0]])


def triangle_edge_keys(mesh: Mesh, triangles: np.ndarray | None = None) -> np.ndarray:
    """Undirected edge keys ``(n, 3)`` as ``min * n_vertices + max``."""
    tri = mesh.triangles if triangles is None else triangles
    a = tri
    b = np.roll(tri, -1, axis=1)
    return np.minimum(a, b) * mesh.n_vertices + np.maximum(a, b)


def _edge_owner(mesh: Mesh, edges: np.ndarray) -> np.ndarray:
    keys = triangle_edge_keys(mesh).ravel()
    order = np.argsort(keys, kind="stable")
    want = np.minimum(edges[:, 0], edges[:, 1]) * mesh.n_vertices + np.maximum(edges[:, 0], edges[:, 1])
    pos = np.searchsorted(keys[order], want)
    return order[pos] // 3


def element_data(mesh: Mesh, medium: MediumSpec) -> ElementData:
    stiff, mass = p1_stiffness_mass(mesh)
    centroids = mesh.vertices[mesh.triangles].mean(axis=1)
    k_tri = medium.wavenumber(centroids)
    tri_mats = stiff.astype(complex) - (k_tri**2)[:, None, None] * mass

    robin = mesh.edges_with_tag(BoundaryTag.ROBIN)
    if len(robin) == 0:
        raise ValueError("no Robin edges: the Helmholtz problem would be ill-posed")
    midpoints = mesh.vertices[robin].mean(axis=1)
    k_edge = medium.wavenumber(midpoints)
    robin_mats = 1j * k_edge[:, None, None] * edge_mass(mesh, robin)
    return ElementData(tri_mats, k_tri, robin, robin_mats, _edge_owner(mesh, robin))


def scatter(
    n: int,
    index_sets: list[np.ndarray],
    blocks: list[np.ndarray],
) -> sp.csr_matrix:
    """Sum local blocks into an ``n x n`` matrix, dropping negative indices.

    ``index_sets[m]`` has shape ``(e, p)`` and ``blocks[m]`` shape ``(e, p, p)``.
    The result is made exactly symmetric by mirroring its upper triangle.
    """
    rows, cols, vals = [], [], []
    for idx, blk in zip(index_sets, blocks):
        if len(idx) == 0:
            continue
        p = idx.shape[1]
        r = np.repeat(idx, p, axis=1).ravel()
        c = np.tile(idx, (1, p)).ravel()
        v = blk.reshape(len(idx), -1).ravel()
        keep = (r >= 0) & (c >= 0) & (r <= c)
        rows.append(r[keep])
        cols.append(c[keep])
        vals.append(v[keep])
    if not vals:
        return sp.csr_matrix((n, n), dtype=complex)
    upper = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    ).tocsr()
    upper.sum_duplicates()
    strict = sp.triu(upper, k=1)
    full = (upper + strict.T).tocsr()
    full.sort_indices()
    return full


def assemble_system(mesh: Mesh, medium: MediumSpec, data: ElementData | None = None):
    """Assemble the Dirichlet-eliminated Helmholtz matrix.

    Returns
    -------
    A : scipy.sparse.csr_matrix
        Complex symmetric matrix on the free dofs.
    dofmap : DofMap
    """
    if data is None:
        data = element_data(mesh, medium)
    dofmap = DofMap.from_mesh(mesh)
    v2d = dofmap.vertex_to_dof
    A = scatter(
        dofmap.n_free,
        [v2d[mesh.triangles], v2d[data.robin_edges]],
        [data.triangle_matrices, data.robin_matrices],
    )
    return A, dofmap


def assemble_point_source(mesh: Mesh, dofmap: DofMap, location=(0.5, 0.5)) -> np.ndarray:
    """Unit nodal load at the free vertex nearest to ``location``."""
    x0 = np.asarray(location, dtype=float)
    if not (0.0 < x0[0] < 1.0 and 0.0 < x0[1] < 1.0):
        raise ValueError(f"source location {location!r} outside the open unit square")
    d2 = ((mesh.vertices[dofmap.free_vertices] - x0) ** 2).sum(axis=1)
    f = np.zeros(dofmap.n_free, dtype=complex)
    # distances equal up to rounding count as ties; the lowest dof wins
    tied = np.flatnonzero(d2 <= d2.min() + 1e-12 * mesh.h**2)
    f[int(tied[0])] = 1.0
    return f


# Degree-5, 7-point rule on the reference triangle (barycentric, weights sum to 1).
_A1, _B1, _W1 = 0.059715871789770, 0.470142064105115, 0.132394152788506
_A2, _B2, _W2 = 0.797426985353087, 0.101286507323456, 0.125939180544827
QUAD_BARY = np.array(
    [
        [1 / 3, 1 / 3, 1 / 3],
        [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1],
        [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2],
    ]
)
QUAD_W = np.array([0.225, _W1, _W1, _W1, _W2, _W2, _W2])


def assemble_load(mesh: Mesh, dofmap: DofMap, f: Callable[[np.ndarray, np.ndarray], np.ndarray]):
    """Load vector ``F_i = int f phi_i`` for a smooth volume source ``f(x, y)``."""
    p = mesh.vertices[mesh.triangles]
    area = np.abs(mesh.signed_areas())
    qp = np.einsum("qa,tad->tqd", QUAD_BARY, p)
    fq = np.asarray(f(qp[..., 0], qp[..., 1]), dtype=complex)
    local = np.einsum("tq,qa,q->ta", fq, QUAD_BARY, QUAD_W) * area[:, None]
    dofs = dofmap.vertex_to_dof[mesh.triangles]
    keep = dofs >= 0
    F = np.zeros(dofmap.n_free, dtype=complex)
    np.add.at(F, dofs[keep], local[keep])
    return F


def l2_error(mesh: Mesh, dofmap: DofMap, u_h: np.ndarray, u_exact) -> float:
    """L2 norm of ``u_h - u_exact`` with ``u_h`` zero on Dirichlet vertices."""
    nodal = np.zeros(mesh.n_vertices, dtype=complex)
    nodal[dofmap.free_vertices] = u_h
    p = mesh.vertices[mesh.triangles]
    area = np.abs(mesh.signed_areas())
    qp = np.einsum("qa,tad->tqd", QUAD_BARY, p)
    uh_q = np.einsum("qa,ta->tq", QUAD_BARY, nodal[mesh.triangles])
    err = np.abs(uh_q - u_exact(qp[..., 0], qp[..., 1])) ** 2
    return float(np.sqrt((err @ QUAD_W * area).sum()))


def write_matrix_market(path: str | Path, A: sp.spmatrix) -> None:
    """Write ``A`` as a 1-based MatrixMarket coordinate complex general file."""
    scipy.io.mmwrite(str(path), sp.coo_matrix(A, dtype=complex), symmetry="general")
