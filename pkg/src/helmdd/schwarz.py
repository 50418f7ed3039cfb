"""Restricted additive Schwarz with a Dirichlet-to-Neumann coarse space.

Each overlapping subdomain carries two local matrices:

* the Dirichlet matrix ``A_j = R_j A R_j^T`` used by the one-level RAS sweep;
* a Neumann matrix assembled only from the triangles lying inside the
  subdomain, with the physical boundary conditions where the subdomain
  touches the outer boundary and natural conditions on its interface.

Eliminating the interior dofs of the Neumann matrix leaves the Schur
complement ``S`` on the interface, the discrete DtN operator. Eigenvectors
of the pencil ``S u = lam M_gamma u`` whose eigenvalue has real part below
``k_j ** alpha`` are extended harmonically into the subdomain, weighted by
the partition of unity and gathered into the coarse basis ``Z``.
"""

from __future__ import annotations

import csv
import logging
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .assembly import DofMap, ElementData, MediumSpec, edge_mass, element_data, scatter, triangle_edge_keys
from .linalg import DenseLU, EigenPairs, SingularMatrixError, SparseLU, dense_lu, generalized_eig
from .mesh import Mesh
from .partition import Decomposition

logger = logging.getLogger(__name__)

SHIFT_FACTOR = 1e-8


def worker_count() -> int:
    """Worker cap from ``HELMDD_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("HELMDD_THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn: Callable, items: Sequence, workers: int | None = None) -> list:
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass
class LocalProblem:
    """Matrices and index sets of one overlapping subdomain.

    All local indices refer to positions in ``dofs`` (the global free dofs
    of the overlapping subdomain, sorted).
    """

    j: int
    dofs: np.ndarray
    weights: np.ndarray
    dirichlet_lu: SparseLU
    neumann: sp.csr_matrix
    interface: np.ndarray
    interior: np.ndarray
    mass_gamma: np.ndarray
    k_max: float
    _interior_lu: SparseLU | None = field(default=None, repr=False)

    @property
    def n_local(self) -> int:
        return len(self.dofs)

    def interior_lu(self) -> SparseLU:
        """Factor of the interior block of the Neumann matrix, shifted if singular."""
        if self._interior_lu is None:
            A_II = self.neumann[self.interior][:, self.interior]
            try:
                self._interior_lu = SparseLU(A_II)
            except SingularMatrixError:
                shift = 1j * self.k_max * SHIFT_FACTOR
                logger.warning(
                    "subdomain %d: interior Neumann block is singular, retrying with shift %s",
                    self.j, shift,
                )
                self._interior_lu = SparseLU(A_II + shift * sp.identity(len(self.interior)))
        return self._interior_lu

    def blocks(self):
        """``(A_GG, A_GI, A_IG)`` blocks of the Neumann matrix."""
        N = self.neumann
        g, i = self.interface, self.interior
        return N[g][:, g], N[g][:, i], N[i][:, g]


def _local_problem(
    j: int,
    A: sp.csr_matrix,
    mesh: Mesh,
    dofmap: DofMap,
    data: ElementData,
    dec: Decomposition,
    boundary_keys: np.ndarray,
) -> LocalProblem:
    dofs = dec.overlap[j]
    in_set = np.zeros(dofmap.n_free + 1, dtype=bool)
    in_set[dofs] = True
    in_set[-1] = True  # index -1: Dirichlet vertices never exclude a triangle
    tri_dofs = dofmap.vertex_to_dof[mesh.triangles]
    member = in_set[tri_dofs]
    member_free = member & (tri_dofs >= 0)
    inside = member.all(axis=1) & member_free.any(axis=1)
    touching = member_free.any(axis=1) & ~inside

    g2l = np.full(dofmap.n_free + 1, -1, dtype=np.int64)
    g2l[dofs] = np.arange(len(dofs))
    covered = np.zeros(len(dofs), dtype=bool)
    loc_tri = g2l[tri_dofs[inside]]
    covered[loc_tri[loc_tri >= 0]] = True
    if not covered.all():
        raise ValueError(f"subdomain {j}: overlap too thin, some dofs lie in no interior triangle")

    # interface: dofs with an incident triangle outside the subdomain
    on_gamma = np.zeros(len(dofs), dtype=bool)
    loc_touch = g2l[tri_dofs[touching]]
    on_gamma[loc_touch[loc_touch >= 0]] = True
    interface = np.flatnonzero(on_gamma)
    interior = np.flatnonzero(~on_gamma)

    robin_in = inside[data.robin_edge_triangle]
    neumann = scatter(
        len(dofs),
        [loc_tri, g2l[dofmap.vertex_to_dof[data.robin_edges[robin_in]]]],
        [data.triangle_matrices[inside], data.robin_matrices[robin_in]],
    )

    # interface edges: boundary edges of the subdomain that are not on the outer boundary
    tri_inside = mesh.triangles[inside]
    keys = triangle_edge_keys(mesh, tri_inside).ravel()
    uniq, counts = np.unique(keys, return_counts=True)
    once = uniq[counts == 1]
    gamma_keys = once[~np.isin(once, boundary_keys)]
    nv = mesh.n_vertices
    gamma_edges = np.column_stack([gamma_keys // nv, gamma_keys % nv])
    gamma_pos = np.full(len(dofs) + 1, -1, dtype=np.int64)  # slot -1 stays -1
    gamma_pos[interface] = np.arange(len(interface))
    edge_idx = gamma_pos[g2l[dofmap.vertex_to_dof[gamma_edges]]] if len(gamma_edges) else np.zeros((0, 2), int)
    mass = np.zeros((len(interface), len(interface)))
    if len(gamma_edges):
        mass = scatter(len(interface), [edge_idx], [edge_mass(mesh, gamma_edges)]).toarray()
    lonely = np.flatnonzero(np.diag(mass) <= 0.0) if len(interface) else np.array([], int)
    if lonely.size:
        logger.info("subdomain %d: %d interface dofs without interface edges, lumped mass h", j, lonely.size)
        mass[lonely, lonely] = mesh.h

    k_max = float(data.triangle_k[inside].max())
    A_j = A[dofs][:, dofs]
    return LocalProblem(
        j=j,
        dofs=dofs,
        weights=dec.weights[j],
        dirichlet_lu=SparseLU(A_j),
        neumann=neumann,
        interface=interface,
        interior=interior,
        mass_gamma=mass,
        k_max=k_max,
    )


def build_local_problems(
    A: sp.csr_matrix,
    mesh: Mesh,
    medium: MediumSpec,
    decomposition: Decomposition,
    dofmap: DofMap | None = None,
    data: ElementData | None = None,
    workers: int | None = None,
) -> list[LocalProblem]:
    """Factor the Dirichlet matrices and assemble the Neumann data per subdomain."""
    dofmap = DofMap.from_mesh(mesh) if dofmap is None else dofmap
    data = element_data(mesh, medium) if data is None else data
    A = sp.csr_matrix(A)
    be = mesh.boundary_edges
    boundary_keys = np.minimum(be[:, 0], be[:, 1]) * mesh.n_vertices + np.maximum(be[:, 0], be[:, 1])
    return parallel_map(
        lambda j: _local_problem(j, A, mesh, dofmap, data, decomposition, boundary_keys),
        range(decomposition.N),
        workers,
    )


def dtn_schur(lp: LocalProblem) -> tuple[np.ndarray, np.ndarray]:
    """Schur complement of the Neumann matrix onto the interface, and ``M_gamma``."""
    if len(lp.interface) == 0:
        raise ValueError(f"subdomain {lp.j} has an empty interface")
    A_GG, A_GI, A_IG = lp.blocks()
    S = A_GG.toarray()
    if len(lp.interior):
        X = lp.interior_lu().solve(A_IG.toarray())
        S = S - A_GI @ X
    return np.asarray(S), lp.mass_gamma


def dtn_select(pairs: EigenPairs, k_j: float, alpha: float) -> EigenPairs:
    """Eigenpairs with ``Re(lam) < k_j ** alpha``, ascending by real part."""
    eta_max = k_j**alpha
    re = pairs.values.real
    keep = np.flatnonzero(re < eta_max)
    keep = keep[np.argsort(re[keep], kind="stable")]
    return EigenPairs(pairs.values[keep], pairs.vectors[:, keep])


def helmholtz_extend(lp: LocalProblem, u_gamma: np.ndarray) -> np.ndarray:
    """Discrete Helmholtz extension of interface data into the subdomain.

    Accepts a vector or a matrix of column vectors on the interface and
    returns the matching local vector(s) on all subdomain dofs.
    """
    u_gamma = np.asarray(u_gamma, dtype=complex)
    if u_gamma.shape[0] != len(lp.interface):
        raise ValueError(f"expected {len(lp.interface)} interface values, got {u_gamma.shape[0]}")
    out = np.zeros((lp.n_local,) + u_gamma.shape[1:], dtype=complex)
    out[lp.interface] = u_gamma
    if len(lp.interior):
        A_IG = lp.neumann[lp.interior][:, lp.interface]
        out[lp.interior] = -lp.interior_lu().solve(A_IG @ u_gamma)
    return out


@dataclass
class SubdomainReport:
    j: int
    dim_gamma: int
    k_j: float
    eta_max: float
    selected: int
    min_re: float
    max_re: float


@dataclass
class CoarseSpace:
    """Coarse basis ``Z`` (sparse, unit columns) and factored ``E = Z^H A Z``."""

    Z: sp.csc_matrix
    E_lu: DenseLU | None
    counts: list[int]
    column_owner: np.ndarray
    dropped: list[int] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.Z.shape[1]

    def apply_Q(self, r: np.ndarray) -> np.ndarray:
        """``Q r = Z E^{-1} Z^H r``."""
        if self.E_lu is None:
            return np.zeros_like(r, dtype=complex)
        return self.Z @ self.E_lu.solve(self.Z.conj().T @ r)


def build_coarse_space(
    A: sp.csr_matrix,
    locals_: Sequence[LocalProblem],
    selections: Sequence[np.ndarray],
    pivot_rtol: float = 1e-12,
) -> CoarseSpace:
    """Assemble ``Z`` from local vectors and factor the coarse operator.

    ``selections[j]`` is an ``(n_local_j, m_j)`` array of local vectors on
    subdomain ``j`` (typically Helmholtz extensions). Each becomes the column
    ``R_j^T D_j v`` scaled to unit 2-norm.
    """
    n = A.shape[0]
    rows, cols, vals, owner, counts = [], [], [], [], []
    col = 0
    for lp, V in zip(locals_, selections):
        V = np.asarray(V).reshape(lp.n_local, -1)
        counts.append(V.shape[1])
        for m in range(V.shape[1]):
            z = lp.weights * V[:, m]
            nz = np.flatnonzero(z)
            z = z[nz] / np.linalg.norm(z[nz])
            rows.append(lp.dofs[nz])
            cols.append(np.full(len(nz), col))
            vals.append(z)
            owner.append(lp.j)
            col += 1
    if col == 0:
        return CoarseSpace(sp.csc_matrix((n, 0), dtype=complex), None, counts, np.zeros(0, int))
    Z = sp.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, col)
    )
    owner = np.asarray(owner)
    E = (Z.conj().T @ (A @ Z)).toarray()
    with warnings.catch_warnings():
        # an exactly singular E is handled below by dropping columns
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu = dense_lu(E)
    piv = lu.pivots()
    dropped: list[int] = []
    if piv.min() <= pivot_rtol * piv.max():
        _, R, perm = sla.qr(E, pivoting=True)
        rdiag = np.abs(np.diag(R))
        dropped = sorted(int(c) for c in perm[rdiag <= pivot_rtol * rdiag[0]])
        logger.warning("coarse operator rank deficient; dropping %d columns", len(dropped))
        keep = np.setdiff1d(np.arange(col), dropped)
        Z = Z[:, keep]
        owner = owner[keep]
        lu = dense_lu(E[np.ix_(keep, keep)])
    return CoarseSpace(Z.tocsc(), lu, counts, owner, dropped)


def dtn_coarse_space(
    A: sp.csr_matrix,
    locals_: Sequence[LocalProblem],
    alpha: float,
    workers: int | None = None,
) -> tuple[CoarseSpace, list[SubdomainReport]]:
    """Solve every local DtN eigenproblem, select by threshold and build ``Z``."""

    def one(lp: LocalProblem):
        eta = lp.k_max**alpha
        if len(lp.interface) == 0:
            return np.zeros((lp.n_local, 0), complex), SubdomainReport(lp.j, 0, lp.k_max, eta, 0, np.nan, np.nan)
        S, M = dtn_schur(lp)
        pairs = generalized_eig(S, M)
        chosen = dtn_select(pairs, lp.k_max, alpha)
        ext = helmholtz_extend(lp, chosen.vectors)
        re = pairs.values.real
        report = SubdomainReport(lp.j, len(lp.interface), lp.k_max, eta, len(chosen), float(re.min()), float(re.max()))
        return ext, report

    results = parallel_map(one, list(locals_), workers)
    coarse = build_coarse_space(A, locals_, [r[0] for r in results])
    return coarse, [r[1] for r in results]


def write_subdomain_report(path: str | Path, reports: Sequence[SubdomainReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["j", "dim_gamma", "k_j", "eta_max", "selected_count", "min_re", "max_re"])
        for r in reports:
            w.writerow([r.j, r.dim_gamma, r.k_j, r.eta_max, r.selected, r.min_re, r.max_re])


def apply_ras(locals_: Sequence[LocalProblem], decomposition: Decomposition | None, r: np.ndarray) -> np.ndarray:
    """``sum_j R_j^T D_j A_j^{-1} R_j r`` accumulated in ascending ``j``."""
    z = np.zeros(r.shape[0], dtype=complex)
    for lp in locals_:
        z[lp.dofs] += lp.weights * lp.dirichlet_lu.solve(r[lp.dofs])
    return z


def apply_two_level(ras: Callable[[np.ndarray], np.ndarray], coarse: CoarseSpace, A, r: np.ndarray) -> np.ndarray:
    """Adapted deflation: ``M_RAS^{-1} (r - A Q r) + Q r``."""
    if coarse.E_lu is None:
        return ras(r)
    qr = coarse.apply_Q(r)
    return ras(r - A @ qr) + qr


class RAS:
    def __init__(self, locals_: Sequence[LocalProblem]):
        self.locals = list(locals_)

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return apply_ras(self.locals, None, r)


class TwoLevel:
    def __init__(self, ras: RAS, coarse: CoarseSpace, A):
        self.ras, self.coarse, self.A = ras, coarse, A

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return apply_two_level(self.ras, self.coarse, self.A, r)
