"""Overlapping decompositions of the free dofs and partition-of-unity weights."""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order

from .assembly import DofMap
from .mesh import Mesh


@dataclass(frozen=True)
class Decomposition:
    """Owned (disjoint) and overlapping dof sets of ``N`` subdomains.

    ``overlap[j]`` is sorted and doubles as the restriction index list
    ``R_j``; ``weights[j]`` holds the diagonal of ``D_j`` on those dofs.
    """

    n_free: int
    owned: tuple[np.ndarray, ...]
    overlap: tuple[np.ndarray, ...]
    weights: tuple[np.ndarray, ...]
    adjacency: sp.csr_matrix

    @property
    def N(self) -> int:
        return len(self.owned)

    def restriction(self, j: int) -> sp.csr_matrix:
        idx = self.overlap[j]
        return sp.csr_matrix(
            (np.ones(len(idx)), (np.arange(len(idx)), idx)), shape=(len(idx), self.n_free)
        )

    def multiplicity(self) -> np.ndarray:
        mult = np.zeros(self.n_free, dtype=np.int64)
        for idx in self.overlap:
            mult[idx] += 1
        return mult

    def ownership(self) -> np.ndarray:
        owner = np.full(self.n_free, -1, dtype=np.int64)
        for j, idx in enumerate(self.owned):
            owner[idx] = j
        return owner

    def pu_sum(self) -> np.ndarray:
        """Diagonal of ``sum_j R_j^T D_j R_j``."""
        total = np.zeros(self.n_free)
        for idx, w in zip(self.overlap, self.weights):
            total[idx] += w
        return total


def dof_adjacency(mesh: Mesh, dofmap: DofMap) -> sp.csr_matrix:
    """Boolean dof graph: two dofs are adjacent when they share a triangle."""
    d = dofmap.vertex_to_dof[mesh.triangles]
    rows = np.repeat(d, 3, axis=1).ravel()
    cols = np.tile(d, (1, 3)).ravel()
    keep = (rows >= 0) & (cols >= 0) & (rows != cols)
    n = dofmap.n_free
    adj = sp.coo_matrix(
        (np.ones(keep.sum(), dtype=np.int8), (rows[keep], cols[keep])), shape=(n, n)
    ).tocsr()
    adj.data[:] = 1
    return adj


def partition_of_unity(dec: Decomposition) -> tuple[np.ndarray, ...]:
    """Multiplicity weights ``D_j(i) = 1 / #{l : i in overlap[l]}``."""
    mult = dec.multiplicity()
    if np.any(mult == 0):
        bad = int(np.flatnonzero(mult == 0)[0])
        raise ValueError(f"dof {bad} is not covered by any subdomain")
    return tuple(1.0 / mult[idx] for idx in dec.overlap)


def from_ownership(owner: np.ndarray, adjacency: sp.csr_matrix, layers: int = 1) -> Decomposition:
    """Build a decomposition from a dof-to-subdomain map, then add dof-graph overlap."""
    owner = np.asarray(owner, dtype=np.int64)
    n = adjacency.shape[0]
    if owner.shape != (n,):
        raise ValueError(f"ownership has {owner.shape[0]} entries, expected {n}")
    if owner.min(initial=0) < 0:
        raise ValueError("every dof needs a subdomain index >= 0")
    N = int(owner.max()) + 1
    owned = tuple(np.flatnonzero(owner == j) for j in range(N))
    empty = [j for j, o in enumerate(owned) if len(o) == 0]
    if empty:
        raise ValueError(f"subdomains {empty} own no dofs")
    base = Decomposition(n, owned, owned, (), adjacency)
    base = replace(base, weights=partition_of_unity(base))
    return add_overlap(base, layers)


def element_owner(mesh: Mesh, dofmap: DofMap, dec: Decomposition) -> np.ndarray:
    """Assign each triangle to the majority owner of its free vertices (ties: lowest)."""
    own = dec.ownership()
    tri = dofmap.vertex_to_dof[mesh.triangles]
    big = np.iinfo(np.int64).max
    o = np.where(tri >= 0, own[np.maximum(tri, 0)], big)
    a, b, c = o[:, 0], o[:, 1], o[:, 2]
    return np.where((a == b) | (a == c), a, np.where(b == c, b, o.min(axis=1)))


def element_overlap(mesh: Mesh, dofmap: DofMap, dec: Decomposition, layers: int = 1) -> Decomposition:
    """Overlap in element layers around an element partition.

    Triangles are first split among subdomains by :func:`element_owner`; the
    closure of subdomain ``j``'s triangles (plus its owned dofs) is then
    grown by ``layers`` rounds of dof adjacency, i.e. by ``layers`` layers of
    neighbouring triangles. With ``layers=1`` neighbouring overlapping
    subdomains share a strip one element wide on each side of the cut.
    """
    eo = element_owner(mesh, dofmap, dec)
    tri = dofmap.vertex_to_dof[mesh.triangles]
    closure = []
    for j in range(dec.N):
        d = tri[eo == j].ravel()
        closure.append(np.union1d(d[d >= 0], dec.owned[j]))
    base = replace(dec, overlap=tuple(closure))
    base = replace(base, weights=partition_of_unity(base))
    return add_overlap(base, layers)


OVERLAP_MODES = ("element", "dof")


def _with_overlap(owner, mesh, dofmap, layers, mode) -> Decomposition:
    if mode not in OVERLAP_MODES:
        raise ValueError(f"overlap mode must be one of {OVERLAP_MODES}, got {mode!r}")
    adj = dof_adjacency(mesh, dofmap)
    if mode == "dof":
        return from_ownership(owner, adj, layers)
    return element_overlap(mesh, dofmap, from_ownership(owner, adj, 0), layers)


def add_overlap(dec: Decomposition, layers: int = 1) -> Decomposition:
    """Grow every overlapping set by ``layers`` rounds of adjacency closure."""
    if layers < 0:
        raise ValueError("layers must be >= 0")
    if layers == 0:
        return dec
    adj = dec.adjacency
    grown = []
    for idx in dec.overlap:
        mask = np.zeros(dec.n_free, dtype=bool)
        mask[idx] = True
        for _ in range(layers):
            mask = mask | (adj @ mask.astype(np.int8) > 0)
        grown.append(np.flatnonzero(mask))
    out = replace(dec, overlap=tuple(grown))
    return replace(out, weights=partition_of_unity(out))


def uniform_partition(
    mesh: Mesh, dofmap: DofMap, s: int, layers: int = 1, mode: str = "element"
) -> Decomposition:
    """``s x s`` congruent boxes; nodes on a box edge go to the lower box.

    ``mode="element"`` adds ``layers`` element layers around the induced
    element partition, ``mode="dof"`` adds ``layers`` rounds of dof-graph
    adjacency directly to the owned dofs.
    """
    n = mesh.n_glob
    if s < 1 or s > n - 1:
        raise ValueError(f"s must be in [1, {n - 1}], got {s}")
    v = dofmap.free_vertices
    i, j = v % n, v // n
    # box index of grid line m is ceil(m s / (n - 1)) - 1, clamped at 0
    bx = np.maximum((i * s + n - 2) // (n - 1) - 1, 0)
    by = np.maximum((j * s + n - 2) // (n - 1) - 1, 0)
    owner = by * s + bx
    counts = np.bincount(owner, minlength=s * s)
    if np.any(counts == 0):
        raise ValueError(f"s={s} is too large for n_glob={n}: some boxes own no free dofs")
    return _with_overlap(owner, mesh, dofmap, layers, mode)


def _bfs_order(adj: sp.csr_matrix, start: int) -> np.ndarray:
    """BFS order from ``start``; other components follow, lowest index first."""
    n = adj.shape[0]
    seen = np.zeros(n, dtype=bool)
    parts = []
    seed = start
    while True:
        order = breadth_first_order(adj, seed, directed=False, return_predecessors=False)
        seen[order] = True
        parts.append(order)
        rest = np.flatnonzero(~seen)
        if rest.size == 0:
            return np.concatenate(parts)
        seed = int(rest[0])


def _peripheral_order(adj: sp.csr_matrix) -> np.ndarray:
    order = _bfs_order(adj, 0)
    for _ in range(2):
        order = _bfs_order(adj, int(order[-1]))
    return order


def _bisect(nodes: np.ndarray, adj: sp.csr_matrix, N: int, first: int, owner: np.ndarray) -> None:
    if N == 1:
        owner[nodes] = first
        return
    n_left = N // 2
    size_left = int(round(len(nodes) * n_left / N))
    sub = adj[nodes][:, nodes]
    order = _peripheral_order(sub)
    left = np.sort(nodes[order[:size_left]])
    right = np.sort(nodes[order[size_left:]])
    _bisect(left, adj, n_left, first, owner)
    _bisect(right, adj, N - n_left, first + n_left, owner)


def graph_partition(
    mesh: Mesh,
    dofmap: DofMap,
    N: int,
    layers: int = 1,
    partition_file: str | Path | None = None,
    mode: str = "element",
) -> Decomposition:
    """Non-uniform decomposition into ``N`` subdomains.

    Recursive bisection: each split grows one half breadth-first from a
    pseudo-peripheral dof of the current piece until it holds its share of
    dofs. Sizes are balanced to within one dof per split. When
    ``partition_file`` is given its ownership is used verbatim instead.
    """
    if partition_file is not None:
        owner = read_partition_file(partition_file, dofmap.n_free)
        if int(owner.max()) + 1 != N:
            raise ValueError(f"partition file defines {int(owner.max()) + 1} subdomains, expected {N}")
        return _with_overlap(owner, mesh, dofmap, layers, mode)
    if N < 1 or N > dofmap.n_free:
        raise ValueError(f"N must be in [1, {dofmap.n_free}], got {N}")
    owner = np.full(dofmap.n_free, -1, dtype=np.int64)
    _bisect(np.arange(dofmap.n_free), dof_adjacency(mesh, dofmap), N, 0, owner)
    return _with_overlap(owner, mesh, dofmap, layers, mode)


def read_partition_file(path: str | Path, n_free: int) -> np.ndarray:
    """Parse ``dof_index subdomain_index`` lines (0-based, ``#`` comments)."""
    owner = np.full(n_free, -1, dtype=np.int64)
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'dof subdomain', got {line!r}")
            try:
                dof, sub = int(fields[0]), int(fields[1])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-integer entry {line!r}") from None
            if not 0 <= dof < n_free or sub < 0:
                raise ValueError(f"{path}:{lineno}: index out of range in {line!r}")
            if owner[dof] != -1:
                raise ValueError(f"{path}:{lineno}: dof {dof} assigned twice")
            owner[dof] = sub
    missing = np.flatnonzero(owner < 0)
    if missing.size:
        raise ValueError(f"{path}: dof {int(missing[0])} has no subdomain")
    return owner


def write_partition_file(path: str | Path, dec: Decomposition) -> None:
    owner = dec.ownership()
    with open(path, "w") as fh:
        for dof, sub in enumerate(owner):
            fh.write(f"{dof} {sub}\n")
