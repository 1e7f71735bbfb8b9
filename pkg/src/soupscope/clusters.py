"""Clusters of lattice loops, their fillings and outer boundaries.

Everything is rasterised on the x2 refined grid: refined cell (a, b) has
centre (a * mesh / 2, b * mesh / 2).  Vertex v of the lattice is cell 2v
and the edge v-w is cell v + w, so a lattice loop's trace is a 4-connected
walk of refined cells.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import ConsistencyError, InvalidInputError, RejectedConfigurationError
from .geometry import (INNER, MIDDLE, OUTER, Annulus, PolyLoop, crossing_count_single,
                       crossing_scan, polylines_intersect)

FOUR = ndimage.generate_binary_structure(2, 1)
RESOLUTION = 2


def refined_sequence(sites: np.ndarray) -> np.ndarray:
    """Refined cells visited by a closed lattice loop: v0, m01, v1, m12, ..."""
    s = np.asarray(sites, dtype=np.int64).reshape(-1, 2)
    out = np.empty((2 * len(s), 2), dtype=np.int64)
    out[0::2] = 2 * s
    out[1::2] = s + np.concatenate([s[1:], s[:1]])
    return out


def refined_cells_all(loops):
    """Refined sequences of many lattice loops, concatenated, with per-loop start offsets."""
    n = np.array([len(l.sites) for l in loops], dtype=np.int64)
    if len(n) == 0:
        return np.zeros((0, 2), np.int64), np.zeros(1, np.int64)
    s = np.vstack([l.sites for l in loops]).astype(np.int64)
    start = np.concatenate([[0], np.cumsum(n)])
    nxt = np.arange(1, len(s) + 1)
    nxt[start[1:] - 1] = start[:-1]
    out = np.empty((2 * len(s), 2), dtype=np.int64)
    out[0::2] = 2 * s
    out[1::2] = s + s[nxt]
    return out, 2 * start


def _infer_mesh(loops) -> float:
    for l in loops:
        if l.sites is None:
            continue
        nz = np.flatnonzero(l.sites.ravel())
        if len(nz):
            k = nz[0]
            return float(l.vertices.ravel()[k] / l.sites.ravel()[k])
    return 1.0


@dataclass(eq=False)
class Filling:
    """Hole-free occupancy of a cluster on the refined grid."""

    resolution: int
    occupancy: np.ndarray
    offset: tuple           # refined cell of occupancy[0, 0]
    mesh: float

    @property
    def area(self) -> int:
        return int(self.occupancy.sum())

    @property
    def bbox(self):
        a0, b0 = self.offset
        return (a0, b0), (a0 + self.occupancy.shape[0], b0 + self.occupancy.shape[1])

    def cells(self) -> np.ndarray:
        return np.argwhere(self.occupancy) + np.asarray(self.offset)

    def contains_cells(self, cells) -> np.ndarray:
        c = np.asarray(cells, dtype=np.int64).reshape(-1, 2) - np.asarray(self.offset)
        W, H = self.occupancy.shape
        ok = (c[:, 0] >= 0) & (c[:, 0] < W) & (c[:, 1] >= 0) & (c[:, 1] < H)
        out = np.zeros(len(c), dtype=bool)
        out[ok] = self.occupancy[c[ok, 0], c[ok, 1]]
        return out

    def cell_centers(self) -> np.ndarray:
        return self.cells() * (self.mesh / self.resolution)


def filling_from_cells(trace_cells: np.ndarray, mesh: float) -> Filling:
    """Trace cells plus every cell not 4-connected to the outside."""
    t = np.asarray(trace_cells, dtype=np.int64).reshape(-1, 2)
    lo = t.min(axis=0) - 1
    hi = t.max(axis=0) + 2
    grid = np.zeros(tuple(hi - lo), dtype=bool)
    grid[t[:, 0] - lo[0], t[:, 1] - lo[1]] = True
    if min(grid.shape) < 5:
        # a hole needs at least a 3 x 3 trace box
        filled = grid
    else:
        filled = ndimage.binary_fill_holes(grid, structure=FOUR)
    return Filling(RESOLUTION, filled, (int(lo[0]), int(lo[1])), mesh)


def filling(loops, mesh: float | None = None) -> Filling:
    loops = list(loops)
    if not loops:
        raise InvalidInputError("filling of an empty cluster")
    if any(l.sites is None for l in loops):
        raise InvalidInputError("fillings need lattice loops")
    mesh = mesh or _infer_mesh(loops)
    cells = np.vstack([refined_sequence(l.sites) for l in loops])
    return filling_from_cells(cells, mesh)


@dataclass(eq=False)
class ClusterSet:
    loops: list
    cluster_of: np.ndarray                  # per loop index
    members: list                           # cluster -> loop indices
    traces: list                            # cluster -> unique refined cells
    fillings: list
    mesh: float
    outermost_flags: np.ndarray | None = None
    canvas: np.ndarray | None = None        # outermost cluster label per refined cell, -1 elsewhere
    canvas_offset: tuple = (0, 0)
    _cell_owner: dict = field(default_factory=dict, repr=False)

    @property
    def n_clusters(self) -> int:
        return len(self.members)

    @property
    def clusters(self) -> dict:
        """cluster id -> loop ids."""
        return {c: [self.loops[i].id for i in m] for c, m in enumerate(self.members)}

    def outermost_ids(self) -> list:
        return [int(c) for c in np.flatnonzero(self.outermost_flags)]

    def canvas_centers(self) -> np.ndarray:
        W, H = self.canvas.shape
        a = (np.arange(W) + self.canvas_offset[0]) * (self.mesh / RESOLUTION)
        b = (np.arange(H) + self.canvas_offset[1]) * (self.mesh / RESOLUTION)
        return np.stack(np.meshgrid(a, b, indexing="ij"), axis=-1)


def cluster_labels(loops) -> np.ndarray:
    """Cluster index per loop (loops sharing a lattice vertex), numbered by first appearance."""
    loops = list(loops)
    m = len(loops)
    if m == 0:
        return np.zeros(0, np.int64)
    if any(l.sites is None for l in loops):
        raise InvalidInputError("clusters need lattice loops")
    lengths = np.array([len(l.sites) for l in loops])
    allsites = np.vstack([l.sites for l in loops])
    owner = np.repeat(np.arange(m), lengths)
    _, site_idx = np.unique(allsites, axis=0, return_inverse=True)
    site_idx = site_idx.ravel()
    nsite = int(site_idx.max()) + 1
    g = coo_matrix((np.ones(len(owner)), (owner, m + site_idx)), shape=(m + nsite, m + nsite))
    _, lab = connected_components(g, directed=False)
    loop_lab = lab[:m]
    _, first = np.unique(loop_lab, return_index=True)
    order = np.argsort(first)
    remap = np.empty(loop_lab.max() + 1, dtype=np.int64)
    remap[loop_lab[first[order]]] = np.arange(len(order))
    return remap[loop_lab]


def build_clusters(loops, mesh: float | None = None) -> ClusterSet:
    """Union of loops sharing a lattice vertex, with fillings and outermost flags."""
    loops = list(loops)
    mesh = mesh or _infer_mesh(loops)
    m = len(loops)
    if m == 0:
        cs = ClusterSet([], np.zeros(0, np.int64), [], [], [], mesh)
        outermost(cs)
        return cs
    cluster_of = cluster_labels(loops)
    members = [[] for _ in range(int(cluster_of.max()) + 1)]
    for i, c in enumerate(cluster_of):
        members[c].append(i)
    traces, fills = [], []
    allcells, start = refined_cells_all(loops)
    # unique (cluster, cell) pairs in one pass, grouped by cluster
    owner = np.repeat(cluster_of, np.diff(start))
    lo = allcells.min(axis=0)
    span = allcells.max(axis=0) - lo + 1
    key = (owner * span[0] + (allcells[:, 0] - lo[0])) * span[1] + (allcells[:, 1] - lo[1])
    key = np.unique(key)
    cl = key // (span[0] * span[1])
    rem = key % (span[0] * span[1])
    cells_u = np.stack([rem // span[1] + lo[0], rem % span[1] + lo[1]], axis=1)
    bounds = np.searchsorted(cl, np.arange(len(members) + 1))
    for c in range(len(members)):
        cells = cells_u[bounds[c]:bounds[c + 1]]
        traces.append(cells)
        fills.append(filling_from_cells(cells, mesh))
    cs = ClusterSet(loops, cluster_of, members, traces, fills, mesh)
    outermost(cs)
    return cs


def outermost(cs: ClusterSet) -> np.ndarray:
    """Flag clusters lying in no other cluster's filling and paint their fillings.

    Clusters are visited by decreasing filling area; a cluster inside some
    filling is inside an outermost one, which is larger and already painted.
    """
    k = cs.n_clusters
    flags = np.zeros(k, dtype=bool)
    if k == 0:
        cs.outermost_flags = flags
        cs.canvas = np.full((1, 1), -1, dtype=np.int64)
        cs.canvas_offset = (0, 0)
        return flags
    lo = np.min([f.offset for f in cs.fillings], axis=0)
    hi = np.max([np.asarray(f.offset) + f.occupancy.shape for f in cs.fillings], axis=0)
    canvas = np.full(tuple(hi - lo), -1, dtype=np.int64)
    areas = np.array([f.area for f in cs.fillings])
    for c in np.argsort(-areas, kind="stable"):
        t = cs.traces[c] - lo
        if np.any(canvas[t[:, 0], t[:, 1]] >= 0):
            continue
        flags[c] = True
        f = cs.fillings[c]
        a0, b0 = np.asarray(f.offset) - lo
        W, H = f.occupancy.shape
        view = canvas[a0:a0 + W, b0:b0 + H]
        view[f.occupancy] = c
    cs.outermost_flags = flags
    cs.canvas = canvas
    cs.canvas_offset = (int(lo[0]), int(lo[1]))
    return flags


def outermost_pairwise(cs: ClusterSet) -> np.ndarray:
    """Quadratic reference: outermost iff no other filling holds one of its trace cells."""
    k = cs.n_clusters
    flags = np.ones(k, dtype=bool)
    for c in range(k):
        for d in range(k):
            if c != d and np.any(cs.fillings[d].contains_cells(cs.traces[c])):
                flags[c] = False
                break
    return flags


# -- annulus rasterisation ---------------------------------------------------

def _cell_size(mesh):
    return mesh / RESOLUTION


def check_annulus(a: Annulus, mesh: float, centers=None):
    """Reject annuli thinner than a refined cell diagonal or grazing cell centres."""
    if a.outer_r - a.inner_r <= math.sqrt(2.0) * _cell_size(mesh):
        raise RejectedConfigurationError("annulus thinner than a refined cell diagonal")
    if centers is not None and len(centers):
        a.check_non_grazing(centers)


def canvas_states(cs: ClusterSet, a: Annulus) -> np.ndarray:
    pts = cs.canvas_centers().reshape(-1, 2)
    occ = (cs.canvas >= 0).ravel()
    check_annulus(a, cs.mesh, pts[occ])
    return a.states(pts).reshape(cs.canvas.shape)


def _crossing_components(cs: ClusterSet, a: Annulus):
    """Label array of U inside A and the labels of components meeting both circles."""
    if cs.n_clusters == 0:
        return None, None, []
    st = canvas_states(cs, a)
    lab, comps = components_from_states(cs.canvas >= 0, st)
    return lab, st, comps


def components_from_states(U: np.ndarray, st: np.ndarray):
    """4-components of U in the middle state that touch U in both end states."""
    mid = U & (st == MIDDLE)
    lab, n = ndimage.label(mid, structure=FOUR)
    if n == 0:
        return lab, []
    near_in = ndimage.binary_dilation(U & (st == INNER), structure=FOUR)
    near_out = ndimage.binary_dilation(U & (st == OUTER), structure=FOUR)
    idx = np.arange(1, n + 1)
    hit_in = ndimage.maximum(near_in, lab, idx) > 0
    hit_out = ndimage.maximum(near_out, lab, idx) > 0
    return lab, [int(i) for i in idx[hit_in & hit_out]]


def comp_number(cs: ClusterSet, a: Annulus) -> int:
    """Components of (union of outermost fillings) inside A that join both circles."""
    return len(_crossing_components(cs, a)[2])


def _trace_states(cs: ClusterSet, c: int, a: Annulus) -> np.ndarray:
    pts = cs.traces[c] * _cell_size(cs.mesh)
    return a.states(pts)


def clus_number(cs: ClusterSet, a: Annulus) -> int:
    """Outermost clusters whose trace meets both boundary circles."""
    if cs.n_clusters == 0:
        return 0
    check_annulus(a, cs.mesh)
    ids = cs.outermost_ids()
    if not ids:
        return 0
    pts = np.vstack([cs.traces[c] for c in ids]) * _cell_size(cs.mesh)
    a.check_non_grazing(pts)
    d = a.distances(pts)
    start = np.concatenate([[0], np.cumsum([len(cs.traces[c]) for c in ids])[:-1]])
    inner = np.add.reduceat((d <= a.inner_r).astype(np.int64), start) > 0
    outer = np.add.reduceat((d >= a.outer_r).astype(np.int64), start) > 0
    return int(np.sum(inner & outer))


def crossing_clusters(cs: ClusterSet, a: Annulus) -> list:
    out = []
    for c in cs.outermost_ids():
        d = a.distances(cs.traces[c] * _cell_size(cs.mesh))
        if d.min() <= a.inner_r and d.max() >= a.outer_r:
            out.append(c)
    return out


# -- boundaries --------------------------------------------------------------

@dataclass(eq=False)
class ClusterBoundary:
    """Outer boundary of an outermost filling.

    ``loop`` is the crack polygon through refined cell corners, traversed
    counterclockwise with the filling on the left.  ``cells`` is the
    4-connected walk of boundary cells just inside it, used for crossing
    counts with the same cell-centre semantics as the fillings.
    """

    loop: PolyLoop
    cells: np.ndarray
    cluster_id: int
    corners: np.ndarray

    def cell_centers(self, mesh: float) -> np.ndarray:
        return self.cells * _cell_size(mesh)


_DIRS = {(1, 0): 0, (0, 1): 1, (-1, 0): 2, (0, -1): 3}


def trace_boundary(occ: np.ndarray):
    """Crack boundary of a hole-free, well-composed occupancy array.

    Corner (i, j) is the lower-left corner of local cell (i, j).  Returns
    (corners, inner_cells) in local coordinates, counterclockwise.
    """
    W, H = occ.shape
    pad = np.zeros((W + 2, H + 2), dtype=bool)
    pad[1:-1, 1:-1] = occ
    cells = np.argwhere(occ)
    succ = {}

    def add(start, end, cell):
        if start in succ:
            raise ConsistencyError("filling is not well composed (pinch at a corner)")
        succ[start] = (end, cell)

    for i, j in cells.tolist():
        pi, pj = i + 1, j + 1
        c = (i, j)
        if not pad[pi, pj - 1]:
            add((i, j), (i + 1, j), c)
        if not pad[pi + 1, pj]:
            add((i + 1, j), (i + 1, j + 1), c)
        if not pad[pi, pj + 1]:
            add((i + 1, j + 1), (i, j + 1), c)
        if not pad[pi - 1, pj]:
            add((i, j + 1), (i, j), c)
    if not succ:
        raise ConsistencyError("empty filling has no boundary")
    start = min(succ)
    corners = [start]
    inner = [succ[start][1]]
    cur = succ[start][0]
    while cur != start:
        corners.append(cur)
        inner.append(succ[cur][1])
        cur = succ[cur][0]
        if len(corners) > len(succ):
            raise ConsistencyError("boundary trace did not close")
    if len(corners) != len(succ):
        raise ConsistencyError("filling boundary has more than one component")
    return np.array(corners, dtype=np.int64), _cell_walk(inner, occ)


def _cell_walk(inner, occ: np.ndarray) -> np.ndarray:
    """Close diagonal jumps with the occupied corner cell and drop repeats."""
    out = []
    n = len(inner)
    for k in range(n):
        c = inner[k]
        if not out or out[-1] != c:
            out.append(c)
        d = inner[(k + 1) % n]
        if abs(d[0] - c[0]) == 1 and abs(d[1] - c[1]) == 1:
            for mid in ((d[0], c[1]), (c[0], d[1])):
                if occ[mid]:
                    out.append(mid)
                    break
            else:
                raise ConsistencyError("diagonal step between boundary cells")
    while len(out) > 1 and out[0] == out[-1]:
        out.pop()
    return np.array(out, dtype=np.int64).reshape(-1, 2)


def _collapse_collinear(corners: np.ndarray) -> np.ndarray:
    n = len(corners)
    if n <= 4:
        return corners
    prev = np.roll(corners, 1, axis=0)
    nxt = np.roll(corners, -1, axis=0)
    d1 = corners - prev
    d2 = nxt - corners
    turn = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    return corners[turn != 0]


def extract_boundaries(cs: ClusterSet, ids=None) -> list:
    """Boundaries of the outermost fillings (or of the listed outermost clusters)."""
    out = []
    h = _cell_size(cs.mesh)
    for c in (cs.outermost_ids() if ids is None else ids):
        f = cs.fillings[c]
        corners, cells = trace_boundary(f.occupancy)
        off = np.asarray(f.offset)
        corners = corners + off
        poly = _collapse_collinear(corners)
        verts = (poly - 0.5) * h
        out.append(ClusterBoundary(PolyLoop(verts, id=c), cells + off, c, corners))
    return out


def _check_disjoint(boundaries):
    cb = [b for b in boundaries if isinstance(b, ClusterBoundary)]
    seen = set()
    for b in cb:
        keys = set(map(tuple, b.corners.tolist()))
        if keys & seen:
            raise InvalidInputError("boundary loops are not disjoint")
        seen |= keys
    plain = [b for b in boundaries if not isinstance(b, ClusterBoundary)]
    for i in range(len(plain)):
        for j in range(i + 1, len(plain)):
            if polylines_intersect(plain[i], plain[j]):
                raise InvalidInputError("loops are not disjoint")


def cross_number_simple(boundaries, a: Annulus, mesh: float | None = None) -> int:
    """Sum of per-loop crossings over pairwise disjoint simple loops."""
    boundaries = list(boundaries)
    _check_disjoint(boundaries)
    total = 0
    for b in boundaries:
        if isinstance(b, ClusterBoundary):
            h = mesh if mesh is not None else None
            if h is None:
                raise InvalidInputError("cluster boundaries need the lattice mesh")
            total += crossing_scan(a.states(b.cell_centers(h)))[0]
        else:
            total += crossing_count_single(b, a, densify=True)[0]
    return total


def loop_crossings(loop: PolyLoop, a: Annulus, mesh: float | None = None) -> int:
    """Per-loop count; lattice loops are scanned along their refined cell walk."""
    if loop.sites is not None:
        h = mesh if mesh is not None else _infer_mesh([loop])
        return crossing_scan(a.states(refined_sequence(loop.sites) * _cell_size(h)))[0]
    return crossing_count_single(loop, a, densify=True)[0]


def total_single_crossings(loops, a: Annulus, mesh: float | None = None) -> int:
    loops = list(loops)
    if not loops:
        return 0
    h = mesh or _infer_mesh(loops)
    lattice = [l for l in loops if l.sites is not None]
    total = sum(loop_crossings(l, a, h) for l in loops if l.sites is None)
    if lattice:
        cells, start = refined_cells_all(lattice)
        st = a.states(cells * _cell_size(h))
        has_in = np.add.reduceat((st == INNER).astype(np.int64), start[:-1]) > 0
        has_out = np.add.reduceat((st == OUTER).astype(np.int64), start[:-1]) > 0
        # only loops touching both sides can cross
        for k in np.flatnonzero(has_in & has_out):
            total += crossing_scan(st[start[k]:start[k + 1]])[0]
    return total


# -- crossing witnesses ------------------------------------------------------

@dataclass
class CrossingWitness:
    component: int
    cluster_id: int
    cells: np.ndarray       # refined trace cells, inner circle to outer circle
    loop_ids: list


def crossing_witnesses(cs: ClusterSet, a: Annulus) -> list:
    """For each crossing component, a path of loop-trace cells joining the circles.

    Returns one witness per counted component, or None in its slot when no
    such path exists.
    """
    lab, st, comps = _crossing_components(cs, a)
    out = []
    if not comps:
        return out
    off = np.asarray(cs.canvas_offset)
    for comp in comps:
        cell0 = np.argwhere(lab == comp)[0]
        c = int(cs.canvas[cell0[0], cell0[1]])
        t = cs.traces[c] - off
        ts = st[t[:, 0], t[:, 1]]
        inK = lab[t[:, 0], t[:, 1]] == comp
        key = {tuple(v): k for k, v in enumerate(t.tolist())}
        # sources: trace cells of K next to a trace cell on/inside the inner circle
        nodes = set(k for k in np.flatnonzero(inK))
        inner = set(k for k in np.flatnonzero(ts == INNER))
        outer = set(k for k in np.flatnonzero(ts == OUTER))

        def nbrs(k):
            x, y = t[k]
            for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                j = key.get((x + dx, y + dy))
                if j is not None:
                    yield j

        start = [k for k in inner if any(j in nodes for j in nbrs(k))]
        prev = {k: None for k in start}
        q = deque(start)
        goal = None
        while q:
            k = q.popleft()
            if k in nodes and any(j in outer for j in nbrs(k)):
                goal = k
                break
            for j in nbrs(k):
                if j in nodes and j not in prev:
                    prev[j] = k
                    q.append(j)
        if goal is None:
            out.append(None)
            continue
        path = [next(j for j in nbrs(goal) if j in outer)]
        k = goal
        while k is not None:
            path.append(k)
            k = prev[k]
        path = path[::-1]
        cells = t[path] + off
        out.append(CrossingWitness(comp, c, cells, _covering_loops(cs, c, cells)))
    return out


def _covering_loops(cs: ClusterSet, c: int, cells: np.ndarray) -> list:
    owner = cs._cell_owner.get(c)
    if owner is None:
        owner = {}
        for i in cs.members[c]:
            for cell in map(tuple, refined_sequence(cs.loops[i].sites).tolist()):
                owner.setdefault(cell, set()).add(cs.loops[i].id)
        cs._cell_owner[c] = owner
    ids = set()
    for cell in map(tuple, cells.tolist()):
        ids |= owner[cell]
    return sorted(ids)
