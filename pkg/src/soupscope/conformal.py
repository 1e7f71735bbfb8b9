"""Conformal toolkit: sector power maps, the radii schedule, discrete
extremal length of quads, pinch annuli, annulus covers of quads and the
shifted-annulus cover of an off-centre annulus.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import dijkstra
from scipy.sparse.linalg import cg

from .errors import DomainError, InvalidInputError, SolverError
from .geometry import (Annulus, Point, Quad, SectorAnnulus, as_xy, point_segment_distances,
                       points_in_polygon)

PINCH_MODULUS = 36.0
COVER_THRESHOLD = 40.0


# -- power map and radii schedule --------------------------------------------

def power_map(eta: float, z) -> Point:
    """r e^{i theta} -> r^{pi/eta} e^{i theta pi/eta}, sector {0 < arg < eta} onto H."""
    if not (0 < eta <= math.pi):
        raise InvalidInputError("eta must lie in (0, pi]")
    x, y = as_xy(z)
    r = math.hypot(x, y)
    th = math.atan2(y, x)
    if r == 0 or not (0 < th < eta):
        raise DomainError("point is outside the open sector")
    k = math.pi / eta
    rr = r ** k
    return Point(rr * math.cos(th * k), rr * math.sin(th * k))


@dataclass(frozen=True)
class RadiiSchedule:
    r: float
    R: float
    eta: float

    def __post_init__(self):
        if not (0 < self.r < 1 < self.R):
            raise InvalidInputError("need 0 < r < 1 < R")
        if not (0 < self.eta < math.pi):
            raise InvalidInputError("eta must lie in (0, pi)")


def _schedule_exponent(beta: float, eta: float) -> float:
    if beta <= 1:
        return ((1 - beta) * math.pi + beta * eta) / eta
    return ((2 - beta) * math.pi + (beta - 1) * eta) / math.pi


def radii_schedule(sched: RadiiSchedule, beta: float):
    """(r_beta, R_beta): interpolates r^{pi/eta} -> r -> r^{eta/pi} (and likewise R)."""
    if not (0 <= beta <= 2):
        raise InvalidInputError("beta must lie in [0, 2]")
    e = _schedule_exponent(beta, sched.eta)
    return sched.r ** e, sched.R ** e


# -- quad fixtures ------------------------------------------------------------

def rectangle_quad(width: float, height: float) -> Quad:
    """S0 bottom, S1 right, S2 top, S3 left; modulus height / width."""
    return Quad.rectangle(width, height)


def half_annulus_quad(r: float, R: float, n_arc: int = 256, around: bool = False) -> Quad:
    """A(r, R) in the upper half-plane.

    By default S0 is the inner half-circle and S2 the outer one (modulus
    log(R/r)/pi).  With ``around`` the roles go to the two real-axis
    segments, so crossings run around the half-annulus (modulus
    pi/log(R/r)).
    """
    t = np.linspace(math.pi, 0.0, n_arc + 1)
    inner = np.stack([r * np.cos(t), r * np.sin(t)], axis=1)          # (-r,0) -> (r,0)
    outer = np.stack([R * np.cos(t[::-1]), R * np.sin(t[::-1])], axis=1)  # (R,0) -> (-R,0)
    b = np.vstack([inner, outer])
    c = (0, n_arc, n_arc + 1, 2 * n_arc + 1)
    q = Quad(b, c)
    return q.dual() if around else q


# -- discrete extremal length -------------------------------------------------

@dataclass
class DiscreteModulusResult:
    modulus: float
    dirichlet_energy: float
    solver_residual: float
    mesh: float


@dataclass
class _Raster:
    centers: np.ndarray          # (n, 2) inside cell centres
    index: np.ndarray            # grid -> cell index or -1
    origin: np.ndarray           # centre of grid cell (0, 0)
    mesh: float


def _rasterize(quad: Quad, mesh: float) -> _Raster:
    lo = quad.boundary.min(axis=0)
    hi = quad.boundary.max(axis=0)
    nx = int(math.ceil((hi[0] - lo[0]) / mesh)) + 2
    ny = int(math.ceil((hi[1] - lo[1]) / mesh)) + 2
    origin = lo - mesh / 2
    gx = origin[0] + mesh * np.arange(nx)
    gy = origin[1] + mesh * np.arange(ny)
    X, Y = np.meshgrid(gx, gy, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    inside = points_in_polygon(pts, quad.boundary).reshape(nx, ny)
    index = np.full((nx, ny), -1, dtype=np.int64)
    index[inside] = np.arange(int(inside.sum()))
    if not inside.any():
        raise InvalidInputError("quad is thinner than the mesh")
    return _Raster(pts[inside.ravel()], index, origin, mesh)


def _arc_labels_of(quad: Quad, pts: np.ndarray) -> np.ndarray:
    """Arc index of the boundary edge nearest to each point."""
    b = quad.boundary
    lab = quad.edge_arc_labels()
    out = np.empty(len(pts), dtype=np.int64)
    for s in range(0, len(pts), 2048):
        d = point_segment_distances(pts[s:s + 2048], b, np.roll(b, -1, axis=0))
        out[s:s + 2048] = lab[np.argmin(d, axis=1)]
    return out


def _solve_potential(quad: Quad, mesh: float, tol: float, maxiter: int | None = None):
    """Finite-volume Laplace solve: 0 on S0, 1 on S2, insulated S1 and S3.

    Interior faces carry conductance 1; a face to the outside on a
    Dirichlet arc sits half a cell away and carries conductance 2.
    """
    ras = _rasterize(quad, mesh)
    idx = ras.index
    n = len(ras.centers)
    rows, cols = [], []
    diag = np.zeros(n)
    rhs = np.zeros(n)
    bnd_cells, bnd_mid = [], []
    nx, ny = idx.shape
    for dx, dy in ((1, 0), (0, 1)):
        a = idx[:nx - dx, :ny - dy]
        b = idx[dx:, dy:]
        both = (a >= 0) & (b >= 0)
        rows.append(a[both])
        cols.append(b[both])
        for src, dst, sign in ((a, b, 1), (b, a, -1)):
            m = (src >= 0) & (dst < 0)
            cells = src[m]
            bnd_cells.append(cells)
            bnd_mid.append(ras.centers[cells] + sign * 0.5 * mesh * np.array([dx, dy]))
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    np.add.at(diag, r, 1.0)
    np.add.at(diag, c, 1.0)
    bc = np.concatenate(bnd_cells)
    bm = np.vstack(bnd_mid) if bnd_mid else np.zeros((0, 2))
    labels = _arc_labels_of(quad, bm)
    dirichlet = (labels == 0) | (labels == 2)
    g = (labels == 2).astype(float)
    np.add.at(diag, bc[dirichlet], 2.0)
    np.add.at(rhs, bc[dirichlet], 2.0 * g[dirichlet])
    if not np.any(labels == 0) or not np.any(labels == 2):
        raise InvalidInputError("mesh too coarse to resolve S0 and S2")
    off = sparse.coo_matrix((-np.ones(len(r)), (r, c)), shape=(n, n))
    A = (off + off.T + sparse.diags(diag)).tocsr()
    M = sparse.diags(1.0 / diag)
    u, info = cg(A, rhs, rtol=tol * 1e-2, atol=0.0, M=M, maxiter=maxiter or 20 * n)
    resid = float(np.linalg.norm(rhs - A @ u) / max(np.linalg.norm(rhs), 1e-300))
    if info != 0 or resid > tol:
        raise SolverError(f"conjugate gradient stalled (residual {resid:.3e})", residual=resid)
    # energy: sum over conductances of squared drops
    e = float(np.sum((u[r] - u[c]) ** 2))
    e += float(np.sum(2.0 * (u[bc[dirichlet]] - g[dirichlet]) ** 2))
    return ras, u, e, resid


def discrete_modulus(quad: Quad, mesh: float, tol: float = 1e-8) -> DiscreteModulusResult:
    """Extremal length of the S0-S2 crossing family as 1 / Dirichlet energy."""
    if mesh <= 0:
        raise InvalidInputError("mesh must be positive")
    _, _, energy, resid = _solve_potential(quad, mesh, tol)
    return DiscreteModulusResult(1.0 / energy, energy, resid, mesh)


# -- pinch annulus ------------------------------------------------------------

@dataclass
class PinchResult:
    annulus: Annulus
    d1: float
    path: np.ndarray
    guarantee: bool
    modulus: float | None


def _cell_graph(ras: _Raster, weights=None):
    idx = ras.index
    nx, ny = idx.shape
    rows, cols, w = [], [], []
    for dx, dy in ((1, 0), (0, 1), (1, 1), (1, -1)):
        xs = slice(0, nx - dx)
        xd = slice(dx, nx)
        if dy >= 0:
            ys, yd = slice(0, ny - dy), slice(dy, ny)
        else:
            ys, yd = slice(-dy, ny), slice(0, ny + dy)
        a = idx[xs, ys]
        b = idx[xd, yd]
        ok = (a >= 0) & (b >= 0)
        rows.append(a[ok])
        cols.append(b[ok])
        w.append(np.full(int(ok.sum()), ras.mesh * math.hypot(dx, dy)))
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(w)


def _arc_distances(quad: Quad, k: int, pts: np.ndarray):
    arc = quad.arc(k)
    d = point_segment_distances(pts, arc[:-1], arc[1:])
    j = np.argmin(d, axis=1)
    # nearest point on the arc, for the path endpoints
    a = arc[:-1][j]
    ab = arc[1:][j] - a
    L2 = np.sum(ab * ab, axis=1)
    t = np.clip(np.sum((pts - a) * ab, axis=1) / np.where(L2 > 0, L2, 1), 0, 1)
    return d[np.arange(len(pts)), j], a + t[:, None] * ab


def _shortest_between_arcs(quad: Quad, ras: _Raster, src_arc: int, dst_arc: int,
                           weights_fn=None, near: float = 1.5):
    """Shortest interior path from arc src_arc to arc dst_arc on the 8-neighbour cell graph."""
    n = len(ras.centers)
    r, c, w = _cell_graph(ras)
    if weights_fn is not None:
        w = weights_fn(w)
    ds, ps = _arc_distances(quad, src_arc, ras.centers)
    dt, pt = _arc_distances(quad, dst_arc, ras.centers)
    s_cells = np.flatnonzero(ds <= near * ras.mesh)
    t_cells = np.flatnonzero(dt <= near * ras.mesh)
    if len(s_cells) == 0 or len(t_cells) == 0:
        raise InvalidInputError("arcs are not reachable from the interior raster")
    S, T = n, n + 1
    rows = np.concatenate([r, np.full(len(s_cells), S), t_cells])
    cols = np.concatenate([c, s_cells, np.full(len(t_cells), T)])
    ww = np.concatenate([w, np.maximum(ds[s_cells], 1e-12), np.maximum(dt[t_cells], 1e-12)])
    G = sparse.coo_matrix((ww, (rows, cols)), shape=(n + 2, n + 2)).tocsr()
    dist, pred = dijkstra(G, directed=False, indices=S, return_predecessors=True)
    if not np.isfinite(dist[T]):
        raise InvalidInputError("S1 and S3 are not connected inside the quad")
    chain = []
    k = pred[T]
    while k != S and k >= 0:
        chain.append(k)
        k = pred[k]
    chain = chain[::-1]
    path = np.vstack([ps[chain[0]], ras.centers[chain], pt[chain[-1]]])
    return float(dist[T]), path


def _path_point_at(path: np.ndarray, s: float) -> np.ndarray:
    seg = np.hypot(*np.diff(path, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    s = min(max(s, 0.0), cum[-1])
    k = int(np.searchsorted(cum, s, side="right")) - 1
    k = min(k, len(seg) - 1)
    t = (s - cum[k]) / seg[k] if seg[k] > 0 else 0.0
    return path[k] + t * (path[k + 1] - path[k])


def pinch_annulus(quad: Quad, mesh: float | None = None, modulus: float | None = None) -> PinchResult:
    """Annulus (d1, 2 d1) around the midpoint of a shortest S1-S3 path.

    d1 is the inner distance between S1 and S3 on an 8-neighbour raster.
    ``guarantee`` is True when the quad modulus is at least 36, the
    regime where every S0-S2 crossing must cross the annulus.
    """
    if mesh is None:
        ext = np.ptp(quad.boundary, axis=0)
        mesh = float(min(ext)) / 32
    ras = _rasterize(quad, mesh)
    d1, path = _shortest_between_arcs(quad, ras, 1, 3)
    seg = np.hypot(*np.diff(path, axis=0).T)
    mid = _path_point_at(path, seg.sum() / 2)
    if modulus is None:
        try:
            modulus = discrete_modulus(quad, mesh).modulus
        except SolverError:
            modulus = None
    guarantee = modulus is not None and modulus >= PINCH_MODULUS
    return PinchResult(Annulus(Point(*mid), d1, 2 * d1), d1, path, guarantee, modulus)


# -- quad covers --------------------------------------------------------------

def _split_arc_by(values: np.ndarray, K: int) -> list:
    """Indices where a monotone-ish potential along an arc crosses j/K."""
    out = []
    for j in range(1, K):
        lvl = j / K
        k = int(np.argmin(np.abs(values - lvl)))
        out.append(k)
    return out


def _refine_arc(quad: Quad, k: int, per_seg: int) -> np.ndarray:
    arc = quad.arc(k)
    pts = [arc[0]]
    for a, b in zip(arc[:-1], arc[1:]):
        for t in np.linspace(0, 1, per_seg + 1)[1:]:
            pts.append(a + t * (b - a))
    return np.array(pts)


def sub_quad(quad: Quad, arcs0: np.ndarray, arcs2: np.ndarray, i: tuple, j: tuple) -> Quad:
    """Quad whose S0 is arcs0[i0..i1] and S2 is arcs2[j0..j1], same region.

    arcs0 and arcs2 are refined copies of S0 and S2; the other boundary
    stays as is.
    """
    s1 = quad.arc(1)
    s3 = quad.arc(3)
    i0, i1 = i
    j0, j1 = j
    # traverse: S0 piece, rest of S0, S1, S2 up to piece, S2 piece, rest of S2, S3, start of S0
    part_a = arcs0[i0:i1 + 1]
    part_b = np.vstack([arcs0[i1 + 1:], s1[1:-1], arcs2[:j0]])
    part_c = arcs2[j0:j1 + 1]
    part_d = np.vstack([arcs2[j1 + 1:], s3[1:-1], arcs0[:i0]])
    b = np.vstack([part_a, part_b, part_c, part_d])
    c0 = 0
    c1 = len(part_a) - 1
    c2 = len(part_a) + len(part_b)
    c3 = c2 + len(part_c) - 1
    return Quad(b, (c0, c1, c2, c3))


@dataclass
class QuadCover:
    annuli: list
    K: int
    sub_moduli: np.ndarray
    pinches: list


def quad_annuli_cover(quad: Quad, mesh: float, K: int | None = None,
                      threshold: float = COVER_THRESHOLD, K_max: int = 64) -> QuadCover:
    """K^2 pinch annuli, one for each family joining the i-th piece of S0 to the j-th piece of S2.

    S0 and S2 are cut where the dual potential (0 on S1, 1 on S3) crosses
    j/K.  Without an explicit K, K doubles from 1 until every sub-quad has
    discrete modulus at least ``threshold``.
    """
    arcs0 = _refine_arc(quad, 0, 4)
    arcs2 = _refine_arc(quad, 2, 4)
    dual = quad.dual()
    ras, v, _, _ = _solve_potential(dual, mesh, 1e-8)

    def potential_on(pts):
        d = np.hypot(ras.centers[None, :, 0] - pts[:, None, 0], ras.centers[None, :, 1] - pts[:, None, 1])
        return v[np.argmin(d, axis=1)]

    # dual potential: 0 on dual S0 = S1, 1 on dual S2 = S3; along S0 it runs 1 -> 0
    v0 = potential_on(arcs0)
    v2 = potential_on(arcs2)
    Ks = [K] if K is not None else [2 ** e for e in range(0, int(math.log2(K_max)) + 1)]
    last = None
    for k in Ks:
        cuts0 = [0] + sorted(_split_arc_by(1 - v0, k)) + [len(arcs0) - 1]
        cuts2 = [0] + sorted(_split_arc_by(v2, k)) + [len(arcs2) - 1]
        if len(set(cuts0)) != k + 1 or len(set(cuts2)) != k + 1:
            continue
        annuli, mods, pinches = [], [], []
        ok = True
        for a in range(k):
            for b in range(k):
                q = sub_quad(quad, arcs0, arcs2, (cuts0[a], cuts0[a + 1]), (cuts2[b], cuts2[b + 1]))
                m = discrete_modulus(q, mesh).modulus
                mods.append(m)
                if m < threshold:
                    ok = False
                    if K is None:
                        break
                p = pinch_annulus(q, mesh, modulus=m)
                pinches.append(p)
                annuli.append(p.annulus)
            if not ok and K is None:
                break
        last = QuadCover(annuli, k, np.array(mods), pinches)
        if ok or K is not None:
            return last
    raise InvalidInputError(f"no K <= {K_max} gives sub-moduli above {threshold}")


def random_crossing_paths(quad: Quad, mesh: float, count: int, rng: np.random.Generator,
                          spread: float = 1.5, src: int = 0, dst: int = 2) -> list:
    """Random interior polylines from arc ``src`` to arc ``dst``.

    Each is a shortest path on the 8-neighbour raster under independent
    log-normal edge weights, so the paths wander; endpoints lie on the arcs.
    """
    ras = _rasterize(quad, mesh)
    out = []
    for _ in range(count):
        noise = lambda w: w * np.exp(spread * rng.standard_normal(len(w)))
        _, path = _shortest_between_arcs(quad, ras, src, dst, weights_fn=noise, near=0.75)
        out.append(path)
    return out


# -- shifted cover of an off-centre annulus ----------------------------------

def sector_cover(a: Annulus) -> list:
    """Finitely many annuli such that any path in the upper half-plane crossing ``a`` crosses one.

    With rho = inner/outer, candidates sit at x0 + i y_j outer, y_j =
    (j-1)(1-rho)/2 for j = 1..k, k = ceil(4/(1-rho)) + 1, with radii
    outer (rho + (1-rho)/4) and outer (1+rho)/2.  The candidate nearest to
    the true centre has its inner disk containing the inner disk of ``a``
    and its outer circle inside the outer disk of ``a``.  A centre on the
    real axis returns the half-annulus itself; a centre above the last
    candidate returns the full annulus.
    """
    cx, cy = a.center.x, a.center.y
    if cy < 0:
        raise InvalidInputError("annulus centre must lie in the closed upper half-plane")
    rho = a.inner_r / a.outer_r
    if cy == 0:
        return [SectorAnnulus(a.inner_r, a.outer_r, math.pi, a.center, 0.0)]
    k = math.ceil(4 / (1 - rho)) + 1
    step = (1 - rho) / 2
    if cy / a.outer_r > (k - 1) * step + step / 2:
        return [SectorAnnulus(a.inner_r, a.outer_r, 2 * math.pi, a.center, 0.0)]
    r_in = a.outer_r * (rho + (1 - rho) / 4)
    r_out = a.outer_r * (1 + rho) / 2
    out = []
    for j in range(1, k + 1):
        yj = (j - 1) * step * a.outer_r
        out.append(SectorAnnulus(r_in, r_out, 2 * math.pi, Point(cx, yj), 0.0))
    return out
