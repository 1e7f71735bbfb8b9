"""Planar primitives: points, closed polylines, annuli, sectors and quads.

Also hosts the per-loop crossing scan and winding numbers used by every
other module.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import (ConsistencyError, DegenerateInputError, InvalidInputError,
                     RejectedConfigurationError)

TWO_PI = 2.0 * math.pi

# states returned by Annulus.states
INNER, MIDDLE, OUTER = 0, 1, 2

# orientation tests treat |d| below this times the squared scale as zero
ORIENT_RTOL = 1e-12


@dataclass(frozen=True)
class Point:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise InvalidInputError(f"non-finite point ({self.x}, {self.y})")

    def __iter__(self):
        yield self.x
        yield self.y

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


def as_xy(p) -> np.ndarray:
    if isinstance(p, Point):
        return p.as_array()
    a = np.asarray(p, dtype=float).reshape(2)
    return a


class PolyLoop:
    """Closed polyline; the last vertex connects back to the first.

    ``sites`` holds integer lattice coordinates (vertex = sites * mesh) for
    lattice-born loops and is None for continuum fixtures.
    """

    __slots__ = ("vertices", "id", "sites")

    def __init__(self, vertices, id=0, sites=None):
        v = np.asarray(vertices, dtype=float)
        if v.size == 0:
            v = v.reshape(0, 2)
        if v.ndim != 2 or v.shape[1] != 2:
            raise InvalidInputError("loop vertices must have shape (n, 2)")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("loop vertices must be finite")
        self.vertices = v
        self.id = id
        if sites is not None:
            sites = np.asarray(sites, dtype=np.int64).reshape(-1, 2)
            if len(sites) != len(v):
                raise InvalidInputError("sites and vertices differ in length")
        self.sites = sites

    def __len__(self):
        return len(self.vertices)

    def __repr__(self):
        return f"PolyLoop(id={self.id!r}, n={len(self)})"

    @classmethod
    def from_points(cls, points: Sequence, id=0) -> "PolyLoop":
        return cls(np.array([as_xy(p) for p in points]).reshape(-1, 2), id=id)

    def points(self) -> list[Point]:
        return [Point(float(x), float(y)) for x, y in self.vertices]

    def rerooted(self, k: int) -> "PolyLoop":
        """Same closed loop traversed from vertex k."""
        sites = None if self.sites is None else np.roll(self.sites, -k, axis=0)
        return PolyLoop(np.roll(self.vertices, -k, axis=0), self.id, sites)

    def reversed(self) -> "PolyLoop":
        sites = None if self.sites is None else self.sites[::-1].copy()
        return PolyLoop(self.vertices[::-1].copy(), self.id, sites)

    def to_json(self) -> str:
        return json.dumps(self.vertices.tolist())

    @classmethod
    def from_json(cls, text: str, id=0) -> "PolyLoop":
        data = json.loads(text)
        return cls(np.array(data, dtype=float).reshape(-1, 2), id=id)


def _verts(loop) -> np.ndarray:
    if isinstance(loop, PolyLoop):
        return loop.vertices
    return np.asarray(loop, dtype=float).reshape(-1, 2)


@dataclass(frozen=True)
class Annulus:
    center: Point
    inner_r: float
    outer_r: float

    def __post_init__(self):
        if not isinstance(self.center, Point):
            object.__setattr__(self, "center", Point(*as_xy(self.center)))
        if not (0 < self.inner_r < self.outer_r) or not math.isfinite(self.outer_r):
            raise InvalidInputError(
                f"annulus needs 0 < inner_r < outer_r, got {self.inner_r}, {self.outer_r}")

    def distances(self, pts) -> np.ndarray:
        p = np.asarray(pts, dtype=float).reshape(-1, 2)
        return np.hypot(p[:, 0] - self.center.x, p[:, 1] - self.center.y)

    def states(self, pts) -> np.ndarray:
        """0 inside/on the inner circle, 2 outside/on the outer circle, 1 between."""
        d = self.distances(pts)
        s = np.ones(len(d), dtype=np.int8)
        s[d <= self.inner_r] = INNER
        s[d >= self.outer_r] = OUTER
        return s

    def contains(self, pts) -> np.ndarray:
        return self.states(pts) == MIDDLE

    def with_radii(self, inner_r, outer_r) -> "Annulus":
        return Annulus(self.center, inner_r, outer_r)

    def check_non_grazing(self, pts, tol=1e-9):
        """Reject configurations where a sample point sits on a boundary circle."""
        d = self.distances(pts)
        for rad in (self.inner_r, self.outer_r):
            if d.size and np.min(np.abs(d - rad)) <= tol * max(1.0, rad):
                raise RejectedConfigurationError(
                    f"radius {rad} grazes the raster (a cell center lies on the circle)")


@dataclass(frozen=True)
class SectorAnnulus:
    """{z : inner_r < |z - center| < outer_r, phase < arg(z - center) < phase + angle}.

    With the defaults this is the sector of the annulus at the origin
    bounded by the positive real axis and the ray at ``angle``.  An
    ``angle`` of 2*pi denotes the full annulus.
    """

    inner_r: float
    outer_r: float
    angle: float
    center: Point = Point(0.0, 0.0)
    phase: float = 0.0

    def __post_init__(self):
        if not (0 < self.inner_r < self.outer_r):
            raise InvalidInputError("sector needs 0 < inner_r < outer_r")
        if not (0 < self.angle <= TWO_PI + 1e-12):
            raise InvalidInputError("sector angle must lie in (0, 2*pi]")

    @property
    def full(self) -> bool:
        return self.angle >= TWO_PI - 1e-12

    def annulus(self) -> Annulus:
        return Annulus(self.center, self.inner_r, self.outer_r)

    def in_wedge(self, pts) -> np.ndarray:
        p = np.asarray(pts, dtype=float).reshape(-1, 2)
        if self.full:
            return np.ones(len(p), dtype=bool)
        th = np.arctan2(p[:, 1] - self.center.y, p[:, 0] - self.center.x)
        rel = np.mod(th - self.phase, TWO_PI)
        return (rel > 0) & (rel < self.angle)

    def contains(self, pts) -> np.ndarray:
        return self.annulus().contains(pts) & self.in_wedge(pts)


class Quad:
    """Simple polygon with four counterclockwise boundary arcs S0..S3.

    ``corners`` are vertex indices c0 < c1 < c2 < c3; arc k runs from vertex
    c_k to vertex c_{k+1} (arc 3 wraps around to c0).  Consecutive arcs
    share their corner vertex, so the edges are partitioned exactly.
    """

    def __init__(self, boundary, corners):
        b = np.asarray(boundary, dtype=float).reshape(-1, 2)
        if len(b) < 4:
            raise InvalidInputError("quad boundary needs at least 4 vertices")
        c = tuple(int(i) for i in corners)
        if len(c) != 4 or not (0 <= c[0] < c[1] < c[2] < c[3] < len(b)):
            raise InvalidInputError("corners must be 4 increasing vertex indices")
        if polygon_signed_area(b) <= 0:
            raise InvalidInputError("quad boundary must be counterclockwise")
        if not polygon_is_simple(b):
            raise InvalidInputError("quad boundary must be a simple polygon")
        self.boundary = b
        self.corners = c

    @property
    def arc_splits(self) -> list[tuple[int, int]]:
        c = self.corners
        return [(c[k], c[(k + 1) % 4]) for k in range(4)]

    def arc(self, k: int) -> np.ndarray:
        s, e = self.arc_splits[k]
        n = len(self.boundary)
        if e <= s:
            e += n
        idx = np.arange(s, e + 1) % n
        return self.boundary[idx]

    def dual(self) -> "Quad":
        """Swap the roles of (S0, S2) and (S1, S3)."""
        n = len(self.boundary)
        c1 = self.corners[1]
        b = np.roll(self.boundary, -c1, axis=0)
        c = sorted(((ci - c1) % n) for ci in self.corners)
        return Quad(b, c)

    def edge_arc_labels(self) -> np.ndarray:
        """Arc index of each boundary edge (edge i joins vertex i and i+1)."""
        n = len(self.boundary)
        lab = np.empty(n, dtype=np.int8)
        for k, (s, e) in enumerate(self.arc_splits):
            i = s
            while i != e:
                lab[i] = k
                i = (i + 1) % n
        return lab

    @classmethod
    def rectangle(cls, width, height, origin=(0.0, 0.0)) -> "Quad":
        x0, y0 = origin
        b = [(x0, y0), (x0 + width, y0), (x0 + width, y0 + height), (x0, y0 + height)]
        return cls(b, (0, 1, 2, 3))


class CrossingArc(NamedTuple):
    loop_id: object
    start_index: int
    end_index: int


class CircleHit(NamedTuple):
    t: float
    tangent: bool


def polygon_signed_area(pts) -> float:
    p = _verts(pts)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _orient(ax, ay, bx, by, cx, cy):
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def segments_cross_matrix(P0, P1, Q0, Q1) -> np.ndarray:
    """Boolean matrix: segment i of P meets segment j of Q (closed segments)."""
    P0 = np.asarray(P0, float)[:, None, :]
    P1 = np.asarray(P1, float)[:, None, :]
    Q0 = np.asarray(Q0, float)[None, :, :]
    Q1 = np.asarray(Q1, float)[None, :, :]
    d1 = _orient(Q0[..., 0], Q0[..., 1], Q1[..., 0], Q1[..., 1], P0[..., 0], P0[..., 1])
    d2 = _orient(Q0[..., 0], Q0[..., 1], Q1[..., 0], Q1[..., 1], P1[..., 0], P1[..., 1])
    d3 = _orient(P0[..., 0], P0[..., 1], P1[..., 0], P1[..., 1], Q0[..., 0], Q0[..., 1])
    d4 = _orient(P0[..., 0], P0[..., 1], P1[..., 0], P1[..., 1], Q1[..., 0], Q1[..., 1])
    # orientations below rounding level count as collinear, so nearly
    # collinear disjoint segments cannot pass as a proper crossing
    sq = lambda v: np.sum(v * v, axis=-1)
    tol = ORIENT_RTOL * np.maximum(np.maximum(sq(P1 - P0), sq(Q1 - Q0)), sq(Q0 - P0))
    s1, s2, s3, s4 = (np.where(np.abs(d) <= tol, 0, np.sign(d)) for d in (d1, d2, d3, d4))
    proper = (s1 * s2 < 0) & (s3 * s4 < 0)

    def on_seg(A0, A1, C, s):
        lo = np.minimum(A0, A1)
        hi = np.maximum(A0, A1)
        inside = (C[..., 0] >= lo[..., 0]) & (C[..., 0] <= hi[..., 0]) & \
                 (C[..., 1] >= lo[..., 1]) & (C[..., 1] <= hi[..., 1])
        return (s == 0) & inside

    touch = on_seg(Q0, Q1, P0, s1) | on_seg(Q0, Q1, P1, s2) | \
        on_seg(P0, P1, Q0, s3) | on_seg(P0, P1, Q1, s4)
    return proper | touch


def polygon_is_simple(pts, chunk=512) -> bool:
    p = _verts(pts)
    n = len(p)
    a = p
    b = np.roll(p, -1, axis=0)
    for s in range(0, n, chunk):
        m = segments_cross_matrix(a[s:s + chunk], b[s:s + chunk], a, b)
        i = np.arange(s, min(s + chunk, n))[:, None]
        j = np.arange(n)[None, :]
        adjacent = (i == j) | ((i + 1) % n == j) | ((j + 1) % n == i)
        if np.any(m & ~adjacent):
            return False
    return True


def polylines_intersect(A, B, closed_a=True, closed_b=True) -> bool:
    a = _verts(A)
    b = _verts(B)
    a1 = np.roll(a, -1, axis=0) if closed_a else a[1:]
    a0 = a if closed_a else a[:-1]
    b1 = np.roll(b, -1, axis=0) if closed_b else b[1:]
    b0 = b if closed_b else b[:-1]
    return bool(np.any(segments_cross_matrix(a0, a1, b0, b1)))


def diameter(loop) -> float:
    """Largest distance between two vertices (a polyline attains it at vertices)."""
    p = _verts(loop)
    if len(p) == 0:
        raise InvalidInputError("diameter of an empty loop")
    best = 0.0
    for s in range(0, len(p), 1024):
        blk = p[s:s + 1024]
        d2 = (blk[:, None, 0] - p[None, :, 0]) ** 2 + (blk[:, None, 1] - p[None, :, 1]) ** 2
        best = max(best, float(d2.max()))
    return math.sqrt(best)


def segment_circle_crossings(p, q, center, radius) -> list[CircleHit]:
    """Parameters t in [0, 1] where p + t (q - p) meets the circle, sorted."""
    p = as_xy(p)
    q = as_xy(q)
    c = as_xy(center)
    d = q - p
    a = float(d @ d)
    if a == 0.0:
        raise InvalidInputError("segment endpoints coincide")
    f = p - c
    b = 2.0 * float(d @ f)
    cc = float(f @ f) - radius * radius
    disc = b * b - 4.0 * a * cc
    scale = max(b * b, abs(4.0 * a * cc), 1e-300)
    if disc < -1e-12 * scale:
        return []
    if abs(disc) <= 1e-12 * scale:
        t = -b / (2.0 * a)
        return [CircleHit(t, True)] if 0.0 <= t <= 1.0 else []
    sq = math.sqrt(disc)
    # numerically stable pair of roots
    qq = -0.5 * (b + math.copysign(sq, b))
    r1 = qq / a
    r2 = cc / qq if qq != 0 else -r1
    ts = sorted(t for t in (r1, r2) if 0.0 <= t <= 1.0)
    return [CircleHit(t, False) for t in ts]


def densify_for_annulus(loop, a: Annulus, closed=True):
    """Insert the points where segments meet either boundary circle.

    Returns (points, states); inserted points carry the state of the circle
    they lie on, so touching counts even under floating-point rounding.
    """
    p = _verts(loop)
    st = a.states(p)
    n = len(p)
    out_pts = []
    out_st = []
    nseg = n if closed else n - 1
    for i in range(n):
        out_pts.append(p[i])
        out_st.append(int(st[i]))
        if i >= nseg:
            continue
        q = p[(i + 1) % n]
        d = q - p[i]
        if float(d @ d) == 0.0:     # repeated vertex, or a length that underflows
            continue
        hits = []
        for rad, state in ((a.inner_r, INNER), (a.outer_r, OUTER)):
            for h in segment_circle_crossings(p[i], q, a.center, rad):
                if 0.0 < h.t < 1.0:
                    hits.append((h.t, state))
        hits.sort()
        for t, state in hits:
            out_pts.append(p[i] + t * (q - p[i]))
            out_st.append(state)
    return np.array(out_pts).reshape(-1, 2), np.array(out_st, dtype=np.int8)


def crossing_scan(states, closed=True):
    """Three-state crossing scan over a state sequence.

    Returns (count, [(start, end), ...]); each pair delimits a minimal
    sub-path from the last touch of one circle to the first touch of the
    other.  For closed sequences an arc may wrap (end < start).
    """
    s = np.asarray(states)
    idx = np.flatnonzero(s != MIDDLE)
    if len(idx) < 2:
        return 0, []
    ss = s[idx]
    if closed:
        nxt = np.roll(ss, -1)
        jumps = np.flatnonzero(ss != nxt)
        arcs = [(int(idx[i]), int(idx[(i + 1) % len(idx)])) for i in jumps]
    else:
        jumps = np.flatnonzero(ss[:-1] != ss[1:])
        arcs = [(int(idx[i]), int(idx[i + 1])) for i in jumps]
    return len(arcs), arcs


def crossing_count_single(loop, a: Annulus, densify=False, closed=True):
    """Number of crossings of ``a`` by a single loop, with the crossing arcs.

    Vertex semantics by default: a vertex on a circle touches it.  With
    ``densify`` the points where segments meet the circles are inserted
    first, making the scan exact for continuum polylines; arc indices then
    refer to the densified sequence.
    """
    if densify:
        _, st = densify_for_annulus(loop, a, closed=closed)
    else:
        st = a.states(_verts(loop))
    count, pairs = crossing_scan(st, closed=closed)
    lid = loop.id if isinstance(loop, PolyLoop) else None
    return count, [CrossingArc(lid, s, e) for s, e in pairs]


def _on_trace(p, verts, tol) -> bool:
    a = verts
    b = np.roll(verts, -1, axis=0)
    ab = b - a
    ap = p[None, :] - a
    L2 = np.einsum("ij,ij->i", ab, ab)
    t = np.where(L2 > 0, np.einsum("ij,ij->i", ap, ab) / np.where(L2 > 0, L2, 1), 0.0)
    t = np.clip(t, 0.0, 1.0)
    proj = a + t[:, None] * ab
    d = np.hypot(*(proj - p[None, :]).T)
    return bool(np.any(d <= tol))


def winding_number(loop, p, tol=1e-12) -> int:
    """Signed winding number of the closed loop about p, from summed angles."""
    v = _verts(loop)
    q = as_xy(p)
    if len(v) == 0:
        return 0
    scale = max(1.0, float(np.max(np.abs(v))))
    if _on_trace(q, v, tol * scale):
        raise DegenerateInputError("point lies on the loop trace")
    w = _winding_sum(v, q[None, :])[0]
    k = round(w)
    if abs(w - k) > 1e-6:
        raise ConsistencyError(f"winding sum {w} is not near an integer")
    return int(k)


def _winding_sum(v, pts) -> np.ndarray:
    d = v[None, :, :] - pts[:, None, :]
    e = np.roll(d, -1, axis=1)
    cross = d[..., 0] * e[..., 1] - d[..., 1] * e[..., 0]
    dot = d[..., 0] * e[..., 0] + d[..., 1] * e[..., 1]
    return np.arctan2(cross, dot).sum(axis=1) / TWO_PI


def winding_numbers(loop, pts, chunk=4096) -> np.ndarray:
    """Vectorised winding numbers of one loop about many points (none on the trace)."""
    v = _verts(loop)
    P = np.asarray(pts, dtype=float).reshape(-1, 2)
    out = np.empty(len(P), dtype=np.int64)
    step = max(1, chunk // max(1, len(v)) * 16)
    for s in range(0, len(P), step):
        out[s:s + step] = np.rint(_winding_sum(v, P[s:s + step])).astype(np.int64)
    return out


def points_in_polygon(pts, poly, chunk=200_000) -> np.ndarray:
    """Even-odd ray casting, vectorised over points."""
    P = np.asarray(pts, dtype=float).reshape(-1, 2)
    v = _verts(poly)
    a = v
    b = np.roll(v, -1, axis=0)
    out = np.zeros(len(P), dtype=bool)
    step = max(1, chunk // max(1, len(v)))
    for s in range(0, len(P), step):
        x = P[s:s + step, 0:1]
        y = P[s:s + step, 1:2]
        straddle = (a[None, :, 1] > y) != (b[None, :, 1] > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xc = a[None, :, 0] + (y - a[None, :, 1]) * (b[None, :, 0] - a[None, :, 0]) / (b[None, :, 1] - a[None, :, 1])
        out[s:s + step] = (np.sum(straddle & (x < xc), axis=1) % 2) == 1
    return out


def point_segment_distances(pts, a, b) -> np.ndarray:
    """Distance matrix from points to segments a_k b_k."""
    P = np.asarray(pts, dtype=float).reshape(-1, 2)[:, None, :]
    a = np.asarray(a, dtype=float)[None]
    ab = np.asarray(b, dtype=float)[None] - a
    L2 = np.sum(ab * ab, axis=2)
    t = np.clip(np.sum((P - a) * ab, axis=2) / np.where(L2 > 0, L2, 1.0), 0.0, 1.0)
    proj = a + t[..., None] * ab
    return np.hypot(*(np.moveaxis(P - proj, 2, 0)))


def polyline_length(pts) -> float:
    p = _verts(pts)
    return float(np.sum(np.hypot(*np.diff(p, axis=0).T))) if len(p) > 1 else 0.0
