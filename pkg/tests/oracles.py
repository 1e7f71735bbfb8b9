"""Slow, independent reference computations used to check the package.

None of these import the routine they check; most are brute force.
"""
import itertools
import math

import mpmath
import numpy as np


def leibniz_det(M):
    """Sum over permutations; works for floats or mpmath numbers."""
    n = len(M)
    total = 0
    for perm in itertools.permutations(range(n)):
        inv = sum(1 for i in range(n) for j in range(i + 1, n) if perm[i] > perm[j])
        prod = 1
        for i, j in enumerate(perm):
            prod = prod * M[i][j]
        total = total - prod if inv % 2 else total + prod
    return total


def fomin_leibniz(x, y, dps=60) -> float:
    """Fomin determinant from the angles: 60-digit entries, permutation expansion."""
    with mpmath.workdps(dps):
        X = [mpmath.mpf(v) for v in x]
        Y = [mpmath.mpf(v) for v in y]
        d = [[1 - mpmath.cos(a - b) for b in Y] for a in X]
        M = [[d[j][j] / d[j][l] for l in range(len(Y))] for j in range(len(X))]
        return float(leibniz_det(M))


def transition_matrix(mask):
    """Dense killed simple-walk matrix on the True cells of a boolean box."""
    sites = [tuple(s) for s in np.argwhere(mask)]
    index = {s: i for i, s in enumerate(sites)}
    P = np.zeros((len(sites), len(sites)))
    for s, i in index.items():
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            j = index.get((s[0] + dx, s[1] + dy))
            if j is not None:
                P[i, j] = 0.25
    return P, sites


def dense_return_probabilities(mask, N):
    """q_{2n}(x, x) for n = 1..N as the diagonal of P^{2n}; shape (sites, N)."""
    P, sites = transition_matrix(mask)
    P2 = P @ P
    out = np.zeros((len(sites), N))
    cur = np.eye(len(sites))
    for n in range(N):
        cur = cur @ P2
        out[:, n] = np.diag(cur)
    return out


def enumerate_bridges(mask, root, length):
    """Every closed walk of the given length from root inside the mask (local coordinates)."""
    W, H = mask.shape
    out = []

    def walk(path):
        if len(path) == length:
            x, y = path[-1]
            if abs(x - root[0]) + abs(y - root[1]) == 1:
                out.append(tuple(path))
            return
        x, y = path[-1]
        left = length - len(path)
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nx, ny = x + dx, y + dy
            if 0 <= nx < W and 0 <= ny < H and mask[nx, ny] \
                    and abs(nx - root[0]) + abs(ny - root[1]) <= left:
                walk(path + [(nx, ny)])

    walk([tuple(root)])
    return out


def wilson(k, n, z=1.959963984540054):
    p = k / n
    den = 1 + z * z / n
    mid = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return mid - half, mid + half


# -- continuum crossings ------------------------------------------------------

def _circle_params(p, q, c, r):
    d = q - p
    f = p - c
    A = d @ d
    B = 2 * f @ d
    C = f @ f - r * r
    disc = B * B - 4 * A * C
    if A == 0 or disc < 0:
        return []
    s = math.sqrt(disc)
    return [t for t in ((-B - s) / (2 * A), (-B + s) / (2 * A)) if 0 < t < 1]


def crossing_pieces(vertices, center, r, R, closed=True):
    """Minimal sub-polylines running from one boundary circle to the other.

    Each piece is an array of points: it starts on one circle, ends on
    the other and stays strictly between them in its interior.
    """
    v = np.asarray(vertices, dtype=float)
    c = np.asarray(center, dtype=float)
    segs = list(zip(v, np.roll(v, -1, axis=0))) if closed else list(zip(v[:-1], v[1:]))
    pts = []
    for p, q in segs:
        pts.append(p)
        ts = sorted(_circle_params(p, q, c, r) + _circle_params(p, q, c, R))
        pts.extend(p + t * (q - p) for t in ts)
    if not closed:
        pts.append(v[-1])
    pts = np.array(pts)
    d = np.hypot(*(pts - c).T)
    lab = np.where(d <= r + 1e-12, -1, np.where(d >= R - 1e-12, 1, 0))
    n = len(pts)
    marks = [i for i in range(n) if lab[i] != 0]
    if len(marks) < 2:
        return []
    pairs = list(zip(marks, marks[1:]))
    if closed:
        pairs.append((marks[-1], marks[0] + n))
    pieces = []
    for i, j in pairs:
        if lab[i % n] != lab[j % n]:
            pieces.append(np.array([pts[k % n] for k in range(i, j + 1)]))
    return pieces


def _orient(a, b, c):
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _seg_touch(a, b, c, d, eps=1e-12):
    o1, o2, o3, o4 = _orient(a, b, c), _orient(a, b, d), _orient(c, d, a), _orient(c, d, b)
    if ((o1 > eps and o2 < -eps) or (o1 < -eps and o2 > eps)) and \
            ((o3 > eps and o4 < -eps) or (o3 < -eps and o4 > eps)):
        return True

    def on(p, q, x, o):
        return abs(o) <= eps and min(p[0], q[0]) - eps <= x[0] <= max(p[0], q[0]) + eps \
            and min(p[1], q[1]) - eps <= x[1] <= max(p[1], q[1]) + eps

    return on(a, b, c, o1) or on(a, b, d, o2) or on(c, d, a, o3) or on(c, d, b, o4)


def pieces_meet(P, Q) -> bool:
    for a, b in zip(P[:-1], P[1:]):
        for c, d in zip(Q[:-1], Q[1:]):
            if _seg_touch(a, b, c, d):
                return True
    return False


def max_disjoint_pieces(pieces) -> int:
    """Largest set of pairwise disjoint crossing pieces, by exhaustive search."""
    n = len(pieces)
    meet = [[i != j and pieces_meet(pieces[i], pieces[j]) for j in range(n)] for i in range(n)]
    for k in range(n, 0, -1):
        for sub in itertools.combinations(range(n), k):
            if all(not meet[i][j] for i, j in itertools.combinations(sub, 2)):
                return k
    return 0


# -- lattice clusters ---------------------------------------------------------

def clusters_by_shared_sites(loops):
    """Cluster partition of lattice loops: two loops touch when they share a site."""
    n = len(loops)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    owner = {}
    for i, l in enumerate(loops):
        for s in map(tuple, l.sites):
            j = owner.setdefault(s, i)
            if j != i:
                parent[find(i)] = find(j)
    groups = {}
    for i in range(n):
        groups.setdefault(find(i), set()).add(i)
    return sorted(sorted(g) for g in groups.values())


def vertex_state_crossings(states, closed=True) -> int:
    """Crossings of a state sequence: middle runs whose two ends sit on different circles."""
    s = list(states)
    n = len(s)
    ends = [i for i in range(n) if s[i] != 1]
    if len(ends) < 2:
        return 0
    count = sum(1 for i, j in zip(ends, ends[1:]) if s[i] != s[j])
    if closed and s[ends[-1]] != s[ends[0]]:
        count += 1
    return count


# -- component number by flood fill ------------------------------------------

def refined_trace(sites):
    """Cells of the half-mesh grid visited by a lattice loop: vertices and edge midpoints."""
    s = [tuple(map(int, p)) for p in sites]
    out = set()
    for (x0, y0), (x1, y1) in zip(s, s[1:] + s[:1]):
        out.add((2 * x0, 2 * y0))
        out.add((x0 + x1, y0 + y1))
    return out


def _flood_fill(trace):
    xs = [c[0] for c in trace]
    ys = [c[1] for c in trace]
    lo_x, hi_x, lo_y, hi_y = min(xs) - 1, max(xs) + 1, min(ys) - 1, max(ys) + 1
    outside = {(lo_x, lo_y)}
    stack = [(lo_x, lo_y)]
    while stack:
        x, y = stack.pop()
        for nx, ny in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
            if lo_x <= nx <= hi_x and lo_y <= ny <= hi_y and (nx, ny) not in trace \
                    and (nx, ny) not in outside:
                outside.add((nx, ny))
                stack.append((nx, ny))
    return {(x, y) for x in range(lo_x, hi_x + 1) for y in range(lo_y, hi_y + 1)} - outside


def comp_by_flood_fill(loops, center, r, R, mesh=1.0):
    """Comp of lattice loops, computed from scratch on the half-mesh grid."""
    groups = clusters_by_shared_sites(loops)
    traces = [set().union(*(refined_trace(loops[i].sites) for i in g)) for g in groups]
    fills = [_flood_fill(t) for t in traces]
    outer = [c for c in range(len(groups))
             if not any(d != c and traces[c] & fills[d] for d in range(len(groups)))]
    U = set().union(*(fills[c] for c in outer)) if outer else set()
    h = mesh / 2

    def state(c):
        d = math.hypot(c[0] * h - center[0], c[1] * h - center[1])
        return 0 if d <= r else (2 if d >= R else 1)

    seen = set()
    count = 0
    for c in U:
        if c in seen or state(c) != 1:
            continue
        comp, stack = {c}, [c]
        seen.add(c)
        touch = set()
        while stack:
            x, y = stack.pop()
            for n in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
                if n not in U:
                    continue
                s = state(n)
                if s != 1:
                    touch.add(s)
                elif n not in seen:
                    seen.add(n)
                    stack.append(n)
        if touch == {0, 2}:
            count += 1
    return count, len(outer)
