"""Killed simple random walk on grid domains.

Kernels q_k(., root), rooted loop masses with a length cutoff, and exact
conditioned bridge sampling.  Sites are absolute integer pairs (i, j);
the plane point of a site is (i * mesh, j * mesh).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numba import njit
from scipy.special import gammaln

from .errors import ConsistencyError, DomainError, InvalidInputError, NoBridgeError
from .geometry import Point, PolyLoop

DEFAULT_L_MAX = 320
CLAMP_RTOL = 1e-12


def _shift_sum(a: np.ndarray) -> np.ndarray:
    """Sum of the four nearest-neighbour shifts over the last two axes (zero padded)."""
    out = np.zeros_like(a)
    out[..., 1:, :] += a[..., :-1, :]
    out[..., :-1, :] += a[..., 1:, :]
    out[..., :, 1:] += a[..., :, :-1]
    out[..., :, :-1] += a[..., :, 1:]
    return out


def mask_contains(mask: np.ndarray, offset, sites) -> np.ndarray:
    """Membership of absolute sites in a mask placed at ``offset``."""
    loc = np.asarray(sites, dtype=np.int64).reshape(-1, 2) - np.asarray(offset, dtype=np.int64)
    W, H = mask.shape
    ok = (loc[:, 0] >= 0) & (loc[:, 0] < W) & (loc[:, 1] >= 0) & (loc[:, 1] < H)
    out = np.zeros(len(loc), dtype=bool)
    out[ok] = mask[loc[ok, 0], loc[ok, 1]]
    return out


@dataclass(eq=False)
class GridDomain:
    """Interior sites of a lattice domain.

    ``mask[i, j]`` is the site (i + ox, j + oy); i runs along the x axis.
    Every site outside the mask kills the walk.
    """

    mesh: float
    mask: np.ndarray
    origin_offset: tuple = (0, 0)
    _key: bytes = field(default=b"", init=False, repr=False)

    def __post_init__(self):
        if not (self.mesh > 0 and math.isfinite(self.mesh)):
            raise InvalidInputError("mesh must be positive")
        m = np.array(self.mask, dtype=bool)
        if m.ndim != 2:
            raise InvalidInputError("mask must be 2-D")
        if not m.any():
            raise InvalidInputError("domain needs at least one interior site")
        m.setflags(write=False)
        self.mask = m
        self.origin_offset = (int(self.origin_offset[0]), int(self.origin_offset[1]))
        self._key = (repr((self.mesh, m.shape, self.origin_offset)).encode()
                     + np.packbits(m).tobytes())

    # -- basic geometry -------------------------------------------------
    @property
    def shape(self):
        return self.mask.shape

    @property
    def key(self) -> bytes:
        return self._key

    def interior_sites(self) -> np.ndarray:
        """Absolute sites in row-major mask order; row index = site index."""
        ii, jj = np.nonzero(self.mask)
        return np.stack([ii + self.origin_offset[0], jj + self.origin_offset[1]], axis=1)

    @property
    def n_sites(self) -> int:
        return int(self.mask.sum())

    def site_index_grid(self) -> np.ndarray:
        idx = np.full(self.mask.shape, -1, dtype=np.int64)
        idx[self.mask] = np.arange(self.n_sites)
        return idx

    def to_local(self, sites) -> np.ndarray:
        s = np.asarray(sites, dtype=np.int64).reshape(-1, 2)
        return s - np.asarray(self.origin_offset, dtype=np.int64)

    def contains(self, sites) -> np.ndarray:
        return mask_contains(self.mask, self.origin_offset, sites)

    def site_of(self, p) -> tuple:
        """Lattice site of a plane Point, or pass an integer pair through."""
        if isinstance(p, Point):
            i = round(p.x / self.mesh)
            j = round(p.y / self.mesh)
            if abs(i * self.mesh - p.x) > 1e-9 * max(1.0, abs(p.x)) or \
                    abs(j * self.mesh - p.y) > 1e-9 * max(1.0, abs(p.y)):
                raise InvalidInputError(f"{p} is not a lattice point")
            return (int(i), int(j))
        i, j = p
        return (int(i), int(j))

    def plane(self, sites) -> np.ndarray:
        return np.asarray(sites, dtype=float).reshape(-1, 2) * self.mesh

    def is_subdomain_of(self, other: "GridDomain") -> bool:
        if other.mesh != self.mesh:
            return False
        return bool(np.all(other.contains(self.interior_sites())))

    def restricted(self, keep) -> "GridDomain":
        """Subdomain keeping the interior sites where ``keep`` (a mask-shaped array) holds."""
        keep = np.asarray(keep, dtype=bool)
        return GridDomain(self.mesh, self.mask & keep, self.origin_offset)

    def restricted_to_points(self, predicate) -> "GridDomain":
        """Subdomain of sites whose plane points satisfy ``predicate(points) -> bool array``."""
        ii, jj = np.meshgrid(np.arange(self.shape[0]), np.arange(self.shape[1]), indexing="ij")
        pts = np.stack([(ii + self.origin_offset[0]).ravel(),
                        (jj + self.origin_offset[1]).ravel()], axis=1) * self.mesh
        keep = np.asarray(predicate(pts), dtype=bool).reshape(self.shape)
        return self.restricted(keep)

    # -- named shapes ---------------------------------------------------
    @classmethod
    def rect(cls, width: int, height: int, mesh=1.0, origin=(0, 0)) -> "GridDomain":
        return cls(mesh, np.ones((width, height), dtype=bool), origin)

    @classmethod
    def halfplane_strip(cls, width: int, height: int, mesh=1.0) -> "GridDomain":
        """width x height block sitting on the killed row y = 0, centred on x = 0.

        The real axis is the killing boundary, so the origin is a boundary
        point of the domain as for annuli centred on the real line.
        """
        return cls(mesh, np.ones((width, height), dtype=bool), (-(width // 2), 1))

    @classmethod
    def annulus_shape(cls, inner_r: float, outer_r: float, mesh=1.0) -> "GridDomain":
        n = int(math.ceil(outer_r / mesh)) + 1
        ii, jj = np.meshgrid(np.arange(-n, n + 1), np.arange(-n, n + 1), indexing="ij")
        d = np.hypot(ii, jj) * mesh
        return cls(mesh, (d > inner_r) & (d < outer_r), (-n, -n))

    # -- text format ----------------------------------------------------
    def to_text(self) -> str:
        lines = [f"mesh={self.mesh!r}", f"origin={self.origin_offset[0]},{self.origin_offset[1]}"]
        W, H = self.shape
        for j in range(H - 1, -1, -1):
            lines.append("".join("#" if self.mask[i, j] else "." for i in range(W)))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "GridDomain":
        mesh = None
        origin = (0, 0)
        rows = []
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("mesh="):
                mesh = float(line[5:])
            elif line.startswith("origin="):
                a, b = line[7:].split(",")
                origin = (int(a), int(b))
            else:
                if set(line) - {"#", "."}:
                    raise InvalidInputError(f"bad grid row {line!r}")
                rows.append(line)
        if mesh is None:
            raise InvalidInputError("grid text needs a mesh=<value> header")
        if not rows or len({len(r) for r in rows}) != 1:
            raise InvalidInputError("grid rows must be non-empty and equally long")
        grid = np.array([[c == "#" for c in r] for r in rows], dtype=bool)
        # first text row is the top row
        return cls(mesh, grid[::-1].T.copy(), origin)


@dataclass(eq=False)
class KernelSlice:
    """q_k(y, root) for k = 0..max_len on a box around the root.

    ``values[k, a, b]`` is q_k at site (a + offset[0], b + offset[1]).
    """

    root: tuple
    max_len: int
    values: np.ndarray
    offset: tuple

    def q(self, k: int, site) -> float:
        a = site[0] - self.offset[0]
        b = site[1] - self.offset[1]
        if not (0 <= k <= self.max_len):
            raise InvalidInputError("length out of range")
        if 0 <= a < self.values.shape[1] and 0 <= b < self.values.shape[2]:
            return float(self.values[k, a, b])
        return 0.0

    def survival(self) -> np.ndarray:
        return self.values.sum(axis=(1, 2))


def build_kernel(dom: GridDomain, root, L_max: int) -> KernelSlice:
    """Exact killed-walk DP q_{k+1}(y) = mask(y)/4 * sum_{y'~y} q_k(y')."""
    if L_max < 2 or int(L_max) != L_max:
        raise InvalidInputError("L_max must be an integer >= 2")
    L = int(L_max)
    root = dom.site_of(root)
    if not dom.contains([root])[0]:
        raise InvalidInputError(f"root {root} is not an interior site")
    # a walk of length <= L stays within L1 distance L of the root
    loc = dom.to_local([root])[0]
    W, H = dom.shape
    a0, a1 = max(0, loc[0] - L), min(W, loc[0] + L + 1)
    b0, b1 = max(0, loc[1] - L), min(H, loc[1] + L + 1)
    sub = dom.mask[a0:a1, b0:b1].astype(float)
    vals = np.zeros((L + 1, a1 - a0, b1 - b0))
    vals[0, loc[0] - a0, loc[1] - b0] = 1.0
    for k in range(L):
        vals[k + 1] = 0.25 * _shift_sum(vals[k]) * sub
    offset = (a0 + dom.origin_offset[0], b0 + dom.origin_offset[1])
    return KernelSlice(root, L, vals, offset)


def return_probability(n2) -> np.ndarray:
    """Full-plane p_{2n}(0,0) = (C(2n,n) / 4^n)^2 for an array of even lengths 2n."""
    n = np.asarray(n2, dtype=float) / 2.0
    logc = gammaln(2 * n + 1) - 2 * gammaln(n + 1) - 2 * n * math.log(2.0)
    return np.exp(2 * logc)


@lru_cache(maxsize=64)
def truncation_bound(L_max: int, exact_terms: int = 1_000_000) -> float:
    """Upper bound on the full-plane rooted mass of loops longer than L_max.

    Sums p_{2n}/(2n) exactly for L_max/2 < n <= M and bounds the rest with
    p_{2n} <= 1/(pi n), which gives at most 1/(2 pi M).
    """
    N = int(L_max) // 2
    M = max(N, int(exact_terms))
    n = np.arange(N + 1, M + 1, dtype=float)
    part = float(np.sum(return_probability(2 * n) / (2 * n))) if len(n) else 0.0
    return part + 1.0 / (2.0 * math.pi * M)


@dataclass(eq=False)
class LoopMassTable:
    """Rooted loop masses mass(x) = sum_{2n <= L_max} q_{2n}(x,x) / (2n)."""

    domain: GridDomain
    L_max: int
    sites: np.ndarray          # (n_sites, 2) absolute, domain row-major order
    returns: np.ndarray        # (n_sites, L_max // 2): q_{2n}(x, x) for n = 1..N
    truncation_bound: float

    def __post_init__(self):
        n = np.arange(1, self.returns.shape[1] + 1)
        self.weights = self.returns / (2.0 * n)
        self.cum_weights = np.cumsum(self.weights, axis=1)
        self.mass = self.cum_weights[:, -1].copy() if len(n) else np.zeros(len(self.sites))
        self.plane_returns = return_probability(2 * n)

    def mass_grid(self) -> np.ndarray:
        g = np.zeros(self.domain.shape)
        g[self.domain.mask] = self.mass
        return g

    def mass_at(self, site) -> float:
        idx = self.domain.site_index_grid()
        loc = self.domain.to_local([site])[0]
        W, H = self.domain.shape
        if not (0 <= loc[0] < W and 0 <= loc[1] < H) or idx[loc[0], loc[1]] < 0:
            return 0.0
        return float(self.mass[idx[loc[0], loc[1]]])

    def total_mass(self) -> float:
        return float(self.mass.sum())


_MASS_CACHE: dict = {}


@njit(cache=True)
def _return_table_jit(mask, roots, N):
    W, H = mask.shape
    out = np.zeros((roots.shape[0], N))
    cur = np.zeros((W, H))
    nxt = np.zeros((W, H))
    for r in range(roots.shape[0]):
        x0 = roots[r, 0]
        y0 = roots[r, 1]
        cur[:, :] = 0.0
        nxt[:, :] = 0.0
        cur[x0, y0] = 1.0
        for n in range(1, N + 1):
            i0 = max(0, x0 - n)
            i1 = min(W, x0 + n + 1)
            j0 = max(0, y0 - n)
            j1 = min(H, y0 + n + 1)
            s = 0.0
            for i in range(i0, i1):
                # only sites of the right parity carry mass after n steps
                jstart = j0 + ((i - x0 + j0 - y0 + n) & 1)
                for j in range(jstart, j1, 2):
                    v = 0.0
                    if mask[i, j]:
                        if i > 0:
                            v += cur[i - 1, j]
                        if i < W - 1:
                            v += cur[i + 1, j]
                        if j > 0:
                            v += cur[i, j - 1]
                        if j < H - 1:
                            v += cur[i, j + 1]
                        v *= 0.25
                    nxt[i, j] = v
                    s += v * v
            out[r, n - 1] = s
            tmp = cur
            cur = nxt
            nxt = tmp
    return out


def _return_table(dom: GridDomain, N: int) -> np.ndarray:
    """q_{2n}(x,x) = |P^n e_x|^2 for n = 1..N (P is symmetric, so n steps suffice)."""
    roots = np.argwhere(dom.mask).astype(np.int64)
    return _return_table_jit(dom.mask, roots, int(N))


def _return_table_numpy(dom: GridDomain, N: int, chunk: int = 512) -> np.ndarray:
    """Vectorised reference for the compiled routine above."""
    W, H = dom.shape
    m = dom.mask.astype(float)
    sites_local = np.argwhere(dom.mask)
    out = np.zeros((len(sites_local), N))
    for s in range(0, len(sites_local), chunk):
        blk = sites_local[s:s + chunk]
        c = len(blk)
        v = np.zeros((c, W, H))
        v[np.arange(c), blk[:, 0], blk[:, 1]] = 1.0
        for n in range(N):
            v = 0.25 * _shift_sum(v) * m
            out[s:s + c, n] = np.einsum("kij,kij->k", v, v)
    return out


def loop_mass(dom: GridDomain, L_max: int = DEFAULT_L_MAX) -> LoopMassTable:
    if L_max < 2 or L_max % 2:
        raise InvalidInputError("L_max must be an even integer >= 2")
    key = (dom.key, int(L_max))
    hit = _MASS_CACHE.get(key)
    if hit is not None:
        return hit
    N = int(L_max) // 2
    table = LoopMassTable(dom, int(L_max), dom.interior_sites(), _return_table(dom, N),
                          truncation_bound(int(L_max)))
    if len(_MASS_CACHE) > 32:
        _MASS_CACHE.clear()
    _MASS_CACHE[key] = table
    return table


_STEPS = np.array([(1, 0), (-1, 0), (0, 1), (0, -1)], dtype=np.int64)


def _step_probs(kern: KernelSlice, y, k: int) -> np.ndarray:
    """Conditioned step probabilities from y with k steps remaining."""
    qk = kern.q(k, y)
    if qk <= 0:
        raise ConsistencyError(f"bridge entered a zero-weight state at {y}, k={k}")
    probs = np.array([0.25 * kern.q(k - 1, (y[0] + dx, y[1] + dy)) for dx, dy in _STEPS]) / qk
    tot = probs.sum()
    if abs(tot - 1.0) > CLAMP_RTOL * 64:
        raise ConsistencyError(f"bridge step probabilities sum to {tot}")
    return np.clip(probs, 0.0, 1.0) / tot


def sample_bridge(dom: GridDomain, root, length: int, rng: np.random.Generator,
                  kernel: KernelSlice | None = None) -> PolyLoop:
    """Exact draw of a length-step killed-walk bridge from root back to root."""
    if length < 2 or length % 2:
        raise InvalidInputError("bridge length must be an even integer >= 2")
    root = dom.site_of(root)
    kern = kernel if kernel is not None and kernel.max_len >= length and kernel.root == root \
        else build_kernel(dom, root, length)
    if kern.q(length, root) <= 0:
        raise NoBridgeError(f"no bridge of length {length} at {root}")
    path = np.empty((length + 1, 2), dtype=np.int64)
    path[0] = root
    y = root
    u = rng.random(length)
    for t in range(length):
        k = length - t
        p = _step_probs(kern, y, k)
        c = np.cumsum(p)
        d = int(np.searchsorted(c, u[t] * c[-1], side="right"))
        d = min(d, 3)
        y = (y[0] + int(_STEPS[d, 0]), y[1] + int(_STEPS[d, 1]))
        path[t + 1] = y
    if tuple(path[-1]) != root:
        raise ConsistencyError("bridge did not return to its root")
    sites = path[:-1]
    return PolyLoop(sites * dom.mesh, id=0, sites=sites)


def bridge_step_probabilities(dom: GridDomain, loop: PolyLoop, kernel: KernelSlice | None = None):
    """Replay a rooted lattice loop against the kernel; returns the per-step probabilities."""
    sites = loop.sites
    if sites is None:
        raise InvalidInputError("loop carries no lattice sites")
    root = tuple(int(v) for v in sites[0])
    length = len(sites)
    kern = kernel or build_kernel(dom, root, max(2, length))
    closed = np.vstack([sites, sites[:1]])
    out = np.empty(length)
    for t in range(length):
        y = tuple(int(v) for v in closed[t])
        step = closed[t + 1] - closed[t]
        d = int(np.flatnonzero((_STEPS == step).all(axis=1))[0])
        out[t] = _step_probs(kern, y, length - t)[d]
    return out


def uniform_plane_bridges(n: int, batch: int, rng: np.random.Generator) -> np.ndarray:
    """``batch`` uniform simple-walk bridges of 2n steps on Z^2, as displacement paths.

    Rotated coordinates u = x + y and v = x - y turn a simple-walk step into
    a pair of independent +-1 steps, so a plane bridge is a pair of
    independent balanced +-1 sequences.  Returns shape (batch, 2n, 2): the
    positions after 0..2n-1 steps.
    """
    L = 2 * n
    su = np.where(rng.random((batch, L)).argsort(axis=1) < n, 1, -1)
    sv = np.where(rng.random((batch, L)).argsort(axis=1) < n, 1, -1)
    u = np.concatenate([np.zeros((batch, 1), np.int64), np.cumsum(su, axis=1)[:, :-1]], axis=1)
    v = np.concatenate([np.zeros((batch, 1), np.int64), np.cumsum(sv, axis=1)[:, :-1]], axis=1)
    return np.stack([(u + v) // 2, (u - v) // 2], axis=2)


def sample_bridge_rejection(dom: GridDomain, root, length: int, rng: np.random.Generator,
                            acceptance: float | None = None, max_batches: int = 100_000):
    """Bridge with the same law as ``sample_bridge``, drawn by rejection.

    Plane bridges are uniform over all 2n-step returns; conditioning on
    staying in the mask gives the uniform law on domain bridges, which is
    the killed-bridge law because every path has weight 4^{-2n}.
    Returns None if ``max_batches`` batches all fail.
    """
    root = dom.site_of(root)
    n = length // 2
    acc = acceptance if acceptance and acceptance > 0 else 0.5
    batch = int(min(4096, max(4, math.ceil(2.0 / acc))))
    # cap memory for long loops
    batch = max(1, min(batch, 2_000_000 // max(1, length)))
    for _ in range(max_batches):
        disp = uniform_plane_bridges(n, batch, rng)
        pos = disp + np.asarray(root, dtype=np.int64)
        ok = dom.contains(pos.reshape(-1, 2)).reshape(batch, length).all(axis=1)
        hit = np.flatnonzero(ok)
        if len(hit):
            sites = pos[hit[0]]
            return PolyLoop(sites * dom.mesh, id=0, sites=sites)
    return None
