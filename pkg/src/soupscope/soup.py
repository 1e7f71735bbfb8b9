"""Poissonian random-walk loop soups and the two ensemble splits."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import poisson

from .errors import InvalidInputError
from .geometry import PolyLoop, diameter
from .lattice import (DEFAULT_L_MAX, GridDomain, LoopMassTable, loop_mass, mask_contains,
                      sample_bridge, sample_bridge_rejection)

# below this acceptance rate the rejection sampler hands over to the kernel DP
MIN_ACCEPTANCE = 1e-3


def kappa_to_lambda(kappa: float) -> float:
    """Soup intensity whose cluster boundaries give CLE with parameter kappa."""
    if not (8.0 / 3.0 < kappa <= 4.0):
        raise InvalidInputError("kappa must lie in (8/3, 4]")
    return (3 * kappa - 8) * (6 - kappa) / (2 * kappa)


@dataclass(frozen=True, eq=False)
class SoupConfig:
    intensity: float
    domain: GridDomain
    L_max: int = DEFAULT_L_MAX
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.intensity <= 1):
            raise InvalidInputError("intensity must lie in (0, 1]")
        if self.L_max < 2 or self.L_max % 2:
            raise InvalidInputError("L_max must be an even integer >= 2")
        if not (0 <= int(self.seed) < 2 ** 64):
            raise InvalidInputError("seed must be a 64-bit unsigned integer")

    def with_seed(self, seed: int) -> "SoupConfig":
        return SoupConfig(self.intensity, self.domain, self.L_max, seed)

    def to_dict(self) -> dict:
        return {"intensity": self.intensity, "L_max": self.L_max, "seed": int(self.seed),
                "domain": self.domain.to_text()}


@dataclass(eq=False)
class LoopSoupSample:
    loops: list
    config: SoupConfig | None = None
    roots: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), np.int64))
    lengths: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    _diam: np.ndarray | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.loops)

    def __iter__(self):
        return iter(self.loops)

    @property
    def diameters(self) -> np.ndarray:
        if self._diam is None:
            self._diam = np.array([diameter(l) for l in self.loops], dtype=float)
        return self._diam

    def to_jsonl(self) -> str:
        head = {"config": self.config.to_dict() if self.config else None}
        lines = [json.dumps(head)]
        for k, l in enumerate(self.loops):
            rec = {"id": l.id, "vertices": l.vertices.tolist()}
            if l.sites is not None:
                rec["sites"] = l.sites.tolist()
            if k < len(self.roots):
                rec["root"] = [int(v) for v in self.roots[k]]
                rec["length"] = int(self.lengths[k])
            lines.append(json.dumps(rec))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "LoopSoupSample":
        rows = [json.loads(t) for t in text.splitlines() if t.strip()]
        cfg = None
        if rows and "config" in rows[0]:
            c = rows.pop(0)["config"]
            if c:
                cfg = SoupConfig(c["intensity"], GridDomain.from_text(c["domain"]),
                                 c["L_max"], c["seed"])
        loops = [PolyLoop(r["vertices"], r["id"], r.get("sites")) for r in rows]
        roots = np.array([r.get("root", [0, 0]) for r in rows], dtype=np.int64).reshape(-1, 2)
        lengths = np.array([r.get("length", len(r["vertices"])) for r in rows], dtype=np.int64)
        return cls(loops, cfg, roots, lengths)


def read_samples_jsonl(text: str) -> list:
    """Split a JSON-lines file of several samples; each sample opens with its config line."""
    chunks = []
    for line in text.splitlines():
        if not line.strip():
            continue
        if "config" in json.loads(line) or not chunks:
            chunks.append([])
        chunks[-1].append(line)
    return [LoopSoupSample.from_jsonl("\n".join(c)) for c in chunks]


def site_uniforms(seed: int, n: int) -> np.ndarray:
    """One uniform per site index, each a pure function of (seed, index).

    Philox is counter based, so output i depends only on the key and i.
    """
    key = np.random.SeedSequence([int(seed), 0x50155]).generate_state(2, np.uint64)
    raw = np.random.Philox(key=key).random_raw(n)
    return (raw >> np.uint64(11)).astype(np.float64) * 2.0 ** -53


def site_generator(seed: int, site_index: int) -> np.random.Generator:
    """Independent stream for the loop details rooted at one site."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(site_index), 1])))


def poisson_counts(table: LoopMassTable, intensity: float, seed: int) -> np.ndarray:
    means = intensity * table.mass
    u = site_uniforms(seed, len(means))
    counts = np.zeros(len(means), dtype=np.int64)
    pos = means > 0
    counts[pos] = poisson.ppf(u[pos], means[pos]).astype(np.int64)
    return np.maximum(counts, 0)


def _site_loops(dom, table, idx, count, seed, method):
    rng = site_generator(seed, idx)
    cum = table.cum_weights[idx]
    root = tuple(int(v) for v in table.sites[idx])
    out = []
    for _ in range(count):
        n = int(np.searchsorted(cum, rng.random() * cum[-1], side="right")) + 1
        n = min(n, len(cum))
        length = 2 * n
        loop = None
        if method == "rejection":
            acc = table.returns[idx, n - 1] / table.plane_returns[n - 1]
            if acc >= MIN_ACCEPTANCE:
                loop = sample_bridge_rejection(dom, root, length, rng, acceptance=acc)
        if loop is None:
            loop = sample_bridge(dom, root, length, rng)
        out.append((root, length, loop))
    return out


def sample_soup(config: SoupConfig, method: str = "rejection") -> LoopSoupSample:
    """Rooted Poisson soup: Poisson(lambda * mass(x)) loops per site x.

    ``method`` picks the bridge sampler: "rejection" (uniform plane bridges
    conditioned to stay in the domain) or "kernel" (the conditioned DP).
    Both draw from the same law.
    """
    if method not in ("rejection", "kernel"):
        raise InvalidInputError(f"unknown bridge method {method!r}")
    dom = config.domain
    table = loop_mass(dom, config.L_max)
    counts = poisson_counts(table, config.intensity, config.seed)
    loops, roots, lengths = [], [], []
    for idx in np.flatnonzero(counts):
        for root, length, loop in _site_loops(dom, table, int(idx), int(counts[idx]),
                                              config.seed, method):
            loop.id = len(loops)
            loops.append(loop)
            roots.append(root)
            lengths.append(length)
    return LoopSoupSample(loops, config,
                          np.array(roots, dtype=np.int64).reshape(-1, 2),
                          np.array(lengths, dtype=np.int64))


def _loops_of(sample) -> list:
    return list(sample.loops) if isinstance(sample, LoopSoupSample) else list(sample)


def filter_by_diameter(sample, a: float):
    """Split into (diameter < a, diameter >= a)."""
    if not a > 0:
        raise InvalidInputError("diameter threshold must be positive")
    loops = _loops_of(sample)
    if isinstance(sample, LoopSoupSample):
        d = sample.diameters
    else:
        d = np.array([diameter(l) for l in loops])
    small = [l for l, x in zip(loops, d) if x < a]
    big = [l for l, x in zip(loops, d) if x >= a]
    return small, big


def restrict(sample, sub, domain: GridDomain | None = None):
    """Split into (loops inside ``sub``, the rest).

    ``sub`` is a GridDomain contained in the sample's domain, or a boolean
    mask over that domain's box (which may be empty).
    """
    loops = _loops_of(sample)
    dom = domain or (sample.config.domain if isinstance(sample, LoopSoupSample) and sample.config else None)
    if isinstance(sub, GridDomain):
        if dom is not None and not sub.is_subdomain_of(dom):
            raise InvalidInputError("subdomain is not contained in the domain")
        inside = sub.contains
    else:
        if dom is None:
            raise InvalidInputError("a mask subdomain needs the parent domain")
        m = np.asarray(sub, dtype=bool)
        if m.shape != dom.shape or np.any(m & ~dom.mask):
            raise InvalidInputError("subdomain mask is not contained in the domain")
        inside = lambda sites: mask_contains(m, dom.origin_offset, sites)
    keep, rest = [], []
    for l in loops:
        if l.sites is None:
            raise InvalidInputError("restriction needs lattice loops")
        (keep if inside(l.sites).all() else rest).append(l)
    return keep, rest
