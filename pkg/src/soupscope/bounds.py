"""Analytic bound machinery: Fomin determinants, the v_n series, the
Campbell tail bound, the f(n) recursion and a Monte Carlo loop-mass estimate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import mpmath
import numpy as np
from scipy.optimize import minimize
from scipy.special import gammaln
from scipy.stats import norm

from .errors import DomainError, InvalidInputError
from .geometry import Annulus


@dataclass(frozen=True)
class AngleConfig:
    """Exit angles x_j near 0 and y_l near pi on the unit circle."""

    n: int
    theta1: float
    theta2: float
    x: tuple
    y: tuple

    def __post_init__(self):
        x = tuple(float(v) for v in self.x)
        y = tuple(float(v) for v in self.y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        if self.n < 1 or len(x) != self.n or len(y) != self.n:
            raise InvalidInputError("need n >= 1 angles on each side")
        if not (self.theta1 > 0 and self.theta2 > 0 and self.theta1 + self.theta2 < math.pi):
            raise InvalidInputError("need theta1, theta2 > 0 and theta1 + theta2 < pi")
        if any(not (-self.theta1 < v < self.theta1) for v in x):
            raise InvalidInputError("x angles must lie in (-theta1, theta1)")
        if any(not (math.pi - self.theta2 < v < math.pi + self.theta2) for v in y):
            raise InvalidInputError("y angles must lie in (pi - theta2, pi + theta2)")

    @classmethod
    def random(cls, n, theta1, theta2, rng: np.random.Generator) -> "AngleConfig":
        x = rng.uniform(-theta1, theta1, n)
        y = rng.uniform(math.pi - theta2, math.pi + theta2, n)
        return cls(n, theta1, theta2, tuple(x), tuple(y))


def _denominators(cfg: AngleConfig) -> np.ndarray:
    x = np.asarray(cfg.x)[:, None]
    y = np.asarray(cfg.y)[None, :]
    d = 1.0 - np.cos(x - y)
    if np.any(d <= 0):
        raise DomainError("x_j - y_l is a multiple of 2 pi")
    return d


def fomin_matrix(cfg: AngleConfig) -> np.ndarray:
    d = _denominators(cfg)
    return np.diag(d)[:, None] / d


# float LU loses about log10(cond) digits; past this we redo it in extended precision
COND_LIMIT = 1e4


def _digits_needed(M: np.ndarray) -> int | None:
    with np.errstate(all="ignore"):
        cond = np.linalg.cond(M)
    if np.isfinite(cond) and cond < COND_LIMIT:
        return None
    extra = 300 if not np.isfinite(cond) else int(math.log10(cond))
    return 30 + extra


def _mp_denominators(cfg: AngleConfig, dps: int):
    with mpmath.workdps(dps):
        return [[1 - mpmath.cos(mpmath.mpf(xj) - mpmath.mpf(yl)) for yl in cfg.y] for xj in cfg.x]


def fomin_det(cfg: AngleConfig) -> float:
    """det[(1 - cos(x_j - y_j)) / (1 - cos(x_j - y_l))] by pivoted LU.

    Nearly coincident angles make the matrix nearly singular; then the
    entries and the elimination are redone in extended precision from the
    exact float angles.
    """
    M = fomin_matrix(cfg)
    dps = _digits_needed(M)
    if dps is None:
        return float(np.linalg.det(M))
    d = _mp_denominators(cfg, dps)
    with mpmath.workdps(dps):
        n = cfg.n
        A = mpmath.matrix([[d[j][j] / d[j][l] for l in range(n)] for j in range(n)])
        return float(mpmath.det(A))


def fomin_det_factored(cfg: AngleConfig) -> float:
    """Same determinant with the row factors pulled out."""
    d = _denominators(cfg)
    dps = _digits_needed(fomin_matrix(cfg))
    if dps is None:
        sign, logdet = np.linalg.slogdet(1.0 / d)
        return float(sign * math.exp(logdet + float(np.sum(np.log(np.diag(d))))))
    dm = _mp_denominators(cfg, dps)
    with mpmath.workdps(dps):
        n = cfg.n
        inv = mpmath.det(mpmath.matrix([[1 / dm[j][l] for l in range(n)] for j in range(n)]))
        return float(inv * mpmath.fprod(dm[j][j] for j in range(n)))


def u_n_closed_bound(n: int, theta1: float, theta2: float) -> float:
    """(4 pi / (1 + cos(theta1 + theta2))^2)^(n-1) / sqrt(n!), evaluated in logs."""
    if n < 1:
        raise InvalidInputError("n must be positive")
    if not (theta1 + theta2 < math.pi):
        raise InvalidInputError("theta1 + theta2 must be below pi")
    base = 4.0 * math.pi / (1.0 + math.cos(theta1 + theta2)) ** 2
    return math.exp((n - 1) * math.log(base) - 0.5 * float(gammaln(n + 1)))


@dataclass
class SupSearchResult:
    lower_bound: float
    best: AngleConfig
    evaluations: int


def fomin_sup_search(n, theta1, theta2, iters=200, starts=4, seed=0) -> SupSearchResult:
    """Random sampling then Nelder-Mead restarts; the result only bounds the sup from below."""
    rng = np.random.default_rng(seed)

    def decode(z):
        z = np.asarray(z)
        x = theta1 * np.tanh(z[:n])
        y = math.pi + theta2 * np.tanh(z[n:])
        return AngleConfig(n, theta1, theta2, tuple(x), tuple(y))

    def neg(z):
        try:
            return -fomin_det(decode(z))
        except (DomainError, InvalidInputError):
            return 0.0

    pts = rng.normal(size=(iters, 2 * n))
    vals = np.array([neg(z) for z in pts])
    evals = iters
    best_i = int(np.argmin(vals))
    best_z, best_v = pts[best_i], vals[best_i]
    for z0 in pts[np.argsort(vals)[:starts]]:
        res = minimize(neg, z0, method="Nelder-Mead", options={"maxiter": 200 * n, "xatol": 1e-8})
        evals += res.nfev
        if res.fun < best_v:
            best_z, best_v = res.x, res.fun
    return SupSearchResult(-float(best_v), decode(best_z), evals)


def v_n(q, n: int):
    """Closed form q^n / (1 - q)^(n + 1) of sum_{k >= n} q^k C(k, n)."""
    if not (0 < q < 1):
        raise InvalidInputError("q must lie in (0, 1)")
    if n < 0:
        raise InvalidInputError("n must be nonnegative")
    if isinstance(q, Fraction):
        return q ** n / (1 - q) ** (n + 1)
    return math.exp(n * math.log(q) - (n + 1) * math.log1p(-q))


def v_n_series(q, n: int, K: int):
    """Partial sum over k = n..K and a bound on the remaining tail.

    Term ratios t_{k+1}/t_k = q (k+1)/(k+1-n) decrease in k, so the tail
    is at most t_{K+1} / (1 - rho) with rho the ratio at k = K+1.
    Works with floats or Fractions; returns inf as the tail bound when
    rho >= 1.
    """
    if K < n:
        raise InvalidInputError("K must be at least n")
    partial = sum(q ** k * math.comb(k, n) for k in range(n, K + 1))
    t_next = q ** (K + 1) * math.comb(K + 1, n)
    rho = q * (K + 2) / (K + 2 - n)
    if rho >= 1:
        return partial, math.inf
    return partial, t_next / (1 - rho)


@dataclass(frozen=True)
class CampbellBound:
    value: float
    log_value: float
    rate: float
    decays: bool


def campbell_tail_bound(mu_L: float, p: float, eps: float, n: int) -> CampbellBound:
    """exp(mu_L / (1 - e^-eps)) p^(n/2 - 1) e^(n eps); decays iff sqrt(p) e^eps < 1."""
    if mu_L < 0 or not (0 < p < 1) or eps <= 0 or n < 1:
        raise InvalidInputError("need mu_L >= 0, p in (0,1), eps > 0, n >= 1")
    logv = mu_L / (-math.expm1(-eps)) + (n / 2 - 1) * math.log(p) + n * eps
    rate = math.sqrt(p) * math.exp(eps)
    value = math.exp(logv) if logv < 709 else math.inf
    return CampbellBound(value, logv, rate, rate < 1)


@dataclass(frozen=True)
class RecursionParams:
    s: float
    q: float
    c: float
    eps: float
    K: float = 0.0
    f0: float = 1.0

    def __post_init__(self):
        if not (0 < self.s < 1 and 0 < self.q < 1 and 0 < self.eps < 1):
            raise InvalidInputError("need s, q, eps in (0, 1)")
        if self.c < 0 or self.K < 0:
            raise InvalidInputError("c and K must be nonnegative")

    @property
    def hypothesis_holds(self) -> bool:
        return self.s ** (2 * self.eps) > self.q


@dataclass
class RecursionResult:
    f: np.ndarray
    ratio: np.ndarray       # f(n) / s^n
    bounded: bool
    max_ratio: float


def iterate_recursion(params: RecursionParams, N: int, cap: float = 1e8) -> RecursionResult:
    """f(n+1) = (s/2) f(n) + c q^n f(ceil((1-eps) n)) + K s^(2n), f(0) = f0.

    ``bounded`` reports whether f(n)/s^n stayed finite, below ``cap`` and
    made no new maximum in the second half of the run.
    """
    s, q, c, eps, K = params.s, params.q, params.c, params.eps, params.K
    f = np.empty(N + 1)
    f[0] = params.f0
    for n in range(N):
        back = int(math.ceil((1 - eps) * n - 1e-12))
        f[n + 1] = (s / 2) * f[n] + c * q ** n * f[back] + K * s ** (2 * n)
    with np.errstate(over="ignore", divide="ignore"):
        ratio = f / s ** np.arange(N + 1)
    finite = bool(np.all(np.isfinite(ratio)))
    mx = float(np.max(ratio)) if finite else math.inf
    half = (N + 1) // 2
    settled = finite and (N < 2 or float(np.max(ratio[half:])) <= float(np.max(ratio[:half])) * (1 + 1e-12))
    return RecursionResult(f, ratio, bool(finite and mx <= cap and settled), mx)


@dataclass(frozen=True)
class MassEstimate:
    value: float
    ci_lo: float
    ci_hi: float
    replicas: int


def crossing_loop_count(loops, a: Annulus) -> int:
    """Loops meeting both the closed inner disk and the complement of the open outer disk."""
    n = 0
    for l in loops:
        d = a.distances(l.vertices)
        if d.min() <= a.inner_r and d.max() >= a.outer_r:
            n += 1
    return n


def estimate_mu_L(dom, a: Annulus, config, replicas: int, level: float = 0.95) -> MassEstimate:
    """Mass of crossing loops: mean crossing-loop count per sample over lambda."""
    from .soup import SoupConfig, sample_soup

    if replicas < 1:
        raise InvalidInputError("replicas must be positive")
    seeds = np.random.SeedSequence([int(config.seed), 0xB0D5]).generate_state(replicas, np.uint64)
    counts = np.empty(replicas)
    for i, sd in enumerate(seeds):
        cfg = SoupConfig(config.intensity, dom, config.L_max, int(sd))
        counts[i] = crossing_loop_count(sample_soup(cfg).loops, a)
    lam = config.intensity
    mean = counts.mean() / lam
    if counts.sum() == 0:
        return MassEstimate(0.0, 0.0, 3.0 / (replicas * lam), replicas)
    z = norm.ppf(0.5 + level / 2)
    se = (counts.std(ddof=1) / math.sqrt(replicas) if replicas > 1 else math.sqrt(counts[0])) / lam
    return MassEstimate(float(mean), float(max(0.0, mean - z * se)), float(mean + z * se), replicas)
