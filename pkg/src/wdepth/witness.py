"""M-separability witness: projection probabilities, the p2 lower bound and
depth certification.

Each of the M groups is written as ``a|W0> + b|W1> + c|W2>`` (vacuum, one
and two shared excitations). ``p1`` and ``p2`` are the overlaps of the whole
product state with the global one- and two-excitation Dicke states.

The bound is minimised in the variable ``u = -ln(a**2)`` so that the very
large group counts used in practice (``a`` within 1e-7 of one) stay
well-conditioned.
"""

from __future__ import annotations

import csv
import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._optimize import bisect_root, golden_section

SQRT2 = math.sqrt(2.0)
NORM_TOL = 1e-12
GRID_POINTS = 1000
DEFAULT_M_MAX = 10**7
DEFAULT_N_ATOMS = 1e9


class DomainError(ValueError):
    """Input outside the domain where the witness formulas are defined."""


class InfeasibleBound(Exception):
    """No symmetric M-separable state reaches the requested p1."""

    def __init__(self, p1, m):
        super().__init__(f"p1={p1!r} is unreachable with {m} separable groups")
        self.p1 = p1
        self.m = m


def _check_norm(a, b, c):
    s = a * a + b * b + c * c
    if abs(s - 1.0) > NORM_TOL:
        raise DomainError(f"|a|^2+|b|^2+|c|^2 = {s!r}, expected 1")


@dataclass(frozen=True)
class SymmetricAnsatz:
    """Identical groups; ``c`` is fixed by normalisation as ``-sqrt(1-a^2-b^2)``."""

    a: float
    b: float
    m: int

    def __post_init__(self):
        if not 0.0 < self.a <= 1.0:
            raise DomainError(f"a must lie in (0, 1], got {self.a!r}")
        if self.b < 0.0:
            raise DomainError(f"b must be non-negative, got {self.b!r}")
        if int(self.m) != self.m or self.m < 1:
            raise DomainError(f"m must be a positive integer, got {self.m!r}")
        if self.a * self.a + self.b * self.b > 1.0 + NORM_TOL:
            raise DomainError("a^2 + b^2 exceeds 1")

    @property
    def c(self) -> float:
        return -math.sqrt(max(0.0, 1.0 - self.a * self.a - self.b * self.b))


@dataclass(frozen=True)
class GeneralAnsatz:
    groups: tuple
    n_atoms: float

    def __post_init__(self):
        groups = tuple(tuple(float(x) for x in g) for g in self.groups)
        if not groups:
            raise DomainError("at least one group is required")
        for a, b, c in groups:
            if a <= 0.0:
                raise DomainError(f"group amplitude a must be positive, got {a!r}")
            _check_norm(a, b, c)
        object.__setattr__(self, "groups", groups)

    @property
    def m(self) -> int:
        return len(self.groups)

    @classmethod
    def symmetric(cls, a, b, m, n_atoms):
        sym = SymmetricAnsatz(a, b, m)
        return cls(((a, b, sym.c),) * m, n_atoms)


@dataclass(frozen=True)
class ProjectionPair:
    p1: float
    p2: float
    p1_err: float = 0.0
    p2_err: float = 0.0

    def __post_init__(self):
        for name in ("p1", "p2"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise DomainError(f"{name} must lie in [0, 1], got {v!r}")
        if self.p1_err < 0 or self.p2_err < 0:
            raise DomainError("uncertainties must be non-negative")


@dataclass(frozen=True)
class BoundPoint:
    p1: float
    p2_bound: float
    a_star: float


@dataclass
class BoundCurve:
    m: int
    points: list
    infeasible: list = field(default_factory=list)

    def write_csv(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["p1", "p2_bound", "a_star"])
        for pt in self.points:
            w.writerow([repr(pt.p1), repr(pt.p2_bound), repr(pt.a_star)])


@dataclass(frozen=True)
class CertificationResult:
    m_min: int | None
    depth: float | None
    n_atoms: float
    margin: float | None

    @property
    def certified(self) -> bool:
        return self.m_min is not None


# --- projection probabilities -------------------------------------------------


def p1_symmetric(ansatz: SymmetricAnsatz) -> float:
    a, b, m = ansatz.a, ansatz.b, ansatz.m
    return m * a ** (2 * m - 2) * b * b


def p2_symmetric(ansatz: SymmetricAnsatz) -> float:
    a, b, c, m = ansatz.a, ansatz.b, ansatz.c, ansatz.m
    return a ** (2 * m) * ((m - 1) * b * b / (SQRT2 * a * a) + c / a) ** 2


def _p1_arrays(prod_a2, ratio_sum, m):
    return prod_a2 / m * ratio_sum**2


def _p2_arrays(prod_a2, ratio_sum, ratio_sq_sum, c_ratio_sum, m, n_atoms):
    pair_sum = 0.5 * (ratio_sum**2 - ratio_sq_sum)
    depth = n_atoms / m
    inner = SQRT2 * pair_sum + math.sqrt(1.0 - 1.0 / depth) * c_ratio_sum
    return prod_a2 / (m * m * (1.0 - 1.0 / n_atoms)) * inner**2


def p1_general(ansatz: GeneralAnsatz) -> float:
    a = np.array([g[0] for g in ansatz.groups])
    b = np.array([g[1] for g in ansatz.groups])
    return float(_p1_arrays(np.prod(a * a), np.sum(b / a), ansatz.m))


def p2_general(ansatz: GeneralAnsatz) -> float:
    """Two-excitation probability including the finite-N factors."""
    m, n = ansatz.m, ansatz.n_atoms
    if n < m or n <= 1:
        raise DomainError(f"n_atoms={n!r} must be >= m={m} and > 1")
    g = np.array(ansatz.groups)
    a, b, c = g[:, 0], g[:, 1], g[:, 2]
    r = b / a
    return float(
        _p2_arrays(np.prod(a * a), r.sum(), (r * r).sum(), (c / a).sum(), m, n)
    )


# --- symmetric bound -----------------------------------------------------------


def _feasibility(u, p1, m):
    # 1 - a^2 - b^2 with b^2 = (p1/m) a^(2-2m), a^2 = exp(-u)
    return -math.expm1(-u) - (p1 / m) * math.exp((m - 1) * u)


def _bracket(u, p1, m):
    # a^m * [p1 (m-1)/(sqrt2 m) a^-2m - sqrt(feasibility)/a]; p2 is its square
    g = _feasibility(u, p1, m)
    root = math.sqrt(g) if g > 0.0 else 0.0
    return p1 * (m - 1) / (SQRT2 * m) * math.exp(0.5 * m * u) - math.exp(
        -0.5 * (m - 1) * u
    ) * root


def feasible_interval(p1, m):
    """Interval of ``u = -ln a^2`` where ``b^2 <= 1 - a^2``, or None."""
    if m == 1:
        return -math.log1p(-p1), math.inf
    # concave in u with its maximum where a^(2m) = p1 (m-1)/m
    u_peak = -math.log(p1 * (m - 1) / m) / m
    if _feasibility(u_peak, p1, m) < 0.0:
        return None
    f = lambda u: _feasibility(u, p1, m)
    lo = bisect_root(f, 0.0, u_peak)
    hi = 2.0 * u_peak
    while f(hi) >= 0.0:
        hi *= 2.0
    hi = bisect_root(f, u_peak, hi)
    return lo, hi


def _validate_p1(p1, m):
    if not 0.0 < p1 < 1.0:
        raise DomainError(f"p1 must lie in (0, 1), got {p1!r}")
    if int(m) != m or m < 1:
        raise DomainError(f"m must be a positive integer, got {m!r}")


def p2_bound(p1: float, m: int, n_atoms: float | None = None):
    """Minimum two-excitation probability over symmetric M-separable states.

    Returns ``(p2_bound, a_star)``. Raises :class:`InfeasibleBound` when no
    such state reaches ``p1``. ``n_atoms`` is accepted for interface symmetry;
    the bound is the large-N form and does not depend on it.
    """
    _validate_p1(p1, m)
    m = int(m)
    interval = feasible_interval(p1, m)
    if interval is None:
        raise InfeasibleBound(p1, m)
    lo, hi = interval
    if m == 1:
        # bracket is -sqrt(feasibility)/a, zero at the lower end
        return 0.0, math.exp(-0.5 * lo)

    us = np.geomspace(lo, hi, GRID_POINTS)
    vals = np.array([_bracket(u, p1, m) for u in us])
    i = int(np.argmin(vals))
    h = lambda u: _bracket(u, p1, m)
    if vals[i] <= 0.0:
        u_root = bisect_root(h, lo, us[i]) if vals[0] > 0.0 else lo
        return 0.0, math.exp(-0.5 * u_root)
    left, right = us[max(i - 1, 0)], us[min(i + 1, len(us) - 1)]
    u_star, h_star = golden_section(h, left, right, tol=1e-12 * max(1.0, right))
    if h_star <= 0.0:
        u_root = bisect_root(h, left, u_star)
        return 0.0, math.exp(-0.5 * u_root)
    return h_star * h_star, math.exp(-0.5 * u_star)


def bound_value(p1, m):
    """``p2_bound`` with infeasibility mapped to ``+inf`` (no state reaches p1)."""
    try:
        return p2_bound(p1, m)[0]
    except InfeasibleBound:
        return math.inf


# --- brute-force oracle --------------------------------------------------------

ORACLE_TOLERANCE = {1: 2e-4, 2: 2e-3, 3: 5e-3}
_ORACLE_STEPS = {1: 2, 2: 181, 3: 41}
_LAST_STEPS = {1: 200001, 2: 2001, 3: 401}


def _group_grid(steps):
    # a = cos(theta), b = sin(theta) cos(phi), c = -sin(theta) sin(phi)
    theta = np.linspace(0.0, 0.5 * math.pi, steps)[:-1]
    phi = np.linspace(0.0, 0.5 * math.pi, steps)
    t, p = np.meshgrid(theta, phi, indexing="ij")
    a = np.cos(t).ravel()
    b = (np.sin(t) * np.cos(p)).ravel()
    c = -(np.sin(t) * np.sin(p)).ravel()
    return a, b, c


def p2_bound_oracle(p1: float, m: int, n_atoms: float = 1e12, steps=None):
    """Brute-force minimum of the general two-excitation probability.

    Groups ``1..m-1`` run over an angular grid of the unit-sphere octant and
    group ``m`` over a grid of ``a``; its ``b`` is solved so that ``p1`` is
    met exactly and ``c <= 0`` closes the normalisation. Returns ``inf`` when
    no grid state reaches ``p1``. Every value is attained by an actual state,
    so the result overestimates the true minimum by at most
    ``ORACLE_TOLERANCE[m]`` at the default steps.
    """
    _validate_p1(p1, m)
    if m > 5:
        raise ValueError("oracle supports m <= 5 only")
    steps = steps or _ORACLE_STEPS.get(m, 21)
    a_last = np.cos(np.linspace(0.0, 0.5 * math.pi, _LAST_STEPS.get(m, 200))[:-1])
    target = math.sqrt(m * p1)
    ga, gb, gc = _group_grid(steps)
    if m == 1:
        ga, gb, gc = np.ones(1), np.zeros(1), np.zeros(1)
    best = math.inf
    chunk = max(1, 2_000_000 // a_last.size)
    # outer groups enumerated, group m-1 vectorised over the grid, group m over a
    outer = itertools.combinations_with_replacement(range(ga.size), max(m - 2, 0))
    for combo in outer:
        idx = np.array(combo, dtype=int)
        base_a = np.prod(ga[idx])
        base_r = np.sum(gb[idx] / ga[idx])
        base_r2 = np.sum((gb[idx] / ga[idx]) ** 2)
        base_c = np.sum(gc[idx] / ga[idx])
        for s in range(0, ga.size, chunk):
            a, b, c = ga[s : s + chunk], gb[s : s + chunk], gc[s : s + chunk]
            if m == 1:
                a, b, c = a * 0 + 1, b * 0, c * 0
            prod_a = base_a * a[:, None]
            s_ratio = base_r + (b / a)[:, None]
            s_ratio_sq = base_r2 + ((b / a) ** 2)[:, None]
            s_c = base_c + (c / a)[:, None]
            r_last = target / (prod_a * a_last) - s_ratio
            rest = 1.0 - a_last**2 - (r_last * a_last) ** 2
            ok = (r_last >= 0.0) & (rest >= -1e-15)
            if not ok.any():
                continue
            shape = ok.shape
            al = np.broadcast_to(a_last, shape)[ok]
            rl = r_last[ok]
            cl = -np.sqrt(np.clip(rest[ok], 0.0, None))
            p2 = _p2_arrays(
                (np.broadcast_to(prod_a, shape)[ok] * al) ** 2,
                np.broadcast_to(s_ratio, shape)[ok] + rl,
                np.broadcast_to(s_ratio_sq, shape)[ok] + rl * rl,
                np.broadcast_to(s_c, shape)[ok] + cl / al,
                m,
                n_atoms,
            )
            best = min(best, float(p2.min()))
    return best


# --- curves and certification --------------------------------------------------


def _threads():
    try:
        return max(1, int(os.environ.get("WDEPTH_THREADS", "1")))
    except ValueError:
        return 1


def bound_curve(m, p1_grid, n_atoms=DEFAULT_N_ATOMS, workers=None) -> BoundCurve:
    """Tabulate ``p2_bound`` on a strictly increasing grid inside (0, 1)."""
    grid = [float(x) for x in p1_grid]
    if not grid:
        raise DomainError("p1 grid is empty")
    if any(not 0.0 < x < 1.0 for x in grid):
        raise DomainError("p1 grid must lie inside (0, 1)")
    if any(x1 >= x2 for x1, x2 in zip(grid, grid[1:])):
        raise DomainError("p1 grid must be strictly increasing")

    def one(p1):
        try:
            return p2_bound(p1, m, n_atoms)
        except InfeasibleBound:
            return None

    workers = workers or _threads()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, grid))
    else:
        results = [one(p) for p in grid]
    curve = BoundCurve(int(m), [])
    for p1, res in zip(grid, results):
        if res is None:
            curve.infeasible.append(p1)
        else:
            curve.points.append(BoundPoint(p1, res[0], res[1]))
    return curve


def _excluded(p1, p2, m):
    return p2 < bound_value(p1, m)


def _smallest_excluded(p1, p2, m_max, linear=False):
    if p1 <= 0.0:
        return None
    if linear:
        for m in range(1, m_max + 1):
            if _excluded(p1, p2, m):
                return m
        return None
    if not _excluded(p1, p2, m_max):
        return None
    if _excluded(p1, p2, 1):
        return 1
    lo, hi = 1, 2
    while hi < m_max and not _excluded(p1, p2, hi):
        lo, hi = hi, min(2 * hi, m_max)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _excluded(p1, p2, mid):
            hi = mid
        else:
            lo = mid
    return hi


def certify(
    pair: ProjectionPair,
    n_atoms: float,
    m_max: int = DEFAULT_M_MAX,
    *,
    with_uncertainty=False,
    linear=False,
) -> CertificationResult:
    """Smallest group count M whose bound lies strictly above the measured p2.

    A measured pair below the M-group boundary excludes M-separability and
    certifies depth ``n_atoms / M``. With ``with_uncertainty`` every corner of
    the one-sigma box is certified and the largest M is reported; one
    uncertified corner makes the whole result uncertified.
    """
    if m_max < 1:
        raise DomainError("m_max must be >= 1")
    if n_atoms <= 0:
        raise DomainError("n_atoms must be positive")
    corners = [(pair.p1, pair.p2)]
    if with_uncertainty:
        corners = [
            (min(max(pair.p1 + s1 * pair.p1_err, 0.0), 1.0 - 1e-15),
             min(max(pair.p2 + s2 * pair.p2_err, 0.0), 1.0))
            for s1 in (-1, 1)
            for s2 in (-1, 1)
        ]
    worst = None
    for p1, p2 in corners:
        p1 = min(p1, 1.0 - 1e-15)
        m = _smallest_excluded(p1, p2, int(m_max), linear=linear)
        if m is None:
            return CertificationResult(None, None, n_atoms, None)
        margin = bound_value(p1, m) - p2
        if worst is None or m > worst[0]:
            worst = (m, margin)
    m, margin = worst
    return CertificationResult(m, n_atoms / m, n_atoms, margin)


def g2_to_p2(g2: float, p1: float) -> float:
    if g2 < 0:
        raise DomainError("g2 must be non-negative")
    if not 0.0 < p1 <= 1.0:
        raise DomainError(f"p1 must lie in (0, 1], got {p1!r}")
    return g2 * p1 * p1 / 2.0


def p2_to_g2(p2: float, p1: float) -> float:
    if not 0.0 < p1 <= 1.0:
        raise DomainError(f"p1 must lie in (0, 1], got {p1!r}")
    return 2.0 * p2 / (p1 * p1)
