# brw/oracle.py
"""
Exact dynamic programming for integer-lattice laws.

Survival is computed in U-coordinates on integer partial sums. A V-barrier
of slope b is the U-line of slope c = gamma - b / t*; a particle at level j
is allowed when its U-sum s satisfies s >= ceil(c j - tol).
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from brw.models import (ExplicitFinite, ProductLaw, as_product, intensity, is_finite_support,
                        offspring_distribution)
from brw.transform import VLaw
from common.data_models import JsonRecord
from common.errors import LawValidationError, ParameterError

logger = logging.getLogger(__name__)

MAX_DEPTH = 2**15
LINE_TOL = 1e-9


@dataclass(frozen=True)
class LatticeLaw:
    kind: str  # "product" or "explicit"
    t_star: float
    psi_tstar: float
    offspring_ks: np.ndarray = field(repr=False)
    offspring_qs: np.ndarray = field(repr=False)
    step_values: np.ndarray = field(repr=False)  # product: i.i.d. U-step atoms
    step_probs: np.ndarray = field(repr=False)
    outcomes: Tuple[Tuple[np.ndarray, float], ...] = field(repr=False, default=())  # explicit
    tilted_values: np.ndarray = field(repr=False, default=None)  # spine U-step
    tilted_probs: np.ndarray = field(repr=False, default=None)

    @property
    def gamma(self) -> float:
        return self.psi_tstar / self.t_star

    @property
    def dmin(self) -> int:
        return int(self.step_values.min())

    @property
    def dmax(self) -> int:
        return int(self.step_values.max())

    @property
    def sigma2(self) -> float:
        mean = np.dot(self.tilted_probs, self.tilted_values)
        return float(self.t_star**2 * np.dot(self.tilted_probs, (self.tilted_values - mean) ** 2))

    def u_line(self, v_slope: float) -> float:
        return self.gamma - v_slope / self.t_star


def _as_int(values, what: str) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    rounded = np.round(values)
    if np.any(np.abs(values - rounded) > 1e-12):
        raise LawValidationError("lattice", f"{what} are not integers: {values}")
    return rounded.astype(np.int64)


def lattice_from_vlaw(vlaw: VLaw) -> LatticeLaw:
    if not is_finite_support(vlaw.base):
        raise LawValidationError("lattice", "exact DP needs a finite integer step law")
    law = as_product(vlaw.base)
    ks, qs = offspring_distribution(law)
    u, m = intensity(law)
    values = _as_int(u, "displacements")
    tilted = m * np.exp(vlaw.t_star * u - vlaw.psi_tstar)
    common = dict(t_star=vlaw.t_star, psi_tstar=vlaw.psi_tstar, offspring_ks=ks, offspring_qs=qs,
                  tilted_values=values, tilted_probs=tilted / tilted.sum())
    if isinstance(law, ProductLaw):
        return LatticeLaw(kind="product",
                          step_values=_as_int([v for v, _ in law.step.atoms], "step atoms"),
                          step_probs=np.array([q for _, q in law.step.atoms]), **common)
    assert isinstance(law, ExplicitFinite)
    outcomes = tuple((_as_int(d, "displacements"), q) for d, q in law.outcomes)
    return LatticeLaw(kind="explicit", step_values=values, step_probs=m / m.sum(), outcomes=outcomes,
                      **common)


def _lookup(R: np.ndarray, lo: int, idx: np.ndarray) -> np.ndarray:
    i = idx - lo
    valid = (i >= 0) & (i < R.size)
    out = np.zeros(idx.size)
    out[valid] = R[i[valid]]
    return out


def _line_floor(c: float, j: int, tol: float) -> float:
    return -math.inf if c == -math.inf else math.ceil(c * j - tol)


def exact_path_survival(ll: LatticeLaw, n: int, v_slope: Optional[float] = None,
                        u_line: Optional[float] = None) -> float:
    """
    P{exists |x| = n: U(x_j) >= c j for all j <= n}, with c given directly as
    `u_line` or through a V-barrier slope.

    R_j(s), the probability that a level-j particle at U-sum s has a
    surviving line of descent to level n, satisfies R_n = 1 on allowed states
    and R_j(s) = 1 - E prod_children (1 - R_{j+1}(s + u_child)).
    """
    if (v_slope is None) == (u_line is None):
        raise ParameterError("give exactly one of v_slope, u_line")
    if not 1 <= n <= MAX_DEPTH:
        raise ParameterError(f"n must lie in [1, {MAX_DEPTH}], got {n}")
    if v_slope is not None:
        if v_slope < 0:
            raise ParameterError(f"V-slope must be >= 0, got {v_slope}")
        c, tol = ll.u_line(v_slope), LINE_TOL / ll.t_star
    else:
        c, tol = u_line, LINE_TOL

    def lo_hi(j: int) -> Tuple[int, int]:
        return int(max(j * ll.dmin, _line_floor(c, j, tol))), j * ll.dmax

    lo_next, hi_next = lo_hi(n)
    if lo_next > hi_next:
        return 0.0
    R = np.ones(hi_next - lo_next + 1)
    with np.errstate(divide="ignore"):
        for j in range(n - 1, -1, -1):
            lo, hi = lo_hi(j)
            if lo > hi:
                return 0.0
            s = np.arange(lo, hi + 1)
            if ll.kind == "product":
                m = np.zeros(s.size)
                for y, py in zip(ll.step_values, ll.step_probs):
                    m += py * _lookup(R, lo_next, s + y)
                log_miss = np.log1p(-np.clip(m, 0.0, 1.0))
                R = np.zeros(s.size)
                for k, qk in zip(ll.offspring_ks, ll.offspring_qs):
                    if k > 0:  # childless particles never survive
                        R += qk * -np.expm1(k * log_miss)
            else:
                R_new = np.zeros(s.size)
                for disp, q in ll.outcomes:
                    log_miss = np.zeros(s.size)
                    for y in disp:
                        log_miss += np.log1p(-np.clip(_lookup(R, lo_next, s + y), 0.0, 1.0))
                    R_new += q * -np.expm1(log_miss)
                R = R_new
            lo_next = lo
    logger.debug(f"path survival DP: n={n}, c={c}, value={R[0]}")
    return float(R[0])


# --- single-walk corridor DP ---

def _dense_pmf(values: np.ndarray, probs: np.ndarray) -> Tuple[int, np.ndarray]:
    values = _as_int(values, "step values")
    lo = int(values.min())
    pmf = np.zeros(int(values.max()) - lo + 1)
    np.add.at(pmf, values - lo, probs)
    return lo, pmf


def corridor_log_trace(step_values, step_probs, lower: Sequence[int], upper: Sequence[int],
                       endpoint: Optional[Tuple[int, int]] = None) -> np.ndarray:
    """
    log P{lower[i-1] <= S_i <= upper[i-1] for i <= j}, j = 0..n, for a walk
    from S_0 = 0. The forward distribution is renormalized at every step and
    the log-mass accumulated, so long corridors do not underflow.
    """
    lower = np.asarray(lower, dtype=np.int64)
    upper = np.asarray(upper, dtype=np.int64)
    if lower.shape != upper.shape:
        raise ParameterError("corridor bounds must have equal length")
    n = lower.size
    ylo, pmf = _dense_pmf(np.asarray(step_values), np.asarray(step_probs, dtype=float))
    trace = np.full(n + 1, -np.inf)
    trace[0] = 0.0
    dist, dlo = np.ones(1), 0
    log_mass = 0.0
    for i in range(n):
        lo, hi = int(lower[i]), int(upper[i])
        if i == n - 1 and endpoint is not None:
            lo, hi = max(lo, endpoint[0]), min(hi, endpoint[1])
        full = np.convolve(dist, pmf)  # support starts at dlo + ylo
        start = dlo + ylo
        if lo > hi or hi < start or lo > start + full.size - 1:
            return trace
        a, b = max(lo, start), min(hi, start + full.size - 1)
        dist = full[a - start:b - start + 1]
        total = dist.sum()
        if total <= 0.0:
            return trace
        log_mass += math.log(total)
        dist = dist / total
        dlo = a
        trace[i + 1] = log_mass
    return trace


def exact_corridor_walk(step_values, step_probs, lower: Sequence[int], upper: Sequence[int],
                        endpoint: Optional[Tuple[int, int]] = None) -> float:
    """P{lower[i-1] <= S_i <= upper[i-1] for all 1 <= i <= n} (and S_n in endpoint)."""
    return float(np.exp(corridor_log_trace(step_values, step_probs, lower, upper, endpoint)[-1]))


def first_moment_bound(ll: LatticeLaw, eps_v: float, n: int, b: float) -> float:
    """
    e^{eps n} I(n) + sum_{j<n} e^{eps (j+1) - b_{j+1}} I(j) with b_i = b (n - i)^{1/3}
    and I(j) = P{eps i - b_i < S_i <= eps i for i <= j} for the spine walk.
    Always >= exact_path_survival(ll, n, v_slope=eps_v).
    """
    if b <= 0 or eps_v < 0:
        raise ParameterError(f"need b > 0 and eps >= 0, got b={b}, eps={eps_v}")
    i = np.arange(1, n + 1)
    b_i = b * np.cbrt(n - i)
    c = ll.u_line(eps_v)
    # S_i = psi i - t* T_i, with T the U-sum of the spine
    lower = np.ceil(c * i - LINE_TOL / ll.t_star)
    upper = np.ceil(c * i + b_i / ll.t_star - LINE_TOL) - 1
    log_I = corridor_log_trace(ll.tilted_values, ll.tilted_probs, lower, upper)
    j = np.arange(n)
    b_next = b * np.cbrt(n - (j + 1))
    terms = np.concatenate([eps_v * (j + 1) - b_next + log_I[:n], [eps_v * n + log_I[n]]])
    return float(np.exp(logsumexp(terms)))


# --- convergence in n and asymptotics ---

@dataclass
class ConvergedRho(JsonRecord):
    eps_v: float = 0.0
    n: int = 0
    rho: float = 0.0
    previous: float = 0.0
    converged: bool = False


def converged_rho(ll: LatticeLaw, eps_v: float, n_start: int = 64, n_max: int = MAX_DEPTH,
                  rtol: float = 0.01) -> ConvergedRho:
    """Double n until |rho(n) - rho(n/2)| / rho(n) < rtol."""
    n = n_start
    previous = exact_path_survival(ll, n, v_slope=eps_v)
    while 2 * n <= n_max:
        n *= 2
        rho = exact_path_survival(ll, n, v_slope=eps_v)
        if rho > 0 and abs(rho - previous) / rho < rtol:
            return ConvergedRho(eps_v=eps_v, n=n, rho=rho, previous=previous, converged=True)
        previous = rho
    logger.warning(f"rho(eps={eps_v}, n) still moving at n={n}; reporting the last value")
    return ConvergedRho(eps_v=eps_v, n=n, rho=previous, previous=previous, converged=False)


def asymptotic_slope(ll: LatticeLaw, eps_grid: Sequence[float], **kwargs) -> Tuple[float, float, List[ConvergedRho]]:
    """Least-squares slope and intercept of log rho(eps) against eps^{-1/2}."""
    rows = [converged_rho(ll, eps, **kwargs) for eps in eps_grid]
    x = np.array([eps**-0.5 for eps in eps_grid])
    y = np.log([r.rho for r in rows])
    slope, intercept = np.polyfit(x, y, 1)
    return float(slope), float(intercept), rows


@dataclass
class SmallBarrierRow(JsonRecord):
    n: int = 0
    eps_v: float = 0.0
    rho: float = 0.0
    scaled_log_rho: float = 0.0  # n^{-1/3} log rho(theta n^{-2/3}, n)
    bound: float = 0.0  # -pi sigma / (2 theta)^{1/2}


def small_barrier_sequence(ll: LatticeLaw, theta: float, n_list: Sequence[int]) -> List[SmallBarrierRow]:
    """n^{-1/3} log rho(theta n^{-2/3}, n) along n_list, with its limiting bound."""
    if theta <= 0:
        raise ParameterError(f"theta must be > 0, got {theta}")
    bound = -math.pi * math.sqrt(ll.sigma2) / math.sqrt(2 * theta)
    rows = []
    for n in n_list:
        eps = theta * n ** (-2.0 / 3.0)
        rho = exact_path_survival(ll, n, v_slope=eps)
        rows.append(SmallBarrierRow(n=n, eps_v=eps, rho=rho,
                                    scaled_log_rho=math.log(rho) / n ** (1.0 / 3.0) if rho > 0 else -math.inf,
                                    bound=bound))
    return rows
