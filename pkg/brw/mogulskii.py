# brw/mogulskii.py
"""
Small-deviation side: the corridor constant -(pi^2 sigma^2 / 2) int dt / (g2 - g1)^2,
the Brownian corridor probability series, and triangular-array experiments
that compare (a_n^2 / n) log P{g1(i/n) <= S_i / a_n <= g2(i/n), i <= n}
with that constant.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from brw.oracle import exact_corridor_walk
from brw.quadrature import adaptive_simpson
from brw.spine import SpineLaw
from brw.stats import binomial_stderr
from brw.streams import block_ranges, make_stream
from common.data_models import JsonRecord
from common.errors import ParameterError

logger = logging.getLogger(__name__)

CORRIDOR_SAMPLES = 1024
CONSTANT_TOL = 1e-10
SERIES_TOL = 1e-14
ROUND_TOL = 1e-9
MC_MIN_REPLICATES = 10**6
MC_BLOCK = 2**14
GRID = np.linspace(0.0, 1.0, CORRIDOR_SAMPLES)


@dataclass(frozen=True)
class CorridorSpec:
    g1: np.ndarray = field(repr=False)  # samples on GRID
    g2: np.ndarray = field(repr=False)
    sigma: float = 1.0

    def __post_init__(self):
        if self.g1.shape != GRID.shape or self.g2.shape != GRID.shape:
            raise ParameterError(f"corridor boundaries need {CORRIDOR_SAMPLES} samples")
        if not self.sigma > 0:
            raise ParameterError(f"sigma must be > 0, got {self.sigma}")
        if not self.g1[0] < 0 < self.g2[0]:
            raise ParameterError(f"need g1(0) < 0 < g2(0), got {self.g1[0]}, {self.g2[0]}")
        if not np.min(self.g2 - self.g1) > 0:
            raise ParameterError("corridor pinches: g2 - g1 must stay positive on [0, 1]")

    @classmethod
    def constant(cls, lower: float = -1.0, upper: float = 1.0, sigma: float = 1.0) -> "CorridorSpec":
        return cls(g1=np.full(GRID.shape, float(lower)), g2=np.full(GRID.shape, float(upper)), sigma=sigma)

    @classmethod
    def linear(cls, g1_start: float, g1_end: float, g2_start: float, g2_end: float,
               sigma: float = 1.0) -> "CorridorSpec":
        return cls(g1=g1_start + (g1_end - g1_start) * GRID, g2=g2_start + (g2_end - g2_start) * GRID,
                   sigma=sigma)

    def lower(self, t):
        return np.interp(t, GRID, self.g1)

    def upper(self, t):
        return np.interp(t, GRID, self.g2)


def corridor_constant(spec: CorridorSpec) -> float:
    """-(pi^2 sigma^2 / 2) int_0^1 dt / (g2(t) - g1(t))^2."""
    factor = math.pi**2 * spec.sigma**2 / 2
    integral, error = adaptive_simpson(lambda t: 1.0 / float(spec.upper(t) - spec.lower(t)) ** 2,
                                       0.0, 1.0, tol=CONSTANT_TOL / factor)
    logger.debug(f"corridor integral {integral} (error estimate {error})")
    return -factor * integral


def ito_mckean_f(a: float, b: float, c: float, d: float) -> float:
    """
    P{a <= W_t <= b for t in [0, 1], c <= W_1 <= d} for standard Brownian
    motion, by the sine series of the killed heat kernel with each term
    integrated over [c, d] in closed form.
    """
    if not (a < 0 < b and a <= c <= d <= b):
        raise ParameterError(f"need a < 0 < b and a <= c <= d <= b, got {(a, b, c, d)}")
    if c == d:
        return 0.0
    w = b - a
    # term bound 4/(k pi) e^{-k^2 pi^2 / (2 w^2)} falls below SERIES_TOL past k_max
    k_max = int(math.ceil(math.sqrt(2 * w * w / math.pi**2 * math.log(4 / (math.pi * SERIES_TOL))))) + 1
    k = np.arange(1, k_max + 1)
    kp = k * math.pi / w
    decay = np.exp(-0.5 * kp**2)
    keep = 4 / (k * math.pi) * decay >= SERIES_TOL
    keep[0] = True
    k, kp, decay = k[keep], kp[keep], decay[keep]
    terms = (2 / (k * math.pi)) * decay * np.sin(kp * abs(a)) * (np.cos(kp * (c - a)) - np.cos(kp * (d - a)))
    return float(min(1.0, max(0.0, terms.sum())))


def brownian_corridor_mc(a: float, b: float, c: float, d: float, paths: int = 10**5,
                         steps: int = 256, seed: int = 0) -> Tuple[float, float]:
    """
    Monte Carlo estimate (and stderr) of ito_mckean_f. Between grid points a
    path survives each barrier with the Brownian-bridge non-crossing
    probability, so coarse grids stay unbiased up to the two-barrier overlap.
    """
    dt = 1.0 / steps
    hits = 0
    for start, stop in block_ranges(paths, MC_BLOCK):
        rng = make_stream(seed, start)
        count = stop - start
        x = np.zeros(count)
        alive = np.ones(count, dtype=bool)
        for _ in range(steps):
            y = x + rng.normal(0.0, math.sqrt(dt), count)
            inside = (y >= a) & (y <= b)
            with np.errstate(over="ignore", invalid="ignore"):
                cross_up = np.exp(-2 * np.clip(b - x, 0, None) * np.clip(b - y, 0, None) / dt)
                cross_down = np.exp(-2 * np.clip(x - a, 0, None) * np.clip(y - a, 0, None) / dt)
            survive_bridge = rng.random(count) >= np.minimum(1.0, cross_up + cross_down)
            alive &= inside & survive_bridge
            x = y
        hits += int(np.sum(alive & (x >= c) & (x <= d)))
    return hits / paths, binomial_stderr(hits, paths)


# --- triangular arrays ---

@dataclass
class ArrayWitness(JsonRecord):
    """Condition witnesses for one row of the array: bounded third moment, small mean, variance limit."""
    n: int = 0
    abs_moment_3: float = 0.0  # E|X|^{2 + eta}, eta = 1
    mean_ratio: float = 0.0  # |E X| n / a_n
    variance_gap: float = 0.0  # |Var X - sigma^2|
    offspring_tail: float = 0.0  # P{nu_0 > r_n} for spine families
    ok: bool = True


@dataclass(frozen=True)
class ArraySpec:
    """
    Per-n step law X^{(n)} with a_n = n^exponent. Lattice kinds have steps
    X = shift + scale W with W integer; "gaussian" is sampled.
    """
    kind: str  # "lazy", "lattice", "spine" or "gaussian"
    exponent: float = 1.0 / 3.0
    step_values: Optional[np.ndarray] = field(default=None, repr=False)
    step_probs: Optional[np.ndarray] = field(default=None, repr=False)
    spine: Optional[SpineLaw] = field(default=None, repr=False)
    sigma: float = 1.0

    @classmethod
    def lazy(cls, exponent: float = 1.0 / 3.0) -> "ArraySpec":
        return cls.lattice([-1, 0, 1], [1 / 3, 1 / 3, 1 / 3], exponent, kind="lazy")

    @classmethod
    def lattice(cls, values: Sequence[int], probs: Sequence[float], exponent: float = 1.0 / 3.0,
                kind: str = "lattice") -> "ArraySpec":
        values = np.asarray(values, dtype=np.int64)
        probs = np.asarray(probs, dtype=float)
        probs = probs / probs.sum()
        sigma = math.sqrt(float(np.dot(probs, values**2) - np.dot(probs, values) ** 2))
        return cls(kind=kind, exponent=exponent, step_values=values, step_probs=probs, sigma=sigma)

    @classmethod
    def from_spine(cls, sp: SpineLaw, exponent: float = 1.0 / 3.0) -> "ArraySpec":
        return cls(kind="spine", exponent=exponent, spine=sp, sigma=math.sqrt(sp.variance))

    @classmethod
    def gaussian(cls, sigma: float = 1.0, exponent: float = 1.0 / 3.0) -> "ArraySpec":
        return cls(kind="gaussian", exponent=exponent, sigma=sigma)

    @property
    def sigma2(self) -> float:
        return self.sigma**2

    def a_n(self, n: int) -> float:
        return float(n) ** self.exponent

    @staticmethod
    def r_n(n: int) -> int:
        """Offspring cap floor(e^{n^{1/4}}) of the conditioned spine."""
        return int(math.floor(math.exp(n**0.25)))

    @property
    def is_lattice(self) -> bool:
        if self.kind == "spine":
            return self.spine.joint_v is not None and self._spine_lattice() is not None
        return self.kind in ("lazy", "lattice")

    def _spine_lattice(self):
        vl = self.spine.vlaw
        w = (vl.psi_tstar - self.spine.joint_v) / vl.t_star
        return None if np.any(np.abs(w - np.round(w)) > 1e-9) else np.round(w).astype(np.int64)

    def lattice_law(self, n: int) -> Tuple[np.ndarray, np.ndarray, float, float]:
        """(W values, probs, shift, scale) with X = shift + scale W at row n."""
        if self.kind in ("lazy", "lattice"):
            return self.step_values, self.step_probs, 0.0, 1.0
        if self.kind == "spine" and self.is_lattice:
            w = self._spine_lattice()
            mask = self.spine.joint_k <= self.r_n(n)
            values = np.unique(w[mask])
            probs = np.array([self.spine.joint_p[mask & (w == v)].sum() for v in values])
            vl = self.spine.vlaw
            return values, probs / probs.sum(), vl.psi_tstar, -vl.t_star
        raise ParameterError(f"array family {self.kind!r} is not lattice-valued")

    def sample(self, n: int, shape: Tuple[int, int], rng: np.random.Generator) -> np.ndarray:
        if self.kind == "gaussian" or (self.kind == "spine" and self.spine.gaussian is not None):
            # nu_0 is independent of S_1 for product laws, so conditioning leaves the step unchanged
            loc = 0.0 if self.kind == "gaussian" else self.spine.gaussian[0]
            return rng.normal(loc, self.sigma, shape)
        values, probs, shift, scale = self.lattice_law(n)
        return shift + scale * values[rng.choice(values.size, size=shape, p=probs)]

    def witnesses(self, n: int) -> ArrayWitness:
        tail = 0.0
        if self.kind == "spine":
            tail = float(self.spine.nu_probs[self.spine.nu_values > self.r_n(n)].sum())
        if self.kind == "gaussian" or (self.kind == "spine" and self.spine.gaussian is not None):
            loc = 0.0 if self.kind == "gaussian" else self.spine.gaussian[0]
            mean, var = loc, self.sigma2
            abs3 = self.sigma**3 * 2 * math.sqrt(2 / math.pi) if abs(loc) < 1e-12 else math.nan
        else:
            values, probs, shift, scale = self.lattice_law(n)
            x = shift + scale * values
            mean = float(np.dot(probs, x))
            var = float(np.dot(probs, x**2)) - mean**2
            abs3 = float(np.dot(probs, np.abs(x) ** 3))
        witness = ArrayWitness(n=n, abs_moment_3=abs3, mean_ratio=abs(mean) * n / self.a_n(n),
                               variance_gap=abs(var - self.sigma2), offspring_tail=tail)
        witness.ok = witness.mean_ratio <= 0.1 and witness.variance_gap <= 0.05 * self.sigma2
        return witness


@dataclass
class ExperimentRow(JsonRecord):
    n: int = 0
    a_n: float = 0.0
    method: str = "dp"
    prob: float = 0.0
    scaled_log_prob: float = 0.0
    target_constant: float = 0.0
    gap: float = 0.0
    prob_endpoint: float = math.nan
    scaled_log_prob_endpoint: float = math.nan
    conditions_ok: bool = True


def default_endpoint_b(spec: CorridorSpec) -> float:
    return float(spec.g2[-1] - spec.g1[-1]) / 4


def _lattice_corridor(arr: ArraySpec, spec: CorridorSpec, n: int, endpoint_b: Optional[float]):
    values, probs, shift, scale = arr.lattice_law(n)
    a = arr.a_n(n)
    i = np.arange(1, n + 1)
    lo_x, hi_x = spec.lower(i / n) * a - shift * i, spec.upper(i / n) * a - shift * i
    lo_w, hi_w = (lo_x / scale, hi_x / scale) if scale > 0 else (hi_x / scale, lo_x / scale)
    lower = np.ceil(lo_w - ROUND_TOL).astype(np.int64)
    upper = np.floor(hi_w + ROUND_TOL).astype(np.int64)
    window = None
    if endpoint_b is not None:
        edge = ((spec.g2[-1] - endpoint_b) * a - shift * n) / scale
        window = (int(math.ceil(edge - ROUND_TOL)), int(upper[-1])) if scale > 0 else \
            (int(lower[-1]), int(math.floor(edge + ROUND_TOL)))
    return values, probs, lower, upper, window


def _mc_corridor(arr: ArraySpec, spec: CorridorSpec, n: int, endpoint_b: Optional[float],
                 replicates: int, seed: int) -> Tuple[float, float]:
    a = arr.a_n(n)
    i = np.arange(1, n + 1)
    lo, hi = spec.lower(i / n) * a, spec.upper(i / n) * a
    inside = inside_end = 0
    for start, stop in block_ranges(replicates, MC_BLOCK):
        rng = make_stream(seed, n, start)
        S = np.cumsum(arr.sample(n, (stop - start, n), rng), axis=1)
        ok = np.all((S >= lo) & (S <= hi), axis=1)
        inside += int(ok.sum())
        if endpoint_b is not None:
            inside_end += int(np.sum(ok & (S[:, -1] >= (spec.g2[-1] - endpoint_b) * a)))
    return inside / replicates, inside_end / replicates


def triangular_experiment(arr: ArraySpec, spec: CorridorSpec, n_list: Sequence[int],
                          endpoint_b: Optional[float] = None, mc_replicates: int = MC_MIN_REPLICATES,
                          seed: Optional[int] = None) -> List[ExperimentRow]:
    """
    One row per n. Lattice families are computed exactly by the corridor DP,
    others by Monte Carlo.
    """
    if list(n_list) != sorted(set(n_list)):
        raise ParameterError(f"n_list must be strictly increasing, got {list(n_list)}")
    if abs(spec.sigma**2 - arr.sigma2) > 1e-9 * max(1.0, arr.sigma2):
        logger.warning(f"corridor sigma^2 {spec.sigma**2} differs from the array's {arr.sigma2}; "
                       f"target uses the array's")
        spec = replace(spec, sigma=arr.sigma)
    if not arr.is_lattice:
        if seed is None:
            raise ParameterError("Monte Carlo array families need a seed")
        if mc_replicates < MC_MIN_REPLICATES:
            raise ParameterError(f"Monte Carlo needs >= {MC_MIN_REPLICATES} replicates, got {mc_replicates}")
    target = corridor_constant(spec)

    rows = []
    for n in n_list:
        witness = arr.witnesses(n)
        if not witness.ok:
            logger.warning(f"array conditions look violated at n={n}: {witness}")
        if arr.is_lattice:
            values, probs, lower, upper, window = _lattice_corridor(arr, spec, n, endpoint_b)
            prob = exact_corridor_walk(values, probs, lower, upper)
            prob_end = exact_corridor_walk(values, probs, lower, upper, window) if window else math.nan
            method = "dp"
        else:
            prob, prob_end = _mc_corridor(arr, spec, n, endpoint_b, mc_replicates, seed)
            prob_end = prob_end if endpoint_b is not None else math.nan
            method = "mc"
        a = arr.a_n(n)
        scale = a * a / n
        scaled = scale * math.log(prob) if prob > 0 else -math.inf
        row = ExperimentRow(n=n, a_n=a, method=method, prob=prob, scaled_log_prob=scaled,
                            target_constant=target, gap=abs(scaled - target), conditions_ok=witness.ok)
        if endpoint_b is not None:
            row.prob_endpoint = prob_end
            row.scaled_log_prob_endpoint = scale * math.log(prob_end) if prob_end > 0 else -math.inf
        rows.append(row)
        logger.debug(f"n={n}: prob={prob}, scaled={scaled}, target={target}")
    return rows


def gap_is_shrinking(rows: Sequence[ExperimentRow]) -> bool:
    gaps = [r.gap for r in rows]
    return all(later < earlier for earlier, later in zip(gaps, gaps[1:]))
