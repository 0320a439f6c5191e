# brw/simulate.py
"""
Monte Carlo engine for the killed branching random walk.

Particles are held generation by generation as flat arrays of V-positions
with the index of the replicate they belong to, so a whole block of
independent replicates advances with one vectorized reproduction step.
Blocks have a size fixed by the parameters alone and draw from the stream
(seed, *key, block start), which makes every estimate independent of the
thread that runs it.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from brw.analysis import CriticalProfile
from brw.models import mean_children, pgf_fixed_point, sample_children
from brw.stats import binomial_stderr, wilson_interval
from brw.streams import block_ranges, make_stream
from brw.transform import VLaw, barrier_map
from common.data_models import JsonRecord
from common.errors import IdentityCertificationError, ParameterError

logger = logging.getLogger(__name__)

KILL_TOL = 1e-9  # V <= b j + KILL_TOL counts as below the line
PARTICLE_BUDGET = 2**22
MAX_BLOCK = 1024
DEFAULT_ESCAPE_CAP = 10_000
M_GRID_STEP = 0.05
M_CEILING = 50.0


@dataclass(frozen=True)
class BarrierSpec:
    """
    Linear killing line. "U": kill when U(x_j) < (gamma - slope) j.
    "V": kill when V(x_j) > slope j.
    """
    coordinate: str = "V"
    slope: float = 0.0

    def __post_init__(self):
        if self.coordinate not in ("U", "V"):
            raise ParameterError(f"barrier coordinate must be 'U' or 'V', got {self.coordinate!r}")
        if not self.slope >= 0:
            raise ParameterError(f"barrier slope must be >= 0, got {self.slope}")

    def to_v(self, profile: CriticalProfile) -> "BarrierSpec":
        if self.coordinate == "V":
            return self
        return BarrierSpec("V", barrier_map(self.slope, profile))


@dataclass
class SurvivalEstimate(JsonRecord):
    n: int = 0
    slope: float = 0.0
    replicates: int = 0
    survivors: int = 0
    p_hat: float = 0.0
    stderr: float = 0.0
    ci_low: float = 0.0
    ci_high: float = 1.0
    cap_hits: int = 0


def _advance(vlaw: VLaw, V: np.ndarray, rep: np.ndarray, rng: np.random.Generator):
    batch = sample_children(vlaw.base, V.size, rng)
    return V[batch.parent] + vlaw.v_of(batch.displacement), rep[batch.parent]


def _simulate_block(vlaw: VLaw, slope: float, n: int, escape_cap: float, count: int,
                    rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray, List[int]]:
    """(survived, escaped, total population per generation) for `count` replicates."""
    V = np.zeros(count)
    rep = np.arange(count)
    escaped = np.zeros(count, dtype=bool)
    trace = [count]
    for gen in range(1, n + 1):
        if V.size == 0:
            break
        V, rep = _advance(vlaw, V, rep, rng)
        if math.isfinite(slope):
            keep = V <= slope * gen + KILL_TOL
            V, rep = V[keep], rep[keep]
        trace.append(int(V.size))
        if math.isfinite(escape_cap) and V.size >= escape_cap:
            hit = np.bincount(rep, minlength=count) >= escape_cap
            if hit.any():
                escaped |= hit
                keep = ~hit[rep]
                V, rep = V[keep], rep[keep]
    survived = escaped | (np.bincount(rep, minlength=count) > 0)
    return survived, escaped, trace


def run_killed_brw(vlaw: VLaw, barrier: BarrierSpec, n: int, escape_cap: float,
                   rng: np.random.Generator) -> Tuple[bool, List[int]]:
    """One replicate to depth n; the trace stops early on extinction or escape."""
    if barrier.coordinate != "V":
        raise ParameterError("run_killed_brw needs a V-barrier; convert with BarrierSpec.to_v")
    if escape_cap < 1:
        raise ParameterError(f"escape_cap must be >= 1, got {escape_cap}")
    survived, escaped, trace = _simulate_block(vlaw, barrier.slope, n, escape_cap, 1, rng)
    if escaped[0]:
        logger.debug(f"replicate escaped at population {trace[-1]} (cap {escape_cap})")
    return bool(survived[0]), trace


def block_size(vlaw: VLaw, n: int, escape_cap: float) -> int:
    """Replicates per vectorized block; depends on the parameters only."""
    growth = math.exp(min(n * math.log(mean_children(vlaw.base)), math.log(PARTICLE_BUDGET)))
    growth = min(growth, escape_cap)
    return int(min(MAX_BLOCK, max(1, PARTICLE_BUDGET // max(1, int(growth)))))


def estimate_rho(vlaw: VLaw, slope: float, n: int, replicates: int,
                 escape_cap: float = DEFAULT_ESCAPE_CAP, seed: int = 0,
                 key: Sequence[int] = ()) -> SurvivalEstimate:
    """Monte Carlo estimate of P{exists |x| = n: V(x_i) <= slope i for all i <= n}."""
    if replicates < 100:
        raise ParameterError(f"replicates must be >= 100, got {replicates}")
    if n < 1 or slope < 0 or escape_cap < 1:
        raise ParameterError(f"need n >= 1, slope >= 0, escape_cap >= 1; got {n}, {slope}, {escape_cap}")
    survivors = cap_hits = 0
    size = block_size(vlaw, n, escape_cap)
    for start, stop in block_ranges(replicates, size):
        rng = make_stream(seed, *key, start)
        survived, escaped, _ = _simulate_block(vlaw, slope, n, escape_cap, stop - start, rng)
        survivors += int(survived.sum())
        cap_hits += int(escaped.sum())
    if cap_hits:
        logger.warning(f"{cap_hits}/{replicates} replicates hit the escape cap {escape_cap} "
                       f"(slope={slope}, n={n}); estimate is biased upward")
    low, high = wilson_interval(survivors, replicates)
    return SurvivalEstimate(n=n, slope=slope, replicates=replicates, survivors=survivors,
                            p_hat=survivors / replicates, stderr=binomial_stderr(survivors, replicates),
                            ci_low=low, ci_high=high, cap_hits=cap_hits)


def monotonicity_violations(estimates: Sequence[SurvivalEstimate], k: float = 3.0) -> List[str]:
    """
    Pairs where p_hat increases with n (same slope) or decreases with slope
    (same n) by more than k combined standard errors. Reported, not enforced.
    """
    found = []
    for a in estimates:
        for b in estimates:
            gap = k * math.hypot(a.stderr, b.stderr)
            if a.slope == b.slope and a.n < b.n and b.p_hat - a.p_hat > gap:
                found.append(f"p_hat rises with n at slope {a.slope}: n={a.n} {a.p_hat} -> n={b.n} {b.p_hat}")
            if a.n == b.n and a.slope < b.slope and a.p_hat - b.p_hat > gap:
                found.append(f"p_hat falls with slope at n={a.n}: {a.slope} {a.p_hat} -> {b.slope} {b.p_hat}")
    for msg in found:
        logger.warning(msg)
    return found


def escape_cap_sweep(vlaw: VLaw, slope: float, n: int, replicates: int, caps: Sequence[float],
                     seed: int, key: Sequence[int] = ()) -> List[SurvivalEstimate]:
    """Same estimate under several escape caps, on common streams."""
    return [estimate_rho(vlaw, slope, n, replicates, cap, seed, key) for cap in caps]


# --- (M, kappa) and the embedded Galton-Watson tree ---

def _running_max_block(vlaw: VLaw, j_max: int, count: int, rng: np.random.Generator):
    """Per replicate: max_{|x| <= j} V(x) and Z_j > 0, for j = 1..j_max."""
    V = np.zeros(count)
    rep = np.arange(count)
    running = np.zeros(count)  # root sits at V = 0
    maxes = np.empty((count, j_max))
    alive = np.zeros((count, j_max), dtype=bool)
    for j in range(j_max):
        if V.size:
            V, rep = _advance(vlaw, V, rep, rng)
            gen_max = np.full(count, -np.inf)
            np.maximum.at(gen_max, rep, V)
            running = np.maximum(running, gen_max)
        maxes[:, j] = running
        alive[:, j] = np.bincount(rep, minlength=count) > 0
    return maxes, alive


def estimate_M_kappa(vlaw: VLaw, j_max: int, replicates: int, seed: int,
                     key: Sequence[int] = ()) -> Tuple[float, float]:
    """
    Smallest M on a 0.05 grid with P{max_{|x|<=j} V(x) <= M j} - 3 stderr >= 1/2
    for 1 <= j <= j_max, and kappa = min_j P{Z_j > 0, max_{|x|<=j} V <= M j}.
    """
    if j_max < 10:
        raise ParameterError(f"j_max must be >= 10, got {j_max}")
    size = block_size(vlaw, j_max, math.inf)
    maxes, alive = [], []
    for start, stop in block_ranges(replicates, size):
        m, a = _running_max_block(vlaw, j_max, stop - start, make_stream(seed, *key, start))
        maxes.append(m)
        alive.append(a)
    maxes, alive = np.vstack(maxes), np.vstack(alive)
    js = np.arange(1, j_max + 1)

    for step in range(1, int(round(M_CEILING / M_GRID_STEP)) + 1):
        M = step * M_GRID_STEP
        below = maxes <= M * js + KILL_TOL
        p = below.mean(axis=0)
        se = np.sqrt(p * (1 - p) / replicates)
        if np.all(p - 3 * se >= 0.5):
            kappa = float((below & alive).mean(axis=0).min())
            logger.debug(f"M={M}, kappa_hat={kappa}")
            return M, kappa
    raise IdentityCertificationError(f"no M <= {M_CEILING} keeps max V under M j; V-law looks mis-certified")


@dataclass(frozen=True)
class GwEmbedParams:
    n: int
    eps: float
    alpha: float
    L: int
    M: float

    def __post_init__(self):
        if not (0 < self.alpha < 1 and self.eps >= 0 and self.M >= 0):
            raise ParameterError(f"need 0 < alpha < 1, eps >= 0, M >= 0: {self}")
        if not self.n > self.L >= 1:
            raise ParameterError(f"need n > L >= 1, got n={self.n}, L={self.L}")
        if (1 - self.alpha) * self.eps * self.L < self.M * (self.n - self.L) - 1e-12:
            raise ParameterError(f"(1 - alpha) eps L >= M (n - L) fails for {self}")


def choose_L(n: int, eps: float, alpha: float, M: float) -> int:
    """Smallest L with (1 - alpha) eps L >= M (n - L)."""
    if M == 0:
        return 1
    L = max(1, math.ceil(M * n / ((1 - alpha) * eps + M) - 1e-12))
    if L >= n:
        raise ParameterError(f"no L < n={n} satisfies the embedding inequality (eps={eps}, M={M})")
    return L


def _g_counts_block(vlaw: VLaw, params: GwEmbedParams, count: int, rng: np.random.Generator) -> np.ndarray:
    V = np.zeros(count)
    rep = np.arange(count)
    for i in range(1, params.L + 1):
        if V.size == 0:
            return np.zeros(count, dtype=np.int64)
        V, rep = _advance(vlaw, V, rep, rng)
        keep = V <= params.alpha * params.eps * i + KILL_TOL
        V, rep = V[keep], rep[keep]

    # every level-L survivor roots a subtree that must stay within the threshold
    roots = rep
    threshold = (1 - params.alpha) * params.eps * params.L + KILL_TOL
    good = np.ones(roots.size, dtype=bool)
    W = np.zeros(roots.size)  # V(z) - V(x_L)
    owner = np.arange(roots.size)
    for _ in range(params.n - params.L):
        if W.size == 0:
            break
        W, owner = _advance(vlaw, W, owner, rng)
        bad = W > threshold
        good[owner[bad]] = False
        keep = good[owner]
        W, owner = W[keep], owner[keep]
    per_root = np.bincount(owner, minlength=roots.size)
    return np.bincount(roots, weights=per_root * good, minlength=count).astype(np.int64)


def simulate_G(vlaw: VLaw, params: GwEmbedParams, replicates: int, seed: int,
               key: Sequence[int] = ()) -> np.ndarray:
    """hist[k] = number of replicates with #G = k."""
    growth = math.exp(min((params.n - params.L) * math.log(mean_children(vlaw.base)), 30.0))
    size = int(min(MAX_BLOCK, max(1, PARTICLE_BUDGET // max(1, int(growth)))))
    counts = [_g_counts_block(vlaw, params, stop - start, make_stream(seed, *key, start))
              for start, stop in block_ranges(replicates, size)]
    return np.bincount(np.concatenate(counts))


def embedded_extinction(hist: np.ndarray) -> float:
    """Extinction probability of the embedded tree with offspring law hist / hist.sum()."""
    hist = np.asarray(hist, dtype=float)
    return pgf_fixed_point(np.arange(hist.size), hist / hist.sum())


def small_count_frequency(hist: np.ndarray, ell: int) -> float:
    """Empirical P{1 <= #G <= ell}."""
    hist = np.asarray(hist, dtype=float)
    return float(hist[1:ell + 1].sum() / hist.sum())


def nonempty_frequency(hist: np.ndarray) -> Tuple[float, float]:
    """Empirical P{#G > 0} and its standard error."""
    total = int(np.sum(hist))
    hits = total - int(hist[0])
    return hits / total, binomial_stderr(hits, total)
