# brw/spine.py
"""
Size-biased spine walk (S_i, nu_{i-1}) and Monte Carlo checks of the
many-to-one identities

    E sum_{|x|=n} e^{-V(x)} F(V(x_1..x_n), nu(x_0..x_{n-1})) = E F(S, nu)

where the i.i.d. pairs (S_i - S_{i-1}, nu_{i-1}) have law
P{dv, k} = e^{-v} mu(dv, k), mu the joint intensity of (V-increment,
number of siblings).
"""
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from brw.functionals import Functional, get_functional
from brw.models import ExplicitFinite, as_product, mean_children, offspring_distribution, sample_children
from brw.stats import intervals_overlap, mean_stderr
from brw.streams import block_ranges, make_stream
from brw.transform import VLaw
from common.data_models import JsonRecord
from common.errors import ParameterError

logger = logging.getLogger(__name__)

MAX_TREE_GROWTH = 4096 * (1 + 1e-9)  # E[Z]^n allowed for direct tree simulation
TREE_PARTICLE_BUDGET = 2**20
SPINE_BLOCK = 2**16
EXACT_MAX_N = 6
EXACT_MAX_SEQUENCES = 2_000_000
DELTA3 = 0.5


@dataclass(frozen=True)
class SpineLaw:
    vlaw: VLaw
    mean: float  # E[S_1]
    variance: float  # Var(S_1)
    # finite laws: joint atoms of (S_1, nu_0)
    joint_v: Optional[np.ndarray] = field(default=None, repr=False)
    joint_k: Optional[np.ndarray] = field(default=None, repr=False)
    joint_p: Optional[np.ndarray] = field(default=None, repr=False)
    # Gaussian product laws: S_1 ~ N(loc, scale^2) independent of nu_0
    gaussian: Optional[Tuple[float, float]] = None
    nu_values: Optional[np.ndarray] = field(default=None, repr=False)
    nu_probs: Optional[np.ndarray] = field(default=None, repr=False)
    # explicit laws: outcome-level tilting tables
    outcome_probs: Optional[np.ndarray] = field(default=None, repr=False)
    child_v: Optional[np.ndarray] = field(default=None, repr=False)
    child_keys: Optional[np.ndarray] = field(default=None, repr=False)
    outcome_sizes: Optional[np.ndarray] = field(default=None, repr=False)
    # E e^{uS_1} at u = -delta3, +delta3
    delta3: float = DELTA3
    moment_minus_delta3: float = math.nan
    moment_plus_delta3: float = math.nan

    def step_distribution(self) -> Tuple[np.ndarray, np.ndarray]:
        """Marginal atoms of S_1 (finite laws)."""
        if self.joint_v is None:
            raise ParameterError("Gaussian spine steps have no atoms")
        values = np.unique(self.joint_v)
        return values, np.array([self.joint_p[self.joint_v == v].sum() for v in values])


def make_spine(vlaw: VLaw, delta3: float = DELTA3) -> SpineLaw:
    """Tilted step law of the spine; product laws give size-biased nu independent of S_1."""
    if not 0 < delta3 < 1:
        raise ParameterError(f"delta3 must lie in (0, 1), got {delta3}")
    m1 = vlaw.tilted_moment(1)
    variance = vlaw.tilted_moment(2) - m1 * m1
    # E e^{uS_1} = E sum e^{(u - 1) V}
    witness = dict(delta3=delta3, moment_minus_delta3=vlaw.exp_moment(-1.0 - delta3),
                   moment_plus_delta3=vlaw.exp_moment(delta3 - 1.0))
    if not all(math.isfinite(witness[k]) for k in ("moment_minus_delta3", "moment_plus_delta3")):
        logger.warning(f"spine step has no finite exponential moment at +-{delta3}: {witness}")
    if not vlaw.finite:
        law = as_product(vlaw.base)
        ks, qs = offspring_distribution(law)
        mz = mean_children(law)
        sv = vlaw.t_star * law.step.stddev
        loc = vlaw.psi_tstar - vlaw.t_star * law.step.mean - sv * sv
        return SpineLaw(vlaw=vlaw, mean=m1, variance=variance, gaussian=(loc, sv),
                        nu_values=ks, nu_probs=ks * qs / mz, **witness)

    joint = vlaw.joint_v_intensity()
    joint_v = np.array([v for v, _, _ in joint])
    joint_k = np.array([k for _, k, _ in joint], dtype=np.int64)
    joint_p = np.array([m for _, _, m in joint]) * np.exp(-joint_v)
    joint_p /= joint_p.sum()
    nu_values = np.unique(joint_k)
    nu_probs = np.array([joint_p[joint_k == k].sum() for k in nu_values])
    spine = dict(vlaw=vlaw, mean=m1, variance=variance, joint_v=joint_v, joint_k=joint_k,
                 joint_p=joint_p, nu_values=nu_values, nu_probs=nu_probs, **witness)

    law = vlaw.base
    if isinstance(law, ExplicitFinite):
        child_v, owner, within = [], [], []
        weights = np.zeros(len(law.outcomes))
        for o, (disp, q) in enumerate(law.outcomes):
            if not disp or q == 0:
                continue
            tilt = np.exp(-vlaw.v_of(disp))
            weights[o] = q * tilt.sum()
            cum = np.cumsum(tilt) / tilt.sum()
            cum[-1] = 1.0
            child_v.extend(vlaw.v_of(disp))
            owner.extend([o] * len(disp))
            within.extend(cum)
        spine.update(outcome_probs=weights / weights.sum(), child_v=np.array(child_v),
                     child_keys=np.array(owner) + np.array(within),
                     outcome_sizes=np.array([len(d) for d, _ in law.outcomes], dtype=np.int64))
    return SpineLaw(**spine)


def sample_spine_paths(sp: SpineLaw, n: int, count: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """(S, nu), each (count, n): partial sums S_1..S_n and nu_0..nu_{n-1}."""
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    shape = (count, n)
    if sp.gaussian is not None:
        increments = rng.normal(sp.gaussian[0], sp.gaussian[1], shape)
        nu = sp.nu_values[rng.choice(sp.nu_values.size, size=shape, p=sp.nu_probs)]
    elif sp.outcome_probs is not None:
        outcome = rng.choice(sp.outcome_probs.size, size=shape, p=sp.outcome_probs)
        child = np.searchsorted(sp.child_keys, outcome + rng.random(shape), side="right")
        increments = sp.child_v[child]
        nu = sp.outcome_sizes[outcome]
    else:
        idx = rng.choice(sp.joint_p.size, size=shape, p=sp.joint_p)
        increments, nu = sp.joint_v[idx], sp.joint_k[idx]
    return np.cumsum(increments, axis=1), nu


def sample_spine_path(sp: SpineLaw, n: int, rng: np.random.Generator) -> List[Tuple[float, int]]:
    S, nu = sample_spine_paths(sp, n, 1, rng)
    return [(float(s), int(k)) for s, k in zip(S[0], nu[0])]


def exact_many_to_one(vlaw: VLaw, n: int, functional: Functional) -> float:
    """
    E sum_{|x|=n} e^{-V(x)} F exactly, summing over every sequence of joint
    intensity atoms (finite laws only).
    """
    if not vlaw.finite:
        raise ParameterError("exact enumeration needs a finite-support law")
    joint = vlaw.joint_v_intensity()
    if len(joint) ** n > EXACT_MAX_SEQUENCES:
        raise ParameterError(f"{len(joint)}^{n} atom sequences is too many to enumerate")
    v = np.array([a[0] for a in joint])
    k = np.array([a[1] for a in joint])
    m = np.array([a[2] for a in joint])
    idx = np.array(list(itertools.product(range(len(joint)), repeat=n)), dtype=np.int64)
    S = np.cumsum(v[idx], axis=1)
    weight = np.prod(m[idx], axis=1) * np.exp(-S[:, -1])
    return float(np.dot(weight, functional(S, k[idx])))


@dataclass
class CheckReport(JsonRecord):
    functional: str = ""
    n: int = 0
    replicates: int = 0
    lhs_mean: float = 0.0  # direct tree simulation
    lhs_stderr: float = 0.0
    rhs_mean: float = 0.0  # spine sampling
    rhs_stderr: float = 0.0
    agree: bool = False
    vacuous: bool = False
    exact: float = math.nan
    exact_in_lhs: Optional[bool] = None
    exact_in_rhs: Optional[bool] = None


def _tree_block(vlaw: VLaw, n: int, functional: Functional, count: int, rng: np.random.Generator) -> np.ndarray:
    """Per replicate: sum over generation n of e^{-V(x)} F(path of x)."""
    rep = np.arange(count)
    S = np.zeros((count, 0))
    nu = np.zeros((count, 0), dtype=np.int64)
    for _ in range(n):
        batch = sample_children(vlaw.base, rep.size, rng)
        last = S[batch.parent, -1] if S.shape[1] else np.zeros(batch.parent.size)
        S = np.column_stack([S[batch.parent], last + vlaw.v_of(batch.displacement)])
        nu = np.column_stack([nu[batch.parent], batch.siblings])
        rep = rep[batch.parent]
    if rep.size == 0:
        return np.zeros(count)
    contrib = np.exp(-S[:, -1]) * functional(S, nu)
    return np.bincount(rep, weights=contrib, minlength=count)


def _within(value: float, mean: float, stderr: float, k: float = 3.0) -> bool:
    return abs(value - mean) <= k * stderr + 1e-9


def many_to_one_check(law, vlaw: VLaw, sp: SpineLaw, n: int, functional_id: str, replicates: int,
                      seed: int, key: Sequence[int] = (), **params) -> CheckReport:
    """Direct-tree and spine Monte Carlo estimates of the two sides, compared at 3 stderr."""
    functional = get_functional(functional_id, **params)
    growth = mean_children(law) ** n
    if n < 1 or growth > MAX_TREE_GROWTH:
        raise ParameterError(f"E[Z]^n = {growth} is too large for direct tree simulation (n={n})")

    tree_block = max(1, min(replicates, int(TREE_PARTICLE_BUDGET // growth)))
    lhs = np.concatenate([_tree_block(vlaw, n, functional, stop - start, make_stream(seed, *key, 0, start))
                          for start, stop in block_ranges(replicates, tree_block)])
    rhs = []
    for start, stop in block_ranges(replicates, SPINE_BLOCK):
        S, nu = sample_spine_paths(sp, n, stop - start, make_stream(seed, *key, 1, start))
        rhs.append(functional(S, nu))
    rhs = np.concatenate(rhs)

    lhs_mean, lhs_se = mean_stderr(lhs)
    rhs_mean, rhs_se = mean_stderr(rhs)
    report = CheckReport(functional=functional_id, n=n, replicates=replicates,
                         lhs_mean=lhs_mean, lhs_stderr=lhs_se, rhs_mean=rhs_mean, rhs_stderr=rhs_se,
                         vacuous=(lhs_se == 0.0 and rhs_se == 0.0),
                         agree=intervals_overlap(lhs_mean, lhs_se, rhs_mean, rhs_se))
    if report.vacuous:
        logger.warning(f"functional {functional_id!r} has zero variance on both sides; check is vacuous")
    if vlaw.finite and n <= EXACT_MAX_N and len(vlaw.joint_v_intensity()) ** n <= EXACT_MAX_SEQUENCES:
        report.exact = exact_many_to_one(vlaw, n, functional)
        report.exact_in_lhs = _within(report.exact, lhs_mean, lhs_se)
        report.exact_in_rhs = _within(report.exact, rhs_mean, rhs_se)
    logger.info(f"many-to-one {functional_id} n={n}: lhs {lhs_mean:.6g}±{lhs_se:.2g}, "
                f"rhs {rhs_mean:.6g}±{rhs_se:.2g}, agree={report.agree}")
    return report
