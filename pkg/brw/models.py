# brw/models.py
"""
Offspring laws of the branching random walk and exact sampling from them.

A law describes one reproduction event: how many children a particle has
and where they land relative to the parent (the U-increments). Three
families are supported:

- BinaryBernoulli: two children, i.i.d. Bernoulli(p) displacements.
- ProductLaw: child count Z from a finite pmf, displacements i.i.d. from a
  StepLaw, independent of Z.
- ExplicitFinite: a finite list of complete outcomes drawn atomically.
"""
import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Tuple, Union

import numpy as np

from common.errors import LawValidationError, ParameterError

logger = logging.getLogger(__name__)

PROB_SUM_TOL = 1e-12


@dataclass(frozen=True)
class DiscreteStep:
    atoms: Tuple[Tuple[float, float], ...]  # (value, prob)


@dataclass(frozen=True)
class GaussianStep:
    mean: float
    stddev: float


StepLaw = Union[DiscreteStep, GaussianStep]


@dataclass(frozen=True)
class BinaryBernoulli:
    p: float


@dataclass(frozen=True)
class ProductLaw:
    offspring_pmf: Tuple[Tuple[int, float], ...]  # (child count, prob)
    step: StepLaw


@dataclass(frozen=True)
class ExplicitFinite:
    outcomes: Tuple[Tuple[Tuple[float, ...], float], ...]  # (displacements, prob)


OffspringLaw = Union[BinaryBernoulli, ProductLaw, ExplicitFinite]


@dataclass(frozen=True)
class Realization:
    displacements: Tuple[float, ...]


@dataclass(frozen=True)
class ValidationReport:
    law: OffspringLaw  # renormalized copy, use this one downstream
    mean_children: float
    delta: float
    moment_z_1_plus_delta: float  # E[Z^(1+delta)]
    delta_plus: float
    delta_minus: float
    exp_moment_plus: float  # E sum e^{delta_plus U}
    exp_moment_minus: float  # E sum e^{-delta_minus U}


@dataclass(frozen=True)
class ChildBatch:
    """Children of a batch of parents, flattened in parent order."""
    parent: np.ndarray  # index into the parent batch
    displacement: np.ndarray  # U-increment of each child
    siblings: np.ndarray  # number of children of the child's parent


# --- construction helpers ---

def as_product(law: OffspringLaw) -> Union[ProductLaw, ExplicitFinite]:
    """BinaryBernoulli is the product law with Z = 2 and Bernoulli(p) steps."""
    if isinstance(law, BinaryBernoulli):
        return ProductLaw(offspring_pmf=((2, 1.0),),
                          step=DiscreteStep(atoms=((0.0, 1.0 - law.p), (1.0, law.p))))
    return law


def law_from_dict(spec: Dict[str, Any]) -> OffspringLaw:
    """Build a law from its JSON config object."""
    kind = spec.get("type")
    try:
        if kind == "binary_bernoulli":
            return BinaryBernoulli(p=float(spec["p"]))
        if kind == "product":
            return ProductLaw(
                offspring_pmf=tuple((int(k), float(q)) for k, q in spec["offspring_pmf"]),
                step=_step_from_dict(spec["step"]))
        if kind == "explicit":
            return ExplicitFinite(outcomes=tuple(
                (tuple(float(d) for d in o["displacements"]), float(o["prob"]))
                for o in spec["outcomes"]))
    except (KeyError, TypeError, ValueError) as e:
        raise ParameterError(f"malformed law spec {spec!r}: {e}") from e
    raise ParameterError(f"unknown law type {kind!r}")


def _step_from_dict(spec: Dict[str, Any]) -> StepLaw:
    if spec.get("type") == "discrete":
        return DiscreteStep(atoms=tuple((float(v), float(q)) for v, q in spec["atoms"]))
    if spec.get("type") == "gaussian":
        return GaussianStep(mean=float(spec["mean"]), stddev=float(spec["stddev"]))
    raise ParameterError(f"unknown step type {spec.get('type')!r}")


def law_to_dict(law: OffspringLaw) -> Dict[str, Any]:
    if isinstance(law, BinaryBernoulli):
        return {"type": "binary_bernoulli", "p": law.p}
    if isinstance(law, ProductLaw):
        if isinstance(law.step, GaussianStep):
            step = {"type": "gaussian", "mean": law.step.mean, "stddev": law.step.stddev}
        else:
            step = {"type": "discrete", "atoms": [list(a) for a in law.step.atoms]}
        return {"type": "product", "offspring_pmf": [list(a) for a in law.offspring_pmf], "step": step}
    return {"type": "explicit",
            "outcomes": [{"displacements": list(d), "prob": q} for d, q in law.outcomes]}


# --- derived quantities ---

def offspring_distribution(law: OffspringLaw) -> Tuple[np.ndarray, np.ndarray]:
    """(child counts, probabilities) of Z = number of children."""
    law = as_product(law)
    if isinstance(law, ProductLaw):
        ks = np.array([k for k, _ in law.offspring_pmf], dtype=np.int64)
        qs = np.array([q for _, q in law.offspring_pmf], dtype=float)
    else:
        ks = np.array([len(d) for d, _ in law.outcomes], dtype=np.int64)
        qs = np.array([q for _, q in law.outcomes], dtype=float)
    uniq = np.unique(ks)
    return uniq, np.array([qs[ks == k].sum() for k in uniq])


def mean_children(law: OffspringLaw) -> float:
    ks, qs = offspring_distribution(law)
    return float(np.dot(ks, qs))


def is_finite_support(law: OffspringLaw) -> bool:
    law = as_product(law)
    return not (isinstance(law, ProductLaw) and isinstance(law.step, GaussianStep))


def intensity(law: OffspringLaw) -> Tuple[np.ndarray, np.ndarray]:
    """
    Intensity measure mu(d) = E sum_{|x|=1} 1{U(x) = d} of a finite law, as
    (sorted distinct values, masses).
    """
    joint = joint_intensity(law)
    values = np.array(sorted({d for d, _, _ in joint}), dtype=float)
    masses = np.zeros(values.size)
    for d, _, m in joint:
        masses[np.searchsorted(values, d)] += m
    return values, masses


def joint_intensity(law: OffspringLaw) -> List[Tuple[float, int, float]]:
    """
    mu(d, k) = E sum_{|x|=1} 1{U(x) = d, Z_1 = k}: child displacement jointly
    with the size of its sibling group. Zero-mass entries are dropped.
    """
    law = as_product(law)
    if isinstance(law, ProductLaw):
        if isinstance(law.step, GaussianStep):
            raise ParameterError("intensity atoms need a finite-support law")
        table: Dict[Tuple[float, int], float] = {}
        for k, qk in law.offspring_pmf:
            for d, pd in law.step.atoms:
                if k > 0 and qk > 0 and pd > 0:
                    table[(d, k)] = table.get((d, k), 0.0) + qk * k * pd
    else:
        table = {}
        for disp, q in law.outcomes:
            for d in disp:
                if q > 0:
                    table[(d, len(disp))] = table.get((d, len(disp)), 0.0) + q
    return [(d, k, m) for (d, k), m in sorted(table.items())]


def gw_extinction_probability(law: OffspringLaw) -> float:
    return pgf_fixed_point(*offspring_distribution(law))


def pgf_fixed_point(ks: np.ndarray, qs: np.ndarray, tol: float = 1e-15, max_iter: int = 1_000_000) -> float:
    """Smallest fixed point in [0, 1] of s -> sum_k qs[k] s^ks[k], by monotone iteration from 0."""
    ks = np.asarray(ks, dtype=float)
    qs = np.asarray(qs, dtype=float)
    if float(np.dot(ks, qs)) <= 1.0:
        return 1.0
    s = 0.0
    for _ in range(max_iter):
        s_next = float(np.dot(qs, np.power(s, ks)))
        if abs(s_next - s) < tol:
            return s_next
        s = s_next
    logger.warning("extinction fixed-point iteration did not converge; returning last iterate")
    return s


# --- validation ---

def _normalized(pairs, what: str):
    probs = [q for _, q in pairs]
    if any(q < 0 or not math.isfinite(q) for q in probs):
        raise LawValidationError("probability-sum", f"{what} has a negative or non-finite probability")
    total = sum(probs)
    if abs(total - 1.0) > PROB_SUM_TOL:
        raise LawValidationError("probability-sum", f"{what} probabilities sum to {total!r}, not 1")
    return tuple((v, q / total) for v, q in pairs)


def validate(law: OffspringLaw) -> ValidationReport:
    """
    Check the model assumptions on a law and return the renormalized law
    with the exact moments that witness them.
    """
    if isinstance(law, BinaryBernoulli):
        if not 0.0 < law.p < 1.0:
            raise LawValidationError("non-degenerate", f"Bernoulli parameter must lie in (0, 1), got {law.p}")
        checked: OffspringLaw = law
    elif isinstance(law, ProductLaw):
        if any(k < 0 for k, _ in law.offspring_pmf):
            raise LawValidationError("probability-sum", "child counts must be >= 0")
        pmf = _normalized(law.offspring_pmf, "offspring pmf")
        step = law.step
        if isinstance(step, DiscreteStep):
            step = DiscreteStep(atoms=_normalized(step.atoms, "step law"))
            if len({v for v, q in step.atoms if q > 0}) < 2:
                raise LawValidationError("non-degenerate", "step law needs at least two distinct atoms")
        elif not (step.stddev > 0 and math.isfinite(step.mean)):
            raise LawValidationError("non-degenerate", f"Gaussian stddev must be > 0, got {step.stddev}")
        checked = ProductLaw(offspring_pmf=pmf, step=step)
    elif isinstance(law, ExplicitFinite):
        outcomes = _normalized(law.outcomes, "outcome list")
        if len({d for disp, q in outcomes if q > 0 for d in disp}) < 2:
            raise LawValidationError("non-degenerate", "all displacements are equal; psi is affine")
        checked = ExplicitFinite(outcomes=outcomes)
    else:
        raise ParameterError(f"not an offspring law: {law!r}")

    m = mean_children(checked)
    if m <= 1.0:
        raise LawValidationError("supercritical", f"E[Z] = {m!r} <= 1")

    delta = 1.0
    ks, qs = offspring_distribution(checked)
    moment = float(np.dot(qs, np.power(ks.astype(float), 1.0 + delta)))
    plus, minus = _exp_moment(checked, 1.0), _exp_moment(checked, -1.0)
    if not (math.isfinite(plus) and math.isfinite(minus)):
        raise LawValidationError("exponential-moments", "E sum e^{+-U} is infinite")
    logger.debug(f"validated {type(law).__name__}: E[Z]={m}, E sum e^U={plus}, E sum e^-U={minus}")
    return ValidationReport(law=checked, mean_children=m, delta=delta, moment_z_1_plus_delta=moment,
                            delta_plus=1.0, delta_minus=1.0, exp_moment_plus=plus, exp_moment_minus=minus)


def _exp_moment(law: OffspringLaw, lam: float) -> float:
    """E sum_{|x|=1} e^{lam U(x)} in closed form."""
    law = as_product(law)
    if isinstance(law, ProductLaw) and isinstance(law.step, GaussianStep):
        s = law.step
        return mean_children(law) * math.exp(lam * s.mean + 0.5 * lam**2 * s.stddev**2)
    values, masses = intensity(law)
    return float(np.dot(masses, np.exp(lam * values)))


# --- sampling ---

def sample_step(step: StepLaw, size: int, rng: np.random.Generator) -> np.ndarray:
    if isinstance(step, GaussianStep):
        return rng.normal(step.mean, step.stddev, size)
    values = np.array([v for v, _ in step.atoms], dtype=float)
    probs = np.array([q for _, q in step.atoms], dtype=float)
    return values[rng.choice(values.size, size=size, p=probs)]


def sample_offspring(law: OffspringLaw, rng: np.random.Generator) -> Realization:
    """One reproduction event of a validated law."""
    batch = sample_children(law, 1, rng)
    return Realization(displacements=tuple(float(d) for d in batch.displacement))


def sample_children(law: OffspringLaw, parents: int, rng: np.random.Generator) -> ChildBatch:
    """Independent reproduction events for `parents` particles at once."""
    law = as_product(law)
    if isinstance(law, ProductLaw):
        ks = np.array([k for k, _ in law.offspring_pmf], dtype=np.int64)
        qs = np.array([q for _, q in law.offspring_pmf], dtype=float)
        counts = ks[rng.choice(ks.size, size=parents, p=qs)] if ks.size > 1 else np.full(parents, ks[0])
        parent = np.repeat(np.arange(parents), counts)
        displacement = sample_step(law.step, int(parent.size), rng)
        return ChildBatch(parent=parent, displacement=displacement, siblings=counts[parent])

    flat, starts, lens, probs = _explicit_tables(law)
    chosen = rng.choice(probs.size, size=parents, p=probs)
    counts = lens[chosen]
    parent = np.repeat(np.arange(parents), counts)
    first = np.repeat(np.cumsum(counts) - counts, counts)
    within = np.arange(parent.size) - first
    displacement = flat[starts[chosen][parent] + within]
    return ChildBatch(parent=parent, displacement=displacement, siblings=counts[parent])


def _explicit_tables(law: ExplicitFinite):
    lens = np.array([len(d) for d, _ in law.outcomes], dtype=np.int64)
    starts = np.cumsum(lens) - lens
    flat = np.array([d for disp, _ in law.outcomes for d in disp], dtype=float)
    probs = np.array([q for _, q in law.outcomes], dtype=float)
    return flat, starts, lens, probs
