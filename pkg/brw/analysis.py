# brw/analysis.py
"""
Logarithmic generating function psi(t) = log E sum_{|x|=1} e^{t U(x)} of a
law, the critical point t* solving psi(t) = t psi'(t), and the constants
derived from it.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp, xlogy

from brw.models import (BinaryBernoulli, GaussianStep, OffspringLaw, ProductLaw,
                        as_product, intensity, mean_children, validate)
from common.data_models import JsonRecord
from common.errors import DomainTooNarrow, NoCriticalPoint, ParameterError

logger = logging.getLogger(__name__)

ROOT_TOL = 1e-12
BRACKET_START = 1e-6
BRACKET_MAX = 2.0**40
FD_STEP_GAMMA = 1e-6


@dataclass
class CgfEvaluator:
    """psi and its first two derivatives for one validated law."""
    law: OffspringLaw
    zeta: float = math.inf
    _values: np.ndarray = field(init=False, repr=False)
    _log_masses: np.ndarray = field(init=False, repr=False)
    _gaussian: Tuple[float, float, float] = field(init=False, repr=False, default=None)

    def __post_init__(self):
        self.law = validate(self.law).law
        law = as_product(self.law)
        if isinstance(law, ProductLaw) and isinstance(law.step, GaussianStep):
            self._gaussian = (math.log(mean_children(law)), law.step.mean, law.step.stddev)
            self._values = np.empty(0)
            self._log_masses = np.empty(0)
        else:
            values, masses = intensity(law)
            self._values = values
            self._log_masses = np.log(masses)

    def __call__(self, t: float) -> Tuple[float, float, float]:
        return psi_eval(self, t)

    @property
    def top_atom(self) -> Tuple[float, float]:
        """(s_U, E sum 1{U = s_U}); (inf, 0) for unbounded steps."""
        if self._gaussian is not None:
            return math.inf, 0.0
        return float(self._values[-1]), float(np.exp(self._log_masses[-1]))


def psi_eval(ev: CgfEvaluator, t: float) -> Tuple[float, float, float]:
    """(psi(t), psi'(t), psi''(t)) in closed form."""
    if not 0.0 < t < ev.zeta:
        raise ParameterError(f"psi is evaluated on (0, {ev.zeta}), got t={t}")
    if ev._gaussian is not None:
        log_m, mu, s = ev._gaussian
        return log_m + mu * t + 0.5 * s * s * t * t, mu + s * s * t, s * s

    log_w = ev._log_masses + t * ev._values
    psi = float(logsumexp(log_w))
    w = np.exp(log_w - psi)
    psi1 = float(np.dot(w, ev._values))
    psi2 = float(np.dot(w, (ev._values - psi1) ** 2))
    return psi, psi1, psi2


@dataclass
class CriticalProfile(JsonRecord):
    t_star: float = 0.0
    gamma: float = 0.0
    psi_tstar: float = 0.0
    psi2_tstar: float = 0.0
    sigma2: float = 0.0
    beta_V: float = 0.0
    beta_U: float = 0.0

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)


def percolation_mass(law: OffspringLaw) -> float:
    """
    Mean number of children at the top of the displacement support. The
    critical equation is solvable iff this is < 1; unbounded steps give 0.
    """
    return CgfEvaluator(law).top_atom[1]


def _h(ev: CgfEvaluator, t: float) -> float:
    psi, psi1, _ = psi_eval(ev, t)
    return t * psi1 - psi


def _root_tol(psi: float, t_psi1: float) -> float:
    # h is a difference of two terms of this size; rounding scales with them
    return ROOT_TOL * max(1.0, abs(psi), abs(t_psi1))


def solve_tstar(ev: CgfEvaluator) -> CriticalProfile:
    """
    Root of h(t) = t psi'(t) - psi(t). h increases from -log E[Z] at 0+ and,
    for bounded steps, tends to -log(top-atom mass); the root exists iff that
    limit is positive.
    """
    top, top_mass = ev.top_atom
    if top_mass >= 1.0:
        raise NoCriticalPoint(
            f"E sum 1{{U = {top}}} = {top_mass} >= 1: children at the top of the support "
            f"percolate and psi(t) = t psi'(t) has no solution", top_mass=top_mass)

    lo, hi = 0.0, BRACKET_START
    ceiling = min(ev.zeta - 1e-9, BRACKET_MAX)
    while _h(ev, hi) < 0.0:
        lo, hi = hi, 2.0 * hi
        if hi >= ceiling:
            hi = ceiling
            if _h(ev, hi) < 0.0:
                raise DomainTooNarrow(f"h(t) < 0 up to t={hi}; critical point beyond reach")
            break
    lo = max(lo, BRACKET_START / 2)
    logger.debug(f"t* bracketed in [{lo}, {hi}]")

    t = brentq(lambda s: _h(ev, s), lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    for _ in range(3):  # Newton polish, h'(t) = t psi''(t)
        psi, psi1, psi2 = psi_eval(ev, t)
        residual = t * psi1 - psi
        if abs(residual) < _root_tol(psi, t * psi1) / 100:
            break
        t -= residual / (t * psi2)

    psi, psi1, psi2 = psi_eval(ev, t)
    residual = t * psi1 - psi
    tol = _root_tol(psi, t * psi1)
    if abs(residual) >= tol:
        raise DomainTooNarrow(f"root residual {residual} at t={t} above {tol}")
    beta_U = math.pi * math.sqrt(t * psi2) / math.sqrt(2.0)
    profile = CriticalProfile(t_star=t, gamma=psi / t, psi_tstar=psi, psi2_tstar=psi2,
                              sigma2=t * t * psi2, beta_U=beta_U, beta_V=beta_U * math.sqrt(t))
    logger.debug(f"critical profile: {profile}")
    return profile


# --- binary Bernoulli walk ---

def p0_value() -> float:
    """Root of 16 p (1 - p) = 1 in (0, 1/2)."""
    return (2.0 - math.sqrt(3.0)) / 4.0


def _check_bs_parameter(p: float) -> None:
    if not 0.0 < p < 0.5:
        raise ParameterError(f"binary Bernoulli parameter must lie in (0, 1/2), got {p}")


def gamma_bs_solve(p: float) -> float:
    """Speed of the binary Bernoulli walk: the root in (p, 1) of the entropy equation."""
    _check_bs_parameter(p)

    def rate(g: float) -> float:
        return xlogy(g, g / p) + xlogy(1.0 - g, (1.0 - g) / (1.0 - p)) - math.log(2.0)

    return brentq(rate, p, 1.0, xtol=1e-15, rtol=4 * np.finfo(float).eps)


def beta_bs(p: float) -> float:
    _check_bs_parameter(p)
    return solve_tstar(CgfEvaluator(BinaryBernoulli(p))).beta_U


@dataclass
class BetaIdentityReport(JsonRecord):
    p0: float = 0.0
    t_star: float = 0.0
    beta_direct: float = 0.0  # (pi / sqrt 2) sqrt(t* psi''(t*))
    beta_from_derivative: float = 0.0  # (pi / 4) sqrt(gamma' / (1 - 2 p0)) log(1 / (4 p0))
    gamma_prime_fd: float = 0.0
    gamma_prime_closed: float = 0.0  # 8 (1 - 2 p0) / t*
    relative_gap: float = 0.0


def beta_bs_identity(p0: float = None) -> BetaIdentityReport:
    """Both expressions of beta_bs at p0, with gamma' from central differences."""
    p0 = p0_value() if p0 is None else p0
    _check_bs_parameter(p0)
    profile = solve_tstar(CgfEvaluator(BinaryBernoulli(p0)))
    h = FD_STEP_GAMMA
    gamma_prime = (gamma_bs_solve(p0 + h) - gamma_bs_solve(p0 - h)) / (2 * h)
    from_derivative = (math.pi / 4) * math.sqrt(gamma_prime / (1 - 2 * p0)) * math.log(1 / (4 * p0))
    return BetaIdentityReport(
        p0=p0, t_star=profile.t_star, beta_direct=profile.beta_U,
        beta_from_derivative=from_derivative, gamma_prime_fd=gamma_prime,
        gamma_prime_closed=8 * (1 - 2 * p0) / profile.t_star,
        relative_gap=abs(from_derivative - profile.beta_U) / profile.beta_U)


def aldous_rate(p0: float) -> float:
    """pi log(1/(4 p0)) / (4 sqrt(1 - 2 p0)), defined at the root of 16 p (1 - p) = 1."""
    if abs(16 * p0 * (1 - p0) - 1) > 1e-9:
        raise ParameterError(f"16 p0 (1 - p0) must equal 1, got {16 * p0 * (1 - p0)}")
    return math.pi * math.log(1 / (4 * p0)) / (4 * math.sqrt(1 - 2 * p0))
