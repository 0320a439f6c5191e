# brw/transform.py
"""Boundary-case normalization V(x) = -t* U(x) + psi(t*) |x|."""
import logging
import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy.stats import norm

from brw.analysis import CriticalProfile
from brw.models import (OffspringLaw, as_product, intensity,
                        is_finite_support, joint_intensity, mean_children, validate)
from common.errors import IdentityCertificationError, ParameterError

logger = logging.getLogger(__name__)

IDENTITY_TOL = 1e-12


@dataclass(frozen=True)
class VLaw:
    base: OffspringLaw
    t_star: float
    psi_tstar: float
    mass_residual: float = 0.0  # E sum e^{-V} - 1
    mean_residual: float = 0.0  # E sum V e^{-V}
    delta1: float = 1.0
    delta2: float = 1.0
    moment_delta1: float = math.nan  # E sum e^{-(1 + delta1) V}
    moment_delta2: float = math.nan  # E sum e^{delta2 V}

    def v_of(self, u):
        """V-increment of a child displaced by u."""
        return -self.t_star * np.asarray(u, dtype=float) + self.psi_tstar

    @property
    def finite(self) -> bool:
        return is_finite_support(self.base)

    def v_intensity(self) -> Tuple[np.ndarray, np.ndarray]:
        """Intensity measure of the V-increments, values sorted ascending."""
        u, m = intensity(self.base)
        v = self.v_of(u)
        order = np.argsort(v)
        return v[order], m[order]

    def joint_v_intensity(self) -> List[Tuple[float, int, float]]:
        return [(float(self.v_of(u)), k, m) for u, k, m in joint_intensity(self.base)]

    def _gaussian_v(self) -> Tuple[float, float, float]:
        law = as_product(self.base)
        step = law.step
        return mean_children(law), self.psi_tstar - self.t_star * step.mean, self.t_star * step.stddev

    def exp_moment(self, lam: float) -> float:
        """E sum_{|x|=1} e^{lam V(x)}."""
        if not self.finite:
            mz, mv, sv = self._gaussian_v()
            return mz * math.exp(lam * mv + 0.5 * lam * lam * sv * sv)
        v, m = self.v_intensity()
        return float(np.dot(m, np.exp(lam * v)))

    def tilted_moment(self, k: int) -> float:
        """E sum_{|x|=1} V(x)^k e^{-V(x)}."""
        if not self.finite:
            # under the e^{-v} tilt a N(mv, sv^2) increment becomes N(mv - sv^2, sv^2)
            mz, mv, sv = self._gaussian_v()
            weight = mz * math.exp(-mv + 0.5 * sv * sv)
            return weight * float(norm.moment(k, loc=mv - sv * sv, scale=sv))
        v, m = self.v_intensity()
        return float(np.dot(m, v**k * np.exp(-v)))


def make_vlaw(law: OffspringLaw, profile: CriticalProfile) -> VLaw:
    """V-law of `law`, certified against E sum e^{-V} = 1 and E sum V e^{-V} = 0."""
    draft = VLaw(base=validate(law).law, t_star=profile.t_star, psi_tstar=profile.psi_tstar)
    mass_residual = draft.exp_moment(-1.0) - 1.0
    mean_residual = draft.tilted_moment(1)
    if abs(mass_residual) > IDENTITY_TOL or abs(mean_residual) > IDENTITY_TOL:
        raise IdentityCertificationError(
            f"boundary-case identities fail: E sum e^-V - 1 = {mass_residual!r}, "
            f"E sum V e^-V = {mean_residual!r}; profile does not belong to this law")
    vlaw = VLaw(base=draft.base, t_star=draft.t_star, psi_tstar=draft.psi_tstar,
                mass_residual=mass_residual, mean_residual=mean_residual,
                moment_delta1=draft.exp_moment(-2.0), moment_delta2=draft.exp_moment(1.0))
    logger.debug(f"V-law certified: residuals {mass_residual:.3e}, {mean_residual:.3e}")
    return vlaw


def barrier_map(eps_U: float, profile: CriticalProfile) -> float:
    """U-slope deficit eps_U to the V-barrier slope t* eps_U."""
    if eps_U < 0:
        raise ParameterError(f"eps_U must be >= 0, got {eps_U}")
    return profile.t_star * eps_U
