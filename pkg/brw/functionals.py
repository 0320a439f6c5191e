# brw/functionals.py
"""
Fixed library of bounded path functionals F(S_1..S_n, nu_0..nu_{n-1}).

Each functional is evaluated on a batch: S and nu are (m, n) arrays, one
path per row, and the result is an (m,) array.
"""
from dataclasses import dataclass, field
from typing import Any, Callable, Dict

import numpy as np

from common.errors import ParameterError


@dataclass(frozen=True)
class Functional:
    name: str
    params: Dict[str, float] = field(default_factory=dict)
    uses_offspring: bool = False
    _fn: Callable[..., np.ndarray] = field(default=None, repr=False, compare=False)

    def __call__(self, S: np.ndarray, nu: np.ndarray) -> np.ndarray:
        S = np.atleast_2d(np.asarray(S, dtype=float))
        nu = np.atleast_2d(np.asarray(nu))
        return self._fn(S, nu, **self.params)


def _one(S, nu):
    return np.ones(S.shape[0])


def _corridor(S, nu, slope=0.5, intercept=0.0):
    i = np.arange(1, S.shape[1] + 1)
    return np.all(S <= slope * i + intercept, axis=1).astype(float)


def _exp_linear(S, nu, theta=0.5, bound=1.0):
    return np.exp(theta * np.clip(S[:, -1] / S.shape[1], -bound, bound))


def _offspring_bound(S, nu, r=2):
    return np.all(nu <= r, axis=1).astype(float)


def _offspring_corridor(S, nu, slope=0.5, intercept=0.0, r=2):
    return _corridor(S, nu, slope, intercept) * _offspring_bound(S, nu, r)


_LIBRARY = {
    "one": (_one, {}, False),
    "corridor": (_corridor, {"slope": 0.5, "intercept": 0.0}, False),
    "exp_linear": (_exp_linear, {"theta": 0.5, "bound": 1.0}, False),
    "offspring_bound": (_offspring_bound, {"r": 2}, True),
    "offspring_corridor": (_offspring_corridor, {"slope": 0.5, "intercept": 0.0, "r": 2}, True),
}

FUNCTIONAL_IDS = tuple(_LIBRARY)


def get_functional(name: str, **params: Any) -> Functional:
    """Library functional `name` with defaults overridden by `params`."""
    if name not in _LIBRARY:
        raise ParameterError(f"unknown functional {name!r}; choose from {FUNCTIONAL_IDS}")
    fn, defaults, uses_offspring = _LIBRARY[name]
    unknown = set(params) - set(defaults)
    if unknown:
        raise ParameterError(f"functional {name!r} takes no parameters {sorted(unknown)}")
    return Functional(name=name, params={**defaults, **params}, uses_offspring=uses_offspring, _fn=fn)
