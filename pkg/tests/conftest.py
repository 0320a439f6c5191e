import pytest

from brw.analysis import CgfEvaluator, p0_value, solve_tstar
from brw.models import BinaryBernoulli, DiscreteStep, ExplicitFinite, GaussianStep, ProductLaw
from brw.oracle import lattice_from_vlaw
from brw.transform import make_vlaw

SEED = 20240607


@pytest.fixture
def seed():
    return SEED


@pytest.fixture
def bs03():
    return BinaryBernoulli(0.3)


@pytest.fixture
def bs_p0():
    return BinaryBernoulli(p0_value())


@pytest.fixture
def product_law():
    # Z in {1, 3}, steps in {-1, 0, 1}; top-atom mass 0.5
    return ProductLaw(offspring_pmf=((1, 0.5), (3, 0.5)),
                      step=DiscreteStep(atoms=((-1.0, 0.5), (0.0, 0.25), (1.0, 0.25))))


@pytest.fixture
def gaussian_law():
    return ProductLaw(offspring_pmf=((2, 1.0),), step=GaussianStep(mean=0.0, stddev=1.0))


@pytest.fixture
def explicit_law():
    return ExplicitFinite(outcomes=(((0.0, 1.0), 0.5), ((0.0,), 0.2), ((0.0, 0.0, 1.0), 0.3)))


@pytest.fixture
def library_laws(bs03, bs_p0, product_law, gaussian_law, explicit_law):
    return [bs03, bs_p0, product_law, gaussian_law, explicit_law]


def profile_of(law):
    return solve_tstar(CgfEvaluator(law))


@pytest.fixture
def profile03(bs03):
    return profile_of(bs03)


@pytest.fixture
def vlaw03(bs03, profile03):
    return make_vlaw(bs03, profile03)


@pytest.fixture
def lattice03(vlaw03):
    return lattice_from_vlaw(vlaw03)
