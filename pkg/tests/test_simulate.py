import math

import numpy as np
import pytest

from brw.analysis import CgfEvaluator, solve_tstar
from brw.models import BinaryBernoulli
from brw.oracle import exact_path_survival
from brw.simulate import (BarrierSpec, GwEmbedParams, SurvivalEstimate, block_size, choose_L,
                          embedded_extinction, escape_cap_sweep, estimate_M_kappa, estimate_rho,
                          monotonicity_violations, nonempty_frequency, run_killed_brw, simulate_G,
                          small_count_frequency)
from brw.streams import make_stream
from brw.transform import make_vlaw
from common.errors import ParameterError


def test_barrier_spec_conversion(profile03):
    assert BarrierSpec("U", 0.01).to_v(profile03) == BarrierSpec("V", 0.01 * profile03.t_star)
    with pytest.raises(ParameterError):
        BarrierSpec("W", 0.1)
    with pytest.raises(ParameterError):
        BarrierSpec("V", -0.1)


def test_run_killed_brw_single_replicate(vlaw03, seed):
    survived, trace = run_killed_brw(vlaw03, BarrierSpec("V", 0.2), 12, math.inf, make_stream(seed, 0))
    assert trace[0] == 1
    assert survived == (len(trace) == 13 and trace[-1] > 0)
    with pytest.raises(ParameterError):
        run_killed_brw(vlaw03, BarrierSpec("U", 0.2), 12, math.inf, make_stream(seed, 0))


def test_estimate_matches_oracle(vlaw03, lattice03, seed):
    est = estimate_rho(vlaw03, 0.1, 6, 20000, math.inf, seed)
    exact = exact_path_survival(lattice03, 6, v_slope=0.1)
    assert abs(est.p_hat - exact) <= 4 * est.stderr
    assert est.ci_low <= est.p_hat <= est.ci_high
    assert est.cap_hits == 0


def test_estimate_is_reproducible(vlaw03, seed):
    a = estimate_rho(vlaw03, 0.1, 8, 3000, seed=seed, key=(1, 2))
    b = estimate_rho(vlaw03, 0.1, 8, 3000, seed=seed, key=(1, 2))
    assert a == b
    assert a.to_json() == b.to_json()


def test_estimate_rho_preconditions(vlaw03):
    with pytest.raises(ParameterError):
        estimate_rho(vlaw03, 0.1, 6, 99)
    with pytest.raises(ParameterError):
        estimate_rho(vlaw03, -0.1, 6, 1000)
    with pytest.raises(ParameterError):
        estimate_rho(vlaw03, 0.1, 0, 1000)


def test_block_size_depends_on_parameters_only(vlaw03):
    assert block_size(vlaw03, 12, math.inf) == block_size(vlaw03, 12, math.inf)
    assert 1 <= block_size(vlaw03, 40, math.inf) <= block_size(vlaw03, 4, math.inf)


def test_escape_cap_counts_hits(vlaw03, seed):
    # a generous barrier lets populations explode
    capped, uncapped = escape_cap_sweep(vlaw03, 5.0, 12, 200, [50, math.inf], seed)
    assert capped.cap_hits > 0
    assert capped.p_hat == 1.0
    assert uncapped.cap_hits == 0


def test_monotonicity_violations_flagged():
    ok = [SurvivalEstimate(n=5, slope=0.1, p_hat=0.5, stderr=0.01),
          SurvivalEstimate(n=10, slope=0.1, p_hat=0.4, stderr=0.01)]
    assert monotonicity_violations(ok) == []
    bad = ok + [SurvivalEstimate(n=20, slope=0.1, p_hat=0.6, stderr=0.01)]
    assert len(monotonicity_violations(bad)) == 2


def test_M_kappa_binary(vlaw03, profile03, seed):
    M, kappa = estimate_M_kappa(vlaw03, 10, 500, seed)
    # the largest V-increment is psi(t*) ~ 2.338, attained by any child with U = 0
    assert M == pytest.approx(math.ceil(profile03.psi_tstar / 0.05) * 0.05)
    assert kappa == 1.0
    with pytest.raises(ParameterError):
        estimate_M_kappa(vlaw03, 9, 500, seed)


def test_choose_L():
    assert choose_L(12, 0.5, 0.5, 2.35) == 11
    assert choose_L(12, 0.5, 0.5, 0.0) == 1
    with pytest.raises(ParameterError):
        choose_L(12, 0.2, 0.5, 2.35)


def test_embed_params_checked():
    with pytest.raises(ParameterError):
        GwEmbedParams(n=12, eps=0.5, alpha=0.5, L=5, M=2.35)
    with pytest.raises(ParameterError):
        GwEmbedParams(n=12, eps=0.5, alpha=1.0, L=11, M=0.0)
    with pytest.raises(ParameterError):
        GwEmbedParams(n=12, eps=0.5, alpha=0.5, L=12, M=0.0)


def test_embedded_tree_exact_small_case(seed):
    # eps = 0, M = 0: the first L steps and the whole last generation must be U = 1
    # steps, so G is the set of children of all-ones level-L particles whose
    # children are both ones.
    p, n, L = 0.45, 4, 3
    law = BinaryBernoulli(p)
    vlaw = make_vlaw(law, solve_tstar(CgfEvaluator(law)))
    hist = simulate_G(vlaw, GwEmbedParams(n=n, eps=0.0, alpha=0.5, L=L, M=0.0), 20000, seed)

    def f(s):
        return (1 - p + p * s) ** 2

    good = p * p
    none = 1 - good
    for _ in range(L):
        none = f(none)
    freq, se = nonempty_frequency(hist)
    assert abs(freq - (1 - none)) <= 4 * se
    assert set(np.flatnonzero(hist)) <= set(range(0, 2**L * 2 + 1, 2))
    mean = float(np.dot(np.arange(hist.size), hist) / hist.sum())
    expected_mean = (2 * p) ** L * good * 2
    assert abs(mean - expected_mean) < 0.05


def test_histogram_summaries():
    hist = np.array([50, 30, 20])
    assert small_count_frequency(hist, 1) == pytest.approx(0.3)
    freq, se = nonempty_frequency(hist)
    assert freq == pytest.approx(0.5)
    assert se == pytest.approx(math.sqrt(0.25 / 100))
    # offspring pgf 0.5 + 0.3 s + 0.2 s^2 has fixed points 1 and 2.5, so q = 1
    assert embedded_extinction(hist) == 1.0
    # 0.2 + 0.3 s + 0.5 s^2: q = 0.4
    assert embedded_extinction(np.array([20, 30, 50])) == pytest.approx(0.4, abs=1e-9)


@pytest.mark.slow
def test_estimates_match_oracle_grid(vlaw03, lattice03, seed):
    for i, slope in enumerate((0.05, 0.1, 0.2)):
        for j, n in enumerate((6, 10, 12)):
            est = estimate_rho(vlaw03, slope, n, 100000, math.inf, seed, key=(i, j))
            exact = exact_path_survival(lattice03, n, v_slope=slope)
            assert abs(est.p_hat - exact) <= 3 * est.stderr, (slope, n, est.p_hat, exact)


@pytest.mark.slow
def test_embedded_tree_lower_bound(vlaw03, lattice03, seed):
    n, eps, alpha = 12, 0.5, 0.5
    M, _ = estimate_M_kappa(vlaw03, 10, 2000, seed, key=(0,))
    L = choose_L(n, eps, alpha, M)
    params = GwEmbedParams(n=n, eps=eps, alpha=alpha, L=L, M=M)
    assert (1 - alpha) * eps * L >= M * (n - L)
    hist = simulate_G(vlaw03, params, 10000, seed, key=(1,))
    freq, se = nonempty_frequency(hist)
    rho = exact_path_survival(lattice03, n, v_slope=alpha * eps)
    assert freq >= 0.5 * rho - 3 * se
