# orchestrator/command_handlers.py
"""
Per-command planning and row handlers.

A planner turns the run context into RowTasks (one per CSV row or row
group); a row handler computes one task and returns its rows as dicts keyed
by the command's columns. Planners run on the main thread and prepare every
shared object (profile, V-law, lattice law) before workers start.
"""
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from brw import analysis, oracle, simulate, spine
from brw.functionals import FUNCTIONAL_IDS
from brw.mogulskii import (ArraySpec, CorridorSpec, ExperimentRow, default_endpoint_b, gap_is_shrinking,
                           triangular_experiment)
from brw.models import BinaryBernoulli, law_from_dict, law_to_dict, mean_children, validate
from brw.stats import binomial_stderr
from brw.transform import barrier_map, make_vlaw
from common.data_models import RowTask
from common.errors import ConfigError, LawValidationError, ParameterError

logger = logging.getLogger(__name__)

Row = Dict[str, Any]


@dataclass
class RunContext:
    config: Dict[str, Any]
    command: str
    seed: Optional[int] = None
    escape_cap: float = simulate.DEFAULT_ESCAPE_CAP
    footer: Dict[str, Any] = field(default_factory=dict)

    @property
    def params(self) -> Dict[str, Any]:
        return self.config["commands"][self.command]

    @cached_property
    def law(self):
        if "law" not in self.config:
            raise ConfigError(f"command '{self.command}' needs a 'law' section")
        return validate(law_from_dict(self.config["law"])).law

    @cached_property
    def profile(self) -> analysis.CriticalProfile:
        return analysis.solve_tstar(analysis.CgfEvaluator(self.law))

    @cached_property
    def vlaw(self):
        return make_vlaw(self.law, self.profile)

    @cached_property
    def spine_law(self) -> spine.SpineLaw:
        return spine.make_spine(self.vlaw)

    @cached_property
    def lattice(self) -> Optional[oracle.LatticeLaw]:
        """Lattice view of the law, or None when the law is not lattice-valued."""
        try:
            return oracle.lattice_from_vlaw(self.vlaw)
        except LawValidationError as e:
            logger.warning(f"exact oracle unavailable: {e}")
            return None


def _cap(value) -> float:
    return math.inf if value is None else float(value)


# --- analyze ---

def plan_analyze(ctx: RunContext) -> List[RowTask]:
    # V 変換の検証はメインスレッドで済ませておく
    ctx.vlaw
    return [RowTask(command="analyze", key=(0,))]


def handle_analyze(task: RowTask, ctx: RunContext) -> List[Row]:
    p, v, law = ctx.profile, ctx.vlaw, ctx.law
    report = {
        "law_type": law_to_dict(law)["type"],
        "mean_children": mean_children(law),
        "percolation_mass": analysis.percolation_mass(law),
        "t_star": p.t_star, "gamma": p.gamma, "psi_tstar": p.psi_tstar, "psi2_tstar": p.psi2_tstar,
        "sigma2": p.sigma2, "beta_U": p.beta_U, "beta_V": p.beta_V,
        "identity_mass_residual": v.mass_residual, "identity_mean_residual": v.mean_residual,
        "delta1": v.delta1, "moment_delta1": v.moment_delta1,
        "delta2": v.delta2, "moment_delta2": v.moment_delta2,
    }
    # 二項ベルヌーイの場合は閉形式との照合も出力
    if isinstance(law, BinaryBernoulli):
        gamma_bs = analysis.gamma_bs_solve(law.p)
        report.update(gamma_bs=gamma_bs, gamma_bs_gap=abs(gamma_bs - p.gamma), beta_bs=analysis.beta_bs(law.p))
        # p0 のときだけ beta の恒等式と Aldous の定数を追加
        if abs(16 * law.p * (1 - law.p) - 1) < 1e-9:
            identity = analysis.beta_bs_identity(law.p)
            report.update(beta_bs_from_derivative=identity.beta_from_derivative,
                          beta_identity_relative_gap=identity.relative_gap,
                          gamma_prime_fd=identity.gamma_prime_fd,
                          gamma_prime_closed=identity.gamma_prime_closed,
                          aldous_rate=analysis.aldous_rate(law.p))
    return [{"quantity": k, "value": val} for k, val in report.items()]


# --- survival ---

def _v_slope(ctx: RunContext, slope: float) -> float:
    # U 座標で与えられた傾きは V 座標に変換
    return barrier_map(slope, ctx.profile) if ctx.params.get("coordinate", "V") == "U" else slope


def plan_survival(ctx: RunContext) -> List[RowTask]:
    params = ctx.params
    with_oracle = params.get("oracle", True)
    # 格子でない法則にはオラクル行を作らない
    if with_oracle and ctx.lattice is None:
        logger.warning("oracle rows omitted: law is not lattice-valued")
        with_oracle = False
    tasks = []
    for si, slope in enumerate(params["slopes"]):
        for ni, n in enumerate(params["n_grid"]):
            # キー先頭 0 = MC 行, 1 = オラクル行
            tasks.append(RowTask("survival_mc", (0, si, ni), {"slope": slope, "n": n}))
            if with_oracle:
                tasks.append(RowTask("survival_oracle", (1, si, ni), {"slope": slope, "n": n}))
    return tasks


def _survival_row(ctx: RunContext, method: str, slope: float, n: int, **values) -> Row:
    return {"method": method, "coordinate": ctx.params.get("coordinate", "V"), "slope": slope, "n": n,
            "estimate": None, "ci_low": None, "ci_high": None, "replicates": None, "seed": None,
            "cap_hits": None, **values}


def handle_survival_mc(task: RowTask, ctx: RunContext) -> List[Row]:
    slope, n = task.params["slope"], task.params["n"]
    est = simulate.estimate_rho(ctx.vlaw, _v_slope(ctx, slope), n, ctx.params["replicates"],
                                ctx.escape_cap, ctx.seed, key=task.key[1:])
    return [_survival_row(ctx, "mc", slope, n, estimate=est.p_hat, ci_low=est.ci_low, ci_high=est.ci_high,
                          replicates=est.replicates, seed=ctx.seed, cap_hits=est.cap_hits)]


def handle_survival_oracle(task: RowTask, ctx: RunContext) -> List[Row]:
    slope, n = task.params["slope"], task.params["n"]
    value = oracle.exact_path_survival(ctx.lattice, n, v_slope=_v_slope(ctx, slope))
    return [_survival_row(ctx, "oracle", slope, n, estimate=value, ci_low=value, ci_high=value)]


# --- pemantle ---

def plan_pemantle(ctx: RunContext) -> List[RowTask]:
    law = ctx.law
    # p < 1/2 でないと臨界点が存在しない
    if not isinstance(law, BinaryBernoulli) or not law.p < 0.5:
        raise ParameterError("pemantle needs a binary_bernoulli law with p < 1/2")
    ctx.lattice
    if abs(16 * law.p * (1 - law.p) - 1) < 1e-9:
        ctx.footer["aldous_rate"] = analysis.aldous_rate(law.p)
    return [RowTask("pemantle", (i,), {"eps_U": eps}) for i, eps in enumerate(ctx.params["eps_U"])]


def handle_pemantle(task: RowTask, ctx: RunContext) -> List[Row]:
    eps_U = task.params["eps_U"]
    eps_V = barrier_map(eps_U, ctx.profile)
    params = ctx.params
    # n を倍々にして収束するまで厳密 DP
    result = oracle.converged_rho(ctx.lattice, eps_V, n_start=params.get("n_start", 64),
                                  n_max=params.get("n_max", oracle.MAX_DEPTH), rtol=params.get("rtol", 0.01))
    scaled = math.sqrt(eps_U) * math.log(result.rho) if result.rho > 0 else -math.inf
    return [{"eps_U": eps_U, "eps_V": eps_V, "n_used": result.n, "converged": result.converged,
             "rho_oracle": result.rho, "sqrt_eps_times_log_rho": scaled, "beta_target": -ctx.profile.beta_U}]


# --- mogulskii ---

def _array_spec(ctx: RunContext) -> ArraySpec:
    cfg = ctx.params.get("array", {"kind": "lazy"})
    exponent = cfg.get("exponent", 1.0 / 3.0)
    kind = cfg.get("kind", "lazy")
    if kind == "lazy":
        return ArraySpec.lazy(exponent)
    if kind == "lattice":
        return ArraySpec.lattice(cfg["values"], cfg["probs"], exponent)
    if kind == "spine":
        return ArraySpec.from_spine(ctx.spine_law, exponent)
    if kind == "gaussian":
        return ArraySpec.gaussian(cfg.get("sigma", 1.0), exponent)
    raise ConfigError(f"unknown array kind {kind!r}")


def _corridor_spec(cfg: Dict[str, Any], sigma: float) -> CorridorSpec:
    if cfg.get("type", "constant") == "constant":
        return CorridorSpec.constant(cfg.get("lower", -1.0), cfg.get("upper", 1.0), sigma)
    g1, g2 = cfg["g1"], cfg["g2"]
    return CorridorSpec.linear(g1[0], g1[1], g2[0], g2[1], sigma)


def plan_mogulskii(ctx: RunContext) -> List[RowTask]:
    arr = _array_spec(ctx)
    corridor = _corridor_spec(ctx.params.get("corridor", {}), arr.sigma)
    # MC になる族は seed 必須
    if not arr.is_lattice and ctx.seed is None:
        raise ConfigError("Monte Carlo array families need a seed")
    endpoint_b = ctx.params.get("endpoint_b")
    if ctx.params.get("endpoint", False) and endpoint_b is None:
        endpoint_b = default_endpoint_b(corridor)
    shared = {"array": arr, "corridor": corridor, "endpoint_b": endpoint_b}
    return [RowTask("mogulskii", (i,), {"n": n, **shared}) for i, n in enumerate(ctx.params["n_list"])]


def handle_mogulskii(task: RowTask, ctx: RunContext) -> List[Row]:
    p = task.params
    row = triangular_experiment(p["array"], p["corridor"], [p["n"]], endpoint_b=p["endpoint_b"],
                                mc_replicates=ctx.params.get("mc_replicates", 10**6), seed=ctx.seed)[0]
    values = {"n": row.n, "a_n": row.a_n, "method": row.method, "prob": row.prob,
              "scaled_log_prob": row.scaled_log_prob, "target_constant": row.target_constant,
              "gap": row.gap, "conditions_ok": row.conditions_ok}
    if p["endpoint_b"] is not None:
        values.update(prob_endpoint=row.prob_endpoint, scaled_log_prob_endpoint=row.scaled_log_prob_endpoint)
    return [values]


# --- many-to-one ---

def plan_many_to_one(ctx: RunContext) -> List[RowTask]:
    sp = ctx.spine_law
    # スパインの指数モーメント (u = ±delta3) をフッターに記録
    ctx.footer.update(spine_delta3=sp.delta3, spine_moment_minus_delta3=sp.moment_minus_delta3,
                      spine_moment_plus_delta3=sp.moment_plus_delta3)
    names = ctx.params.get("functionals", list(FUNCTIONAL_IDS))
    return [RowTask("many-to-one", (i,), {"functional": name}) for i, name in enumerate(names)]


def handle_many_to_one(task: RowTask, ctx: RunContext) -> List[Row]:
    name = task.params["functional"]
    fparams = ctx.params.get("params", {}).get(name, {})
    report = spine.many_to_one_check(ctx.law, ctx.vlaw, ctx.spine_law, ctx.params["n"], name,
                                     ctx.params["replicates"], ctx.seed, key=task.key, **fparams)
    return [{"functional": name, "n": report.n, "replicates": report.replicates,
             "lhs_mean": report.lhs_mean, "lhs_stderr": report.lhs_stderr,
             "rhs_mean": report.rhs_mean, "rhs_stderr": report.rhs_stderr,
             "exact": None if math.isnan(report.exact) else report.exact,
             "exact_in_lhs": report.exact_in_lhs, "exact_in_rhs": report.exact_in_rhs,
             "agree": report.agree, "vacuous": report.vacuous}]


# --- embed ---

def plan_embed(ctx: RunContext) -> List[RowTask]:
    ctx.lattice
    return [RowTask("embed", (0,))]


def handle_embed(task: RowTask, ctx: RunContext) -> List[Row]:
    p = ctx.params
    n, eps, alpha = p["n"], p["eps"], p.get("alpha", 0.5)
    M, kappa = p.get("M"), None
    # M が未指定なら推定 (kappa も同時に)
    if M is None:
        M, kappa = simulate.estimate_M_kappa(ctx.vlaw, p.get("j_max", 10), p.get("mk_replicates", 2000),
                                             ctx.seed, key=(0,))
    L = p.get("L") or simulate.choose_L(n, eps, alpha, M)
    params = simulate.GwEmbedParams(n=n, eps=eps, alpha=alpha, L=L, M=M)
    hist = simulate.simulate_G(ctx.vlaw, params, p["replicates"], ctx.seed, key=(1,))
    freq, se = simulate.nonempty_frequency(hist)
    q = simulate.embedded_extinction(hist)
    report = {"n": n, "eps": eps, "alpha": alpha, "L": L, "M": M, "kappa_hat": kappa,
              "replicates": p["replicates"], "nonempty_freq": freq, "nonempty_stderr": se,
              "mean_G": float(np.dot(np.arange(hist.size), hist) / hist.sum()),
              "small_count_freq": simulate.small_count_frequency(hist, p.get("ell", 1)),
              "embedded_extinction": q, "rho_lower_bound": 1 - q}
    if ctx.lattice is not None:
        rho = oracle.exact_path_survival(ctx.lattice, n, v_slope=alpha * eps)
        report.update(rho_oracle_alpha_eps=rho, half_rho_minus_3se=0.5 * rho - 3 * se,
                      lower_bound_holds=freq >= 0.5 * rho - 3 * se)
    rows = [{"quantity": k, "value": v} for k, v in report.items()]
    # G のサイズのヒストグラム
    rows += [{"quantity": f"hist_{k}", "value": int(c)} for k, c in enumerate(hist)]
    return rows


# --- cap-sweep ---

def plan_cap_sweep(ctx: RunContext) -> List[RowTask]:
    ctx.vlaw
    return [RowTask("cap-sweep", (i,), {"cap": cap}) for i, cap in enumerate(ctx.params["caps"])]


def handle_cap_sweep(task: RowTask, ctx: RunContext) -> List[Row]:
    cap = _cap(task.params["cap"])
    # どの上限でも同じストリーム (key=(0,)) を使い、上限の影響だけを比べる
    p = ctx.params
    est = simulate.estimate_rho(ctx.vlaw, p["slope"], p["n"], p["replicates"], cap, ctx.seed, key=(0,))
    return [{"escape_cap": cap, "slope": est.slope, "n": est.n, "estimate": est.p_hat,
             "ci_low": est.ci_low, "ci_high": est.ci_high, "replicates": est.replicates,
             "cap_hits": est.cap_hits}]


PLANNERS: Dict[str, Callable[[RunContext], List[RowTask]]] = {
    "analyze": plan_analyze,
    "survival": plan_survival,
    "pemantle": plan_pemantle,
    "mogulskii": plan_mogulskii,
    "many-to-one": plan_many_to_one,
    "embed": plan_embed,
    "cap-sweep": plan_cap_sweep,
}

ROW_HANDLERS: Dict[str, Callable[[RowTask, RunContext], List[Row]]] = {
    "analyze": handle_analyze,
    "survival_mc": handle_survival_mc,
    "survival_oracle": handle_survival_oracle,
    "pemantle": handle_pemantle,
    "mogulskii": handle_mogulskii,
    "many-to-one": handle_many_to_one,
    "embed": handle_embed,
    "cap-sweep": handle_cap_sweep,
}

_QUANTITY = ["quantity", "value"]
_TIMING = ["runtime_ms"]

COLUMNS: Dict[str, List[str]] = {
    "analyze": _QUANTITY,
    "survival": ["method", "coordinate", "slope", "n", "estimate", "ci_low", "ci_high", "replicates",
                 "seed", "cap_hits"] + _TIMING,
    "pemantle": ["eps_U", "eps_V", "n_used", "converged", "rho_oracle", "sqrt_eps_times_log_rho",
                 "beta_target"] + _TIMING,
    "mogulskii": ["n", "a_n", "method", "prob", "scaled_log_prob", "target_constant", "gap",
                  "conditions_ok"] + _TIMING,
    "many-to-one": ["functional", "n", "replicates", "lhs_mean", "lhs_stderr", "rhs_mean", "rhs_stderr",
                    "exact", "exact_in_lhs", "exact_in_rhs", "agree", "vacuous"] + _TIMING,
    "embed": _QUANTITY,
    "cap-sweep": ["escape_cap", "slope", "n", "estimate", "ci_low", "ci_high", "replicates",
                  "cap_hits"] + _TIMING,
}

ENDPOINT_COLUMNS = ["prob_endpoint", "scaled_log_prob_endpoint"]


def columns_for(ctx: RunContext) -> List[str]:
    cols = list(COLUMNS[ctx.command])
    # 端点条件付きの列は指定時のみ
    if ctx.command == "mogulskii" and (ctx.params.get("endpoint") or ctx.params.get("endpoint_b") is not None):
        cols[-1:-1] = ENDPOINT_COLUMNS
    return cols


# --- whole-run checks, run on the sorted rows ---

def finalize_survival(ctx: RunContext, rows: List[Row]) -> None:
    estimates = [simulate.SurvivalEstimate(
        n=row["n"], slope=row["slope"], replicates=row["replicates"], p_hat=row["estimate"],
        stderr=binomial_stderr(round(row["estimate"] * row["replicates"]), row["replicates"]))
        for row in rows if row["method"] == "mc"]
    # n と傾きに対する単調性の違反数 (3 stderr 超え) をフッターへ
    violations = simulate.monotonicity_violations(estimates)
    ctx.footer["monotonicity_violations"] = len(violations)


def finalize_mogulskii(ctx: RunContext, rows: List[Row]) -> None:
    shrinking = gap_is_shrinking([ExperimentRow(n=row["n"], gap=row["gap"]) for row in rows])
    if not shrinking:
        logger.warning(f"|scaled log prob - target| does not shrink along n: {[row['gap'] for row in rows]}")
    ctx.footer["gap_shrinking"] = shrinking


FINALIZERS: Dict[str, Callable[[RunContext, List[Row]], None]] = {
    "survival": finalize_survival,
    "mogulskii": finalize_mogulskii,
}
