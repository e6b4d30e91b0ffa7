"""Fast built-in checks: closed form vs Monte Carlo, estimator identities, bisection.

``self_test`` is what ``cffd self-test`` runs. The ``mutation`` argument
injects a known defect so the checks can be shown to catch it.
"""

from __future__ import annotations

import contextlib
import time
from dataclasses import dataclass, field

import numpy as np

from . import link
from .estimation import estimation_stats, large_scale_gammas
from .link import PowerAllocation, closed_form_terms, monte_carlo_sinr
from .power_control import MaxMinProblem, feasibility_check, solve_p1_maxmin
from .scenario import ScenarioConfig, build_scenario

MUTATIONS = ("si_sign_flip",)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class SelfTestReport:
    checks: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def lines(self):
        out = [f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.detail}" for c in self.checks]
        out.append(f"{'PASS' if self.passed else 'FAIL'}  overall ({self.seconds:.1f} s)")
        return out


def tiny_oracle_case(index: int, seed_base: int = 1000):
    """Random small scenario and a random allocation inside the power budgets."""
    rng = np.random.default_rng(seed_base + index)
    M = int(rng.integers(2, 5))
    N = int(rng.integers(1, 3))
    K = int(rng.integers(1, 3))
    L = int(rng.integers(1, 3))
    theta = 10.0 ** rng.uniform(-4, -1)
    cfg = ScenarioConfig(M=M, Nt=N, Nr=N, K=K, L=L, tau_p=K + L, area_side=100.0,
                         p_t=0.01, theta_si=theta, rng_seed=seed_base + index)
    sc = build_scenario(cfg)
    gm = large_scale_gammas(sc)
    share = rng.dirichlet(np.ones(K), size=M) * rng.uniform(0.2, 1.0, size=(M, 1))
    eta = share / (N * gm.gamma_dl)
    alloc = PowerAllocation(eta=eta, varsigma=rng.uniform(0.1, 1.0, size=L))
    return sc, gm, alloc


def compare_terms(closed, mc, k_se=3.0, abs_floor=1e-12):
    """Per-term z-scores of closed-form ``(dl, ul)`` terms against a Monte Carlo result.

    Returns ``(n_compared, max_z, failures)``; a term with zero standard
    error must agree to ``abs_floor`` relative to its scale.
    """
    failures = []
    n = 0
    max_z = 0.0
    for direction, terms in zip(("dl", "ul"), closed):
        cf = terms.as_dict()
        est = getattr(mc, direction).as_dict()
        err = getattr(mc, direction + "_se").as_dict()
        for term in cf:
            a, b, s = (np.atleast_1d(np.asarray(x, dtype=float)) for x in
                       (cf[term], est[term], err[term]))
            scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-300)
            for idx in np.ndindex(a.shape):
                n += 1
                diff = abs(a[idx] - b[idx])
                if s[idx] > 0:
                    z = diff / s[idx]
                    max_z = max(max_z, z)
                    if z > k_se:
                        failures.append((direction, term, idx, a[idx], b[idx], z))
                elif diff > abs_floor * scale:
                    failures.append((direction, term, idx, a[idx], b[idx], np.inf))
    return n, max_z, failures


def oracle_check(n_cases=6, n_blocks=20000, k_se=3.0, seed=7):
    total, worst, bad = 0, 0.0, []
    for i in range(n_cases):
        sc, gm, alloc = tiny_oracle_case(i)
        closed = closed_form_terms(sc, gm, alloc)
        mc = monte_carlo_sinr(sc, alloc, n_blocks, seed=seed + i)
        n, z, fails = compare_terms(closed, mc, k_se)
        total += n
        worst = max(worst, z)
        bad.extend((i,) + f for f in fails)
    return total, worst, bad


@contextlib.contextmanager
def _mutated(mutation):
    if mutation is None:
        yield
        return
    if mutation != "si_sign_flip":
        raise ValueError(f"unknown mutation {mutation!r}; choose from {MUTATIONS}")
    original = link._ul_si_term

    def flipped(*args, **kwargs):
        return -original(*args, **kwargs)

    link._ul_si_term = flipped
    try:
        yield
    finally:
        link._ul_si_term = original


def _estimator_check():
    sc = build_scenario(ScenarioConfig(M=4, Nt=2, Nr=2, K=2, L=2, rng_seed=3))
    n = 40000
    st = estimation_stats(sc, n, seed=11)
    gm = large_scale_gammas(sc)
    worst_var, worst_corr = 0.0, 0.0
    for key, gamma in (("dl", gm.gamma_dl), ("ul", gm.gamma_ul)):
        pl = st.per_link(key)
        worst_var = max(worst_var, float(np.max(np.abs(pl["ah2"] / gamma - 1.0))))
        worst_corr = max(worst_corr, float(np.max(pl["corr"])))
    ok = worst_var < 0.03 and worst_corr < 3 / np.sqrt(n)
    return CheckResult("estimator identities", ok,
                       f"max |var(est)/gamma - 1| = {worst_var:.4f}, max corr = {worst_corr:.4f}")


def _bisection_check():
    sc = build_scenario(ScenarioConfig(M=4, Nt=2, Nr=2, K=2, L=2, rng_seed=5))
    gm = large_scale_gammas(sc)
    prob = MaxMinProblem(sc, gm, epsilon=1e-3)
    res = solve_p1_maxmin(prob)
    dl = link.dl_terms(sc, gm, res.allocation).sinr()
    ul = link.ul_terms(sc, gm, res.allocation).sinr()
    spread = max(np.ptp(dl) / dl.max(), np.ptp(ul) / ul.max())
    above = feasibility_check(prob, res.lambda_star + 5 * prob.epsilon).feasible
    ok = spread < 0.01 and not above and min(dl.min(), ul.min()) >= res.lambda_star * (1 - 1e-6)
    return CheckResult("bisection convergence", ok,
                       f"lambda* = {res.lambda_star:.4f}, spread = {spread:.2e}, "
                       f"lambda*+5eps feasible = {above}")


def self_test(mutation: str | None = None) -> SelfTestReport:
    """Run the fast subset of checks, optionally under an injected mutation."""
    t0 = time.perf_counter()
    report = SelfTestReport()
    with _mutated(mutation):
        n, worst, bad = oracle_check()
        detail = f"{n} terms, max z = {worst:.2f}"
        if bad:
            case, direction, term, idx, cf, mc, z = bad[0]
            detail += (f", {len(bad)} outside 3 SE (first: case {case} {direction} {term}"
                       f"{list(idx)} closed={cf:.4g} mc={mc:.4g})")
        report.checks.append(CheckResult("closed form vs Monte Carlo", not bad, detail))
        report.checks.append(_estimator_check())
        report.checks.append(_bisection_check())
    report.seconds = time.perf_counter() - t0
    return report
