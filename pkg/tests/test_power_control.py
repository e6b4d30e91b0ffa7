import numpy as np
import pytest

from cffd.errors import InfeasibleProblemError, InvalidConfigError
from cffd.estimation import large_scale_gammas
from cffd.link import dl_terms, ul_terms
from cffd.power_control import (MaxMinProblem, attained_sinrs, feasibility_check,
                                solve_hd_maxmin, solve_p1_maxmin, validate_allocation)
from cffd.scenario import ScenarioConfig, build_scenario


def grid_maxmin(sc, gm, w_d=1.0, w_u=1.0, step=0.01):
    """Brute-force max-min over normalised DL amplitudes and UL amplitude (M=2, K=L=1)."""
    c = sc.config
    Nt, Nr, s2 = sc.Nt, sc.Nr, sc.sigma_w2
    g = np.arange(0.0, 1.0 + step / 2, step)
    m0, m1, al = np.meshgrid(g, g, g, indexing="ij")
    gd, gu = gm.gamma_dl[:, 0], gm.gamma_ul[:, 0]
    eta0, eta1 = m0**2 / (Nt * gd[0]), m1**2 / (Nt * gd[1])
    vs = al**2
    ds = c.p_d * Nt**2 * (np.sqrt(eta0) * gd[0] + np.sqrt(eta1) * gd[1]) ** 2
    bu = c.p_d * Nt * (eta0 * gd[0] * sc.zeta_f[0, 0] + eta1 * gd[1] * sc.zeta_f[1, 0])
    dl = ds / (bu + c.p_u * sc.zeta_h[0, 0] * vs + s2)
    G = gu.sum()
    uds = c.p_u * Nr**2 * vs * G**2
    ubu = c.p_u * Nr * vs * (gu * sc.zeta_g[:, 0]).sum()
    tx = np.stack([eta0 * gd[0], eta1 * gd[1]])
    si = Nr * c.p_d * Nt * c.theta_si * sum(
        sc.zeta_Q[m, n] * tx[n] * gu[m] for m in range(2) for n in range(2))
    ul = uds / (ubu + si + Nr * s2 * G)
    lam = np.minimum(dl ** (1 / w_d), ul ** (1 / w_u))
    return float(lam.max())


def tiny(seed, theta=1e-3):
    sc = build_scenario(ScenarioConfig(M=2, Nt=1, Nr=1, K=1, L=1, tau_p=2, area_side=100,
                                       theta_si=theta, rng_seed=seed))
    return sc, large_scale_gammas(sc)


@pytest.mark.parametrize("seed", range(4))
def test_matches_grid_search_on_tiny_instances(seed):
    sc, gm = tiny(seed)
    lam = solve_p1_maxmin(MaxMinProblem(sc, gm, epsilon=1e-4)).lambda_star
    ref = grid_maxmin(sc, gm)
    assert lam >= ref * (1 - 1e-3)
    assert lam == pytest.approx(ref, rel=0.02)


def test_weighted_targets_on_tiny_instance():
    sc, gm = tiny(7)
    res = solve_p1_maxmin(MaxMinProblem(sc, gm, w_d=1.0, w_u=2.0, epsilon=1e-4))
    assert res.lambda_star == pytest.approx(grid_maxmin(sc, gm, 1.0, 2.0), rel=0.02)


@pytest.fixture(scope="module")
def solved():
    sc = build_scenario(ScenarioConfig(M=9, Nt=2, Nr=2, rng_seed=3))
    gm = large_scale_gammas(sc)
    prob = MaxMinProblem(sc, gm, epsilon=1e-3)
    return prob, solve_p1_maxmin(prob)


def test_common_rates_and_constraints(solved):
    prob, res = solved
    dl, ul = attained_sinrs(prob, res.allocation)
    assert np.ptp(dl) / dl.max() < 1e-6 and np.ptp(ul) / ul.max() < 1e-6
    assert min(dl.min(), ul.min()) >= res.lambda_star * (1 - 1e-9)
    assert validate_allocation(res.allocation, prob.scenario, prob.gammas).valid


def test_above_optimum_is_infeasible(solved):
    prob, res = solved
    assert not feasibility_check(prob, res.lambda_star + 5 * prob.epsilon).feasible
    assert feasibility_check(prob, res.lambda_star * 0.99).feasible


def test_iteration_log_brackets_shrink(solved):
    prob, res = solved
    gaps = [r.lambda_hi - r.lambda_lo for r in res.iteration_log]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < prob.epsilon


def test_max_iters_caps_bisection():
    sc, gm = tiny(1)
    res = solve_p1_maxmin(MaxMinProblem(sc, gm, max_iters=3))
    assert len(res.iteration_log) == 3


def test_half_duplex_phases_are_independent_of_self_interference():
    sc, gm = tiny(2, theta=1e-8)
    a = solve_hd_maxmin(sc, gm, 1e-4)
    b = solve_hd_maxmin(sc.with_config(theta_si=1e-1), gm, 1e-4)
    assert a[2] == pytest.approx(b[2], rel=1e-3) and a[3] == pytest.approx(b[3], rel=1e-3)
    assert np.all(a[0].varsigma == 0) and np.all(a[1].eta == 0)


def test_full_duplex_loses_to_strong_self_interference():
    sc, gm = tiny(2, theta=1e-8)
    weak = solve_p1_maxmin(MaxMinProblem(sc, gm)).lambda_star
    strong = solve_p1_maxmin(MaxMinProblem(sc.with_config(theta_si=1e-1), gm)).lambda_star
    assert strong < weak


@pytest.mark.parametrize("kw", [dict(w_d=0), dict(epsilon=0), dict(lambda_min=2, lambda_max=1),
                                dict(link="tdd")])
def test_invalid_problems(kw):
    sc, gm = tiny(0)
    with pytest.raises(InvalidConfigError):
        MaxMinProblem(sc, gm, **kw)


def test_infeasible_lower_bound():
    sc, gm = tiny(0)
    with pytest.raises(InfeasibleProblemError):
        solve_p1_maxmin(MaxMinProblem(sc, gm, lambda_min=1e9))


def test_closed_forms_agree_with_allocation_helpers(solved):
    prob, res = solved
    dl, ul = attained_sinrs(prob, res.allocation)
    assert np.allclose(dl, dl_terms(prob.scenario, prob.gammas, res.allocation).sinr())
    assert np.allclose(ul, ul_terms(prob.scenario, prob.gammas, res.allocation).sinr())


def test_bisection_halves_the_bracket_exactly(solved):
    prob, res = solved
    gaps = [r.lambda_hi - r.lambda_lo for r in res.iteration_log]
    for a, b in zip(gaps, gaps[1:]):
        assert b == pytest.approx(a / 2, rel=1e-12)
