import numpy as np
import pytest

from cffd.errors import ConstraintViolationError
from cffd.estimation import large_scale_gammas
from cffd.link import (PowerAllocation, check_allocation, closed_form_terms, dl_terms,
                       equal_power_allocation, hd_baseline_sum_se, monte_carlo_sinr, prelog,
                       se_report, ul_terms)
from cffd.scenario import ScenarioConfig, build_scenario
from cffd.selftest import compare_terms, tiny_oracle_case


@pytest.fixture(scope="module")
def default():
    sc = build_scenario(ScenarioConfig(rng_seed=0))
    return sc, large_scale_gammas(sc)


def test_equal_power_saturates_every_ap(default):
    sc, gm = default
    a = equal_power_allocation(sc, gm)
    load = sc.Nt * (a.eta * gm.gamma_dl).sum(axis=1)
    assert np.allclose(load, 1.0)
    assert check_allocation(sc, gm, a) == []


def test_literal_equal_power_is_far_below_budget(default):
    sc, gm = default
    lit = equal_power_allocation(sc, gm, literal=True)
    assert np.all(lit.eta == 0.5)
    assert np.all(sc.Nt * (lit.eta * gm.gamma_dl).sum(axis=1) < 1e-3)


def test_check_allocation_modes(default):
    sc, gm = default
    bad = equal_power_allocation(sc, gm).scaled(dl=2.0)
    with pytest.raises(ConstraintViolationError):
        check_allocation(sc, gm, bad)
    with pytest.warns(UserWarning):
        check_allocation(sc, gm, bad, mode="warn")
    assert check_allocation(sc, gm, bad, mode="off")
    neg = PowerAllocation(eta=np.zeros((sc.M, sc.K)), varsigma=np.array([1.5, 0.2]))
    with pytest.raises(ConstraintViolationError):
        check_allocation(sc, gm, neg)


def test_mui_has_zero_diagonal(default):
    sc, gm = default
    d, u = closed_form_terms(sc, gm, equal_power_allocation(sc, gm))
    assert np.all(np.diag(d.mui) == 0) and np.all(np.diag(u.mui) == 0)


def test_literal_ul_form_differs_only_for_multi_antenna_receivers():
    alloc_for = lambda sc, gm: equal_power_allocation(sc, gm)
    sc = build_scenario(ScenarioConfig(M=4, Nt=2, Nr=2, rng_seed=1))
    gm = large_scale_gammas(sc)
    a = alloc_for(sc, gm)
    ex, pr = ul_terms(sc, gm, a), ul_terms(sc, gm, a, form="literal")
    assert np.allclose(ex.cross, 2 * pr.cross) and np.allclose(ex.noise, 2 * pr.noise)
    sc1 = build_scenario(ScenarioConfig(M=4, Nt=2, Nr=1, rng_seed=1))
    gm1 = large_scale_gammas(sc1)
    a1 = alloc_for(sc1, gm1)
    assert np.allclose(ul_terms(sc1, gm1, a1).sinr(), ul_terms(sc1, gm1, a1, form="literal").sinr())


def test_monte_carlo_rejects_literal_form_for_nr_2():
    sc = build_scenario(ScenarioConfig(M=2, Nt=2, Nr=2, K=1, L=1, tau_p=2, area_side=100,
                                       theta_si=1e-2, p_t=0.01, rng_seed=4))
    gm = large_scale_gammas(sc)
    a = PowerAllocation(eta=0.8 / (2 * gm.gamma_dl), varsigma=np.array([0.7]))
    mc = monte_carlo_sinr(sc, a, 20000, seed=3)
    z_ex = np.abs(ul_terms(sc, gm, a).noise - mc.ul.noise) / mc.ul_se.noise
    z_pr = np.abs(ul_terms(sc, gm, a, form="literal").noise - mc.ul.noise) / mc.ul_se.noise
    assert z_ex.max() < 3 and z_pr.min() > 10


@pytest.mark.parametrize("case", range(4))
def test_closed_form_matches_monte_carlo(case):
    sc, gm, alloc = tiny_oracle_case(100 + case)
    mc = monte_carlo_sinr(sc, alloc, 20000, seed=case)
    n, zmax, fails = compare_terms(closed_form_terms(sc, gm, alloc), mc)
    assert n > 0 and not fails, fails


def test_monte_carlo_is_chunk_invariant():
    sc, gm, alloc = tiny_oracle_case(0)
    a = monte_carlo_sinr(sc, alloc, 600, seed=1, chunk=600)
    b = monte_carlo_sinr(sc, alloc, 600, seed=1, chunk=250)
    assert np.allclose(a.dl.ds, b.dl.ds, rtol=1e-12) and np.allclose(a.ul.cross, b.ul.cross, rtol=1e-12)


def test_monte_carlo_needs_blocks():
    sc, gm, alloc = tiny_oracle_case(0)
    with pytest.raises(ValueError):
        monte_carlo_sinr(sc, alloc, 10, seed=0)


def test_se_report_and_prelog(default):
    sc, gm = default
    a = equal_power_allocation(sc, gm)
    rep = se_report(sc, a, gammas=gm)
    assert prelog(sc) == pytest.approx(196 / 200)
    assert rep.sum_se == pytest.approx(rep.dl_se.sum() + rep.ul_se.sum())
    assert np.allclose(rep.dl_se, prelog(sc) * np.log2(1 + dl_terms(sc, gm, a).sinr()))
    with pytest.raises(ValueError):
        se_report(sc, a, mode="guess")


def test_hd_baseline_ignores_self_interference(default):
    sc, gm = default
    a = equal_power_allocation(sc, gm)
    hd1 = hd_baseline_sum_se(sc, a, a, gm)
    hd2 = hd_baseline_sum_se(sc.with_config(theta_si=1e-2), a, a, gm)
    assert hd1 == pytest.approx(hd2)


def test_sinr_decreases_with_self_interference(default):
    sc, gm = default
    a = equal_power_allocation(sc, gm)
    s = [ul_terms(sc.with_config(theta_si=t), gm, a).sinr() for t in (1e-8, 1e-5, 1e-2)]
    assert np.all(s[0] > s[1]) and np.all(s[1] > s[2])


def test_interference_limited_dl_ordering_is_scale_invariant():
    import dataclasses
    sc = build_scenario(ScenarioConfig(M=6, Nt=2, Nr=2, K=3, L=0, tau_p=3, rng_seed=2))
    gm = large_scale_gammas(sc)
    quiet = dataclasses.replace(sc, sigma_w2=0.0)
    a = equal_power_allocation(sc, gm)
    base = np.argsort(dl_terms(quiet, gm, a).sinr())
    for c in (0.1, 0.5, 1.0):
        assert np.array_equal(np.argsort(dl_terms(quiet, gm, a.scaled(dl=c)).sinr()), base)


def test_prelog_and_se_basic_properties(default):
    sc, gm = default
    assert 0 < prelog(sc) < 1
    rep = se_report(sc, equal_power_allocation(sc, gm), gammas=gm)
    assert np.all(rep.dl_se >= 0) and np.all(rep.ul_se >= 0)
