import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cffd.errors import InvalidConfigError, InvalidGeometryError
from cffd.scenario import (ScenarioConfig, ap_grid, build_scenario, dbm_to_watt,
                           noise_power_w, path_loss_db, scenario_to_csv, watt_to_dbm)


def test_path_loss_reference_values():
    # 36.7 log10(d) + 22.7 + 26 log10(fc) at d=100 m, fc=3 GHz
    assert path_loss_db(100.0, 3.0) == pytest.approx(73.4 + 22.7 + 26 * np.log10(3.0))
    assert path_loss_db(0.5, 3.0) < path_loss_db(1.0, 3.0)
    with pytest.raises(InvalidGeometryError):
        path_loss_db(0.0, 3.0)


def test_noise_power_default_band():
    # -174 dBm/Hz + 70 dB + 10 dB = -94 dBm
    assert watt_to_dbm(noise_power_w(10e6, 10.0)) == pytest.approx(-94.0)
    assert dbm_to_watt(30.0) == pytest.approx(1.0)
    with pytest.raises(InvalidConfigError):
        noise_power_w(-1.0, 10.0)


def test_colocated_nodes_are_clamped_to_one_metre():
    from cffd.scenario import MIN_DISTANCE_M, _gain
    g = _gain(np.array([0.0, 0.2, MIN_DISTANCE_M]), 3.0, 0.0, np.random.default_rng(0))
    assert g[0] == g[1] == g[2]


def test_ap_grid_square_and_jittered():
    g = ap_grid(16, 400.0)
    assert g.shape == (16, 2)
    assert sorted(set(np.round(g[:, 0], 6))) == [50.0, 150.0, 250.0, 350.0]
    h = ap_grid(6, 400.0, seed=2)
    assert h.shape == (6, 2) and np.all((h >= 0) & (h <= 400))
    assert np.array_equal(h, ap_grid(6, 400.0, seed=2))


def test_build_is_deterministic_and_frozen():
    a = build_scenario(ScenarioConfig(rng_seed=4))
    b = build_scenario(ScenarioConfig(rng_seed=4))
    c = build_scenario(ScenarioConfig(rng_seed=5))
    assert a.equals(b) and not a.equals(c)
    with pytest.raises(ValueError):
        a.zeta_f[0, 0] = 1.0


def test_large_scale_map_structure():
    sc = build_scenario(ScenarioConfig(M=9, rng_seed=1))
    assert np.allclose(sc.zeta_ap, sc.zeta_ap.T)
    assert np.all(np.diag(sc.zeta_ap) == 1.0)
    assert np.all(np.diag(sc.zeta_Q) == sc.config.theta_si)
    off = ~np.eye(9, dtype=bool)
    assert np.allclose(sc.zeta_Q[off], sc.config.theta_si * sc.zeta_ap[off])
    for z in (sc.zeta_f, sc.zeta_g, sc.zeta_h):
        assert np.all(z > 0) and np.all(z < 1)


def test_with_config_keeps_geometry():
    sc = build_scenario(ScenarioConfig(rng_seed=1))
    s2 = sc.with_config(theta_si=1e-3, p_d=1.0)
    assert np.array_equal(s2.zeta_f, sc.zeta_f)
    assert s2.zeta_Q[0, 0] == 1e-3
    with pytest.raises(InvalidConfigError):
        sc.with_config(M=4)


@pytest.mark.parametrize("kw", [dict(M=0), dict(tau_p=3), dict(theta_si=0.0),
                                dict(p_d=-1.0), dict(tau_p=200)])
def test_invalid_configs(kw):
    with pytest.raises(InvalidConfigError):
        build_scenario(ScenarioConfig(**kw))


def test_csv_dump_lists_every_link():
    sc = build_scenario(ScenarioConfig(M=4, rng_seed=0))
    lines = scenario_to_csv(sc).strip().splitlines()
    assert lines[0] == "link_class,i,j,distance_m,zeta_linear"
    # f, g: M*K + M*L; h: K*L; Q: M*M
    assert len(lines) - 1 == 4 * 2 + 4 * 2 + 2 * 2 + 16


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 12), st.integers(0, 3), st.integers(0, 3), st.integers(0, 2**31))
def test_shapes_property(M, K, L, seed):
    cfg = ScenarioConfig(M=M, K=K, L=L, tau_p=max(K + L, 1), rng_seed=seed)
    sc = build_scenario(cfg)
    assert sc.zeta_f.shape == (M, K) and sc.zeta_g.shape == (M, L)
    assert sc.zeta_h.shape == (K, L) and sc.zeta_Q.shape == (M, M)


@pytest.mark.parametrize("d,fc,expected,tol", [
    (100.0, 3.0, 108.5, 0.05),
    (1.0, 1.0, 22.7, 1e-12),
    (400 * np.sqrt(2), 3.0, 136.13, 0.01),  # area diagonal
])
def test_path_loss_worked_examples(d, fc, expected, tol):
    assert path_loss_db(d, fc) == pytest.approx(expected, abs=tol)


@pytest.mark.parametrize("bw,nf,watts", [
    (10e6, 10.0, 3.981e-13), (1.0, 0.0, 3.981e-21), (50e6, 10.0, 1.991e-12)])
def test_noise_worked_examples(bw, nf, watts):
    assert noise_power_w(bw, nf) == pytest.approx(watts, rel=1e-3)


def test_default_gains_in_plausible_range():
    for seed in range(5):
        sc = build_scenario(ScenarioConfig(rng_seed=seed))
        assert sc.sigma_w2 == pytest.approx(3.981e-13, rel=1e-3)
        assert np.all(sc.zeta_f >= 10**-13.5) and np.all(sc.zeta_f <= 10**-2.2)
        for pos in (sc.ap_positions, sc.dl_positions, sc.ul_positions):
            assert np.all((pos >= 0) & (pos <= 400))


def test_square_grid_is_rotation_invariant():
    g = ap_grid(16, 400.0)
    rot = np.column_stack([400.0 - g[:, 1], g[:, 0]])
    key = lambda a: sorted(map(tuple, np.round(a, 9)))
    assert key(rot) == key(g)


@settings(max_examples=40, deadline=None)
@given(st.floats(1.0, 5000.0), st.floats(1.0, 5000.0))
def test_path_loss_monotone(d1, d2):
    if d1 < d2:
        assert path_loss_db(d1, 3.0) < path_loss_db(d2, 3.0)
