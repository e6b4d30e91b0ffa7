"""Network geometry and large-scale fading.

Every other module consumes the :class:`Scenario` built here: AP and user
positions, the large-scale gain of every link class, and the receiver noise
power. All quantities are linear scale (Watts, linear gains) unless a name
says otherwise.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfigError, InvalidGeometryError

#: Thermal noise density, dBm/Hz.
THERMAL_NOISE_DBM_HZ = -174.0

#: Distances below this are clamped before evaluating the path-loss model.
MIN_DISTANCE_M = 1.0

# Seed-sequence tags; each random quantity gets its own stream so adding
# users does not move the APs or the other class's shadowing.
_TAG_AP_JITTER = 11
_TAG_DL_POS = 12
_TAG_UL_POS = 13
_TAG_SHADOW = {"f": 21, "g": 22, "h": 23, "Q": 24}


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def linear_to_db(x):
    return 10.0 * np.log10(np.asarray(x, dtype=float))


def dbm_to_watt(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def watt_to_dbm(w):
    return 10.0 * np.log10(np.asarray(w, dtype=float)) + 30.0


def noise_power_w(bandwidth: float, noise_figure: float) -> float:
    """Receiver noise power in Watts.

    Parameters
    ----------
    bandwidth : float
        Signal bandwidth in Hz.
    noise_figure : float
        Receiver noise figure in dB.
    """
    if not bandwidth > 0:
        raise InvalidConfigError(f"bandwidth must be positive, got {bandwidth!r}")
    dbm = THERMAL_NOISE_DBM_HZ + 10.0 * math.log10(bandwidth) + noise_figure
    return float(dbm_to_watt(dbm))


def path_loss_db(distance, fc: float):
    """UMi NLoS path loss ``36.7 log10(d) + 22.7 + 26 log10(fc)``.

    ``distance`` is in meters (scalar or array), ``fc`` in GHz. Returns a
    float for scalar input and an array otherwise.
    """
    d = np.asarray(distance, dtype=float)
    if np.any(~(d > 0)):
        raise InvalidGeometryError("path loss needs strictly positive distances")
    pl = 36.7 * np.log10(d) + 22.7 + 26.0 * math.log10(fc)
    return float(pl) if pl.ndim == 0 else pl


@dataclass(frozen=True)
class ScenarioConfig:
    """Static network description.

    Powers are in Watts and ``theta_si`` is a linear power ratio. The
    defaults reproduce the 16-AP, 4x4-antenna, 2+2-user setup.
    """

    M: int = 16
    Nt: int = 4
    Nr: int = 4
    K: int = 2
    L: int = 2
    area_side: float = 400.0
    fc: float = 3.0
    bandwidth: float = 10e6
    noise_figure: float = 10.0
    shadow_sigma: float = 4.0
    tau_c: int = 200
    tau_p: int = 4
    p_t: float = 0.1
    p_d: float = 0.2
    p_u: float = 0.1
    theta_si: float = 1e-7
    rng_seed: int = 0

    def validate(self) -> "ScenarioConfig":
        """Raise :class:`InvalidConfigError` unless all invariants hold."""
        checks = [
            (self.M >= 1, "M must be >= 1"),
            (self.Nt >= 1 and self.Nr >= 1, "Nt and Nr must be >= 1"),
            (self.K >= 0 and self.L >= 0, "K and L must be >= 0"),
            (self.tau_p >= self.K + self.L, "tau_p must be >= K + L"),
            (0 < self.tau_p < self.tau_c, "need 0 < tau_p < tau_c"),
            (self.area_side > 0, "area_side must be positive"),
            (self.fc > 0, "fc must be positive"),
            (self.bandwidth > 0, "bandwidth must be positive"),
            (self.shadow_sigma >= 0, "shadow_sigma must be >= 0"),
            (min(self.p_t, self.p_d, self.p_u) > 0, "all powers must be positive"),
            (0 < self.theta_si <= 1, "theta_si must lie in (0, 1]"),
        ]
        for ok, msg in checks:
            if not ok:
                raise InvalidConfigError(msg)
        return self


@dataclass(frozen=True, eq=False)
class Scenario:
    """Geometry plus the large-scale gain of every link class.

    ``zeta_ap`` is the raw AP-to-AP gain with a unit diagonal;
    ``zeta_Q = theta_si * zeta_ap`` is the residual-interference map used by
    the full-duplex model, so its diagonal is exactly ``theta_si``.
    """

    config: ScenarioConfig
    ap_positions: np.ndarray
    dl_positions: np.ndarray
    ul_positions: np.ndarray
    zeta_f: np.ndarray
    zeta_g: np.ndarray
    zeta_h: np.ndarray
    zeta_ap: np.ndarray
    zeta_Q: np.ndarray
    sigma_w2: float
    distances: dict = field(repr=False, default_factory=dict)

    @property
    def M(self):
        return self.config.M

    @property
    def K(self):
        return self.config.K

    @property
    def L(self):
        return self.config.L

    @property
    def Nt(self):
        return self.config.Nt

    @property
    def Nr(self):
        return self.config.Nr

    def with_config(self, **changes) -> "Scenario":
        """Copy with config fields replaced, keeping geometry and gains.

        Only fields that do not enter the large-scale map may change
        (powers, pilot budget, coherence length). ``theta_si`` is allowed
        and rescales ``zeta_Q``.
        """
        from dataclasses import replace

        geometric = {"M", "K", "L", "area_side", "fc", "shadow_sigma", "rng_seed"}
        bad = geometric.intersection(changes)
        if bad:
            raise InvalidConfigError(f"cannot change geometric fields {sorted(bad)}")
        cfg = replace(self.config, **changes)
        sigma_w2 = noise_power_w(cfg.bandwidth, cfg.noise_figure)
        zeta_Q = cfg.theta_si * self.zeta_ap
        np.fill_diagonal(zeta_Q, cfg.theta_si)
        _freeze(zeta_Q)
        return replace(self, config=cfg, sigma_w2=sigma_w2, zeta_Q=zeta_Q)

    def equals(self, other: "Scenario") -> bool:
        """Field-for-field bitwise equality."""
        if self.config != other.config or self.sigma_w2 != other.sigma_w2:
            return False
        names = ["ap_positions", "dl_positions", "ul_positions",
                 "zeta_f", "zeta_g", "zeta_h", "zeta_ap", "zeta_Q"]
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in names)


def _freeze(*arrays):
    for a in arrays:
        a.setflags(write=False)


def _rng(seed, tag):
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(tag,)))


def ap_grid(M: int, area_side: float, seed: int = 0) -> np.ndarray:
    """AP positions: cell centres of a sqrt(M) x sqrt(M) grid.

    When M is not a perfect square the APs occupy the first M cells of the
    smallest covering square grid (row-major) and are jittered uniformly
    inside their cell, drawn from a stream fixed by ``seed``.
    """
    n = math.isqrt(M)
    if n * n == M:
        centres = (np.arange(n) + 0.5) * area_side / n
        xx, yy = np.meshgrid(centres, centres)
        return np.column_stack([xx.ravel(), yy.ravel()])
    n = math.isqrt(M - 1) + 1
    cell = area_side / n
    idx = np.arange(M)
    corner = np.column_stack([idx % n, idx // n]) * cell
    jitter = _rng(seed, _TAG_AP_JITTER).uniform(0.0, cell, size=(M, 2))
    return corner + jitter


def _pairwise(a, b):
    return np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)


def _gain(dist, fc, sigma, rng):
    pl = path_loss_db(np.maximum(dist, MIN_DISTANCE_M), fc)
    shadow = sigma * rng.standard_normal(dist.shape)
    return 10.0 ** (-(pl + shadow) / 10.0)


def build_scenario(config: ScenarioConfig) -> Scenario:
    """Place nodes and compute every large-scale gain.

    Users are dropped uniformly over the square area. Each gain is
    ``10**(-(PL + X)/10)`` with ``X ~ N(0, shadow_sigma**2)`` dB. The AP-AP
    map is symmetric; its diagonal is not a path but the residual
    self-interference, fixed to ``theta_si``.
    """
    config.validate()
    seed = config.rng_seed
    A = config.area_side
    ap = ap_grid(config.M, A, seed)
    dl = _rng(seed, _TAG_DL_POS).uniform(0.0, A, size=(config.K, 2))
    ul = _rng(seed, _TAG_UL_POS).uniform(0.0, A, size=(config.L, 2))

    d_f = _pairwise(ap, dl)
    d_g = _pairwise(ap, ul)
    d_h = _pairwise(dl, ul)
    d_ap = _pairwise(ap, ap)

    s = config.shadow_sigma
    zeta_f = _gain(d_f, config.fc, s, _rng(seed, _TAG_SHADOW["f"]))
    zeta_g = _gain(d_g, config.fc, s, _rng(seed, _TAG_SHADOW["g"]))
    zeta_h = _gain(d_h, config.fc, s, _rng(seed, _TAG_SHADOW["h"]))

    raw = _gain(d_ap, config.fc, s, _rng(seed, _TAG_SHADOW["Q"]))
    zeta_ap = np.triu(raw, 1)
    zeta_ap = zeta_ap + zeta_ap.T
    np.fill_diagonal(zeta_ap, 1.0)
    zeta_Q = config.theta_si * zeta_ap
    np.fill_diagonal(zeta_Q, config.theta_si)

    _freeze(ap, dl, ul, zeta_f, zeta_g, zeta_h, zeta_ap, zeta_Q)
    return Scenario(
        config=config,
        ap_positions=ap,
        dl_positions=dl,
        ul_positions=ul,
        zeta_f=zeta_f,
        zeta_g=zeta_g,
        zeta_h=zeta_h,
        zeta_ap=zeta_ap,
        zeta_Q=zeta_Q,
        sigma_w2=noise_power_w(config.bandwidth, config.noise_figure),
        distances={"f": d_f, "g": d_g, "h": d_h, "Q": d_ap},
    )


def scenario_to_csv(scenario: Scenario) -> str:
    """One row per link: ``link_class, i, j, distance_m, zeta_linear``.

    Link classes are ``f`` (AP m, DL user k), ``g`` (AP m, UL user l),
    ``h`` (DL user k, UL user l) and ``Q`` (AP m, AP n). Floats use
    round-trip formatting so the output is byte-deterministic.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["link_class", "i", "j", "distance_m", "zeta_linear"])
    maps = {"f": scenario.zeta_f, "g": scenario.zeta_g,
            "h": scenario.zeta_h, "Q": scenario.zeta_Q}
    for cls, zeta in maps.items():
        dist = scenario.distances[cls]
        for i in range(zeta.shape[0]):
            for j in range(zeta.shape[1]):
                w.writerow([cls, i, j, repr(float(dist[i, j])), repr(float(zeta[i, j]))])
    return buf.getvalue()
