"""Downlink and uplink SINR of the full-duplex cell-free network.

Every AP precodes with the conjugate of its channel estimates and combines
with the matched filter. Each SINR is a ratio of expectations::

    DL:  |DS|^2 / (E|BU|^2 + sum_i!=k E|MUI_i|^2 + E|UDI|^2 + sigma^2)
    UL:  |DS|^2 / (E|BU|^2 + sum_j!=l E|MUI_j|^2 + E|SI|^2 + E|noise|^2)

where UDI is the UL-user-to-DL-user leakage and SI the residual inter-AP
and self interference seen by the receive antennas. Closed forms for all
terms live in :func:`closed_form_terms`; :func:`monte_carlo_sinr` estimates
the very same expectations by sampling, which is how the closed forms are
tested.

The residual interference path is scaled by ``sqrt(theta_si)`` in the
signal model while ``Q`` itself already has variance
``zeta_Q = theta_si * zeta_ap``; the closed form carries the matching
``theta_si * zeta_Q`` product.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConstraintViolationError
from .estimation import EstimateStream, Gammas, large_scale_gammas
from .scenario import Scenario

_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class PowerAllocation:
    """DL coefficients ``eta`` (M, K) and UL coefficients ``varsigma`` (L,)."""

    eta: np.ndarray
    varsigma: np.ndarray

    def scaled(self, dl=1.0, ul=1.0) -> "PowerAllocation":
        return PowerAllocation(self.eta * dl, self.varsigma * ul)


@dataclass(frozen=True, eq=False)
class SeReport:
    dl_se: np.ndarray
    ul_se: np.ndarray
    sum_se: float
    sinr_dl: np.ndarray
    sinr_ul: np.ndarray
    prelog: float


@dataclass(frozen=True, eq=False)
class TermSet:
    """SINR building blocks for one direction.

    ``mui`` is a square matrix whose row is the victim user and column the
    interferer; its diagonal is zero (the own-signal spread is ``bu``).
    """

    ds: np.ndarray
    bu: np.ndarray
    mui: np.ndarray
    cross: np.ndarray  # UDI for DL, SI for UL
    noise: np.ndarray

    def sinr(self) -> np.ndarray:
        den = self.bu + self.mui.sum(axis=1) + self.cross + self.noise
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.ds > 0, self.ds / den, 0.0)

    def as_dict(self) -> dict:
        return {"ds": self.ds, "bu": self.bu, "mui": self.mui,
                "cross": self.cross, "noise": self.noise}


def prelog(scenario: Scenario) -> float:
    cfg = scenario.config
    return max(cfg.tau_c - cfg.tau_p, 0) / cfg.tau_c


def check_allocation(scenario: Scenario, gammas: Gammas, alloc: PowerAllocation,
                     mode: str = "strict"):
    """Per-AP and per-user constraint check.

    ``mode`` is ``"strict"`` (raise), ``"warn"`` (emit a warning) or
    ``"off"``. Returns the list of violation messages.
    """
    problems = []
    load = scenario.Nt * np.sum(alloc.eta * gammas.gamma_dl, axis=1)
    for m in np.flatnonzero(load > 1 + 1e-6):
        problems.append(f"AP {m}: Nt*sum_k eta*gamma = {load[m]:.6g} > 1")
    if np.any(alloc.eta < 0):
        problems.append("negative eta")
    vs = np.asarray(alloc.varsigma)
    if np.any(vs < -_TOL) or np.any(vs > 1 + 1e-6):
        problems.append("varsigma outside [0, 1]")
    if problems and mode == "strict":
        raise ConstraintViolationError("; ".join(problems))
    if problems and mode == "warn":
        warnings.warn("; ".join(problems), stacklevel=3)
    return problems


def equal_power_allocation(scenario: Scenario, gammas: Gammas,
                           literal: bool = False) -> PowerAllocation:
    """Uniform full-power baseline.

    Each AP splits its budget evenly over the DL users so that its per-AP
    constraint is active: ``eta_mk = 1 / (Nt sum_k' gamma_mk')``. With
    ``literal=True`` the raw ``eta_mk = 1/K`` is returned instead; with
    absolute path gains this uses a vanishing fraction of each AP's budget.
    UL users transmit at full power.
    """
    M, K, L = scenario.M, scenario.K, scenario.L
    if literal:
        eta = np.full((M, K), 1.0 / K) if K else np.zeros((M, 0))
    else:
        tot = scenario.Nt * gammas.gamma_dl.sum(axis=1, keepdims=True)
        with np.errstate(divide="ignore"):
            eta = np.where(tot > 0, 1.0 / tot, 0.0) * np.ones((M, K))
    return PowerAllocation(eta=eta, varsigma=np.ones(L))


# ---------------------------------------------------------------- closed forms

def _ul_si_term(scenario: Scenario, gammas: Gammas, eta: np.ndarray) -> np.ndarray:
    """``p_d Nt theta sum_m sum_n sum_k eta_nk zeta_Q[m,n] gamma_ml gamma_nk``.

    Returned without the receive-array factor Nr, which the caller applies.
    """
    cfg = scenario.config
    tx = (eta * gammas.gamma_dl).sum(axis=1)             # (M,) over n
    per_rx = scenario.zeta_Q @ tx                        # (M,) over m
    return cfg.p_d * scenario.Nt * cfg.theta_si * (per_rx @ gammas.gamma_ul)


def dl_terms(scenario: Scenario, gammas: Gammas, alloc: PowerAllocation) -> TermSet:
    cfg = scenario.config
    Nt, K = scenario.Nt, scenario.K
    gd = gammas.gamma_dl
    ds = cfg.p_d * Nt**2 * (np.sqrt(alloc.eta) * gd).sum(axis=0) ** 2
    # spread[k, i] = p_d Nt sum_m eta_mi gamma_mi zeta_f[m, k]
    spread = cfg.p_d * Nt * (scenario.zeta_f.T @ (alloc.eta * gd))
    bu = np.diag(spread).copy()
    mui = spread * (1 - np.eye(K))
    udi = cfg.p_u * scenario.zeta_h @ np.asarray(alloc.varsigma, dtype=float)
    noise = np.full(K, scenario.sigma_w2)
    return TermSet(ds, bu, mui, udi, noise)


def ul_terms(scenario: Scenario, gammas: Gammas, alloc: PowerAllocation,
             form: str = "exact") -> TermSet:
    """UL terms.

    ``form="exact"`` gives the true expectations. ``form="literal"`` drops
    the receive-array factor Nr from the interference and noise terms, a
    variant kept for comparison; it agrees with ``exact`` only for Nr = 1.
    """
    cfg = scenario.config
    Nr, L = scenario.Nr, scenario.L
    gu = gammas.gamma_ul
    vs = np.asarray(alloc.varsigma, dtype=float)
    G = gu.sum(axis=0)
    ds = cfg.p_u * Nr**2 * vs * G**2
    # spread[l, j] = p_u Nr varsigma_j sum_m gamma_ml zeta_g[m, j]
    spread = cfg.p_u * Nr * (gu.T @ scenario.zeta_g) * vs[None, :]
    bu = np.diag(spread).copy()
    mui = spread * (1 - np.eye(L))
    si = _ul_si_term(scenario, gammas, alloc.eta)
    noise = scenario.sigma_w2 * G
    if form == "exact":
        si, noise = Nr * si, Nr * noise
    elif form != "literal":
        raise ValueError(f"unknown form {form!r}")
    return TermSet(ds, bu, mui, si, noise)


def closed_form_terms(scenario, gammas, alloc, form="exact"):
    """``(dl TermSet, ul TermSet)``."""
    return dl_terms(scenario, gammas, alloc), ul_terms(scenario, gammas, alloc, form)


def dl_sinr_closed_form(scenario: Scenario, gammas: Gammas, alloc: PowerAllocation,
                        mode: str = "strict") -> np.ndarray:
    """K downlink SINRs."""
    check_allocation(scenario, gammas, alloc, mode)
    return dl_terms(scenario, gammas, alloc).sinr()


def ul_sinr_closed_form(scenario: Scenario, gammas: Gammas, alloc: PowerAllocation,
                        mode: str = "strict", form: str = "exact") -> np.ndarray:
    """L uplink SINRs (see :func:`ul_terms` for ``form``)."""
    check_allocation(scenario, gammas, alloc, mode)
    return ul_terms(scenario, gammas, alloc, form).sinr()


# ------------------------------------------------------------------ Monte Carlo

@dataclass(frozen=True, eq=False)
class MonteCarloResult:
    """Sample estimates of every term plus their standard errors."""

    dl: TermSet
    ul: TermSet
    dl_se: TermSet
    ul_se: TermSet
    n_blocks: int
    samples: dict = field(repr=False, default_factory=dict)

    @property
    def sinr_dl(self):
        return self.dl.sinr()

    @property
    def sinr_ul(self):
        return self.ul.sinr()


def _mean_and_se(x):
    n = x.shape[0]
    return x.mean(axis=0), x.std(axis=0, ddof=1) / np.sqrt(n)


def _coherent_stats(X):
    """Unbiased ``|E X|^2`` and ``var X`` with delta-method errors."""
    n = X.shape[0]
    m = X.mean(axis=0)
    dev = X - m
    var = (np.abs(dev) ** 2).sum(axis=0) / (n - 1)
    ds = np.abs(m) ** 2 - var / n
    re, im = dev.real, dev.imag
    vrr = (re * re).mean(axis=0)
    vii = (im * im).mean(axis=0)
    vri = (re * im).mean(axis=0)
    ds_var = 4.0 / n * (m.real**2 * vrr + m.imag**2 * vii + 2 * m.real * m.imag * vri)
    ds_se = np.sqrt(np.maximum(ds_var, 0.0))
    bu_se = np.abs(dev) ** 2
    bu_se = bu_se.std(axis=0, ddof=1) / np.sqrt(n)
    return ds, ds_se, var, bu_se


def _mc_chunk(scenario, alloc, b):
    """Per-block random variables whose moments form every SINR term."""
    cfg = scenario.config
    f, fh, g, gh = b["f"], b["f_hat"], b["g"], b["g_hat"]
    vs = np.asarray(alloc.varsigma, dtype=float)
    w_dl = np.sqrt(cfg.p_d * alloc.eta)                       # (M, K)
    prec = fh.conj() * w_dl[None, :, :, None]                 # (b, M, K, Nt)
    # Y[b, k, i]: what DL user k receives of user i's stream
    Y = np.einsum("bmkt,bmit->bki", f, prec)
    # U[b, l, j]: UL user j's contribution after combining for user l
    U = np.einsum("bmlr,bmjr->blj", gh.conj(), g) * np.sqrt(cfg.p_u * vs)[None, None, :]
    out = {"Y": Y, "U": U}
    if b.get("h") is not None:
        out["udi"] = np.abs(b["h"] @ np.sqrt(cfg.p_u * vs)) ** 2
    out["ul_noise"] = scenario.sigma_w2 * (np.abs(gh) ** 2).sum(axis=(1, 3))
    if b.get("Q") is not None:
        Qv = np.einsum("bmnrt,bnkt->bmkr", b["Q"], prec)
        Z = np.sqrt(cfg.theta_si) * np.einsum("bmlr,bmkr->blk", gh.conj(), Qv)
        out["si"] = (np.abs(Z) ** 2).sum(axis=2)
    return out


def monte_carlo_sinr(scenario: Scenario, alloc: PowerAllocation, n_blocks: int,
                     seed: int, chunk: int = 2000, keep_samples: bool = False
                     ) -> MonteCarloResult:
    """Sample every SINR term over ``n_blocks`` fresh channels and estimates.

    Pilot noise is redrawn in every block, so the averages run over both
    fading and estimation noise. The result is a deterministic function of
    ``(scenario, alloc, n_blocks, seed)`` and does not depend on ``chunk``.
    """
    if n_blocks < 100:
        raise ValueError("n_blocks must be >= 100")
    K, L = scenario.K, scenario.L
    # UL-to-DL and inter-AP paths only matter with users on both sides.
    classes = ["f", "g", "h", "Q"] if K and L else ["f", "g"]
    stream = EstimateStream(scenario, seed, classes)
    parts = []
    done = 0
    while done < n_blocks:
        n = min(chunk, n_blocks - done)
        parts.append(_mc_chunk(scenario, alloc, stream.next(n)))
        done += n
    s = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}

    Y, U = s["Y"], s["U"]
    dl_diag = np.diagonal(Y, axis1=1, axis2=2)
    ul_diag = np.diagonal(U, axis1=1, axis2=2)
    dds, dds_se, dbu, dbu_se = _coherent_stats(dl_diag)
    uds, uds_se, ubu, ubu_se = _coherent_stats(ul_diag)
    dmui, dmui_se = _mean_and_se(np.abs(Y) ** 2)
    umui, umui_se = _mean_and_se(np.abs(U) ** 2)
    offK, offL = 1 - np.eye(K), 1 - np.eye(L)
    if "udi" in s:
        udi, udi_se = _mean_and_se(s["udi"])
    else:
        udi = udi_se = np.zeros(K)
    if "si" in s:
        si, si_se = _mean_and_se(s["si"])
    else:
        si = si_se = np.zeros(L)
    un, un_se = _mean_and_se(s["ul_noise"])
    dn = np.full(K, scenario.sigma_w2)

    dl = TermSet(dds, dbu, dmui * offK, udi, dn)
    ul = TermSet(uds, ubu, umui * offL, si, un)
    dl_se = TermSet(dds_se, dbu_se, dmui_se * offK, udi_se, np.zeros(K))
    ul_se = TermSet(uds_se, ubu_se, umui_se * offL, si_se, un_se)
    return MonteCarloResult(dl, ul, dl_se, ul_se, n_blocks,
                            samples=s if keep_samples else {})


# ------------------------------------------------------------------ SE reports

def se_from_sinr(sinr_dl, sinr_ul, pre: float) -> SeReport:
    sinr_dl = np.asarray(sinr_dl, dtype=float)
    sinr_ul = np.asarray(sinr_ul, dtype=float)
    dl = pre * np.log2(1 + sinr_dl)
    ul = pre * np.log2(1 + sinr_ul)
    return SeReport(dl, ul, float(dl.sum() + ul.sum()), sinr_dl, sinr_ul, pre)


def se_report(scenario: Scenario, alloc: PowerAllocation, mode: str = "closed_form",
              gammas: Gammas | None = None, n_blocks: int = 20000, seed: int = 0,
              check: str = "strict") -> SeReport:
    """Per-user SE under ``mode`` ``"closed_form"`` or ``"monte_carlo"``."""
    gammas = large_scale_gammas(scenario) if gammas is None else gammas
    if mode == "closed_form":
        d, u = closed_form_terms(scenario, gammas, alloc)
        check_allocation(scenario, gammas, alloc, check)
        sd, su = d.sinr(), u.sinr()
    elif mode == "monte_carlo":
        check_allocation(scenario, gammas, alloc, check)
        r = monte_carlo_sinr(scenario, alloc, n_blocks, seed)
        sd, su = r.sinr_dl, r.sinr_ul
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return se_from_sinr(sd, su, prelog(scenario))


def hd_sinrs(scenario: Scenario, gammas: Gammas, alloc_dl: PowerAllocation,
             alloc_ul: PowerAllocation):
    """Half-duplex SINRs: no UL-to-DL leakage and no inter-AP interference."""
    d = dl_terms(scenario, gammas, alloc_dl)
    u = ul_terms(scenario, gammas, alloc_ul)
    d = TermSet(d.ds, d.bu, d.mui, np.zeros_like(d.cross), d.noise)
    u = TermSet(u.ds, u.bu, u.mui, np.zeros_like(u.cross), u.noise)
    return d.sinr(), u.sinr()


def hd_baseline_sum_se(scenario: Scenario, alloc_dl: PowerAllocation,
                       alloc_ul: PowerAllocation, gammas: Gammas | None = None) -> float:
    """Sum SE of the time-division half-duplex network.

    DL and UL each occupy half of the data symbols, so both prelogs are
    halved; the two directions never overlap, which removes the UL-to-DL
    and inter-AP interference entirely. The result does not depend on
    ``theta_si``.
    """
    gammas = large_scale_gammas(scenario) if gammas is None else gammas
    sd, su = hd_sinrs(scenario, gammas, alloc_dl, alloc_ul)
    return se_from_sinr(sd, su, 0.5 * prelog(scenario)).sum_se
