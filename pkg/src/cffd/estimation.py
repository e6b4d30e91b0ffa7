"""Uplink training: orthogonal pilots, pilot observations and MMSE estimates.

All users transmit their pilots at once. An AP projects its transmit-side
observation onto each DL user's pilot and its receive-side observation onto
each UL user's pilot; the projection is a sufficient statistic because the
pilots are orthonormal. With ``y = sqrt(tau_p p_t) a + w`` the MMSE estimate
is ``c y`` with::

    c     = sqrt(tau_p p_t) zeta / (tau_p p_t zeta + sigma_w2)
    gamma = tau_p p_t zeta**2 / (tau_p p_t zeta + sigma_w2)

``gamma`` is the per-entry variance of the estimate, ``zeta - gamma`` that of
the estimation error.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .channel import ChannelRealization, ChannelStream, cn_draw
from .errors import InsufficientPilotsError
from .scenario import Scenario

# Noise stream tags (kept apart from the channel tags 0..5).
_TAG_NOISE_T = 6
_TAG_NOISE_R = 7
_TAG_PROJ_DL = 8
_TAG_PROJ_UL = 9


@dataclass(frozen=True, eq=False)
class PilotBook:
    """Rows are unit-norm, mutually orthogonal pilot sequences."""

    phi_dl: np.ndarray  # (K, tau_p)
    phi_ul: np.ndarray  # (L, tau_p)

    @property
    def tau_p(self) -> int:
        return self.phi_dl.shape[1]


@dataclass(frozen=True, eq=False)
class Gammas:
    """Large-scale estimation statistics, shapes (M, K) and (M, L)."""

    gamma_dl: np.ndarray
    gamma_ul: np.ndarray
    c_dl: np.ndarray
    c_ul: np.ndarray


@dataclass(frozen=True, eq=False)
class ChannelEstimates:
    f_hat: np.ndarray  # (M, K, Nt)
    g_hat: np.ndarray  # (M, L, Nr)
    gamma_dl: np.ndarray
    gamma_ul: np.ndarray
    c_dl: np.ndarray
    c_ul: np.ndarray


def assign_pilots(K: int, L: int, tau_p: int) -> PilotBook:
    """Take K + L distinct columns of the unitary DFT matrix of size tau_p.

    DL users get columns ``0..K-1`` and UL users ``K..K+L-1``.
    """
    if tau_p < K + L:
        raise InsufficientPilotsError(
            f"tau_p={tau_p} cannot carry {K + L} orthogonal pilots")
    n = np.arange(tau_p)
    cols = np.arange(K + L)
    F = np.exp(-2j * np.pi * np.outer(cols, n) / tau_p) / np.sqrt(tau_p)
    return PilotBook(phi_dl=F[:K].copy(), phi_ul=F[K:].copy())


def mmse_coefficients(zeta, p_t: float, tau_p: int, sigma_w2: float):
    """Return ``(c, gamma)`` for large-scale gain(s) ``zeta``."""
    zeta = np.asarray(zeta, dtype=float)
    snr = tau_p * p_t * zeta
    denom = snr + sigma_w2
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.where(denom > 0, np.sqrt(tau_p * p_t) * zeta / denom, 0.0)
        gamma = np.where(denom > 0, snr * zeta / denom, 0.0)
    return c, gamma


def large_scale_gammas(scenario: Scenario, p_t: float | None = None,
                       tau_p: int | None = None) -> Gammas:
    """Estimate variances for the scenario, optionally overriding p_t or tau_p."""
    cfg = scenario.config
    p_t = cfg.p_t if p_t is None else p_t
    tau_p = cfg.tau_p if tau_p is None else tau_p
    c_dl, g_dl = mmse_coefficients(scenario.zeta_f, p_t, tau_p, scenario.sigma_w2)
    c_ul, g_ul = mmse_coefficients(scenario.zeta_g, p_t, tau_p, scenario.sigma_w2)
    return Gammas(gamma_dl=g_dl, gamma_ul=g_ul, c_dl=c_dl, c_ul=c_ul)


def _noise_rng(seed, tag, i, j=0):
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(tag, i, j))
    return np.random.default_rng(ss)


def pilot_observations(realization: ChannelRealization, pilots: PilotBook,
                       scenario: Scenario, noise_seed: int,
                       noiseless: bool = False):
    """Received training signals at every AP.

    Returns
    -------
    Y_t : ndarray, shape (M, Nt, tau_p)
        Transmit-antenna observation: DL users through ``f``, UL users
        through ``g_bar``.
    Y_r : ndarray, shape (M, Nr, tau_p)
        Receive-antenna observation: DL users through ``f_bar``, UL users
        through ``g``.
    """
    cfg = scenario.config
    tau_p = pilots.tau_p
    amp = np.sqrt(tau_p * cfg.p_t)
    cdl = pilots.phi_dl.conj()
    cul = pilots.phi_ul.conj()
    Y_t = amp * (np.einsum("mkn,kt->mnt", realization.f, cdl)
                 + np.einsum("mln,lt->mnt", realization.g_bar, cul))
    Y_r = amp * (np.einsum("mkn,kt->mnt", realization.f_bar, cdl)
                 + np.einsum("mln,lt->mnt", realization.g, cul))
    if not noiseless:
        M = scenario.M
        for m in range(M):
            Y_t[m] += cn_draw(_noise_rng(noise_seed, _TAG_NOISE_T, m),
                              Y_t.shape[1:], scenario.sigma_w2)
            Y_r[m] += cn_draw(_noise_rng(noise_seed, _TAG_NOISE_R, m),
                              Y_r.shape[1:], scenario.sigma_w2)
    return Y_t, Y_r


def mmse_estimate(Y_t, Y_r, pilots: PilotBook, scenario: Scenario,
                  sigma_w2: float | None = None) -> ChannelEstimates:
    """MMSE estimates of ``f`` and ``g`` from the pilot observations.

    ``sigma_w2`` overrides the scenario noise power used to form the
    coefficients (pass 0 for the noiseless limit).
    """
    cfg = scenario.config
    s2 = scenario.sigma_w2 if sigma_w2 is None else sigma_w2
    c_dl, g_dl = mmse_coefficients(scenario.zeta_f, cfg.p_t, pilots.tau_p, s2)
    c_ul, g_ul = mmse_coefficients(scenario.zeta_g, cfg.p_t, pilots.tau_p, s2)
    y_dl = np.einsum("mnt,kt->mkn", Y_t, pilots.phi_dl)
    y_ul = np.einsum("mnt,lt->mln", Y_r, pilots.phi_ul)
    return ChannelEstimates(
        f_hat=c_dl[..., None] * y_dl,
        g_hat=c_ul[..., None] * y_ul,
        gamma_dl=g_dl, gamma_ul=g_ul, c_dl=c_dl, c_ul=c_ul,
    )


def normalized_mse_analytic(zeta, p_t: float, tau_p: int, sigma_w2: float):
    """``sigma_w2 / (tau_p p_t zeta + sigma_w2)``, elementwise."""
    zeta = np.asarray(zeta, dtype=float)
    out = sigma_w2 / (tau_p * p_t * zeta + sigma_w2)
    return float(out) if out.ndim == 0 else out


def average_nmse_analytic(zeta, p_t, tau_p, sigma_w2, averaging="pooled"):
    """Average of :func:`normalized_mse_analytic` over a set of links.

    ``pooled`` weights each link by its channel power, which is what a
    ratio of summed error and channel energies converges to; ``per_link``
    is the plain mean of per-link values.
    """
    zeta = np.asarray(zeta, dtype=float).ravel()
    nmse = normalized_mse_analytic(zeta, p_t, tau_p, sigma_w2)
    if averaging == "pooled":
        return float(np.sum(zeta * nmse) / np.sum(zeta))
    if averaging == "per_link":
        return float(np.mean(nmse))
    raise ValueError(f"unknown averaging {averaging!r}")


def normalized_mse_empirical(estimates: Sequence[ChannelEstimates],
                             realizations: Sequence[ChannelRealization],
                             averaging: str = "pooled") -> dict:
    """Empirical normalized MSE of the DL (``f``) and UL (``g``) estimates.

    ``estimates[i]`` must belong to ``realizations[i]``. Returns
    ``{"dl": ..., "ul": ...}``.
    """
    if len(estimates) == 0 or len(estimates) != len(realizations):
        raise ValueError("need a non-empty, equal-length list of estimates and realizations")
    acc = EstimationStats()
    for est, real in zip(estimates, realizations):
        acc.add(real.f[None], est.f_hat[None], real.g[None], est.g_hat[None])
    return acc.nmse(averaging)


class EstimationStats:
    """Per-link running sums for estimator diagnostics.

    Feed batches with a leading block axis via :meth:`add`.
    """

    def __init__(self):
        self.n = 0
        self.sums = None

    def add(self, f, f_hat, g, g_hat):
        parts = {}
        for key, a, ah in (("dl", f, f_hat), ("ul", g, g_hat)):
            e = a - ah
            parts[key] = {
                "a2": (np.abs(a) ** 2).sum(axis=(0, -1)),
                "ah2": (np.abs(ah) ** 2).sum(axis=(0, -1)),
                "e2": (np.abs(e) ** 2).sum(axis=(0, -1)),
                "cross": (e * ah.conj()).sum(axis=(0, -1)),
            }
        if self.sums is None:
            self.sums = parts
            self.entries = {"dl": f.shape[-1], "ul": g.shape[-1]}
        else:
            for key in parts:
                for name in parts[key]:
                    self.sums[key][name] = self.sums[key][name] + parts[key][name]
        self.n += f.shape[0]

    def _count(self, key):
        return self.n * self.entries[key]

    def per_link(self, key: str) -> dict:
        """Per-link sample moments for ``key`` in ``{"dl", "ul"}``."""
        s = self.sums[key]
        cnt = self._count(key)
        out = {name: s[name] / cnt for name in ("a2", "ah2", "e2")}
        with np.errstate(invalid="ignore", divide="ignore"):
            out["nmse"] = s["e2"] / s["a2"]
            out["corr"] = np.abs(s["cross"]) / np.sqrt(s["e2"] * s["ah2"])
        return out

    def nmse(self, averaging: str = "pooled") -> dict:
        res = {}
        for key in ("dl", "ul"):
            s = self.sums[key]
            if averaging == "pooled":
                res[key] = float(s["e2"].sum() / s["a2"].sum())
            elif averaging == "per_link":
                res[key] = float(np.mean(s["e2"] / s["a2"]))
            else:
                raise ValueError(f"unknown averaging {averaging!r}")
        return res


class EstimateStream:
    """Chunked Monte Carlo source of channels together with their estimates.

    Rather than synthesizing the full pilot matrices, this draws the
    projected noise ``W phi`` directly: for orthonormal pilots it is i.i.d.
    CN(0, sigma_w2) across users and antennas, so the statistics match
    :func:`pilot_observations` followed by :func:`mmse_estimate` exactly in
    distribution at a fraction of the cost.

    Parameters
    ----------
    scenario : Scenario
    seed : int
    classes : iterable of str
        Channel classes to draw; ``f`` and ``g`` are always included.
    p_t, tau_p : optional overrides of the scenario values.
    """

    def __init__(self, scenario: Scenario, seed: int, classes=("f", "g"),
                 p_t: float | None = None, tau_p: int | None = None):
        cfg = scenario.config
        self.scenario = scenario
        self.p_t = cfg.p_t if p_t is None else p_t
        self.tau_p = cfg.tau_p if tau_p is None else tau_p
        self.channels = ChannelStream(scenario, seed, set(classes) | {"f", "g"})
        self.gammas = large_scale_gammas(scenario, self.p_t, self.tau_p)
        M, K, L = scenario.M, scenario.K, scenario.L
        self._dl = [[_noise_rng(seed, _TAG_PROJ_DL, m, k) for k in range(K)] for m in range(M)]
        self._ul = [[_noise_rng(seed, _TAG_PROJ_UL, m, l) for l in range(L)] for m in range(M)]

    def _noise(self, rngs, n, inner):
        M, J = len(rngs), (len(rngs[0]) if rngs else 0)
        out = np.empty((n, M, J, inner), dtype=complex)
        for m in range(M):
            for j in range(J):
                out[:, m, j] = cn_draw(rngs[m][j], (n, inner), self.scenario.sigma_w2)
        return out

    def next(self, n: int) -> dict:
        """Return channel arrays plus ``f_hat`` and ``g_hat`` for ``n`` blocks."""
        sc = self.scenario
        batch = self.channels.next(n)
        amp = np.sqrt(self.tau_p * self.p_t)
        y_dl = amp * batch["f"] + self._noise(self._dl, n, sc.Nt)
        y_ul = amp * batch["g"] + self._noise(self._ul, n, sc.Nr)
        batch["f_hat"] = self.gammas.c_dl[None, :, :, None] * y_dl
        batch["g_hat"] = self.gammas.c_ul[None, :, :, None] * y_ul
        return batch


def estimation_stats(scenario: Scenario, n_blocks: int, seed: int,
                     chunk: int = 5000, p_t=None, tau_p=None) -> EstimationStats:
    """Run the estimator over ``n_blocks`` fresh blocks and collect moments."""
    stream = EstimateStream(scenario, seed, p_t=p_t, tau_p=tau_p)
    acc = EstimationStats()
    done = 0
    while done < n_blocks:
        n = min(chunk, n_blocks - done)
        b = stream.next(n)
        acc.add(b["f"], b["f_hat"], b["g"], b["g_hat"])
        done += n
    return acc
