"""Max-min SINR power control by bisection over a common target.

For a target ``lam`` every DL user must reach ``lam**w_d`` and every UL user
``lam**w_u``. Each such target is a second-order-cone feasibility problem
once the powers are written through square-root slack variables. The DL
slack is normalised per link::

    mu_t[m, k] = sqrt(eta[m, k] * Nt * gamma_dl[m, k])     in [0, 1]
    alpha[l]   = sqrt(varsigma[l])                          in [0, 1]

so the per-AP budget reads ``sum_k mu_t[m, k]**2 <= 1`` and every cone
coefficient is a plain SNR, independent of the absolute channel scale.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleProblemError, InvalidConfigError
from .estimation import Gammas
from .link import PowerAllocation, dl_terms, hd_sinrs, ul_terms
from .scenario import Scenario
from .socp import Cone, SocpFeasibility

log = logging.getLogger(__name__)

LINKS = ("fd", "hd_dl", "hd_ul")


@dataclass
class MaxMinProblem:
    """Weighted max-min problem.

    ``link`` selects the full-duplex problem (``"fd"``) or one half-duplex
    phase (``"hd_dl"``, ``"hd_ul"``) in which the other direction is silent
    and all cross-direction interference disappears.
    """

    scenario: Scenario
    gammas: Gammas
    w_d: float = 1.0
    w_u: float = 1.0
    lambda_min: float = 0.0
    lambda_max: float | None = None
    epsilon: float = 1e-3
    link: str = "fd"
    max_doublings: int = 20
    max_iters: int | None = None

    def __post_init__(self):
        if not (self.w_d > 0 and self.w_u > 0):
            raise InvalidConfigError("weights must be positive")
        if not self.epsilon > 0:
            raise InvalidConfigError("epsilon must be positive")
        if self.lambda_max is not None and not self.lambda_min < self.lambda_max:
            raise InvalidConfigError("need lambda_min < lambda_max")
        if self.link not in LINKS:
            raise InvalidConfigError(f"link must be one of {LINKS}")

    @property
    def has_dl(self):
        return self.link in ("fd", "hd_dl") and self.scenario.K > 0

    @property
    def has_ul(self):
        return self.link in ("fd", "hd_ul") and self.scenario.L > 0


@dataclass
class FeasibilityCertificate:
    feasible: bool
    mu: np.ndarray | None = None          # normalised DL slack, (M, K)
    alpha_slack: np.ndarray | None = None  # (L,)
    max_violation: float = 0.0
    status: str = ""


@dataclass
class IterationRecord:
    iteration: int
    lambda_lo: float
    lambda_hi: float
    feasible: bool


@dataclass
class MaxMinResult:
    allocation: PowerAllocation
    lambda_star: float
    iteration_log: list = field(default_factory=list)
    certificate: FeasibilityCertificate | None = None


def _snrs(sc: Scenario):
    cfg = sc.config
    return cfg.p_d / sc.sigma_w2, cfg.p_u / sc.sigma_w2


def _geometry(problem: MaxMinProblem):
    """Normalised coefficient arrays shared by cones and the power solve."""
    sc, gm = problem.scenario, problem.gammas
    rho_d, rho_u = _snrs(sc)
    gd, gu = gm.gamma_dl, gm.gamma_ul
    Gam = gu.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(Gam > 0, 1.0 / Gam, 0.0)
    return {
        "rho_d": rho_d, "rho_u": rho_u, "gd": gd, "Gam": Gam,
        # UL interference seen by user l from UL user j, per unit alpha_j^2
        "J": rho_u * (gu.T @ sc.zeta_g) * inv[:, None],
        # UL leakage at user l from DL slack mu_t[n, k]^2 (independent of k)
        "V": rho_d * sc.config.theta_si * (gu.T @ sc.zeta_Q) * inv[:, None],
    }


def build_cones(problem: MaxMinProblem, lam: float):
    sc = problem.scenario
    M, K, L = sc.M, sc.K, sc.L
    Nt, Nr = sc.Nt, sc.Nr
    geo = _geometry(problem)
    n = M * K + L
    fd = problem.link == "fd"
    cones = []
    if problem.has_dl:
        lam_d = lam ** problem.w_d
        for k in range(K):
            c = np.zeros(n)
            idx = np.arange(M) * K + k
            c[idx] = np.sqrt(Nt * geo["rho_d"] * geo["gd"][:, k] / lam_d)
            rows = [np.diag(np.repeat(np.sqrt(geo["rho_d"] * sc.zeta_f[:, k]), K))]
            rows[0] = np.hstack([rows[0], np.zeros((M * K, L))])
            if fd and L:
                rows.append(np.hstack([np.zeros((L, M * K)),
                                       np.diag(np.sqrt(geo["rho_u"] * sc.zeta_h[k]))]))
            rows.append(np.zeros((1, n)))
            A = np.vstack(rows)
            b = np.zeros(A.shape[0])
            b[-1] = 1.0
            cones.append(Cone(A, b, c, 0.0))
    if problem.has_ul:
        lam_u = lam ** problem.w_u
        for l in range(L):
            c = np.zeros(n)
            c[M * K + l] = np.sqrt(geo["rho_u"] * Nr * geo["Gam"][l] / lam_u)
            rows = [np.hstack([np.zeros((L, M * K)), np.diag(np.sqrt(geo["J"][l]))])]
            if fd and K:
                rows.append(np.hstack([np.diag(np.repeat(np.sqrt(geo["V"][l]), K)),
                                       np.zeros((M * K, L))]))
            rows.append(np.zeros((1, n)))
            A = np.vstack(rows)
            b = np.zeros(A.shape[0])
            b[-1] = 1.0
            cones.append(Cone(A, b, c, 0.0))
    return cones


def _quad(sc: Scenario):
    M, K, L = sc.M, sc.K, sc.L
    n = M * K + L
    W = np.zeros((M + L, n))
    for m in range(M):
        W[m, m * K:(m + 1) * K] = 1.0
    for l in range(L):
        W[M + l, M * K + l] = 1.0
    return W


def feasibility_check(problem: MaxMinProblem, lambda_c: float) -> FeasibilityCertificate:
    """Decide whether every user can reach its target at ``lambda_c``.

    Solver non-convergence yields ``status="inconclusive"`` with
    ``feasible=False``.
    """
    if not lambda_c > 0:
        raise InvalidConfigError("lambda_c must be positive")
    sc = problem.scenario
    M, K, L = sc.M, sc.K, sc.L
    solver = SocpFeasibility(build_cones(problem, lambda_c), _quad(sc))
    x0 = np.concatenate([np.full(M * K, 0.5 / math.sqrt(max(K, 1))), np.full(L, 0.5)])
    res = solver.solve(x0)
    x = np.abs(res.x)
    mu, alpha = x[:M * K].reshape(M, K), x[M * K:]
    if res.status == "feasible":
        return FeasibilityCertificate(True, mu, alpha, 0.0, res.status)
    if res.status == "inconclusive":
        log.info("feasibility solve inconclusive at lambda=%g (t=%g)", lambda_c, res.t)
    return FeasibilityCertificate(False, mu, alpha, float(max(res.t, 0.0)), res.status)


def to_allocation(problem: MaxMinProblem, mu: np.ndarray, alpha: np.ndarray) -> PowerAllocation:
    """Convert normalised slack values to ``(eta, varsigma)``."""
    sc = problem.scenario
    gd = problem.gammas.gamma_dl
    with np.errstate(divide="ignore", invalid="ignore"):
        eta = np.where(gd > 0, mu**2 / (sc.Nt * gd), 0.0)
    if problem.link == "hd_ul":
        eta = np.zeros_like(eta)
    varsigma = np.minimum(alpha**2, 1.0)
    if problem.link == "hd_dl":
        varsigma = np.zeros_like(varsigma)
    return PowerAllocation(eta=eta, varsigma=varsigma)


def attained_sinrs(problem: MaxMinProblem, alloc: PowerAllocation):
    """(DL, UL) SINRs of ``alloc`` under the problem's link model."""
    sc, gm = problem.scenario, problem.gammas
    if problem.link == "fd":
        return dl_terms(sc, gm, alloc).sinr(), ul_terms(sc, gm, alloc).sinr()
    return hd_sinrs(sc, gm, alloc, alloc)


def equalize_powers(problem: MaxMinProblem, cert: FeasibilityCertificate, lam: float):
    """Lowest per-user power scaling that meets every target exactly.

    Beam shapes (the relative ``mu`` across APs) are kept from ``cert``;
    user k's DL column is scaled by ``sqrt(p_k)`` and UL user l transmits
    ``q_l = alpha_l**2``. Meeting the targets with equality is a linear
    system. Because ``cert`` is feasible, its solution is componentwise no
    larger than the certificate's own powers, so all budgets still hold.
    Returns ``None`` if the system is singular or the solution falls
    outside the budgets.
    """
    sc = problem.scenario
    M, K, L = sc.M, sc.K, sc.L
    geo = _geometry(problem)
    d = cert.mu
    fd = problem.link == "fd"
    dl, ul = problem.has_dl, problem.has_ul
    lam_d, lam_u = lam ** problem.w_d, lam ** problem.w_u
    n = (K if dl else 0) + (L if ul else 0)
    if n == 0:
        return None
    A = np.zeros((n, n))
    rhs = np.zeros(n)
    ul0 = K if dl else 0
    if dl:
        S = sc.Nt * geo["rho_d"] * ((np.sqrt(geo["gd"]) * d).sum(axis=0)) ** 2
        I = geo["rho_d"] * (sc.zeta_f.T @ d**2)          # I[k, i]
        A[:K, :K] = np.diag(S) - lam_d * I
        if fd and ul:
            A[:K, ul0:] = -lam_d * geo["rho_u"] * sc.zeta_h
        rhs[:K] = lam_d
    if ul:
        T = geo["rho_u"] * sc.Nr * geo["Gam"]
        A[ul0:, ul0:] = np.diag(T) - lam_u * geo["J"]
        if fd and dl:
            A[ul0:, :K] = -lam_u * geo["V"] @ d**2        # V[l, n] * d[n, k]^2
        rhs[ul0:] = lam_u
    try:
        sol = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(sol)) or np.any(sol < -1e-12) or np.any(sol > 1 + 1e-9):
        return None
    sol = np.clip(sol, 0.0, 1.0)
    mu = d * np.sqrt(sol[:K])[None, :] if dl else d
    alpha = np.sqrt(sol[ul0:]) if ul else cert.alpha_slack
    return FeasibilityCertificate(True, mu, alpha, 0.0, "equalized")


def sinr_upper_bound(problem: MaxMinProblem) -> float:
    """Largest interference-free single-user target any user could reach.

    A DL user alone with every serving AP at full power gets at most
    ``rho_d Nt (sum_m sqrt(gamma_mk))**2``; an UL user at most
    ``rho_u Nr sum_m gamma_ml``. Converted to the common target scale via
    the weights.
    """
    geo = _geometry(problem)
    sc = problem.scenario
    best = 0.0
    if problem.has_dl:
        b = geo["rho_d"] * sc.Nt * np.sqrt(geo["gd"]).sum(axis=0) ** 2
        best = max(best, float(b.max()) ** (1.0 / problem.w_d))
    if problem.has_ul:
        b = geo["rho_u"] * sc.Nr * geo["Gam"]
        best = max(best, float(b.max()) ** (1.0 / problem.w_u))
    return best


def solve_p1_maxmin(problem: MaxMinProblem) -> MaxMinResult:
    """Bisection on the common target.

    ``lambda_max`` defaults to twice :func:`sinr_upper_bound` and is doubled
    until infeasible. The returned allocation comes from the last feasible
    certificate, rescaled by :func:`equalize_powers` so every user of a
    direction sits exactly at the common target.
    """
    sc = problem.scenario
    lo = problem.lambda_min
    if lo > 0:
        cert_lo = feasibility_check(problem, lo)
        if not cert_lo.feasible:
            raise InfeasibleProblemError(f"infeasible already at lambda_min={lo}")
    else:
        cert_lo = FeasibilityCertificate(True, np.zeros((sc.M, sc.K)), np.zeros(sc.L), 0.0, "trivial")

    hi = problem.lambda_max
    if hi is None:
        hi = max(2.0 * sinr_upper_bound(problem), lo + problem.epsilon)
        for _ in range(problem.max_doublings):
            cert = feasibility_check(problem, hi)
            if not cert.feasible:
                break
            lo, cert_lo = hi, cert
            hi *= 2.0
        else:
            raise InfeasibleProblemError("could not bracket lambda_max")

    history = []
    it = 0
    while hi - lo >= problem.epsilon:
        if problem.max_iters is not None and it >= problem.max_iters:
            log.info("bisection stopped at max_iters=%d (gap %g)", it, hi - lo)
            break
        mid = 0.5 * (lo + hi)
        cert = feasibility_check(problem, mid)
        it += 1
        if cert.feasible:
            lo, cert_lo = mid, cert
        else:
            hi = mid
        history.append(IterationRecord(it, lo, hi, cert.feasible))

    final = cert_lo
    if lo > 0:
        eq = equalize_powers(problem, cert_lo, lo)
        if eq is not None:
            final = eq
        else:
            log.info("power equalization rejected; keeping raw certificate")
    alloc = to_allocation(problem, final.mu, final.alpha_slack)
    return MaxMinResult(alloc, lo, history, final)


def solve_hd_maxmin(scenario: Scenario, gammas: Gammas, epsilon: float = 1e-3):
    """Max-min allocations for the two half-duplex phases.

    Returns ``(alloc_dl, alloc_ul, lambda_dl, lambda_ul)``; ``alloc_dl`` has
    zero UL power and ``alloc_ul`` zero DL power.
    """
    rd = solve_p1_maxmin(MaxMinProblem(scenario, gammas, epsilon=epsilon, link="hd_dl"))
    ru = solve_p1_maxmin(MaxMinProblem(scenario, gammas, epsilon=epsilon, link="hd_ul"))
    return rd.allocation, ru.allocation, rd.lambda_star, ru.lambda_star


@dataclass
class AllocationReport:
    per_ap_slack: np.ndarray
    ue_low_slack: np.ndarray
    ue_high_slack: np.ndarray
    eta_nonnegative: bool

    @property
    def valid(self) -> bool:
        tol = -1e-9
        return bool(self.eta_nonnegative and np.all(self.per_ap_slack >= tol)
                    and np.all(self.ue_low_slack >= tol) and np.all(self.ue_high_slack >= tol))


def validate_allocation(alloc: PowerAllocation, scenario: Scenario, gammas: Gammas) -> AllocationReport:
    """Per-AP budget slack ``1 - Nt sum_k eta gamma`` and UL box slacks."""
    load = scenario.Nt * np.sum(alloc.eta * gammas.gamma_dl, axis=1)
    vs = np.asarray(alloc.varsigma, dtype=float)
    return AllocationReport(1.0 - load, vs.copy(), 1.0 - vs, bool(np.all(alloc.eta >= 0)))
