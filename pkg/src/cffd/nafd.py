"""Network-assisted full duplex: half-duplex APs split into DL and UL roles.

Every AP is switched off, serves DL users (``a_m = 1``), serves UL users
(``b_m = 1``) or, when FD emulation is allowed, both. DL users see MRT from
the DL APs plus leakage from UL users; the CPU decodes UL users from the UL
APs' MRC outputs combined with large-scale fading decoding (LSFD) weights.
UL APs also hear the DL APs through the inter-AP channels, and an AP in
both roles hears itself through the residual self-interference channel.

SNRs are normalised to unit noise: ``rho_d = p_d / sigma_w2`` and
``rho_u = p_u / sigma_w2``. The noise power reappears only in the power
consumption model. All heavy functions take a leading batch axis over
candidate assignments so that mode-space searches run vectorised.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import ConstraintViolationError, InvalidConfigError
from .estimation import Gammas
from .link import prelog
from .scenario import Scenario

MODES = {"off": (0, 0), "dl": (1, 0), "ul": (0, 1), "fd": (1, 1)}
MAX_EXHAUSTIVE_M = 14


@dataclass(frozen=True)
class PowerModelParams:
    """Power consumption constants (Watts unless noted).

    ``P_bt`` is in W per bit/s. ``zeta_amp`` may be a scalar or one value
    per AP. ``sigma_n2=None`` means the scenario noise power.
    """

    zeta_amp: float | tuple = 0.4
    chi: float = 0.3
    P_cdl: float = 0.2
    P_cul: float = 0.2
    P_fdl: float = 0.825
    P_ful: float = 0.825
    P_bt: float = 2.5e-10
    P_U_fixed: float = 0.4
    B: float = 50e6
    sigma_n2: float | None = None

    def validate(self):
        amps = np.atleast_1d(np.asarray(self.zeta_amp, dtype=float))
        if np.any(amps <= 0) or np.any(amps > 1) or not 0 < self.chi <= 1:
            raise InvalidConfigError("amplifier efficiencies must lie in (0, 1]")
        for name in ("P_cdl", "P_cul", "P_fdl", "P_ful", "P_bt", "P_U_fixed"):
            if getattr(self, name) < 0:
                raise InvalidConfigError(f"{name} must be nonnegative")
        if self.B < 0:
            raise InvalidConfigError("B must be nonnegative")
        return self


@dataclass(frozen=True)
class NafdOptions:
    """Alternative readings of the NAFD power and fronthaul model.

    fronthaul_gate : ``"literal"`` gates the UL sum rate by ``a_m`` and the
        DL sum rate by ``b_m``; ``"natural"`` (alias ``"swapped"``) does the
        opposite.
    dl_power : ``"literal"`` makes the DL transmit power linear in ``mu``;
        ``"quadratic"`` uses ``mu**2`` as the per-AP budget does.
    allow_fd : permit ``a_m = b_m = 1``.
    rounds : block-coordinate rounds of the inner optimiser.
    grid : number of points in each scaling line search.
    """

    fronthaul_gate: str = "literal"
    dl_power: str = "literal"
    allow_fd: bool = False
    rounds: int = 3
    grid: int = 24

    def __post_init__(self):
        if self.fronthaul_gate not in ("literal", "natural", "swapped"):
            raise InvalidConfigError(f"unknown fronthaul gate {self.fronthaul_gate!r}")
        if self.dl_power not in ("literal", "quadratic"):
            raise InvalidConfigError(f"unknown dl_power {self.dl_power!r}")


@dataclass(frozen=True, eq=False)
class ModeAssignment:
    a: np.ndarray         # (M,) DL flags
    b: np.ndarray         # (M,) UL flags
    mu: np.ndarray        # (M, K) DL amplitudes, sum_k N gamma mu^2 <= a_m
    varsigma: np.ndarray  # (L,)
    alpha: np.ndarray     # (M, L) LSFD weights


def nafd_inter_ap_map(scenario: Scenario) -> np.ndarray:
    """Inter-AP gains for NAFD: raw AP-to-AP gains, ``theta_si`` on the diagonal."""
    z = np.array(scenario.zeta_ap, dtype=float)
    np.fill_diagonal(z, scenario.config.theta_si)
    return z


class _Ctx:
    """Constants shared by every evaluation on one scenario."""

    def __init__(self, scenario: Scenario, gammas: Gammas, params: PowerModelParams | None = None,
                 options: NafdOptions | None = None):
        cfg = scenario.config
        self.sc = scenario
        self.M, self.K, self.L = scenario.M, scenario.K, scenario.L
        self.Nt, self.Nr = scenario.Nt, scenario.Nr
        self.rho_d = cfg.p_d / scenario.sigma_w2
        self.rho_u = cfg.p_u / scenario.sigma_w2
        self.gd, self.gu = gammas.gamma_dl, gammas.gamma_ul
        self.zf, self.zg, self.zh = scenario.zeta_f, scenario.zeta_g, scenario.zeta_h
        self.zQ = nafd_inter_ap_map(scenario)
        self.prelog = prelog(scenario)
        self.params = params
        self.opts = options or NafdOptions()
        if params is not None:
            params.validate()
            self.sigma_n2 = scenario.sigma_w2 if params.sigma_n2 is None else params.sigma_n2
            self.amp = np.broadcast_to(np.asarray(params.zeta_amp, dtype=float), (self.M,))

    # ---- SE, batched over a leading axis
    def dl_sinr(self, a, mu, vs):
        coh = self.Nt * np.einsum("bm,bmk,mk->bk", a, mu, self.gd)
        P = a * (mu**2 * self.gd[None]).sum(axis=2)              # (B, M)
        omega = self.rho_d * self.Nt * P @ self.zf + self.rho_u * vs @ self.zh.T + 1.0
        return self.rho_d * coh**2 / omega

    def ul_parts(self, a, b, mu, vs):
        """Numerator weights ``c`` and diagonal denominator ``D``, (B, M, L)."""
        P = a * (mu**2 * self.gd[None]).sum(axis=2)               # (B, M)
        ul_load = vs @ self.zg.T                                  # (B, M)
        leak = P @ self.zQ.T                                      # (B, M)
        D = b[:, :, None] * self.gu[None] * (
            self.rho_u * self.Nr * ul_load[:, :, None] + self.Nr
            + self.rho_d * self.Nt * self.Nr * leak[:, :, None])
        c = self.Nr * np.sqrt(b[:, :, None] * vs[:, None, :]) * self.gu[None]
        return c, D

    def ul_sinr(self, a, b, mu, vs, alpha):
        c, D = self.ul_parts(a, b, mu, vs)
        num = self.rho_u * (c * alpha).sum(axis=1) ** 2
        den = (alpha**2 * D).sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(num > 0, num / np.where(den > 0, den, 1.0), 0.0)

    def lsfd(self, a, b, mu, vs):
        c, D = self.ul_parts(a, b, mu, vs)
        with np.errstate(invalid="ignore", divide="ignore"):
            w = np.where(D > 0, c / np.where(D > 0, D, 1.0), 0.0)
            peak = np.abs(w).max(axis=1, keepdims=True)
            alpha = np.where(peak > 0, w / np.where(peak > 0, peak, 1.0), 0.0)
            sinr = self.rho_u * np.where(D > 0, c**2 / np.where(D > 0, D, 1.0), 0.0).sum(axis=1)
        return alpha, sinr

    def se(self, sinr):
        return self.prelog * np.log2(1.0 + sinr)

    # ---- power model, batched
    def fronthaul(self, a, b, dl_se, ul_se):
        sdl = dl_se.sum(axis=1, keepdims=True)
        sul = ul_se.sum(axis=1, keepdims=True)
        if self.opts.fronthaul_gate == "literal":
            return self.params.B * (a * sul + b * sdl)
        return self.params.B * (a * sdl + b * sul)

    def total_power(self, a, b, mu, vs, dl_se, ul_se):
        p = self.params
        amp_mu = mu if self.opts.dl_power == "literal" else mu**2
        dl_tx = (self.Nt * self.rho_d * self.sigma_n2 / self.amp[None]
                 * (self.gd[None] * amp_mu).sum(axis=2)).sum(axis=1)
        ul_tx = (self.rho_u * self.sigma_n2 / p.chi) * vs.sum(axis=1)
        traffic = p.P_bt * self.fronthaul(a, b, dl_se, ul_se).sum(axis=1)
        circuit = (a * (self.Nt * p.P_cdl + p.P_fdl)).sum(axis=1) \
            + (b * (self.Nr * p.P_cul + p.P_ful)).sum(axis=1)
        return dl_tx + ul_tx + p.P_U_fixed + traffic + circuit

    def evaluate(self, a, b, mu, vs, alpha, qos):
        dl_se = self.se(self.dl_sinr(a, mu, vs))
        ul_se = self.se(self.ul_sinr(a, b, mu, vs, alpha))
        ptot = self.total_power(a, b, mu, vs, dl_se, ul_se)
        sum_se = dl_se.sum(axis=1) + ul_se.sum(axis=1)
        ee = self.params.B * sum_se / ptot
        viol = (np.maximum(qos[0] - dl_se, 0.0).sum(axis=1)
                + np.maximum(qos[1] - ul_se, 0.0).sum(axis=1))
        return {"dl_se": dl_se, "ul_se": ul_se, "P_total": ptot,
                "sum_se": sum_se, "ee": ee, "violation": viol, "feasible": viol <= 0.0}


def _b1(x):
    return np.asarray(x, dtype=float)[None]


def check_assignment(scenario: Scenario, gammas: Gammas, asg: ModeAssignment,
                     allow_fd: bool = False, tol: float = 1e-9):
    """Raise :class:`ConstraintViolationError` on any broken constraint."""
    a, b = np.asarray(asg.a), np.asarray(asg.b)
    problems = []
    if not (np.isin(a, (0, 1)).all() and np.isin(b, (0, 1)).all()):
        problems.append("mode flags must be 0 or 1")
    if not allow_fd and np.any(a * b):
        problems.append("an AP is in both modes but FD emulation is off")
    load = scenario.Nt * (gammas.gamma_dl * asg.mu**2).sum(axis=1)
    if np.any(load > a + tol):
        problems.append("per-AP power budget exceeded")
    if np.any(np.abs(asg.alpha) > 1 + tol):
        problems.append("|alpha| > 1")
    vs = np.asarray(asg.varsigma)
    if np.any(vs < -tol) or np.any(vs > 1 + tol):
        problems.append("varsigma outside [0, 1]")
    if problems:
        raise ConstraintViolationError("; ".join(problems))


def nafd_dl_se(scenario: Scenario, gammas: Gammas, assignment: ModeAssignment,
               strict: bool = False, allow_fd: bool = False) -> np.ndarray:
    """Per-DL-user SE (bit/s/Hz)."""
    if strict:
        check_assignment(scenario, gammas, assignment, allow_fd)
    ctx = _Ctx(scenario, gammas)
    s = ctx.dl_sinr(_b1(assignment.a), _b1(assignment.mu), _b1(assignment.varsigma))
    return ctx.se(s)[0]


def nafd_ul_sinr(scenario: Scenario, gammas: Gammas, assignment: ModeAssignment) -> np.ndarray:
    ctx = _Ctx(scenario, gammas)
    return ctx.ul_sinr(_b1(assignment.a), _b1(assignment.b), _b1(assignment.mu),
                       _b1(assignment.varsigma), _b1(assignment.alpha))[0]


def nafd_ul_se(scenario: Scenario, gammas: Gammas, assignment: ModeAssignment,
               strict: bool = False, allow_fd: bool = False) -> np.ndarray:
    """Per-UL-user SE (bit/s/Hz) with the assignment's LSFD weights."""
    if strict:
        check_assignment(scenario, gammas, assignment, allow_fd)
    ctx = _Ctx(scenario, gammas)
    return ctx.se(nafd_ul_sinr(scenario, gammas, assignment)[None])[0]


def optimal_lsfd(scenario: Scenario, gammas: Gammas, a, b, mu, varsigma):
    """SINR-maximising LSFD weights.

    The UL SINR is ``rho_u (c^T alpha)^2 / (alpha^T diag(D) alpha)``, so by
    Cauchy-Schwarz the best weights are ``alpha_m ~ c_m / D_m``. They are
    scaled so the largest equals one. Returns ``(alpha, sinr)`` with shapes
    (M, L) and (L,); a user no UL AP can hear gets zero weights and SINR 0.
    """
    ctx = _Ctx(scenario, gammas)
    alpha, sinr = ctx.lsfd(_b1(a), _b1(b), _b1(mu), _b1(varsigma))
    return alpha[0], sinr[0]


def fronthaul_rate(assignment: ModeAssignment, dl_se, ul_se, B: float,
                   gate: str = "literal") -> np.ndarray:
    """Per-AP fronthaul rate in bit/s (see :class:`NafdOptions` for ``gate``)."""
    a = np.asarray(assignment.a, dtype=float)
    b = np.asarray(assignment.b, dtype=float)
    sdl, sul = float(np.sum(dl_se)), float(np.sum(ul_se))
    if gate == "literal":
        return B * (a * sul + b * sdl)
    if gate in ("natural", "swapped"):
        return B * (a * sdl + b * sul)
    raise InvalidConfigError(f"unknown fronthaul gate {gate!r}")


def total_power(assignment: ModeAssignment, dl_se, ul_se, params: PowerModelParams,
                scenario: Scenario, gammas: Gammas, options: NafdOptions | None = None) -> float:
    """Network power consumption in Watts for the given per-user SEs."""
    ctx = _Ctx(scenario, gammas, params, options)
    return float(ctx.total_power(_b1(assignment.a), _b1(assignment.b), _b1(assignment.mu),
                                 _b1(assignment.varsigma), _b1(dl_se), _b1(ul_se))[0])


def energy_efficiency(assignment: ModeAssignment, scenario: Scenario, gammas: Gammas,
                      params: PowerModelParams, options: NafdOptions | None = None) -> float:
    """``B * (sum DL SE + sum UL SE) / P_total`` in bit/Joule."""
    ctx = _Ctx(scenario, gammas, params, options)
    r = ctx.evaluate(_b1(assignment.a), _b1(assignment.b), _b1(assignment.mu),
                     _b1(assignment.varsigma), _b1(assignment.alpha), (0.0, 0.0))
    return float(r["ee"][0])


# --------------------------------------------------------------------- P2

def full_power_mu(gamma_dl: np.ndarray, a, N: int) -> np.ndarray:
    """Uniform full-power DL amplitudes ``a_m / sqrt(N sum_k gamma_mk)``.

    ``a`` may carry leading batch axes.
    """
    a = np.asarray(a, dtype=float)
    tot = N * gamma_dl.sum(axis=1)
    with np.errstate(divide="ignore"):
        base = np.where(tot > 0, 1.0 / np.sqrt(tot), 0.0)
    return (a[..., :, None] * base[:, None]) * np.ones(gamma_dl.shape)


def _pick(res, n_cand, G):
    """Index into a (n_cand * G) batch of the best grid point per candidate."""
    feas = res["feasible"].reshape(n_cand, G)
    ee = res["ee"].reshape(n_cand, G)
    viol = res["violation"].reshape(n_cand, G)
    score = np.where(feas, ee, -np.inf)
    best_f = np.argmax(score, axis=1)
    best_v = np.argmax(-viol, axis=1)
    return np.where(feas.any(axis=1), best_f, best_v)


def optimize_inner(ctx: _Ctx, a, b, qos):
    """Block-coordinate ascent over (alpha, varsigma, mu) for fixed modes.

    Starts from full-power DL and UL, then repeats ``rounds`` times: optimal
    LSFD weights, a line search over a common UL power scale, and a line
    search over a common DL power scale. Candidates are ranked first by
    QoS feasibility, then by EE (feasible) or by total QoS shortfall.
    """
    n = a.shape[0]
    mu = full_power_mu(ctx.gd, a, ctx.Nt)
    vs = np.ones((n, ctx.L))
    G = ctx.opts.grid
    scales = np.concatenate([[1.0], np.geomspace(1.0, 1e-3, G)[1:]])
    alpha = None
    for _ in range(ctx.opts.rounds):
        alpha, _ = ctx.lsfd(a, b, mu, vs)
        # common UL scale
        vs_t = (vs[:, None, :] * scales[None, :, None]).reshape(n * G, ctx.L)
        rep = lambda x: np.repeat(x, G, axis=0)
        res = ctx.evaluate(rep(a), rep(b), rep(mu), vs_t, rep(alpha), qos)
        idx = _pick(res, n, G)
        vs = vs * scales[idx][:, None]
        # common DL scale (amplitude scale = sqrt of power scale)
        mu_t = (mu[:, None] * np.sqrt(scales)[None, :, None, None]).reshape(n * G, ctx.M, ctx.K)
        res = ctx.evaluate(rep(a), rep(b), mu_t, rep(vs), rep(alpha), qos)
        idx = _pick(res, n, G)
        mu = mu * np.sqrt(scales[idx])[:, None, None]
    alpha, _ = ctx.lsfd(a, b, mu, vs)
    res = ctx.evaluate(a, b, mu, vs, alpha, qos)
    res.update({"mu": mu, "varsigma": vs, "alpha": alpha, "a": a, "b": b})
    return res


@dataclass
class CandidateRow:
    a_mask: int
    b_mask: int
    feasible: bool
    ee: float
    sum_se: float
    P_total: float
    violation: float


@dataclass
class P2Result:
    assignment: ModeAssignment
    ee: float
    feasible: bool
    violation: float
    sum_se: float
    P_total: float
    log: list = field(default_factory=list)

    @property
    def status(self):
        return "optimal" if self.feasible else "infeasible"


def _mask(bits) -> int:
    return int(sum(int(v) << i for i, v in enumerate(bits)))


def _mode_codes(allow_fd):
    return ["off", "dl", "ul", "fd"] if allow_fd else ["off", "dl", "ul"]


def evaluate_assignments(scenario: Scenario, gammas: Gammas, params: PowerModelParams,
                         qos, a, b, options: NafdOptions | None = None) -> dict:
    """Run the inner optimiser on a batch of (a, b) mode vectors, shape (n, M)."""
    ctx = _Ctx(scenario, gammas, params, options)
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    return optimize_inner(ctx, a, b, tuple(qos))


def _rows(res):
    out = []
    for i in range(res["a"].shape[0]):
        out.append(CandidateRow(_mask(res["a"][i]), _mask(res["b"][i]), bool(res["feasible"][i]),
                                float(res["ee"][i]), float(res["sum_se"][i]),
                                float(res["P_total"][i]), float(res["violation"][i])))
    return out


def _better(r1, r2) -> bool:
    """Is candidate r1 strictly better than r2?"""
    if r1.feasible != r2.feasible:
        return r1.feasible
    if r1.feasible:
        return r1.ee > r2.ee
    return r1.violation < r2.violation


def _greedy_pick(res, cur: CandidateRow):
    """Index of the next greedy move, or None when no move helps.

    Feasible moves are ranked by EE and must beat a feasible current point.
    While the QoS floors are unmet, only moves that shrink the shortfall
    qualify, and among them the highest EE wins.
    """
    feas = res["feasible"]
    if feas.any():
        ee = np.where(feas, res["ee"], -np.inf)
        j = int(np.argmax(ee))
        return j if not cur.feasible or ee[j] > cur.ee else None
    if cur.feasible:
        return None
    better = res["violation"] < cur.violation
    if not better.any():
        return None
    return int(np.argmax(np.where(better, res["ee"], -np.inf)))


def _to_result(res, i, log) -> P2Result:
    asg = ModeAssignment(res["a"][i].astype(int), res["b"][i].astype(int), res["mu"][i],
                         res["varsigma"][i], res["alpha"][i])
    return P2Result(asg, float(res["ee"][i]), bool(res["feasible"][i]),
                    float(res["violation"][i]), float(res["sum_se"][i]),
                    float(res["P_total"][i]), log)


def solve_p2(scenario: Scenario, gammas: Gammas, params: PowerModelParams, qos,
             method: str = "exhaustive", options: NafdOptions | None = None,
             chunk: int = 1024) -> P2Result:
    """Choose AP modes and powers to maximise EE under per-user SE floors.

    ``qos = (S_dl_min, S_ul_min)``. ``method="exhaustive"`` scores every
    mode vector (3**M, or 4**M with FD emulation); ``"greedy"`` starts with
    all APs off and keeps applying the single-AP mode change with the
    highest EE (see :func:`_greedy_pick`). If nothing meets the QoS floors
    the least-violating candidate is returned with ``feasible=False``.
    """
    options = options or NafdOptions()
    ctx = _Ctx(scenario, gammas, params, options)
    qos = tuple(float(q) for q in qos)
    codes = [MODES[c] for c in _mode_codes(options.allow_fd)]
    M = scenario.M
    if method == "exhaustive":
        if M > MAX_EXHAUSTIVE_M:
            raise InvalidConfigError(f"exhaustive search needs M <= {MAX_EXHAUSTIVE_M}")
        combos = np.array(list(itertools.product(range(len(codes)), repeat=M)))
        table = np.array(codes, dtype=float)
        best = None
        log = []
        for s in range(0, len(combos), chunk):
            part = table[combos[s:s + chunk]]               # (n, M, 2)
            res = optimize_inner(ctx, part[..., 0], part[..., 1], qos)
            rows = _rows(res)
            log.extend(rows)
            for i, row in enumerate(rows):
                if best is None or _better(row, best[0]):
                    best = (row, _to_result(res, i, None))
        result = best[1]
        result.log = log
        return result
    if method == "greedy":
        state = np.zeros(M, dtype=int)   # index into codes
        table = np.array(codes, dtype=float)
        res = optimize_inner(ctx, table[state][None, :, 0], table[state][None, :, 1], qos)
        cur_row = _rows(res)[0]
        cur = _to_result(res, 0, None)
        log = [cur_row]
        while True:
            moves = [(m, c) for m in range(M) for c in range(len(codes)) if c != state[m]]
            cand = np.repeat(state[None], len(moves), axis=0)
            for i, (m, c) in enumerate(moves):
                cand[i, m] = c
            part = table[cand]
            res = optimize_inner(ctx, part[..., 0], part[..., 1], qos)
            rows = _rows(res)
            log.extend(rows)
            j = _greedy_pick(res, cur_row)
            if j is None:
                break
            state = cand[j]
            cur_row, cur = rows[j], _to_result(res, j, None)
        cur.log = log
        return cur
    raise InvalidConfigError(f"unknown method {method!r}")


def fixed_assignment(M: int, pattern: str):
    """Mode vectors for the reference layouts.

    ``pattern`` is one of ``all_dl``, ``all_ul``, ``all_fd`` or
    ``half_half`` (first half DL, rest UL).
    """
    if pattern == "all_dl":
        return np.ones(M), np.zeros(M)
    if pattern == "all_ul":
        return np.zeros(M), np.ones(M)
    if pattern == "all_fd":
        return np.ones(M), np.ones(M)
    if pattern == "half_half":
        a = (np.arange(M) < M // 2).astype(float)
        return a, 1.0 - a
    raise ValueError(f"unknown pattern {pattern!r}")


def default_nafd_config(**overrides):
    """Scenario settings used for NAFD studies (1 W DL, 0.2 W UL, 50 MHz)."""
    from .scenario import ScenarioConfig

    base = dict(p_d=1.0, p_u=0.2, bandwidth=50e6)
    base.update(overrides)
    return ScenarioConfig(**base)


__all__ = [
    "ModeAssignment", "PowerModelParams", "NafdOptions", "P2Result", "CandidateRow",
    "nafd_dl_se", "nafd_ul_se", "nafd_ul_sinr", "optimal_lsfd", "fronthaul_rate",
    "total_power", "energy_efficiency", "solve_p2", "evaluate_assignments",
    "fixed_assignment", "full_power_mu", "nafd_inter_ap_map", "check_assignment",
    "default_nafd_config",
]
