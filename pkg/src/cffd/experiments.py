"""Experiment configuration, sweep presets and CSV result tables.

Config files are INI with three sections::

    [scenario]        # ScenarioConfig fields
    M = 16
    p_d_dbm = 23      # powers need an explicit _dbm or _w suffix
    theta_si_db = -70 # or theta_si = 1e-7 (linear)

    [experiment]
    name = fd_vs_hd
    sweep_param = theta_si_db
    sweep_values = -80, -60, -40, -20
    n_drops = 10

    [power_model]     # NAFD only
    P_cdl_w = 0.2

Every drop ``i`` of a run uses seeds derived from ``(seed, i)`` only, so the
numbers do not depend on the thread count and sweep points share drops.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .errors import ConfigParseError, InvalidConfigError
from .estimation import (EstimationStats, average_nmse_analytic, estimation_stats,
                         large_scale_gammas)
from .link import (equal_power_allocation, hd_baseline_sum_se, se_report)
from .nafd import NafdOptions, PowerModelParams, solve_p2
from .power_control import MaxMinProblem, solve_hd_maxmin, solve_p1_maxmin
from .scenario import ScenarioConfig, build_scenario, dbm_to_watt

EXPERIMENTS = ("mse_vs_power", "mse_vs_tau", "dlse_vs_power", "ulse_vs_power",
               "fd_vs_hd", "nafd_ee", "custom")

_INT_FIELDS = {"M", "Nt", "Nr", "K", "L", "tau_c", "tau_p", "rng_seed"}
_PLAIN_FIELDS = {"M", "Nt", "Nr", "K", "L", "tau_c", "tau_p", "rng_seed",
                 "area_side", "fc", "bandwidth"}
_DB_FIELDS = {"noise_figure", "shadow_sigma"}
_POWER_FIELDS = {"p_t", "p_d", "p_u"}

_PM_KEYS = {
    "zeta_amp": "zeta_amp", "chi": "chi",
    "P_cdl_w": "P_cdl", "P_cul_w": "P_cul", "P_fdl_w": "P_fdl", "P_ful_w": "P_ful",
    "P_bt_w_per_bps": "P_bt", "P_U_fixed_w": "P_U_fixed", "B": "B",
    "sigma_n2_w": "sigma_n2",
}

_EXP_KEYS = {"name", "sweep_param", "sweep_values", "n_drops", "n_blocks", "output",
             "seed", "mode", "allocation", "w_d", "w_u", "epsilon", "qos_dl", "qos_ul",
             "method", "allow_fd", "fronthaul_gate", "dl_power"}

DEFAULT_SWEEPS = {
    "mse_vs_power": ("p_t_dbm", tuple(float(v) for v in range(-10, 31, 5))),
    "mse_vs_tau": ("tau_p", (4.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0)),
    "dlse_vs_power": ("p_d_dbm", tuple(float(v) for v in range(0, 31, 5))),
    "ulse_vs_power": ("p_u_dbm", tuple(float(v) for v in range(0, 31, 5))),
    "fd_vs_hd": ("theta_si_db", tuple(float(v) for v in range(-80, -9, 10))),
    "nafd_ee": ("qos", (0.2, 0.5, 0.8, 1.0, 1.2)),
}

# Scenario defaults that differ per preset; explicit config keys win.
PRESET_SCENARIO = {
    "nafd_ee": dict(M=8, Nt=5, Nr=5, p_d=1.0, p_u=0.2, bandwidth=50e6),
}


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    experiment: str = "custom"
    sweep: tuple | None = None          # (key, (values...))
    n_drops: int = 100
    n_blocks: int = 200
    output_path: str | None = None
    power_model: PowerModelParams = field(default_factory=PowerModelParams)
    seed: int = 0
    mode: str = "closed_form"
    allocation: str = "equal"
    w_d: float = 1.0
    w_u: float = 1.0
    epsilon: float = 1e-3
    qos: tuple = (0.5, 0.5)
    method: str = "exhaustive"
    allow_fd: bool = False
    fronthaul_gate: str = "literal"
    dl_power: str = "literal"

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise InvalidConfigError(f"unknown experiment {self.experiment!r}")
        if self.n_drops < 1 or self.n_blocks < 1:
            raise InvalidConfigError("n_drops and n_blocks must be >= 1")
        if self.sweep is not None:
            _check_sweep_key(self.sweep[0])
        if self.mode not in ("closed_form", "monte_carlo"):
            raise InvalidConfigError(f"unknown mode {self.mode!r}")
        if self.allocation not in ("equal", "maxmin"):
            raise InvalidConfigError(f"unknown allocation {self.allocation!r}")
        return self

    def effective_sweep(self):
        if self.sweep is not None:
            return self.sweep
        return DEFAULT_SWEEPS.get(self.experiment)


# ----------------------------------------------------------------- parsing

def _scenario_key(key: str):
    """Map a config key to ``(field, converter)`` or raise."""
    if key in _PLAIN_FIELDS:
        return key, (int if key in _INT_FIELDS else float)
    if key == "theta_si":
        return "theta_si", float
    if key == "theta_si_db":
        return "theta_si", lambda v: 10.0 ** (float(v) / 10.0)
    for f in _DB_FIELDS:
        if key == f + "_db":
            return f, float
        if key == f:
            raise InvalidConfigError(f"key {key!r} is in dB and must be written as {f}_db")
    for f in _POWER_FIELDS:
        if key == f + "_dbm":
            return f, lambda v: float(dbm_to_watt(float(v)))
        if key == f + "_w":
            return f, float
        if key == f:
            raise InvalidConfigError(
                f"key {key!r} needs an explicit unit: use {f}_dbm or {f}_w")
    raise InvalidConfigError(f"unknown scenario key {key!r}")


def _check_sweep_key(key):
    if key == "qos":
        return
    _scenario_key(key)


def apply_scenario_value(cfg: ScenarioConfig, key: str, value) -> ScenarioConfig:
    name, conv = _scenario_key(key)
    return dataclasses.replace(cfg, **{name: conv(value)})


def _line_of(text: str, section: str, key: str):
    sec = None
    for i, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        m = re.match(r"\[(.+)\]", line)
        if m:
            sec = m.group(1).strip()
            continue
        if sec == section and re.match(rf"{re.escape(key)}\s*[=:]", line):
            return i
    return None


def _bool(v: str) -> bool:
    v = v.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise InvalidConfigError(f"not a boolean: {v!r}")


def parse_config(text: str) -> ExperimentConfig:
    """Strictly parse an INI config; unknown keys and sections are errors.

    Raises
    ------
    ConfigParseError
        With the 1-based line number of the offending entry when known.
    """
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.DuplicateOptionError as exc:
        raise ConfigParseError(f"duplicate key {exc.option!r}", exc.lineno) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigParseError(f"duplicate section {exc.section!r}", exc.lineno) from None
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigParseError("content before the first [section]", exc.lineno) from None
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ConfigParseError(f"malformed config: {exc.message.splitlines()[0]}", line) from None

    for sec in cp.sections():
        if sec not in ("scenario", "experiment", "power_model"):
            raise ConfigParseError(f"unknown section [{sec}]", _line_of_section(text, sec))

    exp = dict(cp["experiment"]) if cp.has_section("experiment") else {}
    for key in exp:
        if key not in _EXP_KEYS:
            raise ConfigParseError(f"unknown experiment key {key!r}",
                                   _line_of(text, "experiment", key))
    name = exp.get("name", "custom").strip()

    base = dict(PRESET_SCENARIO.get(name, {}))
    fields = {}
    if cp.has_section("scenario"):
        seen = {}
        for key, value in cp["scenario"].items():
            line = _line_of(text, "scenario", key)
            try:
                fname, conv = _scenario_key(key)
                if fname in seen:
                    raise InvalidConfigError(f"{fname} given twice ({seen[fname]!r} and {key!r})")
                seen[fname] = key
                fields[fname] = conv(value)
            except (InvalidConfigError, ValueError) as exc:
                raise ConfigParseError(str(exc), line) from None
    base.update(fields)
    try:
        scenario = ScenarioConfig(**base)
    except TypeError as exc:
        raise ConfigParseError(str(exc)) from None

    pm = {}
    if cp.has_section("power_model"):
        for key, value in cp["power_model"].items():
            if key not in _PM_KEYS:
                raise ConfigParseError(f"unknown power_model key {key!r}",
                                       _line_of(text, "power_model", key))
            try:
                if key == "zeta_amp" and "," in value:
                    pm["zeta_amp"] = tuple(float(v) for v in value.split(","))
                else:
                    pm[_PM_KEYS[key]] = float(value)
            except ValueError as exc:
                raise ConfigParseError(str(exc), _line_of(text, "power_model", key)) from None
    pm.setdefault("B", scenario.bandwidth)

    kw = {"scenario": scenario, "experiment": name, "power_model": PowerModelParams(**pm)}

    def get(key, conv):
        if key in exp:
            try:
                return conv(exp[key])
            except (ValueError, InvalidConfigError) as exc:
                raise ConfigParseError(f"{key}: {exc}", _line_of(text, "experiment", key)) from None
        return None

    conversions = {
        "n_drops": ("n_drops", int), "n_blocks": ("n_blocks", int),
        "output": ("output_path", str.strip), "seed": ("seed", int),
        "mode": ("mode", str.strip), "allocation": ("allocation", str.strip),
        "w_d": ("w_d", float), "w_u": ("w_u", float), "epsilon": ("epsilon", float),
        "method": ("method", str.strip), "allow_fd": ("allow_fd", _bool),
        "fronthaul_gate": ("fronthaul_gate", str.strip), "dl_power": ("dl_power", str.strip),
    }
    for key, (dest, conv) in conversions.items():
        v = get(key, conv)
        if v is not None:
            kw[dest] = v
    qd, qu = get("qos_dl", float), get("qos_ul", float)
    if qd is not None or qu is not None:
        default = ExperimentConfig().qos
        kw["qos"] = (default[0] if qd is None else qd, default[1] if qu is None else qu)
    if "sweep_values" in exp and "sweep_param" not in exp:
        if name not in DEFAULT_SWEEPS:
            raise ConfigParseError("sweep_values needs sweep_param for this experiment",
                                   _line_of(text, "experiment", "sweep_values"))
        values = get("sweep_values", lambda s: tuple(float(v) for v in s.split(",") if v.strip()))
        kw["sweep"] = (DEFAULT_SWEEPS[name][0], tuple(values))
    if "sweep_param" in exp:
        key = exp["sweep_param"].strip()
        try:
            _check_sweep_key(key)
        except InvalidConfigError as exc:
            raise ConfigParseError(f"sweep_param: {exc}", _line_of(text, "experiment", "sweep_param")) from None
        values = get("sweep_values", lambda s: tuple(float(v) for v in s.split(",") if v.strip()))
        if not values:
            values = DEFAULT_SWEEPS.get(name, (None, ()))[1]
        kw["sweep"] = (key, tuple(values))
    cfg = ExperimentConfig(**kw)
    try:
        return cfg.validate()
    except InvalidConfigError as exc:
        raise ConfigParseError(str(exc)) from None


def _line_of_section(text, sec):
    for i, raw in enumerate(text.splitlines(), 1):
        if raw.strip() == f"[{sec}]":
            return i
    return None


def format_config(cfg: ExperimentConfig) -> str:
    """Canonical INI text; ``parse_config(format_config(c)) == c``."""
    s = cfg.scenario
    lines = ["[scenario]"]
    for f in dataclasses.fields(ScenarioConfig):
        v = getattr(s, f.name)
        if f.name in _DB_FIELDS:
            lines.append(f"{f.name}_db = {v!r}")
        elif f.name in _POWER_FIELDS:
            lines.append(f"{f.name}_w = {v!r}")
        else:
            lines.append(f"{f.name} = {v!r}")
    lines.append("")
    lines.append("[experiment]")
    lines.append(f"name = {cfg.experiment}")
    if cfg.sweep is not None:
        lines.append(f"sweep_param = {cfg.sweep[0]}")
        lines.append("sweep_values = " + ", ".join(repr(float(v)) for v in cfg.sweep[1]))
    lines += [f"n_drops = {cfg.n_drops}", f"n_blocks = {cfg.n_blocks}", f"seed = {cfg.seed}"]
    if cfg.output_path:
        lines.append(f"output = {cfg.output_path}")
    lines += [f"mode = {cfg.mode}", f"allocation = {cfg.allocation}",
              f"w_d = {cfg.w_d!r}", f"w_u = {cfg.w_u!r}", f"epsilon = {cfg.epsilon!r}",
              f"qos_dl = {cfg.qos[0]!r}", f"qos_ul = {cfg.qos[1]!r}",
              f"method = {cfg.method}", f"allow_fd = {cfg.allow_fd}",
              f"fronthaul_gate = {cfg.fronthaul_gate}", f"dl_power = {cfg.dl_power}"]
    lines.append("")
    lines.append("[power_model]")
    inv = {v: k for k, v in _PM_KEYS.items()}
    for f in dataclasses.fields(PowerModelParams):
        v = getattr(cfg.power_model, f.name)
        if v is None:
            continue
        if isinstance(v, tuple):
            v = ", ".join(repr(float(x)) for x in v)
        else:
            v = repr(v)
        lines.append(f"{inv[f.name]} = {v}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(format_config(cfg).encode()).hexdigest()[:16]


# ------------------------------------------------------------ result table

@dataclass
class ResultTable:
    """Rectangular numeric table with ``#``-prefixed metadata on write.

    Metadata values are strings; the effective config is stored under
    ``config`` and written one line per INI line.
    """

    columns: list
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def add(self, row):
        row = list(row)
        if len(row) != len(self.columns):
            raise ValueError(f"row has {len(row)} values, table has {len(self.columns)} columns")
        self.rows.append(row)

    def column(self, name):
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows], dtype=float)

    def to_csv(self) -> str:
        out = io.StringIO()
        for key, value in self.metadata.items():
            for line in str(value).splitlines() or [""]:
                out.write(f"# {key}: {line}\n")
        out.write(",".join(self.columns) + "\n")
        for row in self.rows:
            out.write(",".join(_fmt(v) for v in row) + "\n")
        return out.getvalue()

    def write(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "ResultTable":
        meta = {}
        lines = text.splitlines()
        i = 0
        while i < len(lines) and lines[i].startswith("#"):
            key, _, value = lines[i][2:].partition(": ")
            meta[key] = meta[key] + "\n" + value if key in meta else value
            i += 1
        cols = lines[i].split(",")
        rows = [[_parse(v) for v in ln.split(",")] for ln in lines[i + 1:] if ln]
        return cls(cols, rows, meta)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return repr(float(v))


def _parse(v):
    try:
        return int(v)
    except ValueError:
        try:
            return float(v)
        except ValueError:
            return v


# --------------------------------------------------------------- execution

def drop_seed(master: int, drop: int, stream: int = 0) -> int:
    """Seed for drop ``drop``; ``stream`` separates geometry from fading."""
    return int(np.random.SeedSequence([master, drop, stream]).generate_state(1)[0])


def _parallel(fn, items, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _sweep_values(cfg: ExperimentConfig):
    sw = cfg.effective_sweep()
    if sw is None:
        return None, [None]
    return sw[0], list(sw[1])


def _scenario_for(cfg: ExperimentConfig, key, value, drop) -> ScenarioConfig:
    sc = dataclasses.replace(cfg.scenario, rng_seed=drop_seed(cfg.seed, drop))
    if key is not None and key != "qos":
        if key == "tau_p":
            value = int(value)
        sc = apply_scenario_value(sc, key, value)
    return sc


def _mse_point(cfg, key, value, threads):
    def one(drop):
        sc = build_scenario(_scenario_for(cfg, key, value, drop))
        acc = estimation_stats(sc, cfg.n_blocks, drop_seed(cfg.seed, drop, 1))
        c = sc.config
        return (acc, sc.zeta_f, sc.zeta_g, c.p_t, c.tau_p, sc.sigma_w2)

    parts = _parallel(one, range(cfg.n_drops), threads)
    e = {"dl": 0.0, "ul": 0.0}
    a = {"dl": 0.0, "ul": 0.0}
    an_num = {"dl": 0.0, "ul": 0.0}
    an_den = {"dl": 0.0, "ul": 0.0}
    for acc, zf, zg, p_t, tau_p, s2 in parts:
        for k, z in (("dl", zf), ("ul", zg)):
            e[k] += float(acc.sums[k]["e2"].sum())
            a[k] += float(acc.sums[k]["a2"].sum())
            an_num[k] += average_nmse_analytic(z, p_t, tau_p, s2) * float(z.sum())
            an_den[k] += float(z.sum())
    return [e["dl"] / a["dl"], e["ul"] / a["ul"],
            an_num["dl"] / an_den["dl"], an_num["ul"] / an_den["ul"]]


def _se_point(cfg, key, value, threads):
    def one(drop):
        sc = build_scenario(_scenario_for(cfg, key, value, drop))
        gm = large_scale_gammas(sc)
        if cfg.allocation == "maxmin":
            fd = solve_p1_maxmin(MaxMinProblem(sc, gm, cfg.w_d, cfg.w_u, epsilon=cfg.epsilon)).allocation
            adl, aul, _, _ = solve_hd_maxmin(sc, gm, cfg.epsilon)
        else:
            fd = adl = aul = equal_power_allocation(sc, gm)
        rep = se_report(sc, fd, cfg.mode, gm, n_blocks=max(cfg.n_blocks, 100),
                        seed=drop_seed(cfg.seed, drop, 1))
        hd = hd_baseline_sum_se(sc, adl, aul, gm)
        return np.concatenate([rep.dl_se, rep.ul_se, [rep.sum_se, hd]])

    vals = _parallel(one, range(cfg.n_drops), threads)
    return list(np.mean(np.array(vals), axis=0))


def _nafd_point(cfg, key, value, threads):
    qos = (value, value) if key == "qos" else cfg.qos
    opts = NafdOptions(fronthaul_gate=cfg.fronthaul_gate, dl_power=cfg.dl_power,
                       allow_fd=cfg.allow_fd)

    def one(drop):
        sc = build_scenario(_scenario_for(cfg, key, value, drop))
        gm = large_scale_gammas(sc)
        res = solve_p2(sc, gm, cfg.power_model, qos, cfg.method, opts)
        return [res.ee if res.feasible else 0.0, float(res.feasible), res.sum_se, res.P_total]

    vals = np.array(_parallel(one, range(cfg.n_drops), threads))
    return list(vals.mean(axis=0))


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> ResultTable:
    """Execute the configured preset and return (and optionally write) its table.

    Drops run on ``threads`` worker threads; results are reduced in drop
    order so the output is byte-identical for any thread count.
    """
    cfg.validate()
    key, values = _sweep_values(cfg)
    sc = cfg.scenario
    name = cfg.experiment
    if name in ("mse_vs_power", "mse_vs_tau"):
        cols = [key, "dl_nmse", "ul_nmse", "dl_nmse_analytic", "ul_nmse_analytic"]
        point = _mse_point
    elif name in ("dlse_vs_power", "ulse_vs_power", "fd_vs_hd", "custom"):
        cols = [key or "point"] + [f"dl_se_{k}" for k in range(sc.K)] \
            + [f"ul_se_{l}" for l in range(sc.L)] + ["sum_se", "hd_sum_se"]
        point = _se_point
    elif name == "nafd_ee":
        cols = [key or "point", "ee", "feasible_fraction", "sum_se", "P_total"]
        point = _nafd_point
    else:
        raise InvalidConfigError(f"unknown experiment {name!r}")

    table = ResultTable(cols, metadata={
        "experiment": name, "seed": str(cfg.seed), "code_version": __version__,
        "config_hash": config_hash(cfg), "mode": cfg.mode,
        "allocation": cfg.allocation, "config": format_config(cfg),
    })
    for v in values:
        row = point(cfg, key, v, threads)
        table.add([0.0 if v is None else float(v)] + [float(x) for x in row])
    if cfg.output_path:
        table.write(cfg.output_path)
    return table


def config_from_table(table: ResultTable) -> ExperimentConfig:
    """Rebuild the effective config echoed into a table's metadata."""
    return parse_config(table.metadata["config"])


def summary_json(table: ResultTable) -> str:
    return json.dumps({"columns": table.columns, "rows": table.rows}, sort_keys=True)
