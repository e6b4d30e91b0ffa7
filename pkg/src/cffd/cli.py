"""Command-line entry point ``cffd``.

Global flags (``--seed``, ``--threads``, ``--out``) may be given before or
after the subcommand. Tables go to ``--out`` when set, else to stdout.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import CffdError
from .estimation import large_scale_gammas
from .experiments import (ExperimentConfig, ResultTable, config_hash, format_config,
                          parse_config, run_experiment)
from .nafd import NafdOptions, solve_p2
from .power_control import MaxMinProblem, attained_sinrs, solve_p1_maxmin
from .scenario import build_scenario, scenario_to_csv
from .selftest import MUTATIONS, self_test

PRESET_COMMANDS = {
    "mse-vs-power": "mse_vs_power",
    "mse-vs-tau": "mse_vs_tau",
    "dlse-vs-power": "dlse_vs_power",
    "ulse-vs-power": "ulse_vs_power",
    "fd-vs-hd": "fd_vs_hd",
}


def _global_flags(parser, suppress):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=default,
                        help="master seed (overrides the config)")
    parser.add_argument("--threads", type=int, default=argparse.SUPPRESS if suppress else 1,
                        help="worker threads for drops (output does not depend on it)")
    parser.add_argument("--out", default=default, help="output CSV path (default: stdout)")


def _load_config(path, preset=None) -> ExperimentConfig:
    if path is None:
        text = f"[experiment]\nname = {preset}\n" if preset else ""
        return parse_config(text)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CffdError(f"cannot read config {path}: {exc.strerror}") from None
    cfg = parse_config(text)
    if preset and cfg.experiment != preset:
        if cfg.experiment != "custom":
            raise CffdError(f"config is for experiment {cfg.experiment!r}, not {preset!r}")
        cfg = parse_config(_inject_name(text, preset))
    return cfg


def _inject_name(text: str, name: str) -> str:
    """Add ``name = ...`` to the [experiment] section (created if absent)."""
    lines = text.splitlines()
    for i, line in enumerate(lines):
        if line.strip() == "[experiment]":
            lines.insert(i + 1, f"name = {name}")
            return "\n".join(lines) + "\n"
    return text.rstrip("\n") + f"\n\n[experiment]\nname = {name}\n"


def _with_seed(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if args.seed is None:
        return cfg
    return dataclasses.replace(cfg, seed=args.seed,
                               scenario=dataclasses.replace(cfg.scenario, rng_seed=args.seed))


def _emit(text: str, path):
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _base_meta(cfg: ExperimentConfig, command: str):
    return {"command": command, "seed": str(cfg.scenario.rng_seed), "code_version": __version__,
            "config_hash": config_hash(cfg), "config": format_config(cfg)}


# ------------------------------------------------------------------ commands

def cmd_simulate(args):
    cfg = _with_seed(_load_config(args.config), args)
    cfg = _apply_overrides(cfg, args)
    table = run_experiment(dataclasses.replace(cfg, output_path=None), threads=args.threads)
    _emit(table.to_csv(), args.out or cfg.output_path)
    return 0


def _apply_overrides(cfg, args):
    changes = {}
    for name in ("n_drops", "n_blocks", "mode", "allocation"):
        v = getattr(args, name, None)
        if v is not None:
            changes[name] = v
    values = getattr(args, "values", None)
    if values:
        key = cfg.effective_sweep()[0] if cfg.effective_sweep() else None
        if key is None:
            raise CffdError("--values needs a sweep_param in the config")
        changes["sweep"] = (key, tuple(float(v) for v in values.split(",")))
    return dataclasses.replace(cfg, **changes).validate() if changes else cfg


def cmd_preset(args):
    cfg = _with_seed(_load_config(args.config, PRESET_COMMANDS[args.command]), args)
    cfg = _apply_overrides(cfg, args)
    table = run_experiment(cfg if args.out is None else dataclasses.replace(cfg, output_path=None),
                           threads=args.threads)
    _emit(table.to_csv(), args.out)
    return 0


def cmd_self_test(args):
    report = self_test(args.mutation)
    for line in report.lines():
        print(line)
    return 0 if report.passed else 1


def cmd_dump_scenario(args):
    cfg = _with_seed(_load_config(args.config), args)
    sc = build_scenario(cfg.scenario)
    _emit(scenario_to_csv(sc), args.out)
    return 0


def _parse_weights(text):
    try:
        w_d, w_u = (float(v) for v in text.split(","))
    except ValueError:
        raise CffdError(f"--weights expects 'w_d,w_u', got {text!r}") from None
    return w_d, w_u


def cmd_power_control(args):
    cfg = _with_seed(_load_config(args.config), args)
    w_d, w_u = _parse_weights(args.weights) if args.weights else (cfg.w_d, cfg.w_u)
    eps = args.epsilon if args.epsilon is not None else cfg.epsilon
    sc = build_scenario(cfg.scenario)
    gm = large_scale_gammas(sc)
    prob = MaxMinProblem(sc, gm, w_d, w_u, epsilon=eps, link=args.link, max_iters=args.max_iters)
    res = solve_p1_maxmin(prob)
    meta = _base_meta(cfg, "power-control")
    meta.update({"lambda_star": repr(res.lambda_star), "weights": f"{w_d},{w_u}",
                 "epsilon": repr(eps)})
    log_table = ResultTable(["iteration", "lambda_lo", "lambda_hi", "feasible"], metadata=meta)
    for rec in res.iteration_log:
        log_table.add([rec.iteration, rec.lambda_lo, rec.lambda_hi, int(rec.feasible)])

    sinr_dl, sinr_ul = attained_sinrs(prob, res.allocation)
    alloc = ResultTable(["direction", "ap", "user", "power_coefficient", "sinr"],
                        metadata={"command": "power-control", "lambda_star": repr(res.lambda_star)})
    for m in range(sc.M):
        for k in range(sc.K):
            alloc.add(["dl", m, k, float(res.allocation.eta[m, k]), float(sinr_dl[k])])
    for l in range(sc.L):
        alloc.add(["ul", -1, l, float(res.allocation.varsigma[l]), float(sinr_ul[l])])

    if args.out:
        _emit(log_table.to_csv(), args.out)
        alloc_path = args.alloc_out or str(Path(args.out).with_suffix("")) + "_allocation.csv"
        _emit(alloc.to_csv(), alloc_path)
    else:
        _emit(log_table.to_csv() + "\n", None)
        _emit(alloc.to_csv(), args.alloc_out)
    return 0


def cmd_nafd_ee(args):
    cfg = _with_seed(_load_config(args.config, "nafd_ee"), args)
    qos = (args.qos_dl if args.qos_dl is not None else cfg.qos[0],
           args.qos_ul if args.qos_ul is not None else cfg.qos[1])
    opts = NafdOptions(fronthaul_gate=args.fronthaul_gate or cfg.fronthaul_gate,
                       dl_power=args.dl_power or cfg.dl_power,
                       allow_fd=bool(args.allow_fd or cfg.allow_fd))
    method = args.method or cfg.method
    sc = build_scenario(cfg.scenario)
    gm = large_scale_gammas(sc)
    res = solve_p2(sc, gm, cfg.power_model, qos, method, opts)
    meta = _base_meta(cfg, "nafd-ee")
    meta.update({"method": method, "qos": f"{qos[0]},{qos[1]}", "status": res.status,
                 "fronthaul_gate": opts.fronthaul_gate, "allow_fd": str(int(opts.allow_fd))})
    cols = ["kind", "a_mask", "b_mask", "feasible", "ee", "sum_se", "P_total", "violation"]
    table = ResultTable(cols, metadata=meta)
    for r in res.log:
        table.add(["candidate", r.a_mask, r.b_mask, int(r.feasible), r.ee, r.sum_se,
                   r.P_total, r.violation])
    a = np.asarray(res.assignment.a, dtype=int)
    b = np.asarray(res.assignment.b, dtype=int)
    table.add(["best", int(sum(int(v) << i for i, v in enumerate(a))),
               int(sum(int(v) << i for i, v in enumerate(b))), int(res.feasible),
               res.ee, res.sum_se, res.P_total, res.violation])
    _emit(table.to_csv(), args.out)
    return 0


# -------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cffd", description="Cell-free full-duplex simulator.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        _global_flags(p, suppress=True)
        p.set_defaults(func=func)
        return p

    p = add("simulate", cmd_simulate, "run the experiment described by a config file")
    p.add_argument("config")
    p.add_argument("--n-drops", type=int)
    p.add_argument("--n-blocks", type=int)

    p = add("self-test", cmd_self_test, "fast built-in correctness checks")
    p.add_argument("--mutation", choices=MUTATIONS, help="inject a known defect")

    p = add("dump-scenario", cmd_dump_scenario, "write distances and large-scale gains as CSV")
    p.add_argument("config", nargs="?")

    for name in PRESET_COMMANDS:
        p = add(name, cmd_preset, f"sweep preset {PRESET_COMMANDS[name]}")
        p.add_argument("config", nargs="?")
        p.add_argument("--values", help="comma-separated sweep values (write --values=-70,-20 "
                       "when the first value is negative)")
        p.add_argument("--n-drops", type=int)
        p.add_argument("--n-blocks", type=int)
        p.add_argument("--mode", choices=("closed_form", "monte_carlo"))
        p.add_argument("--allocation", choices=("equal", "maxmin"))

    p = add("power-control", cmd_power_control, "weighted max-min power control on one drop")
    p.add_argument("config", nargs="?")
    p.add_argument("--weights", help="w_d,w_u")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--link", choices=("fd", "hd_dl", "hd_ul"), default="fd")
    p.add_argument("--alloc-out", help="allocation CSV path (default: next to --out)")

    p = add("nafd-ee", cmd_nafd_ee, "NAFD mode assignment and EE on one drop")
    p.add_argument("config", nargs="?")
    p.add_argument("--qos-dl", type=float)
    p.add_argument("--qos-ul", type=float)
    p.add_argument("--method", choices=("exhaustive", "greedy"))
    p.add_argument("--allow-fd", action="store_true")
    p.add_argument("--fronthaul-gate", choices=("literal", "natural", "swapped"))
    p.add_argument("--dl-power", choices=("literal", "quadratic"))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CffdError as exc:
        print(f"cffd: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
