"""Experiment orchestration: config parsing, subcommands, CSV emission.

Subcommands::

    simulate        one ensemble -> 2-D histograms + summary
    sweep           vary temperature/forgetting_rate/theta -> Binder and
                    persistence curves
    meanfield-flow  flow-field grid and fixed points at one temperature
    meanfield-tc    critical temperature with diagnostics
    meanfield-phase (theta, T_c) phase boundary

Configuration is a flat JSON document (see CONFIG_KEYS); command-line flags
override file values.  Data goes to CSV files in the output directory, a
copy of the fully resolved config is written next to them, progress goes to
stderr.  Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys

import numpy as np

from . import meanfield, observables
from .core import ModelParams, ParamError, Variant, validate_params
from .engine import RecordingSchedule, run_ensemble

ENV_OUTDIR = "SEGMARKETS_OUTDIR"

# key -> (type description, converter)
CONFIG_KEYS = {
    "n_agents": ("int", int),
    "theta": ("pair of floats", lambda v: tuple(float(x) for x in v)),
    "mu_ask": ("float", float),
    "mu_bid": ("float", float),
    "sigma_ask": ("float", float),
    "sigma_bid": ("float", float),
    "temperature": ("float", float),
    "forgetting_rate": ("float", float),
    "horizon": ("int", int),
    "variant": ("'four_action' or 'two_group'", lambda v: Variant(v)),
    "group_buy_prefs": ("pair of floats", lambda v: tuple(float(x) for x in v)),
    "n_runs": ("int", int),
    "master_seed": ("int", int),
    "record_last": ("int", int),
    "bins": ("int", int),
    "out_dir": ("str", str),
    "jobs": ("int", int),
    "sweep_parameter": ("'temperature', 'forgetting_rate' or 'theta'", str),
    "sweep_values": ("list of floats", lambda v: [float(x) for x in v]),
}

SWEEP_PARAMETERS = ("temperature", "forgetting_rate", "theta")

MODEL_KEYS = ("n_agents", "theta", "mu_ask", "mu_bid", "sigma_ask", "sigma_bid",
              "temperature", "forgetting_rate", "horizon", "variant",
              "group_buy_prefs")


class ConfigError(ValueError):
    pass


@dataclasses.dataclass
class ExperimentConfig:
    params: ModelParams
    n_runs: int = 100
    master_seed: int = 0
    record_last: int = 100
    bins: int = 50
    out_dir: str = "."
    jobs: int = 0   # 0 -> all cores
    sweep_parameter: str | None = None
    sweep_values: list[float] | None = None

    def resolved(self) -> dict:
        """Flat dict of everything, for the config echo."""
        d = dataclasses.asdict(self.params)
        d["variant"] = self.params.variant.value
        d["theta"] = list(self.params.theta)
        d["group_buy_prefs"] = list(self.params.group_buy_prefs)
        d.pop("n_markets")
        d.update(n_runs=self.n_runs, master_seed=self.master_seed,
                 record_last=self.record_last, bins=self.bins,
                 out_dir=self.out_dir, jobs=self.jobs,
                 sweep_parameter=self.sweep_parameter,
                 sweep_values=self.sweep_values)
        return d


def parse_config(file_values: dict | None, overrides: dict | None = None) -> ExperimentConfig:
    """Merge config-file values and flag overrides into an ExperimentConfig.

    Unknown keys and type mismatches raise ConfigError naming the key;
    model-parameter violations surface as ParamError from validate_params.
    """
    merged = {}
    for source in (file_values or {}, overrides or {}):
        for key, value in source.items():
            if value is None:
                continue
            if key not in CONFIG_KEYS:
                raise ConfigError(f"unknown config key: {key!r}")
            expected, conv = CONFIG_KEYS[key]
            try:
                merged[key] = conv(value)
            except (TypeError, ValueError):
                raise ConfigError(
                    f"config key {key!r} expects {expected}, got {value!r}") from None

    model_kwargs = {k: merged[k] for k in MODEL_KEYS if k in merged}
    params = validate_params(ModelParams(**model_kwargs))

    cfg = ExperimentConfig(params=params)
    for key in ("n_runs", "master_seed", "record_last", "bins", "out_dir",
                "jobs", "sweep_parameter", "sweep_values"):
        if key in merged:
            setattr(cfg, key, merged[key])
    if cfg.sweep_parameter is not None and cfg.sweep_parameter not in SWEEP_PARAMETERS:
        raise ConfigError(
            f"sweep_parameter must be one of {SWEEP_PARAMETERS}, got {cfg.sweep_parameter!r}")
    if cfg.sweep_values is not None and not cfg.sweep_values:
        raise ConfigError("sweep_values must be non-empty")
    if cfg.n_runs < 1:
        raise ConfigError(f"n_runs must be >= 1, got {cfg.n_runs}")
    return cfg


def _load_file(path) -> dict:
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a JSON object")
    return doc


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(row)
            fh.flush()


def _echo_config(cfg: ExperimentConfig):
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "config.json"), "w") as fh:
        json.dump(cfg.resolved(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


def _with_sweep_value(params: ModelParams, name: str, value: float) -> ModelParams:
    if name == "theta":
        return dataclasses.replace(params, theta=(value, 1.0 - value))
    return dataclasses.replace(params, **{name: value})


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_simulate(cfg: ExperimentConfig) -> int:
    _echo_config(cfg)
    schedule = RecordingSchedule(record_last=cfg.record_last)
    _log(f"simulate: {cfg.n_runs} runs x {cfg.params.horizon} periods, "
         f"T={cfg.params.temperature}, seed={cfg.master_seed}")
    stats = run_ensemble(cfg.params, cfg.n_runs, cfg.master_seed,
                         schedule=schedule, n_jobs=cfg.jobs or os.cpu_count())

    if cfg.params.variant is Variant.FOUR_ACTION:
        attr = (stats.delta_bs, stats.delta_12)
        pref = (stats.p_buy, stats.p_market1)
    else:
        attr = (stats.delta_12, stats.delta_12)
        pref = (stats.p_market1, stats.p_market1)
    h, xe, ye = observables.histogram2d(*attr, bins=cfg.bins)
    observables.write_histogram_csv(
        os.path.join(cfg.out_dir, "histogram2d_attr.csv"), h, xe, ye)
    h, xe, ye = observables.histogram2d(*pref, bins=cfg.bins,
                                        ranges=[[0, 1], [0, 1]])
    observables.write_histogram_csv(
        os.path.join(cfg.out_dir, "histogram2d_pref.csv"), h, xe, ye)

    b = stats.binder()
    bs = b.get("delta_bs", (float("nan"), float("nan")))
    rows = [[_fmt(cfg.params.temperature), stats.n_samples,
             _fmt(bs[0]), _fmt(b["delta_12"][0]),
             _fmt(b["mean"][0]), _fmt(b["mean"][1]),
             _fmt(stats.mean_trades[0]), _fmt(stats.mean_trades[1])]]
    _write_csv(os.path.join(cfg.out_dir, "summary.csv"),
               ["temperature", "n_samples", "binder_bs", "binder_12",
                "binder_mean", "binder_stderr", "mean_trades_m1", "mean_trades_m2"],
               rows)
    _log(f"simulate: wrote {cfg.out_dir}/histogram2d_attr.csv, "
         f"histogram2d_pref.csv, summary.csv")
    return 0


def cmd_sweep(cfg: ExperimentConfig) -> int:
    if cfg.sweep_parameter is None or cfg.sweep_values is None:
        raise ConfigError("sweep needs sweep_parameter and sweep_values")
    _echo_config(cfg)
    schedule = RecordingSchedule(record_last=cfg.record_last, record_quadrants=True)
    binder_path = os.path.join(cfg.out_dir, "binder_vs_T.csv")
    pers_path = os.path.join(cfg.out_dir, "persistence_vs_T.csv")
    # written incrementally so aborted sweeps keep their finished points
    with open(binder_path, "w", newline="") as bf, \
            open(pers_path, "w", newline="") as pf:
        bw = csv.writer(bf)
        pw = csv.writer(pf)
        bw.writerow([cfg.sweep_parameter, "binder_bs", "binder_12",
                     "binder_mean", "stderr"])
        pw.writerow([cfg.sweep_parameter, "mean_t", "mean_t_completed",
                     "censored_fraction"])
        for value in cfg.sweep_values:
            params = _with_sweep_value(cfg.params, cfg.sweep_parameter, value)
            validate_params(params)
            _log(f"sweep: {cfg.sweep_parameter}={value} "
                 f"({cfg.n_runs} runs x {params.horizon} periods)")
            stats = run_ensemble(params, cfg.n_runs, cfg.master_seed,
                                 schedule=schedule,
                                 n_jobs=cfg.jobs or os.cpu_count())
            b = stats.binder()
            bs = b.get("delta_bs", (float("nan"),) * 2)
            bw.writerow([_fmt(value), _fmt(bs[0]), _fmt(b["delta_12"][0]),
                         _fmt(b["mean"][0]), _fmt(b["mean"][1])])
            bf.flush()
            p = stats.persistence
            pw.writerow([_fmt(value), _fmt(p.mean_observed),
                         _fmt(p.mean_completed), _fmt(p.censored_fraction)])
            pf.flush()
    _log(f"sweep: wrote {binder_path}, {pers_path}")
    return 0


def cmd_meanfield_flow(cfg: ExperimentConfig, resolution: int) -> int:
    params = dataclasses.replace(cfg.params, variant=Variant.TWO_GROUP)
    validate_params(params)
    _echo_config(cfg)
    f1, f2, df1, df2 = meanfield.flow_field(params, resolution=resolution)
    rows = [[_fmt(f1[i, j]), _fmt(f2[i, j]), _fmt(df1[i, j]), _fmt(df2[i, j])]
            for i in range(resolution) for j in range(resolution)]
    _write_csv(os.path.join(cfg.out_dir, "flowfield.csv"),
               ["f1", "f2", "df1_dt", "df2_dt"], rows)

    fps = meanfield.find_fixed_points(params)
    rows = []
    for fp in fps:
        f = 1.0 / (1.0 + np.exp(-fp.state / params.temperature))
        rows.append([_fmt(f[0]), _fmt(f[1]), _fmt(fp.state[0]), _fmt(fp.state[1]),
                     _fmt(fp.eigenvalues.real.max()), int(fp.stable)])
    _write_csv(os.path.join(cfg.out_dir, "fixed_points.csv"),
               ["f1", "f2", "delta1", "delta2", "leading_eig_real", "stable"],
               rows)
    _log(f"meanfield-flow: {len(fps)} fixed points at T={params.temperature}; "
         f"wrote {cfg.out_dir}/flowfield.csv, fixed_points.csv")
    return 0


def cmd_meanfield_tc(cfg: ExperimentConfig, bracket) -> int:
    _echo_config(cfg)
    tc = meanfield.critical_temperature(cfg.params, bracket=bracket)
    fps = meanfield.find_fixed_points(
        dataclasses.replace(cfg.params, temperature=tc + 0.01))
    _write_csv(os.path.join(cfg.out_dir, "tc.csv"),
               ["t_c", "bracket_lo", "bracket_hi", "n_fixed_points_above"],
               [[_fmt(tc), _fmt(min(bracket)), _fmt(max(bracket)), len(fps)]])
    _log(f"meanfield-tc: T_c = {tc:.6f}")
    print(_fmt(tc))
    return 0


def cmd_meanfield_phase(cfg: ExperimentConfig, thetas) -> int:
    _echo_config(cfg)
    path = os.path.join(cfg.out_dir, "phase_boundary.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["theta", "t_c"])
        for th, tc in meanfield.phase_diagram(thetas, cfg.params):
            w.writerow([_fmt(th), _fmt(tc)])
            fh.flush()
            _log(f"meanfield-phase: theta={th:.3f} -> T_c={tc:.6f}")
    _log(f"meanfield-phase: wrote {path}")
    return 0


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def _add_common(sub):
    sub.add_argument("--config", help="JSON config file")
    sub.add_argument("--out", help="output directory")
    sub.add_argument("--seed", type=int, help="master seed")
    sub.add_argument("--runs", type=int, help="independent runs per ensemble")
    sub.add_argument("--jobs", type=int, help="worker processes (default: all cores)")
    sub.add_argument("--temperature", type=float)
    sub.add_argument("--forgetting-rate", type=float, dest="forgetting_rate")
    sub.add_argument("--agents", type=int, dest="n_agents")
    sub.add_argument("--horizon", type=int)
    sub.add_argument("--variant", choices=[v.value for v in Variant])
    sub.add_argument("--theta", type=float,
                     help="symmetric market bias: theta_1 = theta, theta_2 = 1 - theta")


def build_parser():
    ap = argparse.ArgumentParser(
        prog="segmarkets",
        description="Trader-segregation simulator and mean-field analysis")
    subs = ap.add_subparsers(dest="command", required=True)

    s = subs.add_parser("simulate", help="one ensemble, histogram + summary output")
    _add_common(s)

    s = subs.add_parser("sweep", help="parameter sweep, Binder + persistence curves")
    _add_common(s)
    s.add_argument("--parameter", choices=SWEEP_PARAMETERS,
                   help="which parameter to vary")
    s.add_argument("--values", help="comma-separated sweep values")

    s = subs.add_parser("meanfield-flow", help="two-group flow field and fixed points")
    _add_common(s)
    s.add_argument("--resolution", type=int, default=21)

    s = subs.add_parser("meanfield-tc", help="critical temperature")
    _add_common(s)
    s.add_argument("--bracket", default="0.05,0.6",
                   help="temperature bracket lo,hi (default 0.05,0.6)")

    s = subs.add_parser("meanfield-phase", help="T_c versus market bias table")
    _add_common(s)
    s.add_argument("--thetas", default="0.05,0.1,0.15,0.2,0.25,0.3,0.35,0.4,0.45,0.5",
                   help="comma-separated theta values in (0, 0.5]")
    return ap


def _config_from_args(args) -> ExperimentConfig:
    file_values = _load_file(args.config) if args.config else {}
    overrides = {
        "out_dir": args.out or os.environ.get(ENV_OUTDIR),
        "master_seed": args.seed,
        "n_runs": args.runs,
        "jobs": args.jobs,
        "temperature": args.temperature,
        "forgetting_rate": args.forgetting_rate,
        "n_agents": args.n_agents,
        "horizon": args.horizon,
        "variant": args.variant,
    }
    if args.theta is not None:
        overrides["theta"] = (args.theta, 1.0 - args.theta)
    if getattr(args, "parameter", None) is not None:
        overrides["sweep_parameter"] = args.parameter
    if getattr(args, "values", None) is not None:
        overrides["sweep_values"] = [float(x) for x in args.values.split(",")]
    return parse_config(file_values, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
    except (ConfigError, ParamError, OSError, json.JSONDecodeError) as e:
        _log(f"error: config: {e}")
        return 1
    try:
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "sweep":
            return cmd_sweep(cfg)
        if args.command == "meanfield-flow":
            return cmd_meanfield_flow(cfg, args.resolution)
        if args.command == "meanfield-tc":
            lo, hi = (float(x) for x in args.bracket.split(","))
            return cmd_meanfield_tc(cfg, (lo, hi))
        if args.command == "meanfield-phase":
            thetas = [float(x) for x in args.thetas.split(",")]
            if any(not 0.0 < t <= 0.5 for t in thetas):
                _log("error: config: thetas must lie in (0, 0.5]")
                return 1
            return cmd_meanfield_phase(cfg, thetas)
        raise AssertionError(args.command)
    except (ConfigError, ParamError) as e:
        _log(f"error: config: {e}")
        return 1
    except (meanfield.BracketInvalid, meanfield.NoFixedPoints,
            observables.DegenerateSample) as e:
        _log(f"error: numerical: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
