"""Experiment runner: environment generation, data collection, trials,
scheme comparison, and per-niche candidate dumps.

One JSON config document drives every subcommand; dB-valued fields carry a
_db suffix and are converted to linear internally. Exit codes: 0 ok,
1 config validation, 2 I/O, 3 enumeration budget guard.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import datagen, gridmap
from .channel import ChannelParams
from .env import Environment, generate_environment, random_gu_positions
from .mission import (MePlanner, MissionSetup, NmPlanner, TimeConfig,
                      oracle_factory, run_ges_bound, run_trial)
from .predictor import EmulatorPredictor, ExactOracle, load_model
from .search import BudgetError, MoveConstraints, SearchBudget, initial_placement

PLANNERS = ("static", "nm", "sdl-nm", "sdl-me", "ges-bound")

DEFAULT_CONFIG = {
    "env": {"seed": 1, "d": 1000.0, "dw": 31.25, "l": 200,
            "height_range": [30.0, 89.0], "hp": 60.0, "hq": 1.0},
    "channel": {"carrier_freq_hz": 2.0e9, "bandwidth_hz": 2.0e7,
                "transmit_snr_db": 115.0, "snr_threshold_db": 15.0,
                "rate_threshold_bps": 8.3e5, "k_min_db": 0.0, "k_max_db": 30.0},
    "time": {"trial_s": 200.0, "period_s": 10.0, "explore_s": 5.0,
             "serve_s": 5.0, "plan_s": 3.0, "step_s": 0.5},
    "search": {"n_iters": 64, "n_per_iter": 128, "rim": 3, "top_k": 10,
               "nm_mutations": 10, "niche_bin_width": None},
    "grid_k": 64,
    "n_abs": 5,
    "n_gu": 100,
    "epsilon": 0.2,
    "v_gu": 2.0,
    "v_abs_max": 30.0,
    "d_min": 10.0,
    "planner": "sdl-me",
    "predictor": "oracle",
    "seeds": [1, 2, 3, 4, 5],
    "collect": {"strategy": "mixed", "n_trials": 1},
}


class ConfigError(ValueError):
    """Invalid experiment configuration; message carries the field path."""


def _merge(base, override):
    out = dict(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


def _require(cond, path, message):
    if not cond:
        raise ConfigError(f"{path}: {message}")


class ExperimentConfig:
    """Validated view over the experiment JSON document."""

    def __init__(self, doc: dict):
        doc = _merge(DEFAULT_CONFIG, doc)
        self.doc = doc
        e = doc["env"]
        _require(e["d"] > 0, "env.d", "must be positive")
        _require(e["dw"] > 0, "env.dw", "must be positive")
        _require(e["l"] >= 0, "env.l", "must be non-negative")
        _require(0 < e["hq"] < e["hp"], "env.hq", "need 0 < hq < hp")
        _require(len(e["height_range"]) == 2
                 and 0 < e["height_range"][0] <= e["height_range"][1],
                 "env.height_range", "need 0 < low <= high")
        cells = e["d"] / e["dw"]
        _require(abs(cells - round(cells)) < 1e-9, "env.dw",
                 "area side must be a multiple of the building side")
        _require(e["l"] <= round(cells) ** 2, "env.l",
                 "exceeds the building lattice capacity")
        c = doc["channel"]
        for key in ("carrier_freq_hz", "bandwidth_hz", "rate_threshold_bps"):
            _require(c[key] > 0, f"channel.{key}", "must be positive")
        try:
            self.time = TimeConfig(**doc["time"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"time: {exc}") from exc
        s = doc["search"]
        for key in ("n_iters", "n_per_iter", "rim", "top_k", "nm_mutations"):
            _require(int(s[key]) >= 0, f"search.{key}", "must be non-negative")
        _require(int(s["top_k"]) >= 1, "search.top_k", "must be >= 1")
        _require(int(doc["grid_k"]) >= 2, "grid_k", "must be >= 2")
        _require(int(doc["n_abs"]) >= 1, "n_abs", "must be >= 1")
        _require(int(doc["n_gu"]) >= 1, "n_gu", "must be >= 1")
        _require(doc["epsilon"] >= 0, "epsilon", "must be non-negative")
        _require(doc["v_gu"] >= 0, "v_gu", "must be non-negative")
        _require(doc["v_abs_max"] > 0, "v_abs_max", "must be positive")
        _require(doc["d_min"] >= 0, "d_min", "must be non-negative")
        _require(doc["planner"] in PLANNERS, "planner",
                 f"must be one of {PLANNERS}")
        pred = doc["predictor"]
        _require(pred == "oracle" or pred.startswith("emulator:"),
                 "predictor", "must be 'oracle' or 'emulator:<path>'")
        _require(len(doc["seeds"]) >= 1, "seeds", "must list at least one seed")
        cap = int((1 + doc["epsilon"]) * doc["n_gu"] / doc["n_abs"])
        _require(cap * doc["n_abs"] >= doc["n_gu"], "epsilon",
                 "cluster capacity cannot cover all GUs")
        _require(doc["collect"]["strategy"] in datagen.STRATEGIES,
                 "collect.strategy", f"must be one of {datagen.STRATEGIES}")
        _require(int(doc["collect"]["n_trials"]) >= 0, "collect.n_trials",
                 "must be non-negative")

    def make_environment(self, seed=None) -> Environment:
        e = self.doc["env"]
        return generate_environment(
            e["seed"] if seed is None else seed, e["d"], e["dw"], int(e["l"]),
            tuple(e["height_range"]), e["hp"], e["hq"])

    def channel_params(self) -> ChannelParams:
        c = self.doc["channel"]
        return ChannelParams.from_db(
            transmit_snr_db=c["transmit_snr_db"],
            snr_threshold_db=c["snr_threshold_db"],
            k_min_db=c["k_min_db"], k_max_db=c["k_max_db"],
            carrier_freq=c["carrier_freq_hz"], bandwidth_hz=c["bandwidth_hz"],
            rate_threshold=c["rate_threshold_bps"],
            n_abs=int(self.doc["n_abs"]))

    def setup(self, env: Environment) -> MissionSetup:
        return MissionSetup(env, self.channel_params(), self.time,
                            int(self.doc["grid_k"]), int(self.doc["n_abs"]),
                            int(self.doc["n_gu"]), self.doc["v_gu"],
                            self.doc["v_abs_max"], self.doc["d_min"],
                            self.doc["epsilon"])

    def niche_bin_width(self, env: Environment) -> float:
        width = self.doc["search"]["niche_bin_width"]
        return env.area_side / self.doc["grid_k"] if width is None else width

    def budget(self, scheme: str) -> SearchBudget:
        s = self.doc["search"]
        if scheme == "nm":
            return SearchBudget(1, int(s["nm_mutations"]), int(s["rim"]),
                                int(s["top_k"]))
        if scheme == "sdl-nm":
            return SearchBudget(1, int(s["n_iters"]) * int(s["n_per_iter"]),
                                int(s["rim"]), int(s["top_k"]))
        return SearchBudget(int(s["n_iters"]), int(s["n_per_iter"]),
                            int(s["rim"]), int(s["top_k"]))

    def predictor_factory(self, setup: MissionSetup):
        pred = self.doc["predictor"]
        if pred == "oracle":
            return oracle_factory(setup)
        model = load_model(pred.split(":", 1)[1])
        if model.k != setup.k:
            raise ConfigError(
                f"predictor: emulator resolution {model.k} != grid_k {setup.k}")

        def make(env, params, gu_positions, k):
            counts = gridmap.quantize(gu_positions, k, env.area_side).counts
            return EmulatorPredictor(model, counts)

        return make

    def planner(self, env: Environment, scheme=None):
        scheme = self.doc["planner"] if scheme is None else scheme
        if scheme in ("static", "ges-bound"):
            return None
        setup = self.setup(env)
        factory = self.predictor_factory(setup)
        if scheme == "nm" or scheme == "sdl-nm":
            return NmPlanner(setup.k, self.budget(scheme), factory)
        if scheme == "sdl-me":
            return MePlanner(setup.k, self.budget(scheme), factory,
                             self.niche_bin_width(env))
        raise ConfigError(f"planner: unknown scheme {scheme!r}")


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return ExperimentConfig(json.load(fh))


def _atomic_write(path, text: str):
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _load_env(cfg: ExperimentConfig, env_path):
    if env_path:
        with open(env_path) as fh:
            return Environment.from_json(fh.read())
    return cfg.make_environment()


def _seed_digest(seeds) -> str:
    return hashlib.sha256(json.dumps(list(map(int, seeds))).encode()).hexdigest()[:12]


def cmd_gen_env(args) -> int:
    cfg = load_config(args.config)
    env = cfg.make_environment(args.seed)
    _atomic_write(args.out, env.to_json())
    print(f"wrote {args.out}: {env.n_buildings} buildings on "
          f"{env.area_side:g} m side")
    return 0


def cmd_collect(args) -> int:
    cfg = load_config(args.config)
    env = _load_env(cfg, args.env)
    setup = cfg.setup(env)
    strategy = cfg.doc["collect"]["strategy"]
    n_trials = int(cfg.doc["collect"]["n_trials"]
                   if args.trials is None else args.trials)
    seed = int(cfg.doc["seeds"][0] if args.seed is None else args.seed)
    tmp = f"{args.out}.tmp"
    try:
        with open(tmp, "w") as fh:
            count = datagen.collect(setup, strategy, n_trials, seed,
                                    lambda s: fh.write(s.to_json() + "\n"))
        os.replace(tmp, args.out)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    datagen.write_manifest(f"{args.out}.manifest.json", setup, strategy, seed,
                           count)
    print(f"wrote {count} samples to {args.out}")
    return 0


def _run_one_trial(cfg: ExperimentConfig, env, scheme, seed, record_traj=False):
    setup = cfg.setup(env)
    if scheme == "ges-bound":
        return run_ges_bound(setup, seed, record_traj=record_traj)
    planner = cfg.planner(env, scheme)
    return run_trial(setup, planner, seed, record_traj=record_traj)


def cmd_run_trial(args) -> int:
    cfg = load_config(args.config)
    env = _load_env(cfg, args.env)
    seed = int(cfg.doc["seeds"][0] if args.seed is None else args.seed)
    result = _run_one_trial(cfg, env, cfg.doc["planner"], seed,
                            record_traj=args.traj)
    _atomic_write(args.out, result.to_json(include_traj=args.traj))
    if args.csv:
        _atomic_write(args.csv, result.step_cr_csv())
    print(f"planner={cfg.doc['planner']} seed={seed} acr={result.acr:.4f} "
          f"mean_plan_s={result.plan_times_s.mean():.3f}")
    return 0


def cmd_compare(args) -> int:
    cfg = load_config(args.config)
    env = _load_env(cfg, args.env)
    schemes = [s.strip() for s in args.schemes.split(",") if s.strip()]
    for s in schemes:
        _require(s in PLANNERS, "schemes", f"unknown scheme {s!r}")
    seeds = [int(s) for s in cfg.doc["seeds"]]
    n_trials = len(seeds) if args.n_trials is None else int(args.n_trials)
    _require(n_trials <= len(seeds), "seeds",
             f"{n_trials} trials need {n_trials} seeds, have {len(seeds)}")
    seeds = seeds[:n_trials]
    digest = _seed_digest(seeds)
    os.makedirs(args.out, exist_ok=True)
    rows = ["scheme,n_trials,mean_acr,std_acr,seed_digest"]
    for scheme in schemes:
        acrs = []
        series = []
        for seed in seeds:
            result = _run_one_trial(cfg, env, scheme, seed)
            acrs.append(result.acr)
            series.append(result.step_cr)
        acrs = np.array(acrs)
        series = np.stack(series)
        rows.append(f"{scheme},{n_trials},{acrs.mean():.6f},"
                    f"{acrs.std(ddof=0):.6f},{digest}")
        lines = ["step,mean_cr,std_cr"]
        lines += [f"{i + 1},{series[:, i].mean():.6f},{series[:, i].std(ddof=0):.6f}"
                  for i in range(series.shape[1])]
        _atomic_write(os.path.join(args.out, f"stepcr_{scheme}.csv"),
                      "\n".join(lines) + "\n")
        print(f"{scheme}: mean ACR {acrs.mean():.4f} +- {acrs.std(ddof=0):.4f}")
    _atomic_write(os.path.join(args.out, "acr_table.csv"), "\n".join(rows) + "\n")
    return 0


def cmd_niche_heatmap(args) -> int:
    cfg = load_config(args.config)
    env = _load_env(cfg, args.env)
    setup = cfg.setup(env)
    scheme = cfg.doc["planner"]
    _require(scheme in ("nm", "sdl-nm", "sdl-me"), "planner",
             "niche-heatmap needs a searching planner")
    bin_width = cfg.niche_bin_width(env)
    out_lines = []
    if cfg.budget(scheme).n_mutations > 0:
        planner = cfg.planner(env, scheme)
        base_seed = int(cfg.doc["seeds"][0] if args.seed is None else args.seed)
        period_seeds = np.random.SeedSequence(base_seed).spawn(args.periods)
        for period in range(args.periods):
            rng_init, rng_plan = [np.random.default_rng(s)
                                  for s in period_seeds[period].spawn(2)]
            gu_pos = random_gu_positions(env, setup.n_gu, rng_init)
            prev = initial_placement(env, gu_pos, setup.n_abs, setup.k,
                                     setup.min_sep, rng_init)
            constraints = MoveConstraints(env, prev,
                                          setup.v_abs_max * cfg.time.period_s,
                                          setup.min_sep)
            plan = planner.plan(env, setup.params, gu_pos, constraints, rng_plan)
            oracle = ExactOracle(env, gu_pos, setup.params, setup.k,
                                 setup.max_size)
            for cand in plan.pool:
                niche = gridmap.feature_of(cand.seq, setup.k, env.area_side,
                                           bin_width)
                out_lines.append(json.dumps({
                    "period": period,
                    "seq": list(map(int, cand.seq)),
                    "niche": [niche.mean_bin, niche.std_bin],
                    "predicted_cr": round(cand.predicted_cr, 6),
                    "actual_cr": round(oracle.lambda_of(cand.seq), 6),
                }))
    _atomic_write(args.out, "\n".join(out_lines) + ("\n" if out_lines else ""))
    print(f"wrote {len(out_lines)} candidate records to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="abscov",
        description="Aerial-base-station coverage planning experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-env", help="write an environment JSON")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gen_env)

    p = sub.add_parser("collect", help="collect emulator training samples")
    p.add_argument("--config", required=True)
    p.add_argument("--env", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("run-trial", help="run one mission trial")
    p.add_argument("--config", required=True)
    p.add_argument("--env", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--csv", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--traj", action="store_true")
    p.set_defaults(func=cmd_run_trial)

    p = sub.add_parser("compare", help="matched-seed scheme comparison")
    p.add_argument("--config", required=True)
    p.add_argument("--env", default=None)
    p.add_argument("--schemes", required=True)
    p.add_argument("--n-trials", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("niche-heatmap",
                       help="dump per-candidate niches and coverage rates")
    p.add_argument("--config", required=True)
    p.add_argument("--env", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--periods", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_niche_heatmap)
    return parser


def main(argv=None) -> int:
    from .predictor import FormatError

    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FormatError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except BudgetError as exc:
        print(f"budget guard: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
