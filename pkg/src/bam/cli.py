"""Command line entry point: ``bam <experiment> --config <ini> --seed <n> --out <dir>``.

The config file is INI. Keys in the ``[experiment]`` section (or a section
named after the experiment) map to options directly; keys in any other
section are prefixed with the section name, so ``[bf] alpha = 0.8`` sets
``bf_alpha``. Unknown keys are rejected.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import bandit, conjugate as cj, domains, infer
from .control import experiments as ctl
from .control.mppi import MppiConfig
from .records import grouped_summary, quantile_summary, write_csv, write_json
from .rng import stream


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Option sets per experiment
# ---------------------------------------------------------------------------


def _require(ok: bool, key: str, rule: str):
    if not ok:
        raise ConfigError(f"key '{key}' {rule}")


def _check_positive(opts, *keys):
    for key in keys:
        _require(getattr(opts, key) > 0, key, "must be positive")


@dataclass(frozen=True)
class BanditOptions:
    seeds: tuple = (0, 1, 2, 3, 4)
    arm_counts: tuple = (10,)
    horizon: int = 5000
    switch_rate: float = 0.016
    n_configs: int = 5
    agents: tuple = bandit.AGENTS
    bf_alpha: float = 0.8
    bocd_hazard: float = 0.016
    base_mean: float = 0.0
    base_variance: float = 0.02
    csv_every: int = 1

    def __post_init__(self):
        _require(len(self.seeds) > 0, "seeds", "must list at least one seed")
        _require(len(self.arm_counts) > 0 and all(int(k) >= 2 for k in self.arm_counts),
                 "arm_counts", "must list arm counts of at least 2")
        _require(0.0 < self.switch_rate < 1.0, "switch_rate", "must lie in (0, 1)")
        _require(set(self.agents) <= set(bandit.AGENTS), "agents",
                 f"must be drawn from {bandit.AGENTS}")
        _require(0.0 <= self.bf_alpha <= 1.0, "bf_alpha", "must lie in [0, 1]")
        _require(0.0 < self.bocd_hazard <= 1.0, "bocd_hazard", "must lie in (0, 1]")
        _check_positive(self, "horizon", "n_configs", "base_variance", "csv_every")


@dataclass(frozen=True)
class ControlOptions:
    seeds: tuple = (0, 1, 2, 3, 4)
    n_steps: int = 100
    trials_per_episode: int = 15
    gravities: tuple = ()
    methods: tuple = ()
    hazard: float = 0.11
    prior_precision: float = 1e-4
    noise_variance: float = 1e-6
    n_features: int = 200
    bandwidth: float = 6.0
    lam: float = 0.0
    mppi_horizon: int = 50
    mppi_samples: int = 32
    mppi_sampling_sd: float = 0.4**0.5
    mppi_temperature: float = 0.5

    def __post_init__(self):
        _require(len(self.seeds) > 0, "seeds", "must list at least one seed")
        _require(0.0 < self.hazard <= 1.0, "hazard", "must lie in (0, 1]")
        _require(self.lam >= 0, "lam", "must be non-negative")
        _check_positive(self, "n_steps", "trials_per_episode", "prior_precision",
                        "noise_variance", "n_features", "bandwidth", "mppi_horizon",
                        "mppi_samples", "mppi_sampling_sd", "mppi_temperature")


@dataclass(frozen=True)
class MnistOptions:
    seeds: tuple = tuple(range(10))
    data_dir: str = "data/mnist"
    n_train_domains: int = 8
    train_per_domain: int = 256
    n_test_domains: int = 8
    test_per_domain: int = 125
    prior_precision: float = 0.1
    noise_variance: float = 1e-4
    adaptation_count: int = 10
    lam: float = 0.0

    def __post_init__(self):
        _require(len(self.seeds) > 0, "seeds", "must list at least one seed")
        _require(self.lam >= 0, "lam", "must be non-negative")
        _require(self.test_per_domain >= 0, "test_per_domain", "must be non-negative")
        _check_positive(self, "n_train_domains", "train_per_domain", "n_test_domains",
                        "prior_precision", "noise_variance", "adaptation_count")


PROFILES = {
    "infer": {"desk": {}, "full": {}},
    "bandit": {"desk": {}, "full": {"arm_counts": (10, 50)}},
    "cartpole-episodic": {
        "desk": {"gravities": ctl.EPISODIC_GRAVITIES, "methods": ctl.EPISODIC_METHODS},
        "full": {"gravities": ctl.EPISODIC_GRAVITIES, "methods": ctl.EPISODIC_METHODS,
                 "n_steps": 200},
    },
    "cartpole-continual": {
        # 100-step trials leave the Earth swing-up unsolved, so desk keeps 200
        "desk": {"gravities": ctl.CONTINUAL_GRAVITIES, "methods": ctl.CONTINUAL_METHODS,
                 "n_steps": 200},
        "full": {"gravities": ctl.CONTINUAL_GRAVITIES, "methods": ctl.CONTINUAL_METHODS,
                 "n_steps": 200},
    },
    "mnist": {
        "desk": {},
        "full": {"n_train_domains": 32, "train_per_domain": 1875, "test_per_domain": 0},
    },
}

OPTION_TYPES = {
    "infer": infer.InferConfig,
    "bandit": BanditOptions,
    "cartpole-episodic": ControlOptions,
    "cartpole-continual": ControlOptions,
    "mnist": MnistOptions,
}
EXPERIMENTS = tuple(OPTION_TYPES)


def _parse_value(key: str, text: str, default):
    text = text.strip()
    try:
        if isinstance(default, bool):
            return {"true": True, "false": False}[text.lower()]
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return _parse_list(text, default)
        return text
    except (ValueError, KeyError):
        raise ConfigError(f"invalid value {text!r} for key '{key}'") from None


def _parse_list(text: str, default: tuple) -> tuple:
    items = [t.strip() for t in text.split(",") if t.strip()]
    sample = default[0] if default else None
    out = []
    for item in items:
        if isinstance(sample, str):
            out.append(item)
        elif "-" in item[1:] and sample is not None and isinstance(sample, int):
            lo, hi = item.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif isinstance(sample, int) and float(item).is_integer() and "." not in item:
            out.append(int(item))
        else:
            try:
                out.append(float(item))
            except ValueError:
                out.append(item)
    return tuple(out)


def load_options(experiment: str, config_path=None, profile: str = "desk"):
    if experiment not in OPTION_TYPES:
        raise ConfigError(f"unknown experiment {experiment!r}; expected one of {EXPERIMENTS}")
    if profile not in ("desk", "full"):
        raise ConfigError(f"unknown profile {profile!r}")
    kind = OPTION_TYPES[experiment]
    defaults = dataclasses.replace(kind(), **PROFILES[experiment][profile]) \
        if PROFILES[experiment][profile] else kind()
    values = {}
    if config_path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        read = parser.read(config_path, encoding="utf-8")
        if not read:
            raise ConfigError(f"cannot read config file {config_path}")
        names = {f.name for f in dataclasses.fields(kind)}
        for section in parser.sections():
            for key, text in parser.items(section):
                name = key if section in ("experiment", experiment) else f"{section}_{key}"
                if name not in names:
                    raise ConfigError(f"unknown key '{section}.{key}' for experiment {experiment}")
                values[name] = _parse_value(name, text, getattr(defaults, name))
    if "seeds" in values and not values["seeds"]:
        raise ConfigError("key 'seeds' must list at least one seed")
    try:
        return dataclasses.replace(defaults, **values)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------------------
# Runners
# ---------------------------------------------------------------------------


INFER_COLUMNS = ("method", "seed", "t", "theta", "mean", "mixture_mean", "log_variance",
                 "changepoint")


def run_infer(opts: infer.InferConfig, master_seed: int):
    rows = infer.run_infer(opts, master_seed)
    summary = {"methods": {}}
    for m in opts.methods():
        summary["methods"][m] = {
            "tracking_error": quantile_summary(infer.tracking_error(rows, m).values()),
            "final_log_variance": quantile_summary(infer.final_log_variance(rows, m).values()),
        }
    return rows, INFER_COLUMNS, summary


def run_bandit(opts: BanditOptions, master_seed: int):
    base = cj.GaussianBelief(opts.base_mean, opts.base_variance, bandit.NOISE_SD**2)
    rows, finals = [], []
    for k in opts.arm_counts:
        cfg = bandit.BanditRunConfig(n_arms=int(k), horizon=opts.horizon,
                                     switch_rate=opts.switch_rate, n_configs=opts.n_configs,
                                     seeds=tuple(opts.seeds))
        curves = bandit.run_bandit_experiment(cfg, opts.agents, master_seed, base=base,
                                              alpha=opts.bf_alpha, hazard=opts.bocd_hazard)
        for (config_id, seed, agent), curve in sorted(curves.items()):
            finals.append(dict(n_arms=int(k), agent=agent, regret=float(curve[-1])))
            for t in range(0, curve.size, opts.csv_every):
                rows.append(dict(n_arms=int(k), config_id=config_id, seed=seed, t=t + 1,
                                 agent=agent, regret=float(curve[t])))
    columns = ("n_arms",) + bandit.REGRET_COLUMNS
    return rows, columns, {"final_regret": grouped_summary(finals, ("n_arms", "agent"), "regret")}


def control_config(opts: ControlOptions, episodic: bool) -> ctl.ControlConfig:
    _require(len(opts.gravities) > 0 and all(float(g) > 0 for g in opts.gravities),
             "gravities", "must list positive values")
    known = ctl.EPISODIC_METHODS + ("bam_empty",) if episodic else ctl.CONTINUAL_METHODS
    _require(len(opts.methods) > 0 and set(opts.methods) <= set(known), "methods",
             f"must be drawn from {known}")
    mppi = MppiConfig(opts.mppi_horizon, opts.mppi_samples, opts.mppi_sampling_sd,
                      opts.mppi_temperature, opts.noise_variance)
    gravities = tuple(float(g) for g in opts.gravities)
    return ctl.ControlConfig(
        n_steps=opts.n_steps, trials_per_episode=opts.trials_per_episode,
        episodic_gravities=gravities if episodic else ctl.EPISODIC_GRAVITIES,
        continual_gravities=ctl.CONTINUAL_GRAVITIES if episodic else gravities,
        hazard=opts.hazard, prior_precision=opts.prior_precision,
        noise_variance=opts.noise_variance, n_features=opts.n_features,
        bandwidth=opts.bandwidth, lam=opts.lam, mppi=mppi)


def run_cartpole(opts: ControlOptions, master_seed: int, episodic: bool):
    cfg = control_config(opts, episodic)
    rows = []
    for seed in opts.seeds:
        s = int(np.random.SeedSequence([master_seed, seed]).generate_state(1)[0])
        run = ctl.episodic_experiment if episodic else ctl.continual_experiment
        for row in run(cfg, s, methods=opts.methods):
            rows.append({**row, "seed": seed})
    summary = {"scores": grouped_summary(rows, ("method", "episode", "trial"), "score")}
    if not episodic:
        total = len(cfg.continual_gravities) * cfg.trials_per_episode
        changes = [i * cfg.trials_per_episode for i in range(1, len(cfg.continual_gravities))]
        # dips need five trials before and three after each change
        changes = [c for c in changes if c >= 5 and c + 3 < total]
        dips = []
        for method in opts.methods:
            for seed in opts.seeds:
                scores = [r["score"] for r in rows if r["method"] == method and r["seed"] == seed]
                for c, d in zip(changes, ctl.score_dips(scores, changes)):
                    dips.append(dict(method=method, change=c, dip=float(d)))
        summary["dips"] = grouped_summary(dips, ("method", "change"), "dip")
        summary["optimizations"] = grouped_summary(
            [r for r in rows if r["trial"] == total - 1], ("method",), "optimizations")
    return rows, ctl.CONTROL_COLUMNS, summary


MNIST_COLUMNS = ("seed", "domain", "angle", "method", "accuracy", "selected")


def run_mnist(opts: MnistOptions, master_seed: int, data_dir=None):
    directory = Path(data_dir or opts.data_dir)
    try:
        train = domains.load_split(directory, "train")
        test = domains.load_split(directory, "test")
    except FileNotFoundError as exc:
        raise ConfigError(f"key 'data_dir': {exc}") from None
    profile = domains.DomainProfile(opts.n_train_domains, opts.train_per_domain,
                                    opts.n_test_domains, opts.test_per_domain or None)
    cfg = domains.ClassifierConfig(opts.prior_precision, opts.noise_variance,
                                   opts.adaptation_count, opts.lam)
    rows = []
    for seed in opts.seeds:
        try:
            result = domains.run_domain_experiment(train, test, stream(master_seed, "mnist", seed),
                                                   profile, cfg)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        rows.extend({**r, "seed": seed} for r in result)
    per_seed = grouped_summary(rows, ("method", "seed"), "accuracy")
    means = [dict(method=r["method"], accuracy=r["median"]) for r in per_seed]
    return rows, MNIST_COLUMNS, {"accuracy": grouped_summary(means, ("method",), "accuracy")}


def run(experiment: str, opts, master_seed: int):
    if experiment == "infer":
        return run_infer(opts, master_seed)
    if experiment == "bandit":
        return run_bandit(opts, master_seed)
    if experiment == "cartpole-episodic":
        return run_cartpole(opts, master_seed, episodic=True)
    if experiment == "cartpole-continual":
        return run_cartpole(opts, master_seed, episodic=False)
    return run_mnist(opts, master_seed)


def emit(rows, columns, summary, out_dir, stem) -> tuple:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = write_csv(rows, columns, out / f"{stem}.csv")
    json_path = write_json(summary, out / f"{stem}_summary.json")
    return csv_path, json_path


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="bam", description="Run a BAM experiment.")
    parser.add_argument("experiment", choices=EXPERIMENTS)
    parser.add_argument("--config", type=Path, default=None)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", type=Path, default=Path("results"))
    parser.add_argument("--profile", choices=("desk", "full"), default="desk")
    args = parser.parse_args(argv)
    try:
        opts = load_options(args.experiment, args.config, args.profile)
        rows, columns, summary = run(args.experiment, opts, args.seed)
    except ConfigError as exc:
        print(f"bam: config error: {exc}", file=sys.stderr)
        return 2
    summary = {"experiment": args.experiment, "seed": args.seed, "profile": args.profile,
               **summary}
    csv_path, json_path = emit(rows, columns, summary, args.out, args.experiment)
    print(f"wrote {csv_path} and {json_path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
