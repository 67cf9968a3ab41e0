"""Command-line driver: ``mtvf {generate,train,evaluate,transfer,options,oracle}``.

Exit codes: 0 success, 2 usage or configuration error, 3 divergence.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from . import evaluation, experience, transfer
from .features import one_hot_map
from .mdp import LayoutError, build_four_rooms, load_layout, sample_tasks, solve_exact
from .planners import DivergenceError, PlannerConfig, mt_fqi, mt_pi
from .solvers import VARIANTS, SolverConfig, load_model, save_model

log = logging.getLogger("mtvf")

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED = 0, 2, 3
METHODS = ("st-fqi", "st-fpi", "mt-fqi-mtfl", "mt-fqi-aso", "mt-fpi-mtfl", "mt-fpi-aso")


class ConfigError(ValueError):
    """Bad or inconsistent configuration."""


def parse_method(method: str) -> tuple[str, str]:
    """``"mt-fpi-aso" -> ("fpi", "aso")``; single-task methods use the independent solver."""
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    parts = method.split("-")
    return parts[1], parts[2] if parts[0] == "mt" else "independent"


@dataclass
class ExperimentConfig:
    seed: int = 0
    layout: str | None = None
    discount: float = 0.95
    num_tasks: int = 30
    reward_value: float = 1.0
    budgets: list = field(default_factory=lambda: [500, 1000])
    episode_cap: int = 100
    methods: list = field(default_factory=lambda: list(METHODS))
    planner: PlannerConfig = PlannerConfig()
    solvers: dict = field(default_factory=dict)
    rollout: evaluation.RolloutConfig = evaluation.RolloutConfig()
    transfer: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)

    def solver(self, variant: str) -> SolverConfig:
        return self.solvers.get(variant, SolverConfig(variant=variant))

    def planner_for(self, variant: str) -> PlannerConfig:
        return replace(self.planner, discount=self.discount, solver=self.solver(variant))


def _build(cls, raw, where: str):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a mapping")
    known = {f.name for f in fields(cls)}
    extra = sorted(set(raw) - known)
    if extra:
        raise ConfigError(f"{where}: unknown keys {extra}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


TRANSFER_DEFAULTS = {
    "source": "mt-fqi-aso", "source_budget": 1000, "num_tasks": 10, "seed": 1,
    "budgets": [50, 200, 300, 500], "episode_cap": 100,
}
OPTION_DEFAULTS = {
    "source": "mt-fqi-aso", "source_budget": 1000, "budgets": [30, 50, 100, 200, 300],
    "exit_budgets": [10, 30], "seed": 2, "episode_cap": 100,
}


def load_config(path: str | Path | None) -> ExperimentConfig:
    """Read a YAML experiment config; missing keys fall back to the defaults above."""
    raw = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    raw = dict(raw)
    known = {f.name for f in fields(ExperimentConfig)}
    extra = sorted(set(raw) - known)
    if extra:
        raise ConfigError(f"unknown config keys {extra}")
    planner_raw = dict(raw.pop("planner", None) or {})
    solvers_raw = raw.pop("solvers", None) or {}
    rollout = _build(evaluation.RolloutConfig, raw.pop("rollout", None), "rollout")
    planner = _build(PlannerConfig, planner_raw, "planner")
    solvers = {}
    for variant, block in solvers_raw.items():
        if variant not in VARIANTS:
            raise ConfigError(f"solvers: unknown variant {variant!r}")
        solvers[variant] = _build(SolverConfig, {**(block or {}), "variant": variant}, f"solvers.{variant}")
    for key, defaults in (("transfer", TRANSFER_DEFAULTS), ("options", OPTION_DEFAULTS)):
        block = raw.get(key) or {}
        unknown = sorted(set(block) - set(defaults))
        if unknown:
            raise ConfigError(f"{key}: unknown keys {unknown}")
        raw[key] = {**defaults, **block}
    try:
        cfg = ExperimentConfig(planner=planner, solvers=solvers, rollout=rollout, **raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    for m in cfg.methods:
        parse_method(m)
    if not cfg.budgets or any(int(b) < 1 for b in cfg.budgets):
        raise ConfigError("budgets must be a non-empty list of positive integers")
    if not 0 <= cfg.discount < 1:
        raise ConfigError("discount must lie in [0, 1)")
    return cfg


# --- shared setup -------------------------------------------------------------------------


class Experiment:
    """Environment, tasks and oracles derived deterministically from a config."""

    def __init__(self, cfg: ExperimentConfig, out: Path):
        self.cfg, self.out = cfg, out
        layout = None
        if cfg.layout is not None:
            if not Path(cfg.layout).is_file():
                raise ConfigError(f"layout file not found: {cfg.layout}")
            layout = load_layout(cfg.layout)
        self.mdp, self.layout = build_four_rooms(layout, cfg.discount)
        self.tasks = sample_tasks(self.mdp, cfg.num_tasks, cfg.seed, cfg.reward_value)
        self.features = one_hot_map(self.mdp.num_states, self.mdp.num_actions)
        self._oracles = None

    @property
    def oracles(self):
        if self._oracles is None:
            self._oracles = [solve_exact(self.mdp, t) for t in self.tasks]
        return self._oracles

    def data_path(self, budget: int, task_id: int) -> Path:
        return self.out / "data" / f"b{budget}" / f"task_{task_id:03d}.csv"

    def model_path(self, method: str, budget: int) -> Path:
        return self.out / "models" / f"{method}_b{budget}.model"

    def dataset_seed(self, task_id: int, budget: int) -> int:
        return self.cfg.seed * 1_000_003 + budget * 1009 + task_id

    def load_data(self, budget: int):
        out = []
        for t in self.tasks:
            path = self.data_path(budget, t.task_id)
            if not path.is_file():
                raise ConfigError(f"missing dataset {path}; run 'generate' first")
            out.append(experience.load(path))
        return out


def sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _writable(out: Path) -> None:
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable: {exc.strerror or exc}") from None


# --- subcommands --------------------------------------------------------------------------


def cmd_generate(exp: Experiment) -> int:
    rows = []
    for budget in exp.cfg.budgets:
        for t in exp.tasks:
            path = exp.data_path(budget, t.task_id)
            path.parent.mkdir(parents=True, exist_ok=True)
            data = experience.collect(exp.mdp, t, budget, exp.cfg.episode_cap, exp.dataset_seed(t.task_id, budget))
            experience.save(data, path)
            rows.append([path.relative_to(exp.out).as_posix(), t.task_id, t.goal_state, budget, sha256(path)])
    with open(exp.out / "manifest.csv", "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["file", "task_id", "goal", "budget", "sha256"])
        out.writerows(rows)
    log.info("wrote %d datasets", len(rows))
    return EXIT_OK


def train_method(exp: Experiment, method: str, budget: int):
    """Train one method; returns ``(model, trace)`` or raises ``DivergenceError``."""
    algo, variant = parse_method(method)
    data = exp.load_data(budget)
    config = exp.cfg.planner_for(variant)
    monitor = evaluation.q_monitor(exp.tasks, exp.oracles, exp.mdp, exp.features)
    if algo == "fqi":
        model, trace = mt_fqi(data, exp.features, config, monitor=monitor)
    else:
        model, _, trace = mt_pi(data, exp.features, config, monitor=monitor)
    return model, trace


def _train_job(args):
    cfg, out, method, budget = args
    exp = Experiment(cfg, out)
    try:
        model, trace = train_method(exp, method, budget)
    except DivergenceError as exc:
        return method, budget, str(exc)
    path = exp.model_path(method, budget)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, path)
    trace_dir = out / "traces"
    trace_dir.mkdir(exist_ok=True)
    trace.to_csv(trace_dir / f"{method}_b{budget}.csv")
    return method, budget, None


def cmd_train(exp: Experiment, methods, budgets, jobs: int = 1) -> int:
    for m in methods:
        parse_method(m)
    work = [(exp.cfg, exp.out, m, b) for b in budgets for m in methods]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_train_job, work))
    else:
        results = [_train_job(w) for w in work]
    diverged = [(m, b, msg) for m, b, msg in results if msg]
    for m, b, msg in diverged:
        print(f"mtvf: {m} at budget {b}: {msg}", file=sys.stderr)
    return EXIT_DIVERGED if diverged else EXIT_OK


def _load_model_checked(exp: Experiment, path: Path):
    if not path.is_file():
        raise ConfigError(f"model file not found: {path}")
    try:
        model = load_model(path)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if model.dimension != exp.features.dimension:
        raise ConfigError(
            f"{path}: model has dimension {model.dimension} but the configured MDP needs "
            f"{exp.features.dimension}"
        )
    return model


def cmd_evaluate(exp: Experiment, model_path: Path, dest: Path | None = None) -> int:
    model = _load_model_checked(exp, model_path)
    missing = [t.task_id for t in exp.tasks if t.task_id not in model.task_ids]
    if missing:
        raise ConfigError(f"{model_path}: model lacks tasks {missing}")
    report = evaluation.evaluate(model, exp.tasks, exp.oracles, exp.mdp, exp.features, exp.cfg.rollout)
    dest = dest or exp.out / "eval" / f"{model_path.stem}.csv"
    dest.parent.mkdir(parents=True, exist_ok=True)
    report.to_csv(dest)
    return EXIT_OK


def _subspace(exp: Experiment, model_path: Path):
    model = _load_model_checked(exp, model_path)
    if model.u_matrix is None or len(model.u_matrix) == 0:
        raise ConfigError(f"{model_path}: {model.variant} model has no shared subspace to transfer")
    return model.subspace


def _source_model(exp: Experiment, block: dict, model_path) -> Path:
    if model_path is not None:
        return Path(model_path)
    return exp.model_path(block["source"], int(block["source_budget"]))


def cmd_transfer(exp: Experiment, model_path=None) -> int:
    block = exp.cfg.transfer
    subspace = _subspace(exp, _source_model(exp, block, model_path))
    train_goals = [t.goal_state for t in exp.tasks]
    new_tasks = sample_tasks(
        exp.mdp, int(block["num_tasks"]), int(block["seed"]), exp.cfg.reward_value,
        exclude=train_goals, first_id=1000,
    )
    rows = transfer.transfer_curve(
        exp.mdp, new_tasks, subspace, exp.features, [int(b) for b in block["budgets"]],
        exp.cfg.planner_for("independent"), train_goals, exp.cfg.rollout, int(block["seed"]),
        int(block["episode_cap"]),
    )
    dest = exp.out / "transfer.csv"
    transfer.write_transfer_table(rows, dest)
    return EXIT_OK


def cmd_options(exp: Experiment, model_path=None) -> int:
    block = exp.cfg.options
    subspace = _subspace(exp, _source_model(exp, block, model_path))
    config = exp.cfg.planner_for("independent")
    seed, cap = int(block["seed"]), int(block["episode_cap"])
    rooms = transfer.option_table(exp.mdp, exp.layout, subspace, [int(b) for b in block["budgets"]],
                                  config, seed, episode_cap=cap)
    exits = transfer.option_table(exp.mdp, exp.layout, subspace, [int(b) for b in block["exit_budgets"]],
                                  config, seed, exit_options=True, episode_cap=cap)
    transfer.write_option_table(rooms, exp.out / "options_rooms.csv")
    transfer.write_option_table(exits, exp.out / "options_exit.csv")
    return EXIT_OK


def cmd_oracle(exp: Experiment) -> int:
    dest = exp.out / "oracle.csv"
    with open(dest, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["task_id", "goal", "state", "action", "q_star"])
        for t, o in zip(exp.tasks, exp.oracles):
            for s in range(exp.mdp.num_states):
                for a in range(exp.mdp.num_actions):
                    out.writerow([t.task_id, t.goal_state, s, a, f"{o.q_star[s, a]:.17g}"])
    return EXIT_OK


# --- argument parsing ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config (defaults apply when omitted)")
    common.add_argument("--out", default="runs", help="output directory (default: runs)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for train (default: 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="mtvf", description="Multi-task value-function learning experiments on grid worlds."
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="collect datasets and write a manifest")
    p = sub.add_parser("train", parents=[common], help="fit one or more methods")
    p.add_argument("--method", action="append", help="method name; repeatable (default: config methods)")
    p.add_argument("--budget", type=int, action="append", help="budget; repeatable (default: config budgets)")
    p = sub.add_parser("evaluate", parents=[common], help="evaluate a saved model")
    p.add_argument("model", help="model file written by 'train'")
    p.add_argument("--report", help="output CSV (default: <out>/eval/<model>.csv)")
    for name, text in (("transfer", "transfer curves on new tasks"), ("options", "option recovery tables")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--model", help="source model with a shared subspace (default: from config)")
    sub.add_parser("oracle", parents=[common], help="dump exact Q* tables")
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        out = Path(args.out)
        _writable(out)
        exp = Experiment(cfg, out)
        if args.command == "generate":
            return cmd_generate(exp)
        if args.command == "train":
            return cmd_train(exp, args.method or cfg.methods, args.budget or cfg.budgets, args.jobs)
        if args.command == "evaluate":
            return cmd_evaluate(exp, Path(args.model), Path(args.report) if args.report else None)
        if args.command == "transfer":
            return cmd_transfer(exp, args.model)
        if args.command == "options":
            return cmd_options(exp, args.model)
        return cmd_oracle(exp)
    except (ConfigError, LayoutError, experience.ExperienceFormatError, transfer.TransferError) as exc:
        print(f"mtvf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"mtvf: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
