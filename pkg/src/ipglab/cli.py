"""Command-line pipeline: generate | collect | train | guide | report | trajectory | all.

Each stage writes into ``<output_dir>/<stage>/`` together with a ``STAMP``
file holding the stage hash (config keys the stage depends on, chained with
its upstream stages). ``all`` skips any stage whose stamp is current.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import harness, persist, recsys
from .config import ConfigError, ExperimentConfig, dump_config, load_config
from .guidance import Policy
from .harness import Prepared, World
from .simenv import Catalog

log = logging.getLogger("ipglab")

STAGES = ("generate", "collect", "train", "guide", "report", "trajectory")
STAGE_DIRS = {"generate": "world", "collect": "collect", "train": "train", "guide": "guide",
              "report": "report", "trajectory": "trajectory"}
STAGE_KEYS = {
    "generate": ("seed", "embed_noise_std", "n_users", "n_items"),
    "collect": ("click_w", "click_b", "gamma", "boredom_window", "boredom_trigger",
                "boredom_decay", "item_boredom_coeff", "collection_rounds", "oracle_fraction"),
    "train": ("learning_rate", "epochs", "l2_reg", "batch_size", "embed_dim", "init_noise",
              "encoder_decay"),
    "guide": ("policies", "alpha", "n_targets", "guidance_rounds", "gammas"),
    "report": ("k_values",),
    "trajectory": ("trajectory_users",),
}
UPSTREAM = {"generate": None, "collect": "generate", "train": "collect", "guide": "train",
            "report": "guide", "trajectory": "guide"}


class StageError(RuntimeError):
    pass


def _cumulative_keys(stage: str) -> list:
    keys = []
    while stage is not None:
        keys = list(STAGE_KEYS[stage]) + keys
        stage = UPSTREAM[stage]
    return keys


def stage_hash(cfg: ExperimentConfig, stage: str) -> str:
    return cfg.hash(_cumulative_keys(stage))


class Workspace:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.root = Path(cfg.output_dir)

    def dir(self, stage: str) -> Path:
        return self.root / STAGE_DIRS[stage]

    def path(self, stage: str, name: str) -> Path:
        return self.dir(stage) / name

    def meta(self, stage: str) -> dict:
        return {"seed": self.cfg.seed, "config_hash": stage_hash(self.cfg, stage)}

    def is_current(self, stage: str) -> bool:
        stamp = self.path(stage, "STAMP")
        return stamp.exists() and stamp.read_text().strip() == stage_hash(self.cfg, stage)

    def begin(self, stage: str) -> Path:
        d = self.dir(stage)
        d.mkdir(parents=True, exist_ok=True)
        stamp = d / "STAMP"
        if stamp.exists():
            stamp.unlink()
        return d

    def finish(self, stage: str) -> None:
        self.path(stage, "STAMP").write_text(stage_hash(self.cfg, stage) + "\n")

    def require(self, stage: str, what: str) -> None:
        if not self.is_current(stage):
            raise StageError(f"missing {what} (run `{stage}` with this config first)")


# --- stage implementations ------------------------------------------------

def _load_world(ws: Workspace) -> World:
    ws.require("generate", "world data")
    items = persist.load_matrix(ws.path("generate", "items.tsv"), "items")
    users = persist.load_matrix(ws.path("generate", "users.tsv"), "users")
    return World(Catalog(items), users)


def _load_prepared(ws: Workspace) -> Prepared:
    world = _load_world(ws)
    ws.require("collect", "collection data")
    ws.require("train", "model data")
    logs = persist.load_log(ws.path("collect", "log.tsv"))
    snap = persist.load_snapshot(ws.path("collect", "snapshot.tsv"))
    model = persist.load_model(ws.path("train", "model.tsv"))
    return Prepared(world, logs, snap, model, float("nan"), logs.clicked_histories(ws.cfg.n_users))


def stage_generate(ws: Workspace) -> None:
    cfg = ws.cfg
    d = ws.begin("generate")
    world = harness.generate_world(cfg.n_users, cfg.n_items, cfg.seed, cfg.embed_noise_std)
    persist.save_matrix(d / "items.tsv", world.catalog.embeddings, "items", **ws.meta("generate"))
    persist.save_matrix(d / "users.tsv", world.user_embeddings, "users", **ws.meta("generate"))
    ws.finish("generate")


def stage_collect(ws: Workspace) -> None:
    world = _load_world(ws)
    d = ws.begin("collect")
    _, logs, snap = harness.collect(ws.cfg, world)
    persist.save_log(d / "log.tsv", logs, **ws.meta("collect"))
    persist.save_snapshot(d / "snapshot.tsv", snap, **ws.meta("collect"))
    ws.finish("collect")


def stage_train(ws: Workspace) -> None:
    cfg = ws.cfg
    ws.require("collect", "collection data")
    logs = persist.load_log(ws.path("collect", "log.tsv"))
    d = ws.begin("train")
    result = recsys.train(logs, cfg.train_config(), cfg.n_items)
    metrics = recsys.evaluate_model(logs, result.model)
    persist.save_model(d / "model.tsv", result.model, **ws.meta("train"))
    with open(d / "metrics.tsv", "w") as fh:
        fh.write(persist.header("train-metrics", 1, **ws.meta("train")))
        fh.write("metric\tvalue\n")
        fh.write(f"final_loss\t{result.final_loss!r}\n")
        fh.write(f"train_log_loss\t{metrics['log_loss']!r}\n")
        fh.write(f"train_auc\t{metrics['auc']!r}\n")
    ws.finish("train")


def stage_guide(ws: Workspace) -> None:
    cfg = ws.cfg
    prep = _load_prepared(ws)
    d = ws.begin("guide")
    targets = harness.sample_targets(cfg.n_items, cfg.n_targets, cfg.seed)
    summaries = harness.run_episodes(cfg, prep, targets)
    persist.save_episodes(d / "episodes.tsv", summaries, **ws.meta("guide"))
    with open(d / "targets.tsv", "w") as fh:
        fh.write(persist.header("targets", 1, **ws.meta("guide")))
        fh.write("target_id\n" + "".join(f"{t}\n" for t in targets))
    ws.finish("guide")


def stage_report(ws: Workspace) -> None:
    cfg = ws.cfg
    if not ws.path("guide", "episodes.tsv").exists():
        raise StageError("missing episode data (run `guide` first)")
    ws.require("guide", "episode data")
    summaries = persist.load_episodes(ws.path("guide", "episodes.tsv"))
    report = harness.build_report(summaries, cfg.k_values, cfg)
    d = ws.begin("report")
    persist.save_report(d / "report.tsv", report, **ws.meta("report"))
    persist.save_report(d / "aggregate.tsv", report, aggregate=True, **ws.meta("report"))
    ws.finish("report")
    for row in report.aggregate:
        if row.K == cfg.k_values[-1]:
            log.info("gamma=%g %-14s HR@%d=%.4f IoI@%d=%.4f", row.gamma, row.policy, row.K, row.hr,
                     row.K, row.ioi)


def trajectory_name(user: int, target: int, policy: Policy, gamma: float) -> str:
    return f"traj_g{gamma!r}_{policy.name.replace(':', '-')}_t{target}_u{user}.tsv"


def write_trajectory(ws: Workspace, prep: Prepared, user: int, target: int, policy: Policy,
                     gamma: float) -> Path:
    cfg = ws.cfg
    if not 0 <= user < cfg.n_users:
        raise StageError(f"unknown user id {user}")
    prep.world.catalog.check(target)
    record = harness.run_guidance(prep.snapshot, prep.world.catalog, prep.model, policy, target,
                                  prep.histories, cfg.sim_config(gamma), cfg.guidance_rounds, cfg.seed)
    d = ws.dir("trajectory")
    d.mkdir(parents=True, exist_ok=True)
    path = d / trajectory_name(user, target, policy, gamma)
    persist.save_trajectory(path, record, user, prep.world.catalog.embeddings, **ws.meta("trajectory"))
    return path


def stage_trajectory_all(ws: Workspace) -> None:
    """Default case-study dumps: configured users x first target x every policy."""
    cfg = ws.cfg
    prep = _load_prepared(ws)
    ws.begin("trajectory")
    target = harness.sample_targets(cfg.n_items, cfg.n_targets, cfg.seed)[0]
    for policy in cfg.policy_list():
        for user in cfg.trajectory_users:
            write_trajectory(ws, prep, user, target, policy, cfg.gamma)
    ws.finish("trajectory")


RUNNERS = {"generate": stage_generate, "collect": stage_collect, "train": stage_train,
           "guide": stage_guide, "report": stage_report, "trajectory": stage_trajectory_all}


def run_all(ws: Workspace) -> None:
    ws.root.mkdir(parents=True, exist_ok=True)
    (ws.root / "config.ini").write_text(dump_config(ws.cfg, semantic_only=True))
    for stage in STAGES:
        if ws.is_current(stage):
            log.info("%s: up to date", stage)
            continue
        log.info("%s: running", stage)
        RUNNERS[stage](ws)


# --- argument handling ----------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config file (INI); defaults if omitted")
    common.add_argument("--seed", type=int, help="override the master seed")
    common.add_argument("--output-dir", help="override the output directory")
    common.add_argument("--workers", type=int, help="processes for guidance episodes")
    common.add_argument("-q", "--quiet", action="store_true")

    parser = argparse.ArgumentParser(prog="ipglab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("generate", "collect", "train", "guide", "report", "all"):
        sub.add_parser(name, parents=[common])
    traj = sub.add_parser("trajectory", parents=[common],
                          help="dump one user's guidance trajectory")
    traj.add_argument("--user", type=int)
    traj.add_argument("--target", type=int)
    traj.add_argument("--policy", help="random | greedy | heuristic[:alpha] | ipg | ipg_exact")
    traj.add_argument("--gamma", type=float, help="simulator gamma during guidance")
    return parser


def resolve_config(args, parser) -> ExperimentConfig:
    if args.config is not None and not Path(args.config).is_file():
        parser.error(f"config file not found: {args.config}")
    try:
        cfg = load_config(args.config)
        changes = {}
        if args.seed is not None:
            changes["seed"] = args.seed
        if args.output_dir is not None:
            changes["output_dir"] = args.output_dir
        if args.workers is not None:
            changes["workers"] = args.workers
        return cfg.replace(**changes) if changes else cfg
    except ConfigError as exc:
        parser.error(str(exc))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    cfg = resolve_config(args, parser)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(name)s: %(message)s", stream=sys.stderr, force=True)
    ws = Workspace(cfg)
    try:
        if args.command == "all":
            run_all(ws)
        elif args.command == "trajectory" and args.user is not None:
            if args.target is None or args.policy is None:
                parser.error("trajectory needs --user, --target and --policy together")
            policy = Policy.parse(args.policy, cfg.alpha)
            gamma = cfg.gamma if args.gamma is None else args.gamma
            path = write_trajectory(ws, _load_prepared(ws), args.user, args.target, policy, gamma)
            print(path)
        else:
            RUNNERS[args.command](ws)
    except (StageError, persist.FormatError, KeyError, ValueError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"ipglab {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
