"""
Created on 2026-10-18

@author: wf

command line surface: data generation, training, evaluation,
gradient verification and sweeps
"""

import csv
import dataclasses
import logging
import os
import sys
from argparse import ArgumentParser
from dataclasses import field
from typing import Dict, List, Optional, Tuple

import numpy as np

from pidm.cmd import BaseCmd
from pidm.data import Batch, DatasetManifest, DatasetSplit, ManifestEntry, sample_window, write_trajectory
from pidm.model import Model, ModelConfig
from pidm.objective import compute_losses
from pidm.profiler import Profiler
from pidm.progress import progressbar
from pidm.rollout import (
    EvalReport,
    ExpertPolicy,
    ModelPolicy,
    PolicyError,
    eval_benchmark,
    eval_sequences,
    eval_threads,
    fingerprint,
    parallel_map,
)
from pidm.sim import EPISODE_CAP, FAMILIES, PLAY_HORIZON, TaskSpec, gen_demos, gen_play
from pidm.tensor import gradcheck
from pidm.train import (
    Checkpoint,
    ExperimentConfig,
    TrainConfig,
    checkpoint_bytes,
    epoch_checkpoint_path,
    fit,
    load_checkpoint,
    save_checkpoint,
    write_loss_log,
)
from pidm.yamlable import ConfigError, lod_storable

logger = logging.getLogger(__name__)

ABLATIONS = ("no_fore", "no_inv", "detach_frs")
SWEEP_VARIANTS = ("scratch", "pretrained", "detach_frs", "no_fore")
SWEEP_COLUMNS = ["fraction", "seed", "variant", "sr", "avg_len"]


class GradcheckFailed(RuntimeError):
    """
    analytic and numeric gradients disagree beyond the tolerance
    """


@lod_storable
class RunConfig:
    """
    the inputs of one command run, saved next to its outputs
    """

    command: str
    data: Optional[str] = None
    config: Optional[str] = None
    preset: str = "toy"
    init: Optional[str] = None
    out: Optional[str] = None
    seed: int = 0
    fraction: Optional[float] = None
    ablate: List[str] = field(default_factory=list)
    overrides: Dict[str, str] = field(default_factory=dict)


def parse_overrides(items: Optional[List[str]]) -> Dict[str, str]:
    """
    KEY=VALUE strings to a dict
    """
    overrides = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"override '{item}' is not of the form section.field=value")
        overrides[key.strip()] = value.strip()
    return overrides


def parse_list(text: str, choices: Tuple[str, ...] = (), what: str = "value") -> List[str]:
    items = [item.strip() for item in text.split(",") if item.strip()]
    for item in items:
        if choices and item not in choices:
            raise ConfigError(f"unknown {what} {item}: expected one of {', '.join(choices)}")
    return items


class PidmCmd(BaseCmd):
    """
    command line handling for pidm
    """

    def getArgParser(self, description: str = None, version_msg=None) -> ArgumentParser:
        parser = super().getArgParser(description, version_msg)
        subparsers = parser.add_subparsers(dest="command", metavar="command")

        gen = subparsers.add_parser("gen-data", help="generate demonstration and play trajectories")
        gen.add_argument("--out", required=True, help="dataset directory")
        gen.add_argument("--tasks", default=",".join(FAMILIES), help="task families [default: %(default)s]")
        gen.add_argument("--demos-per-task", type=int, default=10, help="demos per task [default: %(default)s]")
        gen.add_argument("--play", type=int, default=50, help="play trajectories [default: %(default)s]")
        gen.add_argument("--horizon", type=int, default=PLAY_HORIZON, help="play horizon [default: %(default)s]")
        gen.add_argument("--seed", type=int, default=0, help="base seed [default: %(default)s]")
        gen.add_argument(
            "--scene", choices=["task", "playground"], default="task", help="demo scene [default: %(default)s]"
        )
        gen.add_argument("--image-size", type=int, default=None, help="render size, default from the preset")
        gen.add_argument("--preset", default="toy", help="preset for the image size [default: %(default)s]")
        gen.add_argument("--force", action="store_true", help="write into a non-empty directory")
        self.add_progress(gen)

        for mode in ("pretrain", "finetune"):
            train = subparsers.add_parser(mode, help=f"{mode} a model")
            train.add_argument("--data", required=True, help="dataset directory")
            self.add_config_args(train)
            train.add_argument("--init", help="checkpoint to start from")
            train.add_argument("--init-epoch", type=int, help="use the per-epoch checkpoint of --init")
            train.add_argument("--out", required=True, help="checkpoint to write")
            train.add_argument("--epochs", type=int, help="override the number of epochs")
            train.add_argument("--seed", type=int, help="override the training seed")
            train.add_argument("--fraction", type=float, help="subsample ratio of the split")
            train.add_argument("--ablate", action="append", choices=ABLATIONS, default=[], help="ablation flag")
            train.add_argument("--log", help="loss log CSV [default: <out>.log.csv]")
            train.add_argument("--loss-last-only", action="store_true", help="loss on the last timestep only")
            train.add_argument("--freeze-encoders", action="store_true", help="freeze the patch and word embedders")
            self.add_progress(train)

        ev = subparsers.add_parser("eval", help="evaluate a finetuned checkpoint")
        ev.add_argument("--ckpt", help="finetuned checkpoint")
        ev.add_argument("--tasks", default=",".join(FAMILIES), help="task families [default: %(default)s]")
        ev.add_argument("--episodes", type=int, default=10, help="episodes per task [default: %(default)s]")
        ev.add_argument("--chains", type=int, default=0, help="five-task chains [default: %(default)s]")
        ev.add_argument("--seed", type=int, default=1000, help="base seed [default: %(default)s]")
        ev.add_argument("--cap", type=int, default=EPISODE_CAP, help="steps per episode [default: %(default)s]")
        ev.add_argument("--report", required=True, help="EvalReport JSON to write")
        ev.add_argument("--frames", help="directory for PPM frames of the first episode per task")
        ev.add_argument("--oracle", action="store_true", help="evaluate the scripted expert")
        ev.add_argument("--first-only", action="store_true", help="execute the first chunk action only")
        ev.add_argument("--ensemble-oldest", action="store_true", help="favor the oldest chunk in the ensemble")
        ev.add_argument("--image-size", type=int, default=32, help="render size for --oracle [default: %(default)s]")

        grad = subparsers.add_parser("gradcheck", help="verify the gradients of the full loss")
        grad.add_argument("--preset", default="tiny", help="model preset [default: %(default)s]")
        grad.add_argument("--config", help="experiment YAML file")
        grad.add_argument("--set", action="append", dest="overrides", metavar="KEY=VALUE", help="config override")
        grad.add_argument("--mode", choices=["pretrain", "finetune"], default="finetune")
        grad.add_argument("--tolerance", type=float, default=1e-4, help="max relative error [default: %(default)s]")
        grad.add_argument("--eps", type=float, default=1e-4, help="finite difference step [default: %(default)s]")
        grad.add_argument("--seed", type=int, default=0, help="seed [default: %(default)s]")
        grad.add_argument("--batch", type=int, default=2, help="windows in the batch [default: %(default)s]")

        sweep = subparsers.add_parser("sweep", help="data efficiency and ablation sweep")
        sweep.add_argument("--data", required=True, help="dataset directory")
        self.add_config_args(sweep)
        sweep.add_argument("--init", help="pretrained checkpoint, pretrain per seed if missing")
        sweep.add_argument("--fractions", default="0.1,0.2,0.4,0.7,1.0", help="fractions [default: %(default)s]")
        sweep.add_argument("--seeds", type=int, default=3, help="seeds per fraction [default: %(default)s]")
        sweep.add_argument(
            "--variants", default="scratch,pretrained", help=f"variants out of {', '.join(SWEEP_VARIANTS)}"
        )
        sweep.add_argument("--tasks", help="task families, default those of the finetune split")
        sweep.add_argument("--episodes", type=int, default=10, help="episodes per task [default: %(default)s]")
        sweep.add_argument("--chains", type=int, default=0, help="five-task chains [default: %(default)s]")
        sweep.add_argument("--eval-seed", type=int, default=1000, help="evaluation seed [default: %(default)s]")
        sweep.add_argument("--epochs", type=int, help="override the number of epochs")
        sweep.add_argument("--out", required=True, help="CSV to write")
        sweep.add_argument("--work", help="directory for intermediate checkpoints [default: <out>.runs]")
        self.add_progress(sweep)
        return parser

    def add_config_args(self, parser: ArgumentParser):
        parser.add_argument("--preset", default="toy", help="shipped preset tiny, toy or paper [default: %(default)s]")
        parser.add_argument("--config", help="experiment YAML file, replaces the preset")
        parser.add_argument(
            "--set", action="append", dest="overrides", metavar="KEY=VALUE", help="override e.g. model.embed_dim=32"
        )

    def add_progress(self, parser: ArgumentParser):
        parser.add_argument("--progress", action="store_true", help="show progress bars")

    def experiment(self) -> ExperimentConfig:
        """
        the experiment configuration selected by --config or --preset with --set overrides
        """
        if self.args.config:
            config = ExperimentConfig.load_from_yaml_file(self.args.config)
        else:
            config = ExperimentConfig.preset(self.args.preset)
        overrides = parse_overrides(self.args.overrides)
        if overrides:
            config = config.with_overrides(overrides)
        return config

    def handle_args(self) -> bool:
        handled = super().handle_args()
        if handled:
            return handled
        handlers = {
            "gen-data": self.cmd_gen_data,
            "pretrain": lambda: self.cmd_train("pretrain"),
            "finetune": lambda: self.cmd_train("finetune"),
            "eval": self.cmd_eval,
            "gradcheck": self.cmd_gradcheck,
            "sweep": self.cmd_sweep,
        }
        if self.args.command is None:
            self.parser.print_usage()
            self.exit_code = 1
            return False
        handlers[self.args.command]()
        return True

    def cmd_gen_data(self):
        """
        write demos (finetune split) and play (pretrain split) with a manifest
        """
        args = self.args
        out = args.out
        if os.path.isdir(out) and os.listdir(out) and not args.force:
            raise FileExistsError(f"{out} is not empty, use --force to write into it")
        os.makedirs(out, exist_ok=True)
        families = parse_list(args.tasks, FAMILIES, "task")
        image_size = args.image_size or ExperimentConfig.preset(args.preset).model.image_size
        entries = []
        bar = progressbar(len(families) + 1, desc="gen-data", unit="set", with_progress=args.progress)
        if args.demos_per_task > 0:
            for family in families:
                task = TaskSpec.of(family)
                demos = gen_demos(task, args.demos_per_task, args.seed, scene=args.scene, image_size=image_size)
                for i, demo in enumerate(demos):
                    path = f"demo_{family}_{i:04d}.traj"
                    write_trajectory(demo, os.path.join(out, path))
                    entries.append(ManifestEntry(path, "finetune", family, demo.instruction, demo.length))
                bar.update()
        if args.play > 0:
            for i, play in enumerate(gen_play(args.play, args.horizon, args.seed, image_size=image_size)):
                path = f"play_{i:04d}.traj"
                write_trajectory(play, os.path.join(out, path))
                entries.append(ManifestEntry(path, "pretrain", play.task, None, play.length))
        bar.update()
        bar.close()
        DatasetManifest(entries, seed=args.seed, image_size=image_size).save(out)
        logger.info(f"wrote {len(entries)} trajectories to {out}")

    def train_configs(self, mode: str) -> Tuple[ModelConfig, TrainConfig]:
        args = self.args
        model_config, train_config = self.experiment().for_mode(mode)
        changes = {name: True for name in args.ablate}
        if args.epochs is not None:
            changes["epochs"] = args.epochs
        if args.seed is not None:
            changes["seed"] = args.seed
        if args.loss_last_only:
            changes["loss_last_only"] = True
        if args.freeze_encoders:
            changes["freeze_encoders"] = True
        train_config = dataclasses.replace(train_config, **changes).validate()
        return model_config, train_config

    def cmd_train(self, mode: str):
        """
        pretrain or finetune from the dataset, writing checkpoint, loss log and run config
        """
        args = self.args
        model_config, train_config = self.train_configs(mode)
        manifest = DatasetManifest.load(args.data)
        if manifest.image_size != model_config.image_size:
            raise ConfigError(
                f"dataset image size {manifest.image_size} != model image size {model_config.image_size}"
            )
        split = DatasetSplit.load(args.data, args.fraction, seed=train_config.seed, mode=mode)
        trajectories = split.for_mode(mode)
        init = None
        if args.init:
            path = args.init if args.init_epoch is None else epoch_checkpoint_path(args.init, args.init_epoch)
            init = load_checkpoint(path)
        profiler = Profiler(f"{mode} {len(trajectories)} trajectories", profile=args.verbose)
        result = fit(trajectories, model_config, train_config, init=init, ckpt_path=args.out, with_progress=args.progress)
        profiler.time()
        save_checkpoint(result.checkpoint, args.out)
        header = {
            "mode": mode,
            "trajectories": result.trajectories,
            "windows": result.windows,
            "preset": model_config.preset,
            "seed": train_config.seed,
            "fraction": args.fraction,
        }
        write_loss_log(args.log or f"{args.out}.log.csv", result, header)
        RunConfig(
            command=mode,
            data=args.data,
            config=args.config,
            preset=args.preset,
            init=args.init,
            out=args.out,
            seed=train_config.seed,
            fraction=args.fraction,
            ablate=list(args.ablate),
            overrides=parse_overrides(args.overrides),
        ).save_to_yaml_file(f"{args.out}.run.yaml")

    def cmd_eval(self):
        """
        task benchmark and optional chains, written as an EvalReport
        """
        args = self.args
        tasks = [TaskSpec.of(family) for family in parse_list(args.tasks, FAMILIES, "task")]
        if args.oracle:
            image_size = args.image_size
            label = "oracle"
            stamp = fingerprint(b"oracle")

            def policy_factory():
                return ExpertPolicy()

        else:
            if not args.ckpt:
                raise ConfigError("eval needs --ckpt unless --oracle is given")
            ckpt = load_checkpoint(args.ckpt)
            model = self.policy_model(ckpt)
            image_size = model.config.image_size
            label = "first" if args.first_only else ("ensemble-oldest" if args.ensemble_oldest else "ensemble")
            stamp = fingerprint(checkpoint_bytes(ckpt))

            def policy_factory():
                return ModelPolicy(model, ensemble=not args.first_only, oldest_favored=args.ensemble_oldest)

        report = self.evaluate(tasks, policy_factory, args.episodes, args.chains, args.seed, image_size, args.frames)
        report.policy = label
        report.fingerprint = stamp
        report.save(args.report)
        for result in report.tasks:
            print(f"{result.task}: SR {result.success_rate:.3f} Score {result.mean_score:.3f}/{result.full_score}")
        if report.sequences is not None:
            print(f"Avg. Len. {report.sequences.avg_len:.3f}")

    def policy_model(self, ckpt: Checkpoint) -> Model:
        if ckpt.model_config.mode != "finetune":
            raise PolicyError(
                "checkpoint was trained in pretrain mode and has no language conditioning; "
                "finetune it before evaluation"
            )
        return ckpt.model()

    def evaluate(
        self,
        tasks: List[TaskSpec],
        policy_factory,
        episodes: int,
        chains: int,
        seed: int,
        image_size: int,
        frames: Optional[str] = None,
        threads: Optional[int] = None,
    ) -> EvalReport:
        cap = getattr(self.args, "cap", EPISODE_CAP)
        results = eval_benchmark(
            tasks, policy_factory, episodes, seed, cap=cap, image_size=image_size, frames_dir=frames, threads=threads
        )
        sequences = None
        if chains > 0:
            sequences = eval_sequences(chains, policy_factory, seed, cap=cap, image_size=image_size, threads=threads)
        return EvalReport(tasks=results, sequences=sequences, seed=seed, episodes=episodes)

    def cmd_gradcheck(self):
        """
        compare analytic and finite-difference gradients of the full loss
        """
        args = self.args
        model_config, _train_config = self.experiment().for_mode(args.mode)
        model_config = dataclasses.replace(model_config, dtype="f64").validate()
        model = Model(model_config, seed=args.seed)
        batch = self.gradcheck_batch(model_config, args.mode, args.batch, args.seed)
        params = model.trainable()

        def loss_fn():
            return compute_losses(model, batch).total

        profiler = Profiler(f"gradcheck {model_config.preset}/{args.mode}", profile=args.verbose)
        worst = gradcheck(loss_fn, params, eps=args.eps)
        profiler.time()
        count = sum(param.data.size for param in params.values())
        print(f"max relative error {worst:.3e} over {count} parameters ({len(params)} tensors)")
        if worst > args.tolerance:
            raise GradcheckFailed(f"max relative error {worst:.3e} exceeds tolerance {args.tolerance:.1e}")

    def gradcheck_batch(self, config: ModelConfig, mode: str, size: int, seed: int) -> Batch:
        m, n = config.history, config.chunk
        if mode == "finetune":
            traj = gen_demos(TaskSpec.of("pick-place"), 1, seed, image_size=config.image_size)[0]
        else:
            traj = gen_play(1, PLAY_HORIZON, seed, image_size=config.image_size)[0]
        rng = np.random.default_rng(seed)
        stop = traj.length - n - (1 if mode == "pretrain" else 0)
        focus = sorted(rng.choice(stop, size=min(size, stop), replace=False))
        windows = [sample_window(traj, int(t), m, n, mode) for t in focus]
        return Batch.stack(windows, [(0, int(t)) for t in focus])

    def cmd_sweep(self):
        """
        finetune every (fraction, seed, variant), evaluate and write one CSV row each
        """
        args = self.args
        fractions = [float(value) for value in parse_list(args.fractions, what="fraction")]
        variants = parse_list(args.variants, SWEEP_VARIANTS, "variant")
        if args.seeds < 1:
            raise ConfigError(f"seeds must be >= 1, got {args.seeds}")
        experiment = self.experiment()
        work = args.work or f"{args.out}.runs"
        os.makedirs(work, exist_ok=True)
        manifest = DatasetManifest.load(args.data)
        if args.tasks:
            families = parse_list(args.tasks, FAMILIES, "task")
        else:
            families = sorted({e.task for e in manifest.entries if e.split == "finetune"})
        tasks = [TaskSpec.of(family) for family in families]
        seeds = list(range(args.seeds))
        pretrained = {}
        if "pretrained" in variants:
            pretrained = {seed: self.sweep_pretrain(experiment, seed, work) for seed in seeds}
        runs = [(fraction, seed, variant) for fraction in fractions for seed in seeds for variant in variants]
        bar = progressbar(len(runs), desc="sweep", unit="run", with_progress=args.progress)

        def one(run: Tuple[float, int, str]) -> List[str]:
            fraction, seed, variant = run
            row = self.sweep_run(experiment, fraction, seed, variant, pretrained.get(seed), tasks)
            bar.update()
            return row

        rows = parallel_map(one, runs, eval_threads())
        bar.close()
        rows.sort(key=lambda row: (float(row[0]), int(row[1]), row[2]))
        with open(args.out, "w", newline="") as file:
            writer = csv.writer(file, lineterminator="\n")
            writer.writerow(SWEEP_COLUMNS)
            writer.writerows(rows)
        logger.info(f"wrote {len(rows)} sweep rows to {args.out}")

    def sweep_pretrain(self, experiment: ExperimentConfig, seed: int, work: str) -> Checkpoint:
        if self.args.init:
            return load_checkpoint(self.args.init)
        model_config, train_config = experiment.for_mode("pretrain")
        train_config = self.sweep_train_config(train_config, seed)
        split = DatasetSplit.load(self.args.data, seed=seed, mode="pretrain")
        result = fit(split.pretrain, model_config, train_config)
        save_checkpoint(result.checkpoint, os.path.join(work, f"pretrain_seed{seed}.ckpt"))
        return result.checkpoint

    def sweep_train_config(self, train_config: TrainConfig, seed: int, **changes) -> TrainConfig:
        if self.args.epochs is not None:
            changes["epochs"] = self.args.epochs
        return dataclasses.replace(train_config, seed=seed, **changes).validate()

    def sweep_run(
        self,
        experiment: ExperimentConfig,
        fraction: float,
        seed: int,
        variant: str,
        init: Optional[Checkpoint],
        tasks: List[TaskSpec],
    ) -> List[str]:
        """
        one finetune and evaluation; scratch and ablation variants start from random init
        """
        args = self.args
        model_config, train_config = experiment.for_mode("finetune")
        flags = {variant: True} if variant in ABLATIONS else {}
        train_config = self.sweep_train_config(train_config, seed, **flags)
        split = DatasetSplit.load(args.data, fraction, seed=seed, mode="finetune")
        result = fit(split.finetune, model_config, train_config, init=init if variant == "pretrained" else None)
        model = result.checkpoint.model()

        def policy_factory():
            return ModelPolicy(model)

        report = self.evaluate(
            tasks, policy_factory, args.episodes, args.chains, args.eval_seed, model_config.image_size, threads=1
        )
        sr = float(np.mean([task.success_rate for task in report.tasks]))
        avg_len = "" if report.sequences is None else repr(report.sequences.avg_len)
        logger.info(f"sweep fraction {fraction} seed {seed} {variant}: SR {sr:.3f}")
        return [repr(fraction), str(seed), variant, repr(sr), avg_len]


def main(argv: list = None):
    """
    main call
    """
    cmd = PidmCmd()
    exit_code = cmd.cmd_main(argv)
    return exit_code


DEBUG = 0
if __name__ == "__main__":
    if DEBUG:
        sys.argv.append("-d")
    sys.exit(main())
