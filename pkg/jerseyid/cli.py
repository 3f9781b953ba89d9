# The MIT License (MIT)
# Copyright © 2024 jerseyid developers

# Permission is hereby granted, free of charge, to any person obtaining a copy of this software and associated
# documentation files (the “Software”), to deal in the Software without restriction, including without limitation
# the rights to use, copy, modify, merge, publish, distribute, sublicense, and/or sell copies of the Software,
# and to permit persons to whom the Software is furnished to do so, subject to the following conditions:

# The above copyright notice and this permission notice shall be included in all copies or substantial portions of
# the Software.

# THE SOFTWARE IS PROVIDED “AS IS”, WITHOUT WARRANTY OF ANY KIND, EXPRESS OR IMPLIED, INCLUDING BUT NOT LIMITED TO
# THE WARRANTIES OF MERCHANTABILITY, FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL
# THE AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER LIABILITY, WHETHER IN AN ACTION
# OF CONTRACT, TORT OR OTHERWISE, ARISING FROM, OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER
# DEALINGS IN THE SOFTWARE.

import argparse
import csv
import os
import sys
import typing

from loguru import logger
from pydantic import ValidationError

from jerseyid import ConfigError, JerseyIdError
from jerseyid.harness import (
    ablate,
    compare_models,
    convergence_compare,
    evaluate,
    evaluate_games,
    load_checkpoint,
    train,
)
from jerseyid.harness.evaluator import REPORT_FIELDS, check_compatible, report_row
from jerseyid.protocol import RosterIndex
from jerseyid.shiftsync import predict_tracklet
from jerseyid.synthgen import SyntheticDataset, gen_game, read_dataset, write_dataset
from jerseyid.utils.config import (
    MaskMode,
    RunConfig,
    SamplingMode,
    SynthConfig,
    add_args,
    check_config,
    config,
)
from jerseyid.utils.misc import split_seed
from jerseyid.weaklabel import (
    OracleScorer,
    fit_frame_scorer,
    label_tracklets,
    read_label_cache,
    write_label_cache,
)

LABELS_FILE = "labels.jsonl"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jerseyid", description="Tracklet jersey number recognition.", allow_abbrev=False
    )
    add_args(parser)
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen", help="Generate a synthetic training game and one or more test games.")
    gen.add_argument("--num-train", type=int, default=600, help="Training tracklets.")
    gen.add_argument("--num-test", type=int, default=100, help="Tracklets per test game.")
    gen.add_argument("--test-games", type=int, default=1, help="Test games (test/ for one, test-01/... for more).")
    gen.add_argument("--noisy-games", default="", help="Comma separated 1-based test games with a noisy clock.")
    gen.add_argument("--noisy-clock-fraction", type=float, default=0.5,
                     help="Fraction of unreadable clips in the noisy games.")

    label = commands.add_parser("label", help="Write approximate frame labels for a dataset.")
    label.add_argument("--data", required=True)
    label.add_argument("--scorer", choices=["oracle", "model"], default="oracle")
    label.add_argument("--phi", type=float, default=None, help="Visibility threshold (defaults to the config).")
    label.add_argument("--output", default=None, help=f"Label cache path (default DATA/{LABELS_FILE}).")

    train_cmd = commands.add_parser("train", help="Train a model.")
    train_cmd.add_argument("--data", required=True)
    train_cmd.add_argument("--eval-data", default=None)
    train_cmd.add_argument("--labels", default=None, help=f"Label cache (default DATA/{LABELS_FILE}).")

    eval_cmd = commands.add_parser("eval", help="Evaluate a checkpoint.")
    eval_cmd.add_argument("--checkpoint", required=True)
    eval_cmd.add_argument("--data", required=True)
    eval_cmd.add_argument("--mask-mode", choices=[e.value for e in MaskMode], default=MaskMode.SHIFTS.value)

    games_cmd = commands.add_parser("eval-games", help="Per-game scores under every mask mode.")
    games_cmd.add_argument("--checkpoint", required=True)
    games_cmd.add_argument("--data", nargs="+", required=True, help="One dataset directory per game.")

    ablate_cmd = commands.add_parser("ablate", help="Sweep one architecture axis.")
    ablate_cmd.add_argument("--data", required=True)
    ablate_cmd.add_argument("--eval-data", required=True)
    ablate_cmd.add_argument("--axis", choices=["h", "l", "m"], required=True)
    ablate_cmd.add_argument("--labels", default=None)

    models_cmd = commands.add_parser("compare-models", help="Transformer against the temporal CNN baseline.")
    models_cmd.add_argument("--data", required=True)
    models_cmd.add_argument("--eval-data", nargs="+", required=True, help="One dataset directory per test game.")
    models_cmd.add_argument("--labels", default=None)

    compare = commands.add_parser("compare-convergence", help="Approximate-label vs uniform window sampling.")
    compare.add_argument("--data", required=True)
    compare.add_argument("--seeds", default="1,2,3,4,5", help="Comma separated seeds.")
    compare.add_argument("--labels", default=None)

    infer = commands.add_parser("infer", help="Print the report row of one tracklet.")
    infer.add_argument("--checkpoint", required=True)
    infer.add_argument("--data", required=True)
    infer.add_argument("--tracklet", required=True)
    return parser


def _labels(cfg: RunConfig, data_dir: str, path: typing.Optional[str], required: bool):
    path = path or os.path.join(data_dir, LABELS_FILE)
    if os.path.exists(path):
        return read_label_cache(path)
    if required:
        raise JerseyIdError(f"approx_labels sampling needs a label cache; run `label` first (looked at {path})")
    return None


def _noisy_games(value: str, test_games: int) -> typing.Set[int]:
    try:
        games = {int(g) for g in value.split(",") if g.strip()}
    except ValueError as e:
        raise ConfigError(f"--noisy-games expects comma separated game numbers, got '{value}'") from e
    if any(not 1 <= g <= test_games for g in games):
        raise ConfigError(f"--noisy-games must lie in [1, {test_games}], got '{value}'")
    return games


def game_dirs(out_dir: str, test_games: int) -> typing.List[str]:
    if test_games == 1:
        return [os.path.join(out_dir, "test")]
    return [os.path.join(out_dir, f"test-{g:02d}") for g in range(1, test_games + 1)]


def run_gen(cfg: RunConfig, args) -> None:
    if args.test_games < 1:
        raise ConfigError("--test-games must be at least 1")
    noisy = _noisy_games(args.noisy_games, args.test_games)
    seeds = split_seed(cfg.seed, 1 + args.test_games)
    roster = RosterIndex.default(cfg.synth.num_classes)
    splits = [("train", args.num_train, seeds[0], cfg.synth, os.path.join(args.out, "train"))]
    for g, (seed, game_dir) in enumerate(zip(seeds[1:], game_dirs(args.out, args.test_games)), start=1):
        synth = cfg.synth
        if g in noisy:
            try:
                synth = SynthConfig.model_validate(
                    {**cfg.synth.model_dump(), "clock_noise_fraction": args.noisy_clock_fraction}
                )
            except ValidationError as e:
                raise ConfigError(f"invalid --noisy-clock-fraction: {e.errors()[0]['msg']}") from e
        splits.append((os.path.basename(game_dir), args.num_test, seed, synth, game_dir))
    for split, count, seed, synth, split_dir in splits:
        tracklets, shift_db = gen_game(synth, count, seed, split)
        write_dataset(tracklets, shift_db, split_dir, roster, synth.frame_shape)
        logger.info(f"Wrote {count} {split} tracklets to {split_dir} (clock noise {synth.clock_noise_fraction})")


def run_label(cfg: RunConfig, args) -> None:
    dataset = read_dataset(args.data)
    phi = cfg.phi if args.phi is None else args.phi
    if args.scorer == "oracle":
        scorer = OracleScorer()
    else:
        scorer = fit_frame_scorer(dataset.tracklets, dataset.roster, seed=cfg.seed)
    labels = label_tracklets(dataset.tracklets, scorer, phi)
    output = args.output or os.path.join(args.data, LABELS_FILE)
    write_label_cache(output, labels)
    visible = sum(sum(fl.bits) for fl in labels)
    logger.info(f"Wrote {len(labels)} frame label rows ({visible} visible frames, phi={phi}) to {output}")


def run_train(cfg: RunConfig, args) -> None:
    dataset = read_dataset(args.data)
    labels = _labels(cfg, args.data, args.labels, cfg.sampling == SamplingMode.APPROX_LABELS)
    eval_dataset = read_dataset(args.eval_data) if args.eval_data else None
    result = train(cfg, dataset, labels, eval_dataset, args.out)
    logger.info(f"Checkpoint: {result.checkpoint_path}, metrics: {result.metrics_path}")


def run_eval(cfg: RunConfig, args) -> None:
    evaluate(args.checkpoint, read_dataset(args.data), MaskMode(args.mask_mode), args.out)


def _games(dirs: typing.Sequence[str]) -> typing.Dict[str, SyntheticDataset]:
    games = {}
    for data_dir in dirs:
        name = os.path.basename(os.path.normpath(data_dir))
        if name in games:
            raise ConfigError(f"two game directories are both named '{name}'")
        games[name] = read_dataset(data_dir)
    return games


def run_eval_games(cfg: RunConfig, args) -> None:
    evaluate_games(args.checkpoint, _games(args.data), args.out)


def run_compare_models(cfg: RunConfig, args) -> None:
    labels = _labels(cfg, args.data, args.labels, cfg.sampling == SamplingMode.APPROX_LABELS)
    compare_models(cfg, read_dataset(args.data), _games(args.eval_data), labels, args.out)


def run_ablate(cfg: RunConfig, args) -> None:
    labels = _labels(cfg, args.data, args.labels, cfg.sampling == SamplingMode.APPROX_LABELS)
    ablate(cfg, args.axis, read_dataset(args.data), read_dataset(args.eval_data), labels, args.out)


def run_compare(cfg: RunConfig, args) -> None:
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    labels = _labels(cfg, args.data, args.labels, required=False)
    summary = convergence_compare(cfg, read_dataset(args.data), seeds, labels, args.out)
    logger.info(
        f"median iterations to {summary.threshold:.0%}: approx_labels {summary.median_approx_labels}, "
        f"uniform {summary.median_uniform}"
    )


def run_infer(cfg: RunConfig, args) -> None:
    model, _, _ = load_checkpoint(args.checkpoint)
    dataset = read_dataset(args.data)
    check_compatible(model, dataset)
    try:
        tracklet = dataset.by_id(args.tracklet)
    except KeyError as e:
        raise JerseyIdError(str(e)) from e
    prediction = predict_tracklet(model, tracklet, dataset.roster, dataset.shift_db)
    writer = csv.DictWriter(sys.stdout, fieldnames=REPORT_FIELDS)
    writer.writeheader()
    writer.writerow(report_row(prediction, dataset.roster))


COMMANDS = {
    "gen": run_gen,
    "label": run_label,
    "train": run_train,
    "eval": run_eval,
    "eval-games": run_eval_games,
    "ablate": run_ablate,
    "compare-models": run_compare_models,
    "compare-convergence": run_compare,
    "infer": run_infer,
}


def main(argv: typing.Optional[typing.Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config(args)
        check_config(cfg, args.out)
        COMMANDS[args.command](cfg, args)
    except JerseyIdError as e:
        logger.error(f"{args.command} failed: {e}")
        return 1
    return 0
