"""
Ablation grids over heads, layers and window length, the transformer against
the temporal CNN baseline, and the sampling-mode convergence comparison.
"""
import csv
import json
import os
import typing

import numpy as np
from loguru import logger
from pydantic import BaseModel

from jerseyid.harness.evaluator import GAME_FIELDS, evaluate, evaluate_games
from jerseyid.harness.trainer import iterations_to_threshold, train
from jerseyid.protocol import FrameLabels
from jerseyid.synthgen import SyntheticDataset
from jerseyid.utils.config import MaskMode, ModelArch, RunConfig, SamplingMode
from jerseyid.weaklabel import OracleScorer, label_tracklets

# axis -> (ModelConfig field, values, fixed fields)
ABLATION_GRIDS: typing.Dict[str, typing.Tuple[str, typing.List[int], typing.Dict[str, int]]] = {
    "h": ("heads", [2, 4, 6, 8, 10], {"layers": 2, "window": 30}),
    "l": ("layers", [2, 4, 6, 8], {"heads": 8, "window": 30}),
    "m": ("window", [10, 20, 30, 40, 50], {"heads": 8, "layers": 2}),
}
ABLATION_FIELDS = ["axis", "value", "heads", "layers", "window", "num_parameters", "accuracy", "weighted_f1"]


def ablate(
    cfg: RunConfig,
    axis: str,
    dataset: SyntheticDataset,
    eval_dataset: SyntheticDataset,
    labels: typing.Optional[typing.Mapping[str, FrameLabels]] = None,
    out_dir: typing.Optional[str] = None,
) -> typing.List[dict]:
    """One train + evaluate per grid value of axis; the other two axes stay at their fixed values."""
    if axis not in ABLATION_GRIDS:
        raise ValueError(f"unknown ablation axis '{axis}', expected one of {sorted(ABLATION_GRIDS)}")
    field, values, fixed = ABLATION_GRIDS[axis]
    mask_mode = cfg.mask_mode if eval_dataset.shift_db is not None else MaskMode.NONE

    rows = []
    for value in values:
        model_cfg = cfg.model.model_copy(update={**fixed, field: value, "arch": ModelArch.TRANSFORMER})
        cell_cfg = cfg.model_copy(update={"model": model_cfg})
        cell_dir = os.path.join(out_dir, f"{axis}-{value}") if out_dir else None
        result = train(cell_cfg, dataset, labels, out_dir=cell_dir)
        scores = evaluate(result.model, eval_dataset, mask_mode)
        rows.append({
            "axis": axis,
            "value": value,
            "heads": model_cfg.heads,
            "layers": model_cfg.layers,
            "window": model_cfg.window,
            "num_parameters": result.model.num_parameters(),
            "accuracy": scores.accuracy,
            "weighted_f1": scores.weighted_f1,
        })
        logger.info(f"ablation {axis}={value}: accuracy {scores.accuracy:.4f}, F1 {scores.weighted_f1:.4f}")

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, f"ablation_{axis}.csv"), "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=ABLATION_FIELDS)
            writer.writeheader()
            writer.writerows(rows)
    return rows


class SeedRun(BaseModel):
    seed: int
    approx_labels: int
    uniform: int
    approx_labels_censored: bool
    uniform_censored: bool


class ConvergenceSummary(BaseModel):
    threshold: float
    budget: int
    median_approx_labels: float
    median_uniform: float
    runs: typing.List[SeedRun]


def convergence_compare(
    cfg: RunConfig,
    dataset: SyntheticDataset,
    seeds: typing.Sequence[int],
    labels: typing.Optional[typing.Mapping[str, FrameLabels]] = None,
    out_dir: typing.Optional[str] = None,
) -> ConvergenceSummary:
    """
    Trains once per sampling mode and seed, recording the first logged
    iteration at which train accuracy reaches cfg.convergence_threshold.
    Runs that never reach it count as the full budget. With out_dir, each
    run keeps its metrics curve under out_dir/seed-<seed>-<mode>/.
    """
    if not seeds:
        raise ValueError("convergence comparison needs at least one seed")
    if labels is None:
        labels = {fl.tracklet_id: fl for fl in label_tracklets(dataset.tracklets, OracleScorer(), cfg.phi)}

    runs = []
    for seed in seeds:
        reached = {}
        for mode in (SamplingMode.APPROX_LABELS, SamplingMode.UNIFORM):
            run_cfg = cfg.model_copy(update={"seed": seed, "sampling": mode})
            run_dir = os.path.join(out_dir, f"seed-{seed}-{mode.value}") if out_dir else None
            result = train(run_cfg, dataset, labels if mode == SamplingMode.APPROX_LABELS else None, out_dir=run_dir)
            reached[mode] = iterations_to_threshold(result.rows, cfg.convergence_threshold, cfg.iterations)
        runs.append(SeedRun(
            seed=seed,
            approx_labels=reached[SamplingMode.APPROX_LABELS][0],
            uniform=reached[SamplingMode.UNIFORM][0],
            approx_labels_censored=reached[SamplingMode.APPROX_LABELS][1],
            uniform_censored=reached[SamplingMode.UNIFORM][1],
        ))
        logger.info(f"seed {seed}: approx_labels {runs[-1].approx_labels}, uniform {runs[-1].uniform}")

    summary = ConvergenceSummary(
        threshold=cfg.convergence_threshold,
        budget=cfg.iterations,
        median_approx_labels=float(np.median([r.approx_labels for r in runs])),
        median_uniform=float(np.median([r.uniform for r in runs])),
        runs=runs,
    )
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "convergence.json"), "w") as f:
            json.dump(summary.model_dump(mode="json"), f, indent=2)
    return summary


COMPARE_FIELDS = ["model", "num_parameters", *GAME_FIELDS]


def compare_models(
    cfg: RunConfig,
    dataset: SyntheticDataset,
    games: typing.Mapping[str, SyntheticDataset],
    labels: typing.Optional[typing.Mapping[str, FrameLabels]] = None,
    out_dir: typing.Optional[str] = None,
) -> typing.List[dict]:
    """
    Trains every architecture with the same run settings and scores each on
    every test game. Rows carry the per-game columns of evaluate_games.
    """
    rows = []
    for arch in ModelArch:
        arch_cfg = cfg.model_copy(update={"model": cfg.model.model_copy(update={"arch": arch})})
        arch_dir = os.path.join(out_dir, arch.value) if out_dir else None
        result = train(arch_cfg, dataset, labels, out_dir=arch_dir)
        for row in evaluate_games(result.model, games):
            rows.append({"model": arch.value, "num_parameters": result.model.num_parameters(), **row})
        logger.info(f"{arch.value}: pooled accuracy {rows[-1]['accuracy_none']:.4f} unmasked")

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "compare.csv"), "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=COMPARE_FIELDS)
            writer.writeheader()
            writer.writerows(rows)
    return rows
