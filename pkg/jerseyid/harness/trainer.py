import os
import time
import typing

import numpy as np
import torch
from loguru import logger
from torch.optim.lr_scheduler import MultiStepLR

from jerseyid import numkit
from jerseyid.harness.checkpoint import save_checkpoint
from jerseyid.harness.evaluator import evaluate
from jerseyid.harness.metrics import MetricsLog, batch_accuracy
from jerseyid.loss import multitask_loss
from jerseyid.model import TrackletModel, build_model
from jerseyid.numkit import NonFiniteError
from jerseyid.protocol import FrameLabels, MetricsRow
from jerseyid.synthgen import SyntheticDataset
from jerseyid.utils.config import MaskMode, RunConfig, log_event
from jerseyid.utils.misc import rng_streams
from jerseyid.weaklabel import WindowBatcher


class TrainResult(typing.NamedTuple):
    model: TrackletModel
    rows: typing.List[MetricsRow]
    checkpoint_path: typing.Optional[str]
    metrics_path: typing.Optional[str]


def train(
    cfg: RunConfig,
    dataset: SyntheticDataset,
    labels: typing.Optional[typing.Mapping[str, FrameLabels]] = None,
    eval_dataset: typing.Optional[SyntheticDataset] = None,
    out_dir: typing.Optional[str] = None,
) -> TrainResult:
    """
    Trains the configured tracklet model with Adam and step decay at cfg.milestones.
    A metrics row (means over the iterations since the previous row) is
    logged every cfg.metrics_every iterations and at the last one.
    """
    streams = rng_streams(cfg.seed)
    torch.manual_seed(streams["init"])
    torch.use_deterministic_algorithms(True)

    model = build_model(cfg.model, learn_loss_weights=cfg.learn_loss_weights)
    logger.info(f"Model has {model.num_parameters():,} parameters")
    batcher = WindowBatcher(
        dataset.tracklets, cfg, dataset.roster, labels,
        data_seed=streams["data"], augment_seed=streams["augment"],
    )
    optimizer = numkit.AdamState(
        [(name, p) for name, p in model.named_parameters() if p.requires_grad], lr=cfg.lr
    )
    scheduler = MultiStepLR(optimizer.optimizer, milestones=cfg.milestones, gamma=cfg.lr_decay)

    metrics_log = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        metrics_log = MetricsLog(os.path.join(out_dir, "metrics.csv"))

    rows: typing.List[MetricsRow] = []
    losses: typing.List[float] = []
    accuracies: typing.List[float] = []
    started = time.perf_counter()
    for iteration in range(1, cfg.iterations + 1):
        model.train()
        batch = batcher.next_batch()
        out = model(batch.frames)
        loss = multitask_loss(out, batch.labels, model.loss_weights)
        if not torch.isfinite(loss):
            raise NonFiniteError(f"non-finite training loss at iteration {iteration}")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        scheduler.step()

        losses.append(loss.item())
        accuracies.append(batch_accuracy(out, batch.labels))
        if iteration % cfg.metrics_every != 0 and iteration != cfg.iterations:
            continue

        eval_accuracy = f1 = None
        if eval_dataset is not None and (iteration % cfg.eval_every == 0 or iteration == cfg.iterations):
            result = evaluate(model, eval_dataset, MaskMode.NONE)
            eval_accuracy, f1 = result.accuracy, result.weighted_f1
        row = MetricsRow(
            iteration=iteration,
            train_loss=float(np.mean(losses)),
            train_accuracy=float(np.mean(accuracies)),
            eval_accuracy=eval_accuracy,
            weighted_f1=f1,
            wall_clock_s=time.perf_counter() - started if cfg.logging.record_wall_clock else 0.0,
        )
        losses, accuracies = [], []
        rows.append(row)
        if metrics_log is not None:
            metrics_log.append(row)
        logger.info(
            f"iter {row.iteration} | loss {row.train_loss:.4f} | train acc {row.train_accuracy:.3f}"
            + (f" | eval acc {row.eval_accuracy:.3f}" if row.eval_accuracy is not None else "")
            + f" | lr {optimizer.lr:.2e}"
        )
        log_event("metrics", **row.model_dump())

    checkpoint_path = None
    if out_dir is not None:
        checkpoint_path = os.path.join(out_dir, "model.ckpt")
        save_checkpoint(checkpoint_path, model, cfg, dataset.roster)
    return TrainResult(model, rows, checkpoint_path, metrics_log.path if metrics_log else None)


def iterations_to_threshold(rows: typing.Sequence[MetricsRow], threshold: float, budget: int) -> typing.Tuple[int, bool]:
    """First logged iteration whose train accuracy reaches threshold, else (budget, censored)."""
    for row in rows:
        if row.train_accuracy >= threshold:
            return row.iteration, False
    return budget, True
