import csv
import json
import os
import typing

from loguru import logger
from pydantic import BaseModel

from jerseyid import ConfigError, JerseyIdError
from jerseyid.harness.checkpoint import load_checkpoint
from jerseyid.harness.metrics import accuracy, weighted_f1
from jerseyid.model import TrackletModel
from jerseyid.protocol import RosterIndex, TrackletPrediction
from jerseyid.shiftsync import predict_tracklet
from jerseyid.synthgen import SyntheticDataset
from jerseyid.utils.config import MaskMode, log_event

REPORT_FIELDS = ["tracklet_id", "team_side", "unmasked_id", "masked_id", "roster_id", "true_id"]


class MissingShiftDbError(JerseyIdError, ValueError):
    pass


class ModeScore(BaseModel):
    accuracy: float
    weighted_f1: float


class EvaluationResult(BaseModel):
    mask_mode: MaskMode
    accuracy: float
    weighted_f1: float
    num_tracklets: int
    clock_fallbacks: int
    per_mode: typing.Dict[str, ModeScore]


def check_compatible(model: TrackletModel, dataset: SyntheticDataset) -> None:
    if dataset.roster.num_classes != model.cfg.num_classes:
        raise ConfigError(
            f"dataset class space has {dataset.roster.num_classes} classes, model expects {model.cfg.num_classes}"
        )
    for tracklet in dataset.tracklets:
        if tracklet.frames.shape[-1] != model.cfg.in_channels:
            raise ConfigError(
                f"tracklet {tracklet.id} has {tracklet.frames.shape[-1]} channels, model expects {model.cfg.in_channels}"
            )


def predict_dataset(model: TrackletModel, dataset: SyntheticDataset) -> typing.List[TrackletPrediction]:
    check_compatible(model, dataset)
    return [predict_tracklet(model, t, dataset.roster, dataset.shift_db) for t in dataset.tracklets]


def score_predictions(predictions: typing.Sequence[TrackletPrediction], mask_mode: MaskMode) -> ModeScore:
    y_true = [p.true_id for p in predictions]
    y_pred = [p.predicted(mask_mode) for p in predictions]
    return ModeScore(accuracy=accuracy(y_true, y_pred), weighted_f1=weighted_f1(y_true, y_pred))


def report_row(prediction: TrackletPrediction, roster: RosterIndex) -> typing.Dict[str, str]:
    def jersey(index: int) -> str:
        number = roster.jersey_at(index)
        return "null" if number is None else str(number)

    return {
        "tracklet_id": prediction.tracklet_id,
        "team_side": prediction.team_side.value,
        "unmasked_id": jersey(prediction.unmasked_id),
        "masked_id": jersey(prediction.masked_id),
        "roster_id": jersey(prediction.roster_id),
        "true_id": jersey(prediction.true_id),
    }


def write_report(path, predictions: typing.Sequence[TrackletPrediction], roster: RosterIndex) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=REPORT_FIELDS)
        writer.writeheader()
        for prediction in predictions:
            writer.writerow(report_row(prediction, roster))


def evaluate(
    model: typing.Union[TrackletModel, str, os.PathLike],
    dataset: SyntheticDataset,
    mask_mode: MaskMode = MaskMode.SHIFTS,
    out_dir: typing.Optional[str] = None,
) -> EvaluationResult:
    """
    Scores every tracklet of the dataset and compares the identity picked by
    mask_mode against the truth. With out_dir, writes report.csv and
    summary.json (scores for every mask mode the dataset supports).
    """
    mask_mode = MaskMode(mask_mode)
    if mask_mode != MaskMode.NONE and dataset.shift_db is None:
        raise MissingShiftDbError(f"mask mode '{mask_mode.value}' needs a shift database")
    if not dataset.tracklets:
        raise ValueError("cannot evaluate an empty dataset")
    if not isinstance(model, TrackletModel):
        model, _, _ = load_checkpoint(model)

    predictions = predict_dataset(model, dataset)
    modes = [MaskMode.NONE] if dataset.shift_db is None else list(MaskMode)
    per_mode = {mode.value: score_predictions(predictions, mode) for mode in modes}
    fallbacks = sum(p.clock_fallback for p in predictions)
    result = EvaluationResult(
        mask_mode=mask_mode,
        accuracy=per_mode[mask_mode.value].accuracy,
        weighted_f1=per_mode[mask_mode.value].weighted_f1,
        num_tracklets=len(predictions),
        clock_fallbacks=fallbacks,
        per_mode=per_mode,
    )
    logger.info(
        f"Evaluated {len(predictions)} tracklets ({mask_mode.value}): "
        f"accuracy {result.accuracy:.4f}, weighted F1 {result.weighted_f1:.4f}, {fallbacks} clock fallbacks"
    )
    log_event("evaluation", **result.model_dump(mode="json"))

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_report(os.path.join(out_dir, "report.csv"), predictions, dataset.roster)
        with open(os.path.join(out_dir, "summary.json"), "w") as f:
            json.dump(result.model_dump(mode="json"), f, indent=2, sort_keys=True)
    return result


GAME_FIELDS = [
    "game", "num_tracklets", "clock_fallbacks",
    "accuracy_none", "accuracy_roster", "accuracy_shifts",
    "f1_none", "f1_roster", "f1_shifts",
]


def _game_row(game: str, predictions: typing.Sequence[TrackletPrediction], masked: bool) -> dict:
    row = {"game": game, "num_tracklets": len(predictions), "clock_fallbacks": sum(p.clock_fallback for p in predictions)}
    for mode in (MaskMode.NONE, MaskMode.ROSTER, MaskMode.SHIFTS):
        score = score_predictions(predictions, mode) if masked or mode == MaskMode.NONE else None
        row[f"accuracy_{mode.value}"] = score.accuracy if score else None
        row[f"f1_{mode.value}"] = score.weighted_f1 if score else None
    return row


def evaluate_games(
    model: typing.Union[TrackletModel, str, os.PathLike],
    games: typing.Mapping[str, SyntheticDataset],
    out_dir: typing.Optional[str] = None,
) -> typing.List[dict]:
    """
    One row per game with accuracy and weighted F1 under every mask mode, then
    an "all" row pooling the tracklets of every game. Masked columns stay empty
    for games without a shift database.
    """
    if not games:
        raise ValueError("no games to evaluate")
    if not isinstance(model, TrackletModel):
        model, _, _ = load_checkpoint(model)

    rows, pooled = [], []
    for name, dataset in games.items():
        if not dataset.tracklets:
            raise ValueError(f"game {name} has no tracklets")
        predictions = predict_dataset(model, dataset)
        pooled.extend(predictions)
        rows.append(_game_row(name, predictions, dataset.shift_db is not None))
        logger.info(
            f"game {name}: accuracy none {rows[-1]['accuracy_none']:.4f}, "
            f"{rows[-1]['clock_fallbacks']} clock fallbacks"
        )
    rows.append(_game_row("all", pooled, all(d.shift_db is not None for d in games.values())))
    log_event("game_evaluation", rows=rows)

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "per_game.csv"), "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=GAME_FIELDS)
            writer.writeheader()
            writer.writerows(rows)
    return rows
