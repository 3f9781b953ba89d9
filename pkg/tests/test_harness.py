import csv
import json
import os
import struct

import numpy as np
import pytest
import torch

from jerseyid.harness import (
    ABLATION_GRIDS,
    CheckpointError,
    MetricsLog,
    MissingShiftDbError,
    ablate,
    accuracy,
    convergence_compare,
    evaluate,
    evaluate_games,
    load_checkpoint,
    read_metrics,
    save_checkpoint,
    train,
    weighted_f1,
)
from jerseyid.harness.evaluator import REPORT_FIELDS
from jerseyid.harness.trainer import iterations_to_threshold
from jerseyid.model import JerseyTransformer
from jerseyid.protocol import MetricsRow, RosterIndex
from jerseyid.synthgen import SyntheticDataset, gen_game
from jerseyid.utils.config import LoggingConfig, MaskMode, RunConfig, SamplingMode, SynthConfig
from jerseyid.weaklabel import OracleScorer, label_tracklets


def oracle_labels(dataset, phi=0.5):
    return {fl.tracklet_id: fl for fl in label_tracklets(dataset.tracklets, OracleScorer(), phi)}


@pytest.fixture
def short_run(tiny_run):
    return tiny_run.model_copy(update={"iterations": 2, "metrics_every": 1, "eval_every": 2, "milestones": []})


class TestMetrics:
    def test_accuracy(self):
        assert accuracy([1, 2, 3, 4], [1, 2, 0, 4]) == 0.75

    def test_weighted_f1_hand_example(self):
        assert weighted_f1(["A", "A", "A", "B"], ["A", "A", "B", "B"]) == pytest.approx((3 * 0.8 + 2 / 3) / 4)

    def test_all_correct(self):
        y = [0, 3, 3, 7, 1]
        assert accuracy(y, y) == 1.0 and weighted_f1(y, y) == 1.0

    def test_one_class_dataset_f1_equals_accuracy(self):
        y_true = [4] * 10
        y_pred = [4] * 7 + [0] * 3
        # the unseen predicted class has zero support, so only class 4 weighs in
        assert weighted_f1(y_true, y_pred) == pytest.approx(2 * 0.7 / 1.7)
        assert weighted_f1(y_true, y_true) == accuracy(y_true, y_true)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            accuracy([], [])

    def test_log_is_strictly_increasing(self, tmp_path):
        log = MetricsLog(os.path.join(tmp_path, "metrics.csv"))
        log.append(MetricsRow(iteration=50, train_loss=2.0, train_accuracy=0.1))
        with pytest.raises(ValueError):
            log.append(MetricsRow(iteration=50, train_loss=1.0, train_accuracy=0.2))

    def test_log_round_trip(self, tmp_path):
        path = os.path.join(tmp_path, "metrics.csv")
        log = MetricsLog(path)
        rows = [
            MetricsRow(iteration=50, train_loss=2.5, train_accuracy=0.25),
            MetricsRow(iteration=100, train_loss=1.5, train_accuracy=0.5, eval_accuracy=0.4, weighted_f1=0.35),
        ]
        for row in rows:
            log.append(row)
        assert read_metrics(path) == rows
        with open(path) as f:
            assert f.readline().strip() == ",".join(MetricsRow.model_fields)

    def test_row_rejects_accuracy_outside_unit_interval(self):
        with pytest.raises(ValueError):
            MetricsRow(iteration=1, train_loss=1.0, train_accuracy=1.5)

    def test_iterations_to_threshold(self):
        rows = [MetricsRow(iteration=i, train_loss=1.0, train_accuracy=a) for i, a in [(50, 0.3), (100, 0.81), (150, 0.9)]]
        assert iterations_to_threshold(rows, 0.8, 6000) == (100, False)
        assert iterations_to_threshold(rows, 0.95, 6000) == (6000, True)


class TestCheckpoint:
    @pytest.fixture
    def saved(self, tmp_path, tiny_run):
        torch.manual_seed(3)
        model = JerseyTransformer(tiny_run.model)
        path = os.path.join(tmp_path, "model.ckpt")
        save_checkpoint(path, model, tiny_run, RosterIndex.default(9))
        return path, model

    def test_round_trip_keeps_outputs(self, saved, tiny_run):
        path, model = saved
        restored, cfg, roster = load_checkpoint(path)
        assert cfg == tiny_run and roster == RosterIndex.default(9)
        frames = torch.rand(2, 4, 1, 16, 16, dtype=torch.float64)
        with torch.no_grad():
            a, b = model(frames), restored(frames)
        torch.testing.assert_close(a.p0, b.p0, rtol=0, atol=0)
        torch.testing.assert_close(a.p2, b.p2, rtol=0, atol=0)

    def test_bad_magic(self, saved):
        path, _ = saved
        with open(path, "r+b") as f:
            f.write(b"XXXX")
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_truncated_payload(self, saved):
        path, _ = saved
        size = os.path.getsize(path)
        with open(path, "r+b") as f:
            f.truncate(size - 8)
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_trailing_bytes(self, saved):
        path, _ = saved
        with open(path, "ab") as f:
            f.write(b"\x00")
        with pytest.raises(CheckpointError, match="trailing"):
            load_checkpoint(path)

    def test_format_version_mismatch(self, saved):
        path, _ = saved
        with open(path, "rb") as f:
            blob = f.read()
        (n,) = struct.unpack("<I", blob[4:8])
        header = json.loads(blob[8:8 + n])
        header["format_version"] += 1
        encoded = json.dumps(header).encode("utf-8")
        with open(path, "wb") as f:
            f.write(blob[:4] + struct.pack("<I", len(encoded)) + encoded + blob[8 + n:])
        with pytest.raises(CheckpointError, match="format version"):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(os.path.join(tmp_path, "nope.ckpt"))

    def test_unwritable_path(self, tmp_path, tiny_run):
        path = os.path.join(tmp_path, "no-such-dir", "model.ckpt")
        with pytest.raises(CheckpointError, match="cannot write"):
            save_checkpoint(path, JerseyTransformer(tiny_run.model), tiny_run, RosterIndex.default(9))


class TestTrainer:
    def test_rows_at_metrics_interval(self, tiny_run, tiny_dataset, tiny_eval_dataset, tmp_path):
        result = train(tiny_run, tiny_dataset, oracle_labels(tiny_dataset), tiny_eval_dataset, str(tmp_path))
        assert [r.iteration for r in result.rows] == [5, 10, 15, 20]
        assert [r.eval_accuracy is not None for r in result.rows] == [False, True, False, True]
        assert all(r.wall_clock_s == 0.0 for r in result.rows)
        assert read_metrics(result.metrics_path) == result.rows
        assert os.path.exists(result.checkpoint_path)

    def test_same_seed_identical_metrics(self, tiny_run, tiny_dataset, tmp_path):
        labels = oracle_labels(tiny_dataset)
        first = train(tiny_run, tiny_dataset, labels, out_dir=os.path.join(tmp_path, "a"))
        second = train(tiny_run, tiny_dataset, labels, out_dir=os.path.join(tmp_path, "b"))
        with open(first.metrics_path, "rb") as a, open(second.metrics_path, "rb") as b:
            assert a.read() == b.read()

    def test_different_seed_differs(self, tiny_run, tiny_dataset):
        labels = oracle_labels(tiny_dataset)
        a = train(tiny_run, tiny_dataset, labels)
        b = train(tiny_run.model_copy(update={"seed": 1}), tiny_dataset, labels)
        assert [r.train_loss for r in a.rows] != [r.train_loss for r in b.rows]

    def test_loss_decreases(self, tiny_run, tiny_dataset):
        cfg = tiny_run.model_copy(update={"iterations": 200, "metrics_every": 50, "lr": 1e-3, "milestones": [150]})
        rows = train(cfg, tiny_dataset, oracle_labels(tiny_dataset)).rows
        assert rows[-1].train_loss < rows[0].train_loss

    def test_uniform_sampling_needs_no_labels(self, short_run, tiny_dataset):
        result = train(short_run.model_copy(update={"sampling": SamplingMode.UNIFORM}), tiny_dataset)
        assert len(result.rows) == 2


class TestEvaluator:
    @pytest.fixture
    def trained(self, tiny_run, tiny_dataset):
        cfg = tiny_run.model_copy(update={"iterations": 60, "lr": 1e-3, "milestones": []})
        return train(cfg, tiny_dataset, oracle_labels(tiny_dataset)).model

    @pytest.mark.parametrize("mode", [MaskMode.SHIFTS, MaskMode.ROSTER])
    def test_masked_modes_need_shift_db(self, mode, trained, tiny_eval_dataset):
        bare = SyntheticDataset(tracklets=tiny_eval_dataset.tracklets, roster=tiny_eval_dataset.roster)
        with pytest.raises(MissingShiftDbError, match=mode.value):
            evaluate(trained, bare, mode)
        assert evaluate(trained, bare, MaskMode.NONE).num_tracklets == len(bare.tracklets)

    def test_masking_never_lowers_accuracy(self, trained, tiny_eval_dataset):
        result = evaluate(trained, tiny_eval_dataset, MaskMode.SHIFTS)
        assert result.per_mode["shifts"].accuracy >= result.per_mode["none"].accuracy
        assert result.per_mode["roster"].accuracy >= result.per_mode["none"].accuracy
        assert result.clock_fallbacks == 0

    def test_report_files(self, trained, tiny_eval_dataset, tmp_path):
        evaluate(trained, tiny_eval_dataset, MaskMode.ROSTER, str(tmp_path))
        with open(os.path.join(tmp_path, "report.csv"), newline="") as f:
            rows = list(csv.DictReader(f))
        assert list(rows[0]) == REPORT_FIELDS
        assert len(rows) == len(tiny_eval_dataset.tracklets)
        assert {r["tracklet_id"] for r in rows} == {t.id for t in tiny_eval_dataset.tracklets}
        with open(os.path.join(tmp_path, "summary.json")) as f:
            summary = json.load(f)
        assert summary["mask_mode"] == "roster"
        assert set(summary["per_mode"]) == {"shifts", "roster", "none"}

    def test_checkpoint_path_matches_model(self, tiny_run, tiny_dataset, tiny_eval_dataset, tmp_path):
        cfg = tiny_run.model_copy(update={"iterations": 5})
        result = train(cfg, tiny_dataset, oracle_labels(tiny_dataset), out_dir=str(tmp_path))
        from_model = evaluate(result.model, tiny_eval_dataset, MaskMode.SHIFTS)
        from_path = evaluate(result.checkpoint_path, tiny_eval_dataset, MaskMode.SHIFTS)
        assert from_model == from_path

    def test_empty_dataset_rejected(self, trained):
        with pytest.raises(ValueError):
            evaluate(trained, SyntheticDataset(tracklets=[], roster=RosterIndex.default(9)), MaskMode.NONE)

    def test_games_report_every_mask_mode(self, trained, tiny_eval_dataset, tmp_path):
        bare = SyntheticDataset(tracklets=tiny_eval_dataset.tracklets[:3], roster=tiny_eval_dataset.roster)
        rows = evaluate_games(trained, {"full": tiny_eval_dataset, "bare": bare}, str(tmp_path))
        assert [r["game"] for r in rows] == ["full", "bare", "all"]
        full = evaluate(trained, tiny_eval_dataset, MaskMode.SHIFTS)
        assert rows[0]["accuracy_shifts"] == full.accuracy
        assert rows[0]["accuracy_roster"] == full.per_mode["roster"].accuracy
        assert rows[1]["accuracy_roster"] is None and rows[1]["f1_shifts"] is None
        assert rows[2]["accuracy_shifts"] is None
        assert rows[2]["num_tracklets"] == len(tiny_eval_dataset.tracklets) + 3
        with open(os.path.join(tmp_path, "per_game.csv")) as f:
            assert [r["game"] for r in csv.DictReader(f)] == ["full", "bare", "all"]

    def test_no_games_rejected(self, trained):
        with pytest.raises(ValueError):
            evaluate_games(trained, {})


class TestExperiments:
    @pytest.mark.parametrize("axis, rows", [("h", 5), ("l", 4), ("m", 5)])
    def test_ablation_table_shape(self, axis, rows, short_run, tiny_dataset, tiny_eval_dataset, tmp_path):
        table = ablate(short_run, axis, tiny_dataset, tiny_eval_dataset, oracle_labels(tiny_dataset), str(tmp_path))
        field, values, fixed = ABLATION_GRIDS[axis]
        assert len(table) == rows
        assert [r[field] for r in table] == values
        for row in table:
            assert all(row[k] == v for k, v in fixed.items())
        with open(os.path.join(tmp_path, f"ablation_{axis}.csv"), newline="") as f:
            assert len(list(csv.DictReader(f))) == rows

    def test_unknown_axis(self, short_run, tiny_dataset, tiny_eval_dataset):
        with pytest.raises(ValueError, match="axis"):
            ablate(short_run, "d", tiny_dataset, tiny_eval_dataset)

    def test_convergence_summary_format(self, short_run, tiny_dataset, tmp_path):
        summary = convergence_compare(short_run, tiny_dataset, [0, 1], out_dir=str(tmp_path))
        assert [r.seed for r in summary.runs] == [0, 1]
        for run in summary.runs:
            if run.approx_labels_censored:
                assert run.approx_labels == short_run.iterations
            if run.uniform_censored:
                assert run.uniform == short_run.iterations
        assert summary.median_uniform == np.median([r.uniform for r in summary.runs])
        with open(os.path.join(tmp_path, "convergence.json")) as f:
            assert set(json.load(f)) == {"threshold", "budget", "median_approx_labels", "median_uniform", "runs"}
        for seed in (0, 1):
            for mode in ("approx_labels", "uniform"):
                curve = read_metrics(os.path.join(tmp_path, f"seed-{seed}-{mode}", "metrics.csv"))
                assert [r.iteration for r in curve] == [1, 2]

    def test_convergence_needs_seeds(self, short_run, tiny_dataset):
        with pytest.raises(ValueError):
            convergence_compare(short_run, tiny_dataset, [])


@pytest.mark.slow
def test_default_config_learns_synthetic_jerseys():
    cfg = RunConfig(logging=LoggingConfig(dont_save_events=True, record_wall_clock=False))
    roster = RosterIndex.default(cfg.synth.num_classes)
    tracklets, shift_db = gen_game(cfg.synth, 600, seed=0)
    train_set = SyntheticDataset(tracklets=tracklets, shift_db=shift_db, roster=roster)
    tracklets, shift_db = gen_game(cfg.synth, 100, seed=1, split="test")
    test_set = SyntheticDataset(tracklets=tracklets, shift_db=shift_db, roster=roster)
    result = train(cfg, train_set, oracle_labels(train_set, cfg.phi))
    assert evaluate(result.model, test_set, MaskMode.NONE).accuracy >= 0.85


@pytest.mark.slow
def test_approx_labels_converge_faster_on_sparse_visibility():
    synth = SynthConfig(visibility_min=0.2, visibility_max=0.2)
    cfg = RunConfig(synth=synth, logging=LoggingConfig(dont_save_events=True, record_wall_clock=False))
    tracklets, shift_db = gen_game(synth, 600, seed=0)
    dataset = SyntheticDataset(tracklets=tracklets, shift_db=shift_db, roster=RosterIndex.default(synth.num_classes))
    summary = convergence_compare(cfg, dataset, [1, 2, 3, 4, 5])
    assert summary.median_approx_labels <= summary.median_uniform
