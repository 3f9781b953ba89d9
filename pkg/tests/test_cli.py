import csv
import io
import json
import os

import pytest

from jerseyid import ConfigError
from jerseyid.cli import LABELS_FILE, build_parser, main
from jerseyid.protocol import TeamSide
from jerseyid.synthgen import read_dataset
from jerseyid.utils.config import ModelArch, RunConfig, check_config, config, load_run_config


class TestConfig:
    def test_defaults(self):
        cfg = load_run_config()
        assert cfg.lr == 1e-4 and cfg.batch_size == 16
        assert cfg.milestones == [2500, 5000] and cfg.lr_decay == 0.2
        assert cfg.iterations == 6000

    def test_dotted_overrides(self):
        cfg = load_run_config(**{"model.heads": 8, "synth.num_classes": 30, "model.num_classes": 30, "phi": None})
        assert cfg.model.heads == 8
        assert cfg.synth.num_classes == cfg.model.num_classes == 30
        assert cfg.phi == 0.5

    def test_error_names_field(self):
        with pytest.raises(ConfigError, match="model.heads"):
            load_run_config(**{"model.heads": "many"})

    def test_milestones_must_increase(self):
        with pytest.raises(ConfigError, match="milestones"):
            load_run_config(milestones=[5000, 2500])

    def test_class_count_mismatch(self):
        with pytest.raises(ConfigError):
            load_run_config(**{"model.num_classes": 30})

    def test_json_file_with_overrides(self, tmp_path):
        path = os.path.join(tmp_path, "run.json")
        with open(path, "w") as f:
            json.dump({"seed": 4, "model": {"layers": 3}}, f)
        cfg = load_run_config(path, seed=9)
        assert cfg.seed == 9 and cfg.model.layers == 3

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_run_config(os.path.join(tmp_path, "missing.json"))

    def test_cli_flags(self):
        args = build_parser().parse_args(
            ["--synth.num_classes", "30", "--train.iterations", "10", "--logging.no_wall_clock", "gen"]
        )
        cfg = config(args)
        assert cfg.model.num_classes == 30 and cfg.iterations == 10
        assert not cfg.logging.record_wall_clock

    def test_gen_counts_parse_next_to_train_flags(self):
        args = build_parser().parse_args([
            "--train.iterations", "5", "--model.arch", "temporal_cnn",
            "gen", "--num-train", "12", "--num-test", "4", "--test-games", "3", "--noisy-games", "1,3",
        ])
        assert (args.num_train, args.num_test, args.test_games, args.noisy_games) == (12, 4, 3, "1,3")
        assert config(args).model.arch == ModelArch.TEMPORAL_CNN

    def test_flag_prefixes_are_not_expanded(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["--train", "5", "gen"])

    def test_check_config_records_config(self, tmp_path):
        cfg = RunConfig(seed=7)
        out = check_config(cfg.model_copy(update={"logging": cfg.logging.model_copy(update={"dont_save_events": True})}),
                           os.path.join(tmp_path, "run"))
        with open(os.path.join(out, "config.json")) as f:
            assert json.load(f)["seed"] == 7


class TestCommands:
    @pytest.fixture
    def run_config(self, tiny_run, tmp_path):
        path = os.path.join(tmp_path, "run.json")
        with open(path, "w") as f:
            f.write(tiny_run.model_dump_json())
        return path

    def test_end_to_end(self, run_config, tmp_path, capsys):
        data = os.path.join(tmp_path, "data")
        run = os.path.join(tmp_path, "run")
        train_dir, test_dir = os.path.join(data, "train"), os.path.join(data, "test")

        assert main(["--config", run_config, "--out", data, "gen", "--num-train", "12", "--num-test", "4"]) == 0
        assert os.path.exists(os.path.join(train_dir, "manifest.json"))

        assert main(["--config", run_config, "--out", run, "label", "--data", train_dir]) == 0
        assert os.path.exists(os.path.join(train_dir, LABELS_FILE))

        assert main(["--config", run_config, "--out", run, "train", "--data", train_dir, "--eval-data", test_dir]) == 0
        checkpoint = os.path.join(run, "model.ckpt")
        assert os.path.exists(checkpoint) and os.path.exists(os.path.join(run, "metrics.csv"))

        evaluation = os.path.join(tmp_path, "eval")
        assert main(["--config", run_config, "--out", evaluation, "eval", "--checkpoint", checkpoint,
                     "--data", test_dir, "--mask-mode", "roster"]) == 0
        with open(os.path.join(evaluation, "summary.json")) as f:
            assert json.load(f)["num_tracklets"] == 4

        capsys.readouterr()
        assert main(["--config", run_config, "--out", evaluation, "infer", "--checkpoint", checkpoint,
                     "--data", test_dir, "--tracklet", "test-00000"]) == 0
        rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
        assert len(rows) == 1 and rows[0]["tracklet_id"] == "test-00000"

    def test_train_without_label_cache_fails(self, run_config, tmp_path):
        data = os.path.join(tmp_path, "data")
        assert main(["--config", run_config, "--out", data, "gen", "--num-train", "4", "--num-test", "2"]) == 0
        code = main(["--config", run_config, "--out", os.path.join(tmp_path, "run"), "train",
                     "--data", os.path.join(data, "train")])
        assert code == 1

    def test_invalid_override_fails(self, run_config, tmp_path):
        assert main(["--config", run_config, "--train.phi", "1.5", "--out", str(tmp_path), "gen"]) == 1

    def test_unknown_tracklet_fails(self, run_config, tmp_path):
        data = os.path.join(tmp_path, "data")
        run = os.path.join(tmp_path, "run")
        main(["--config", run_config, "--out", data, "gen", "--num-train", "4", "--num-test", "2"])
        main(["--config", run_config, "--out", run, "--train.sampling", "uniform", "train",
              "--data", os.path.join(data, "train")])
        code = main(["--config", run_config, "--out", run, "infer", "--checkpoint", os.path.join(run, "model.ckpt"),
                     "--data", os.path.join(data, "test"), "--tracklet", "nope"])
        assert code == 1

    def test_several_test_games_with_a_noisy_clock(self, run_config, tmp_path):
        data = os.path.join(tmp_path, "data")
        run = os.path.join(tmp_path, "run")
        assert main(["--config", run_config, "--out", data, "gen", "--num-train", "12", "--num-test", "6",
                     "--test-games", "2", "--noisy-games", "2", "--noisy-clock-fraction", "1.0"]) == 0
        games = [os.path.join(data, "test-01"), os.path.join(data, "test-02")]
        assert all(os.path.exists(os.path.join(g, "manifest.json")) for g in games)
        assert not os.path.exists(os.path.join(data, "test"))

        assert main(["--config", run_config, "--out", run, "--train.sampling", "uniform", "train",
                     "--data", os.path.join(data, "train")]) == 0
        report = os.path.join(tmp_path, "games")
        assert main(["--config", run_config, "--out", report, "eval-games",
                     "--checkpoint", os.path.join(run, "model.ckpt"), "--data", *games]) == 0

        with open(os.path.join(report, "per_game.csv")) as f:
            rows = {row["game"]: row for row in csv.DictReader(f)}
        assert list(rows) == ["test-01", "test-02", "all"]
        assert rows["test-01"]["clock_fallbacks"] == "0"
        players = [t for t in read_dataset(games[1]).tracklets if t.team_side != TeamSide.REFEREE]
        assert int(rows["test-02"]["clock_fallbacks"]) == len(players)
        assert rows["test-02"]["accuracy_shifts"] == rows["test-02"]["accuracy_none"]
        assert rows["all"]["num_tracklets"] == "12"

    def test_noisy_game_out_of_range_fails(self, run_config, tmp_path):
        assert main(["--config", run_config, "--out", str(tmp_path), "gen", "--num-train", "2", "--num-test", "2",
                     "--noisy-games", "2"]) == 1

    def test_compare_models(self, run_config, tmp_path):
        data = os.path.join(tmp_path, "data")
        out = os.path.join(tmp_path, "compare")
        assert main(["--config", run_config, "--out", data, "gen", "--num-train", "12", "--num-test", "4"]) == 0
        assert main(["--config", run_config, "--out", out, "--train.sampling", "uniform", "compare-models",
                     "--data", os.path.join(data, "train"), "--eval-data", os.path.join(data, "test")]) == 0
        with open(os.path.join(out, "compare.csv")) as f:
            rows = list(csv.DictReader(f))
        assert [(r["model"], r["game"]) for r in rows] == [
            ("transformer", "test"), ("transformer", "all"), ("temporal_cnn", "test"), ("temporal_cnn", "all"),
        ]
        assert rows[0]["num_parameters"] != rows[2]["num_parameters"]
        assert os.path.exists(os.path.join(out, "temporal_cnn", "model.ckpt"))
