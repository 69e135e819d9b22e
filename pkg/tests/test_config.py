import pytest

from dsr.config import (
    PROFILES,
    Settings,
    StageConfig,
    load_settings,
    parse_config_text,
)
from dsr.errors import ConfigError


class TestStageConfig:
    def test_desk_defaults_match_design(self):
        s = Settings(profile="desk", workdir="x")
        assert s.stage("pretrain").steps == 2000
        assert s.stage("finetune").steps == 300
        assert s.stage("duration").steps == 1000
        assert s.stage("generator").steps == 2000
        assert s.stage("speaker").steps == 1500
        assert s.stage("asa").steps == 500

    def test_full_profile_records_paper_scale(self):
        s = Settings(profile="full", workdir="x")
        assert s.stage("pretrain").steps == 1_000_000
        assert s.stage("pretrain").optimizer == "adadelta"
        assert s.stage("pretrain").learning_rate == 1.0
        assert s.stage("pretrain").batch_size == 8
        assert s.stage("finetune").steps == 2_000
        assert s.stage("duration").steps == 30_000
        assert s.stage("duration").learning_rate == 1e-3
        assert s.stage("duration").batch_size == 16
        assert s.stage("generator").steps == 50_000
        assert s.stage("asa").steps == 5_000

    def test_stage_seeds_are_distinct(self):
        s = Settings(profile="desk", workdir="x", seed=100)
        seeds = {name: s.stage(name).seed for name in PROFILES["desk"]}
        assert len(set(seeds.values())) == len(seeds)

    def test_invalid_optimizer_rejected(self):
        with pytest.raises(ConfigError):
            StageConfig("x", "sgd", 0.1, 4, 10, 0)

    def test_nonpositive_steps_rejected(self):
        with pytest.raises(ConfigError):
            StageConfig("x", "adam", 0.1, 4, 0, 0)


class TestConfigFile:
    def test_parse_key_values(self):
        text = """
        # a comment
        seed = 42
        profile = smoke   # trailing comment
        corpus.tempo_factor = 2.0
        """
        values = parse_config_text(text)
        assert values == {
            "seed": "42",
            "profile": "smoke",
            "corpus.tempo_factor": "2.0",
        }

    def test_bad_line_rejected(self):
        with pytest.raises(ConfigError):
            parse_config_text("this is not a key value line")

    def test_load_settings_from_file(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            "profile = smoke\n"
            "seed = 9\n"
            "workdir = runs/x\n"
            "corpus.n_healthy_speakers = 3\n"
            "corpus.substitution_rate = 0.5\n"
            "stage.pretrain.steps = 11\n"
            "model.speaker_hidden = 6\n"
        )
        s = load_settings(config_path=cfg)
        assert s.profile == "smoke"
        assert s.seed == 9
        assert str(s.workdir) == "runs/x"
        assert s.corpus.n_healthy_speakers == 3
        assert s.corpus.dysarthria_profile.substitution_rate == 0.5
        assert s.stage("pretrain").steps == 11
        assert s.model["speaker_hidden"] == 6

    def test_explicit_args_override_file(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("profile = smoke\nseed = 9\n")
        s = load_settings(config_path=cfg, profile="desk", seed=77)
        assert s.profile == "desk"
        assert s.seed == 77

    def test_unknown_key_rejected(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("mystery.option = 1\n")
        with pytest.raises(ConfigError):
            load_settings(config_path=cfg)

    def test_unknown_stage_option_rejected(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("stage.pretrain.momentum = 0.9\n")
        with pytest.raises(ConfigError):
            load_settings(config_path=cfg)

    def test_missing_config_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_settings(config_path=tmp_path / "none.cfg")

    def test_unknown_profile_rejected(self):
        with pytest.raises(ConfigError):
            Settings(profile="galactic", workdir="x")
