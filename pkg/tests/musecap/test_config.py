"""Tests for YAML run configuration."""

import pytest
import yaml

from musecap.config import interpolate, load_config, parse_config
from musecap.errors import ConfigError
from musecap.processing.training import LossWeights


def load_raw(path):
    return yaml.safe_load(path.read_text(encoding="utf-8"))


def parse(raw, path):
    return parse_config(raw, base_dir=path.parent.resolve(), path=path).validate()


class TestLoadConfig:
    """The toy run config and its derived values."""

    def test_toy_run(self, toy_run, tmp_path):
        config = load_config(toy_run())

        assert config.projector.head_names == ["key", "instrument"]
        assert [h.n_classes for h in config.projector.heads] == [24, 4]
        assert (config.projector.n_layers, config.projector.embed_dim) == (3, 8)
        assert config.projector.music_token_count == 8
        assert list(config.vocabularies) == ["key", "instrument"]
        assert config.lm.max_tokens == 6
        assert config.chat_client == "echo"
        assert config.chat.backoff_s == 0
        assert config.output_dir == tmp_path.resolve() / "out"
        assert config.data.clip_len_s == 10

    def test_phase_defaults(self, toy_run, tmp_path):
        config = load_config(toy_run())
        feature, caption = config.phases

        assert feature.weights == LossWeights(0.0, {"key": 0.2, "instrument": 0.2})
        assert caption.weights == LossWeights(1.0, {"key": 0.1, "instrument": 0.1})
        assert (caption.learning_rate, caption.max_grad_norm, caption.epochs) == (0.05, 1.0, 2)
        assert feature.dataset_id == str(tmp_path.resolve() / "data" / "train.jsonl")

    def test_budget_mismatch(self, toy_run):
        """61 declared tokens against 8 allocated."""
        with pytest.raises(ConfigError) as info:
            load_config(toy_run(budget=61))
        assert info.value.field == "projector.token_budget"
        assert "61" in str(info.value)

    def test_missing_manifest(self, toy_run):
        with pytest.raises(ConfigError) as info:
            load_config(toy_run(manifest="data/missing.jsonl"))
        assert info.value.field == "phases[0].manifest"

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "nope.yaml")

    def test_invalid_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("phases: [unclosed\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="invalid YAML"):
            load_config(path)

    def test_unknown_top_level_key(self, toy_run):
        with pytest.raises(ConfigError, match="bogus"):
            load_config(toy_run(extra="bogus: 1\n"))

    def test_expected_digest_is_stable(self, toy_run):
        path = toy_run()
        assert load_config(path).expected_digest() == load_config(path).expected_digest()


class TestParseConfig:
    """Section-level validation on edited YAML trees."""

    def test_unknown_section_key(self, toy_run):
        path = toy_run()
        raw = load_raw(path)
        raw["encoder"]["colour"] = "blue"
        with pytest.raises(ConfigError) as info:
            parse(raw, path)
        assert info.value.field == "encoder"
        assert "colour" in str(info.value)

    def test_lm_dim_mismatch(self, toy_run):
        path = toy_run()
        raw = load_raw(path)
        raw["lm"]["dim"] = 32
        with pytest.raises(ConfigError) as info:
            parse(raw, path)
        assert info.value.field == "lm.dim"

    def test_feature_pretrain_with_caption_weight(self, toy_run):
        path = toy_run()
        raw = load_raw(path)
        raw["phases"][0]["weights"] = {"lambda_cap": 1.0}
        with pytest.raises(ConfigError, match="lambda_cap = 0"):
            parse(raw, path)

    def test_weight_map(self, toy_run):
        path = toy_run()
        raw = load_raw(path)
        raw["phases"][1]["weights"] = {"lambda_k": {"key": 0.5}}
        assert parse(raw, path).phases[1].weights == LossWeights(1.0, {"key": 0.5})

    def test_scalar_weight(self, toy_run):
        path = toy_run()
        raw = load_raw(path)
        raw["phases"][1]["weights"] = {"lambda_cap": 2.0, "lambda_k": 0.3}
        assert parse(raw, path).phases[1].weights == LossWeights(2.0, {"key": 0.3, "instrument": 0.3})

    def test_weight_for_unknown_task(self, toy_run):
        path = toy_run()
        raw = load_raw(path)
        raw["phases"][1]["weights"] = {"lambda_k": {"tempo": 0.1}}
        with pytest.raises(ConfigError) as info:
            parse(raw, path)
        assert info.value.field == "phases[1].weights.lambda_k"

    def test_phase_without_manifest(self, toy_run):
        path = toy_run()
        raw = load_raw(path)
        del raw["phases"][0]["manifest"]
        with pytest.raises(ConfigError) as info:
            parse(raw, path)
        assert info.value.field == "phases[0].manifest"

    def test_head_without_vocabulary(self, toy_run):
        path = toy_run()
        raw = load_raw(path)
        raw["projector"]["heads"].append({"name": "genre", "n_tokens": 1})
        with pytest.raises(ConfigError) as info:
            parse(raw, path)
        assert info.value.field == "data.vocabularies.genre"

    def test_content_only_has_no_heads(self, toy_run):
        path = toy_run()
        raw = load_raw(path)
        raw["projector"] = {"variant": "content_only", "lm_dim": 16, "content_tokens": 4, "token_budget": 4, "hidden_dim": 16}
        raw["phases"] = raw["phases"][1:]
        config = parse(raw, path)
        assert config.projector.heads == ()
        assert config.vocabularies == {}
        assert config.phases[0].weights == LossWeights(1.0, {})

    def test_digest_depends_on_allocation(self, toy_run):
        path = toy_run()
        raw = load_raw(path)
        base = parse(raw, path).expected_digest()
        raw["projector"]["content_tokens"] = 5
        raw["projector"]["heads"][1]["n_tokens"] = 1
        assert parse(raw, path).expected_digest() != base

    def test_audit_log_resolved(self, toy_run, tmp_path):
        path = toy_run()
        raw = load_raw(path)
        raw["chat"]["audit_log"] = "logs/chat.jsonl"
        assert parse(raw, path).audit_log == tmp_path.resolve() / "logs" / "chat.jsonl"

    def test_to_dict_is_yaml_safe(self, toy_run):
        config = load_config(toy_run())
        reloaded = yaml.safe_load(yaml.safe_dump(config.to_dict()))
        assert reloaded["projector"]["token_budget"] == 8
        assert reloaded["projector"]["heads"][0] == {"name": "key", "n_classes": 24, "n_tokens": 2}
        assert reloaded["chat"]["client"] == "echo"
        assert reloaded["phases"][0]["weights"]["lambda_cap"] == 0.0


class TestInterpolate:
    """``${VAR}`` and ``${VAR:-default}`` substitution."""

    def test_set_and_default(self, monkeypatch):
        monkeypatch.setenv("MUSECAP_TEST_DIR", "/data")
        monkeypatch.delenv("MUSECAP_TEST_UNSET", raising=False)
        raw = {"a": "${MUSECAP_TEST_DIR}/x", "b": ["${MUSECAP_TEST_UNSET:-fallback}", 3]}
        assert interpolate(raw) == {"a": "/data/x", "b": ["fallback", 3]}

    def test_missing_variable_names_field(self, monkeypatch):
        monkeypatch.delenv("MUSECAP_TEST_UNSET", raising=False)
        with pytest.raises(ConfigError) as info:
            interpolate({"chat": {"endpoint": "${MUSECAP_TEST_UNSET}"}})
        assert info.value.field == "chat.endpoint"

    def test_in_config_file(self, toy_run, monkeypatch, tmp_path):
        monkeypatch.setenv("MUSECAP_TEST_MODEL", "judge-model")
        path = toy_run()
        path.write_text(path.read_text(encoding="utf-8").replace("client: echo,", "client: echo, model: '${MUSECAP_TEST_MODEL}',"), encoding="utf-8")
        assert load_config(path).chat.model == "judge-model"
