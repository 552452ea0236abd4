"""Tests for projector checkpoints."""

import pytest
import torch

from musecap.errors import CheckpointError, ConfigError
from musecap.io.checkpoint import checkpoint_digest, load_checkpoint, save_checkpoint
from musecap.io.vocab import TaskVocabulary
from musecap.models.lm import DEFAULT_QUERY
from musecap.models.projector import MusicProjector


@pytest.fixture
def saved(tmp_path, tiny_projector_config, tiny_vocabs, toy_lm, tiny_encoder_config):
    """A trained-looking projector saved to disk."""
    projector = MusicProjector(tiny_projector_config)
    with torch.no_grad():
        projector.content_layer_weights.raw.copy_(torch.tensor([0.5, -1.0, 2.0]))
    path = tmp_path / "ckpt" / "model.pt"
    digest = save_checkpoint(path, projector, tiny_vocabs, toy_lm.to_spec(), tiny_encoder_config, DEFAULT_QUERY, phase="finetune")
    return path, projector, digest


class TestSaveLoad:
    """Round trip of parameters and metadata."""

    def test_round_trip(self, saved, random_embedding, tiny_vocabs, toy_lm, tiny_encoder_config):
        """The reloaded projector reproduces every output."""
        path, projector, digest = saved
        checkpoint = load_checkpoint(path)
        H = random_embedding()
        with torch.no_grad():
            a, b = projector(H), checkpoint.projector(H)
        assert torch.equal(a.content.vectors, b.content.vectors)
        assert torch.equal(a.feature.vectors, b.feature.vectors)
        assert checkpoint.digest == digest
        assert checkpoint.phase == "finetune"
        assert checkpoint.query == DEFAULT_QUERY
        assert checkpoint.encoder == tiny_encoder_config
        assert checkpoint.lm_spec["vocab"] == toy_lm.to_spec()["vocab"]
        assert checkpoint.vocabularies == tiny_vocabs

    def test_expected_digest_accepted(self, saved, tiny_projector_config, tiny_vocabs):
        path, _, _ = saved
        expected = checkpoint_digest(tiny_projector_config, 16, tiny_vocabs)
        assert load_checkpoint(path, expected_digest=expected).digest == expected

    def test_digest_mismatch(self, saved):
        """A checkpoint trained under another config is rejected."""
        path, _, _ = saved
        with pytest.raises(ConfigError, match="checkpoint"):
            load_checkpoint(path, expected_digest="0" * 64)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError, match="not found"):
            load_checkpoint(tmp_path / "none.pt")

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "junk.pt"
        path.write_bytes(b"junk")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_tampered_digest(self, saved):
        """A stored digest that disagrees with the contents marks the file corrupt."""
        path, _, _ = saved
        bundle = torch.load(path, weights_only=True)
        bundle["config"]["content_tokens"] = 5
        bundle["config"]["token_budget"] = 9
        torch.save(bundle, path)
        with pytest.raises(CheckpointError, match="corrupt"):
            load_checkpoint(path)

    def test_missing_group(self, saved):
        path, _, _ = saved
        bundle = torch.load(path, weights_only=True)
        del bundle["groups"]["head_key"]
        torch.save(bundle, path)
        with pytest.raises(CheckpointError, match="head_key"):
            load_checkpoint(path)

    def test_lm_spec_without_dim(self, saved):
        """A malformed LM entry is reported as a checkpoint error, not a raw KeyError."""
        path, _, _ = saved
        bundle = torch.load(path, weights_only=True)
        del bundle["lm"]["dim"]
        torch.save(bundle, path)
        with pytest.raises(CheckpointError, match="Malformed"):
            load_checkpoint(path)


class TestCheckpointDigest:
    """What the digest covers."""

    def test_label_order_matters(self, tiny_projector_config, tiny_vocabs):
        """Reordering a vocabulary changes the digest."""
        reordered = dict(tiny_vocabs)
        reordered["instrument"] = TaskVocabulary("instrument", tuple(reversed(tiny_vocabs["instrument"].labels)))
        assert checkpoint_digest(tiny_projector_config, 16, tiny_vocabs) != checkpoint_digest(tiny_projector_config, 16, reordered)

    def test_lm_dim_matters(self, tiny_projector_config, tiny_vocabs):
        assert checkpoint_digest(tiny_projector_config, 16, tiny_vocabs) != checkpoint_digest(tiny_projector_config, 32, tiny_vocabs)
