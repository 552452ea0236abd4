"""Projector checkpoints: named parameter groups plus a config digest.

A checkpoint is one ``torch.save`` bundle. Its digest covers the projector
config, the LM embedding width and the label order of every vocabulary, so a
checkpoint can only be loaded against the configuration it was trained with.
"""

import json
import logging
from collections.abc import Mapping
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any

import torch

from musecap.errors import CheckpointError, ConfigError
from musecap.io.vocab import TaskVocabulary, vocabulary_hashes
from musecap.models.encoder import EncoderConfig
from musecap.models.projector import MusicProjector, ProjectorConfig
from musecap.utils.hashing import canonical_json, config_digest

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


def checkpoint_digest(config: ProjectorConfig, lm_dim: int, vocabs: Mapping[str, TaskVocabulary]) -> str:
    """Digest binding a checkpoint to its projector config, LM width and vocabularies."""
    return config_digest({"projector": config.to_dict(), "lm_dim": lm_dim, "vocabularies": vocabulary_hashes(vocabs)})


@dataclass(frozen=True, eq=False)
class Checkpoint:
    """A loaded checkpoint with everything needed to rebuild the captioner."""

    projector: MusicProjector
    vocabularies: dict[str, TaskVocabulary]
    lm_spec: dict[str, Any]
    encoder: EncoderConfig
    query: str
    digest: str
    phase: str | None = None


def _plain(data: Any) -> Any:
    # Tuples and dataclass leftovers become JSON lists/dicts so weights-only loading accepts them
    return json.loads(canonical_json(data))


def save_checkpoint(
    path: Path | str,
    projector: MusicProjector,
    vocabs: Mapping[str, TaskVocabulary],
    lm_spec: Mapping[str, Any],
    encoder: EncoderConfig,
    query: str,
    phase: str | None = None,
) -> str:
    """Write a checkpoint bundle.

    Args:
        path: Target file
        projector: Trained projector
        vocabs: Vocabularies the heads were trained on
        lm_spec: Language-model description (toy specs carry their vocabulary)
        encoder: Encoder configuration
        query: Query text used during training
        phase: Name of the phase that produced the checkpoint

    Returns:
        The checkpoint digest
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    digest = checkpoint_digest(projector.config, int(lm_spec["dim"]), vocabs)
    bundle = {
        "format": FORMAT_VERSION,
        "digest": digest,
        "config": _plain(projector.config.to_dict()),
        "vocabularies": {task: {"labels": list(v.labels), "multi_label": v.multi_label} for task, v in vocabs.items()},
        "lm": _plain(dict(lm_spec)),
        "encoder": _plain(asdict(encoder)),
        "query": query,
        "phase": phase,
        "groups": {name: module.state_dict() for name, module in projector.parameter_groups().items()},
    }
    torch.save(bundle, path)
    logger.info(f"Saved checkpoint {path} (digest {digest[:12]})")
    return digest


def load_checkpoint(path: Path | str, expected_digest: str | None = None) -> Checkpoint:
    """Load a checkpoint and verify its digest.

    Args:
        path: Checkpoint file
        expected_digest: Digest of the run configuration, if one is in use

    Returns:
        The rebuilt checkpoint

    Raises:
        CheckpointError: If the file is missing, malformed or internally inconsistent
        ConfigError: If the digest differs from ``expected_digest``
    """
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"Checkpoint not found: {path}")
    try:
        bundle = torch.load(path, weights_only=True)
    except Exception as e:
        raise CheckpointError(f"Could not read checkpoint {path}: {e}") from e
    if not isinstance(bundle, dict) or bundle.get("format") != FORMAT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint format in {path}")

    try:
        config = ProjectorConfig.from_dict(bundle["config"])
        vocabs = {task: TaskVocabulary(task, tuple(v["labels"]), multi_label=v["multi_label"]) for task, v in bundle["vocabularies"].items()}
        lm_spec = dict(bundle["lm"])
        encoder = EncoderConfig(**bundle["encoder"])
        digest = checkpoint_digest(config, int(lm_spec["dim"]), vocabs)
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"Malformed checkpoint {path}: {e}") from e

    if digest != bundle["digest"]:
        raise CheckpointError(f"Checkpoint {path} is corrupt: stored digest does not match its contents")
    if expected_digest is not None and digest != expected_digest:
        raise ConfigError(f"checkpoint digest {digest[:12]} does not match configuration digest {expected_digest[:12]}", field="checkpoint")

    projector = MusicProjector(config)
    groups = projector.parameter_groups()
    missing = sorted(set(groups) - set(bundle["groups"]))
    if missing:
        raise CheckpointError(f"Checkpoint {path} lacks parameter groups {missing}")
    for name, module in groups.items():
        module.load_state_dict(bundle["groups"][name])
    return Checkpoint(
        projector=projector,
        vocabularies=vocabs,
        lm_spec=lm_spec,
        encoder=encoder,
        query=str(bundle["query"]),
        digest=digest,
        phase=bundle.get("phase"),
    )
