"""YAML run configuration.

A run config is a single YAML file::

    output_dir: runs/toy
    encoder: {kind: toy, n_layers: 13, dim: 768}
    projector:
      lm_dim: 16
      content_tokens: 35
      token_budget: 60
      heads: [{name: key, n_tokens: 5}, {name: instrument, n_tokens: 5}]
    lm: {kind: toy, dim: 16, query: "Describe this piece of music."}
    data:
      vocabularies: {instrument: vocab/instrument.txt}
      clip_len_s: 10
    phases:
      - {name: feature_pretrain, manifest: data/train.jsonl, epochs: 2, weights: {lambda_cap: 0, lambda_k: 0.2}}
    chat: {client: http, endpoint: "${CHAT_ENDPOINT:-https://api.openai.com/v1}", api_key_env: OPENAI_API_KEY}

``${VAR}`` and ``${VAR:-default}`` are replaced from the environment in every
string. Relative paths resolve against the config file's directory. Unknown
keys are errors, and every error names the offending field.
"""

import logging
import os
import re
from collections.abc import Mapping
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from musecap.errors import ConfigError
from musecap.io.chat import ChatSettings
from musecap.io.checkpoint import checkpoint_digest
from musecap.io.vocab import TaskVocabulary, resolve_vocabularies
from musecap.models.encoder import EncoderConfig
from musecap.models.lm import DEFAULT_QUERY
from musecap.models.projector import DEFAULT_HEAD_ORDER, ProjectorConfig, TaskHeadSpec
from musecap.processing.training import LossWeights, PhaseSpec, default_weights

logger = logging.getLogger(__name__)

_ENV = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)(?::-([^}]*))?\}")

TOP_LEVEL_KEYS = frozenset({"output_dir", "cache_dir", "encoder", "projector", "lm", "data", "phases", "chat"})


@dataclass(frozen=True)
class LMSettings:
    """Language-model selection and decoding settings."""

    kind: str = "toy"
    dim: int = 16
    seed: int = 0
    max_len: int = 512
    model_name: str | None = None
    query: str = DEFAULT_QUERY
    max_tokens: int = 32

    def spec(self) -> dict[str, Any]:
        """Spec understood by ``build_language_model`` (toy vocabulary still to be added)."""
        return {"kind": self.kind, "dim": self.dim, "seed": self.seed, "max_len": self.max_len, "model_name": self.model_name}


@dataclass(frozen=True)
class DataSettings:
    vocabularies: dict[str, Path] = field(default_factory=dict)
    clip_len_s: float = 10.0


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved run configuration."""

    path: Path | None
    encoder: EncoderConfig
    projector: ProjectorConfig
    lm: LMSettings
    data: DataSettings
    vocabularies: dict[str, TaskVocabulary]
    phases: tuple[PhaseSpec, ...]
    chat: ChatSettings
    chat_client: str = "http"
    audit_log: Path | None = None
    output_dir: Path = Path("runs")
    cache_dir: Path = Path(".cache/embeddings")

    def validate(self) -> "RunConfig":
        """Check cross-section invariants.

        Raises:
            ConfigError: Naming the first field that violates an invariant
        """
        self.projector.validate_budget()
        if self.lm.kind == "toy" and self.lm.dim != self.projector.lm_dim:
            raise ConfigError(f"language model dim {self.lm.dim} differs from projector.lm_dim {self.projector.lm_dim}", field="lm.dim")
        heads = set(self.projector.head_names)
        for i, phase in enumerate(self.phases):
            unknown = sorted(set(phase.weights.lambda_k) - heads)
            if unknown:
                raise ConfigError(f"weights for tasks without a head: {unknown}", field=f"phases[{i}].weights.lambda_k")
            if not Path(phase.dataset_id).exists():
                raise ConfigError(f"manifest not found: {phase.dataset_id}", field=f"phases[{i}].manifest")
        for spec in self.projector.heads:
            if len(self.vocabularies[spec.name]) != spec.n_classes:
                raise ConfigError("class count differs from vocabulary size", field=f"projector.heads.{spec.name}")
        return self

    def expected_digest(self) -> str:
        """Digest a checkpoint trained under this config must carry."""
        return checkpoint_digest(self.projector, self.projector.lm_dim, self.vocabularies)

    def to_dict(self) -> dict[str, Any]:
        """Resolved config as plain data (paths as strings)."""

        def plain(value: Any) -> Any:
            if isinstance(value, Path):
                return str(value)
            if isinstance(value, dict):
                return {k: plain(v) for k, v in value.items()}
            if isinstance(value, list | tuple):
                return [plain(v) for v in value]
            return value

        return {
            "output_dir": str(self.output_dir),
            "cache_dir": str(self.cache_dir),
            "encoder": asdict(self.encoder),
            "projector": plain(self.projector.to_dict()),
            "lm": asdict(self.lm),
            "data": plain(asdict(self.data)),
            "phases": [plain(asdict(phase)) for phase in self.phases],
            "chat": {"client": self.chat_client, "audit_log": plain(self.audit_log), **asdict(self.chat)},
        }


def interpolate(value: Any, field_path: str = "") -> Any:
    """Replace ``${VAR}`` / ``${VAR:-default}`` in every string of a YAML tree."""
    if isinstance(value, str):

        def substitute(match: re.Match[str]) -> str:
            name, default = match.group(1), match.group(2)
            if name in os.environ:
                return os.environ[name]
            if default is not None:
                return default
            raise ConfigError(f"environment variable {name} is not set", field=field_path or None)

        return _ENV.sub(substitute, value)
    if isinstance(value, dict):
        return {k: interpolate(v, f"{field_path}.{k}" if field_path else str(k)) for k, v in value.items()}
    if isinstance(value, list):
        return [interpolate(v, f"{field_path}[{i}]") for i, v in enumerate(value)]
    return value


def _mapping(data: Any, field_path: str) -> dict[str, Any]:
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError("expected a mapping", field=field_path)
    return data


def _build(cls: type, data: Mapping[str, Any], field_path: str, derived: Mapping[str, Any] | None = None) -> Any:
    """Instantiate a dataclass section, rejecting unknown keys.

    Keys in ``derived`` are filled in by the loader and may not appear in ``data``.
    """
    derived = derived or {}
    allowed = {f.name for f in fields(cls)} - set(derived)
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys {unknown}", field=field_path)
    try:
        return cls(**data, **derived)
    except TypeError as e:
        raise ConfigError(str(e), field=field_path) from e


def _resolve(base: Path, value: str | Path) -> Path:
    path = Path(value).expanduser()
    return path if path.is_absolute() else base / path


def _weights(data: Any, phase: str, heads: list[str], field_path: str) -> LossWeights:
    if data is None:
        return default_weights(phase, heads)
    data = _mapping(data, field_path)
    unknown = sorted(set(data) - {"lambda_cap", "lambda_k"})
    if unknown:
        raise ConfigError(f"unknown keys {unknown}", field=field_path)
    defaults = default_weights(phase, heads)
    lambda_k = data.get("lambda_k", defaults.lambda_k)
    if isinstance(lambda_k, int | float):
        lambda_k = {task: float(lambda_k) for task in heads}
    elif not isinstance(lambda_k, dict):
        raise ConfigError("expected a number or a task -> weight mapping", field=f"{field_path}.lambda_k")
    return LossWeights(lambda_cap=float(data.get("lambda_cap", defaults.lambda_cap)), lambda_k={k: float(v) for k, v in lambda_k.items()})


def _heads(data: Any, vocabs: Mapping[str, TaskVocabulary]) -> tuple[TaskHeadSpec, ...]:
    specs = []
    for i, entry in enumerate(data):
        entry = _mapping(entry, f"projector.heads[{i}]")
        if "name" not in entry:
            raise ConfigError("missing 'name'", field=f"projector.heads[{i}]")
        unknown = sorted(set(entry) - {"name", "n_tokens"})
        if unknown:
            raise ConfigError(f"unknown keys {unknown}", field=f"projector.heads[{i}]")
        specs.append(TaskHeadSpec(entry["name"], n_classes=len(vocabs[entry["name"]]), n_tokens=int(entry.get("n_tokens", 5))))
    return tuple(specs)


def parse_config(raw: Mapping[str, Any], base_dir: Path, path: Path | None = None) -> RunConfig:
    """Build a RunConfig from an already loaded YAML tree.

    Args:
        raw: YAML tree
        base_dir: Directory relative paths resolve against
        path: Config file path, if any

    Returns:
        Parsed config (call ``validate`` for cross-section checks)
    """
    raw = interpolate(_mapping(raw, "config"))
    unknown = sorted(set(raw) - TOP_LEVEL_KEYS)
    if unknown:
        raise ConfigError(f"unknown top-level keys {unknown}", field="config")

    encoder = _build(EncoderConfig, _mapping(raw.get("encoder"), "encoder"), "encoder")
    lm = _build(LMSettings, _mapping(raw.get("lm"), "lm"), "lm")

    data_raw = dict(_mapping(raw.get("data"), "data"))
    vocab_files = {task: _resolve(base_dir, p) for task, p in _mapping(data_raw.pop("vocabularies", None), "data.vocabularies").items()}
    data = _build(DataSettings, data_raw, "data", derived={"vocabularies": vocab_files})

    proj_raw = dict(_mapping(raw.get("projector"), "projector"))
    variant = proj_raw.get("variant", "multitask")
    if "heads" in proj_raw:
        heads_raw = proj_raw.pop("heads") or []
    else:
        heads_raw = [] if variant == "content_only" else [{"name": name} for name in DEFAULT_HEAD_ORDER]
    if not isinstance(heads_raw, list):
        raise ConfigError("expected a list of heads", field="projector.heads")
    head_names = [_mapping(h, "projector.heads").get("name") for h in heads_raw]
    vocabs = resolve_vocabularies([n for n in head_names if n], data.vocabularies)
    proj_raw["heads"] = _heads(heads_raw, vocabs)
    projector = _build(ProjectorConfig, proj_raw, "projector", derived={"n_layers": encoder.n_layers, "embed_dim": encoder.dim})

    phases_raw = raw.get("phases") or []
    if not isinstance(phases_raw, list):
        raise ConfigError("expected a list of phases", field="phases")
    phases = []
    for i, entry in enumerate(phases_raw):
        entry = dict(_mapping(entry, f"phases[{i}]"))
        if "name" not in entry:
            raise ConfigError("missing 'name'", field=f"phases[{i}].name")
        if "manifest" not in entry:
            raise ConfigError("missing manifest path", field=f"phases[{i}].manifest")
        weights = _weights(entry.pop("weights", None), entry["name"], projector.head_names, f"phases[{i}].weights")
        manifest = _resolve(base_dir, entry.pop("manifest"))
        phases.append(_build(PhaseSpec, entry, f"phases[{i}]", derived={"weights": weights, "dataset_id": str(manifest)}))

    chat_raw = dict(_mapping(raw.get("chat"), "chat"))
    chat_client = str(chat_raw.pop("client", "http"))
    audit_log = chat_raw.pop("audit_log", None)
    chat = _build(ChatSettings, chat_raw, "chat")

    output_dir = _resolve(base_dir, raw.get("output_dir", "runs"))
    return RunConfig(
        path=path,
        encoder=encoder,
        projector=projector,
        lm=lm,
        data=data,
        vocabularies=vocabs,
        phases=tuple(phases),
        chat=chat,
        chat_client=chat_client,
        audit_log=_resolve(base_dir, audit_log) if audit_log else None,
        output_dir=output_dir,
        cache_dir=_resolve(base_dir, raw.get("cache_dir", ".cache/embeddings")),
    )


def load_config(path: Path | str) -> RunConfig:
    """Load, interpolate and validate a YAML run config.

    Raises:
        ConfigError: If the file is missing, not YAML, or violates an invariant
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}", field="config")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise ConfigError(f"invalid YAML: {e}", field="config") from e
    config = parse_config(raw or {}, base_dir=path.parent.resolve(), path=path)
    logger.debug(f"Loaded config {path}")
    return config.validate()
