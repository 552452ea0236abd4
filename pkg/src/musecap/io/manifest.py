"""JSON Lines manifests of (audio, caption, feature labels) triplets.

One object per line::

    {"audio_path": "clips/a.wav", "caption": "...", "split": "train",
     "features": {"key": "C major", "instrument": ["piano", "cello"]},
     "chords": [...], "downbeats": [...]}

``chords`` and ``downbeats`` are carried through in ``ManifestRecord.extra``
but feed no head.
"""

import json
import logging
import warnings
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from musecap.errors import ParseError, ValidationError
from musecap.io.vocab import TaskVocabulary

logger = logging.getLogger(__name__)

REQUIRED_FIELDS = ("audio_path", "caption")
EXTRA_FIELDS = ("chords", "downbeats")
KNOWN_FIELDS = frozenset({*REQUIRED_FIELDS, *EXTRA_FIELDS, "features", "split"})


@dataclass(frozen=True)
class ManifestRecord:
    """One validated manifest line."""

    audio_path: Path
    caption: str
    features: dict[str, tuple[str, ...]]
    split: str = "train"
    line_number: int = 0
    extra: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class FeatureLabelSet:
    """Multi-hot target vector per task, in vocabulary order."""

    vectors: dict[str, np.ndarray]

    def __getitem__(self, task: str) -> np.ndarray:
        return self.vectors[task]

    def __iter__(self):  # type: ignore[no-untyped-def]
        return iter(self.vectors)


def _labels(value: Any, task: str, line: int) -> tuple[str, ...]:
    if isinstance(value, str):
        return (value,)
    if isinstance(value, list) and all(isinstance(v, str) for v in value):
        return tuple(value)
    raise ValidationError(f"labels for '{task}' must be a string or a list of strings", line=line)


def parse_record(obj: Any, vocabs: Mapping[str, TaskVocabulary], line: int, base_dir: Path | None = None) -> ManifestRecord:
    """Validate one decoded manifest object against the vocabularies.

    Args:
        obj: Decoded JSON value of the line
        vocabs: Vocabulary per task
        line: 1-based line number for error messages
        base_dir: Directory relative audio paths are resolved against

    Returns:
        The validated record
    """
    if not isinstance(obj, dict):
        raise ParseError("expected a JSON object", line=line)
    missing = [name for name in REQUIRED_FIELDS if name not in obj]
    if missing:
        raise ValidationError(f"missing fields {missing}", line=line)
    caption = obj["caption"]
    if not isinstance(caption, str) or not caption.strip():
        raise ValidationError("caption is empty", line=line)

    raw_features = obj.get("features") or {}
    if not isinstance(raw_features, dict):
        raise ValidationError("'features' must be an object", line=line)
    unknown_tasks = sorted(set(raw_features) - set(vocabs))
    if unknown_tasks:
        raise ValidationError(f"no vocabulary for tasks {unknown_tasks}", line=line)

    features: dict[str, tuple[str, ...]] = {}
    for task, vocab in vocabs.items():
        labels = _labels(raw_features.get(task, []), task, line)
        for label in labels:
            if label not in vocab:
                raise ValidationError(f"unknown {task} label '{label}'", line=line)
        if not vocab.multi_label and len(labels) != 1:
            raise ValidationError(f"single-label task '{task}' needs exactly one label, got {len(labels)}", line=line)
        features[task] = labels

    audio_path = Path(obj["audio_path"])
    if base_dir is not None and not audio_path.is_absolute():
        audio_path = base_dir / audio_path
    return ManifestRecord(
        audio_path=audio_path,
        caption=caption,
        features=features,
        split=str(obj.get("split", "train")),
        line_number=line,
        extra={name: obj[name] for name in EXTRA_FIELDS if name in obj},
    )


def load_manifest(path: Path | str, vocabs: Mapping[str, TaskVocabulary]) -> list[ManifestRecord]:
    """Load and validate every line of a JSONL manifest.

    Blank lines are skipped but still counted for line numbers.

    Args:
        path: Manifest file
        vocabs: Vocabulary per task; every label must be in its vocabulary

    Returns:
        Records in file order (empty for an empty file, with a warning)

    Raises:
        ParseError: If a line is not valid JSON
        ValidationError: If a record violates the schema or vocabularies
    """
    path = Path(path)
    records: list[ManifestRecord] = []
    unknown: set[str] = set()
    with open(path, encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"malformed JSON: {e.msg}", line=line_number) from e
            if isinstance(obj, dict):
                unknown.update(set(obj) - KNOWN_FIELDS)
            records.append(parse_record(obj, vocabs, line_number, base_dir=path.parent))

    if not records:
        warnings.warn(f"Manifest {path} contains no records", UserWarning, stacklevel=2)
    if unknown:
        warnings.warn(f"Ignoring unknown manifest fields: {', '.join(sorted(unknown))}", UserWarning, stacklevel=2)
    logger.info(f"Loaded {len(records)} records from {path}")
    return records


def encode_labels(record: ManifestRecord, vocabs: Mapping[str, TaskVocabulary]) -> FeatureLabelSet:
    """Multi-hot vectors ``y_k ∈ {0, 1}^{C_k}`` in vocabulary order."""
    vectors: dict[str, np.ndarray] = {}
    for task, vocab in vocabs.items():
        y = np.zeros(len(vocab), dtype=np.float64)
        for label in record.features.get(task, ()):
            y[vocab.index(label)] = 1.0
        vectors[task] = y
    return FeatureLabelSet(vectors)


def decode_labels(labels: FeatureLabelSet, vocabs: Mapping[str, TaskVocabulary]) -> dict[str, tuple[str, ...]]:
    """Inverse of ``encode_labels``: set labels per task, in vocabulary order."""
    return {task: tuple(vocabs[task].labels[i] for i in np.flatnonzero(vec > 0.5)) for task, vec in labels.vectors.items()}


def load_texts(path: Path | str) -> list[str]:
    """Read a ``{"text": ...}`` JSONL file, as used for predictions and references."""
    texts: list[str] = []
    with open(path, encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"malformed JSON: {e.msg}", line=line_number) from e
            if not isinstance(obj, dict) or not isinstance(obj.get("text"), str):
                raise ValidationError("expected an object with a string 'text' field", line=line_number)
            texts.append(obj["text"])
    return texts
