"""Label vocabularies for the music-feature tasks.

Each task has an ordered label list; a label's position is its class index,
so the order is part of the checkpoint contract. ``key`` and ``vocals`` ship
with built-in vocabularies, the others are dataset-supplied plain-text files
with one label per line.
"""

from collections import Counter
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from pathlib import Path

from musecap.errors import ConfigError, ValidationError
from musecap.utils.hashing import config_digest

TONICS = ("C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B")
MODES = ("major", "minor")

# Vocal gender is folded into the vocals head
VOCALS_LABELS = ("no_vocals", "male_vocals", "female_vocals")

# Tasks where exactly one label applies per clip
SINGLE_LABEL_TASKS = frozenset({"key", "vocals"})


@dataclass(frozen=True)
class TaskVocabulary:
    """Ordered label list of one task; ``C_k = len(labels)``."""

    task: str
    labels: tuple[str, ...]
    multi_label: bool = True

    def __post_init__(self) -> None:
        """Normalize labels to a tuple and reject empty or duplicate lists."""
        object.__setattr__(self, "labels", tuple(self.labels))
        if not self.labels:
            raise ConfigError("vocabulary is empty", field=f"data.vocabularies.{self.task}")
        dupes = sorted(label for label, n in Counter(self.labels).items() if n > 1)
        if dupes:
            raise ConfigError(f"duplicate labels {dupes}", field=f"data.vocabularies.{self.task}")
        object.__setattr__(self, "_index", {label: i for i, label in enumerate(self.labels)})

    def __len__(self) -> int:
        return len(self.labels)

    def __contains__(self, label: object) -> bool:
        return label in self._index  # type: ignore[attr-defined]

    def index(self, label: str) -> int:
        """Class index of ``label``.

        Raises:
            ValidationError: If the label is not in the vocabulary
        """
        try:
            return self._index[label]  # type: ignore[attr-defined,no-any-return]
        except KeyError:
            raise ValidationError(f"unknown {self.task} label '{label}'") from None

    @property
    def digest(self) -> str:
        """Hash of task name and label order."""
        return config_digest({"task": self.task, "labels": list(self.labels)})


def key_vocabulary() -> TaskVocabulary:
    """24 keys ordered C major, C minor, C# major, ..., B minor."""
    return TaskVocabulary("key", tuple(f"{tonic} {mode}" for tonic in TONICS for mode in MODES), multi_label=False)


def vocals_vocabulary() -> TaskVocabulary:
    return TaskVocabulary("vocals", VOCALS_LABELS, multi_label=False)


BUILTIN_VOCABULARIES = {"key": key_vocabulary, "vocals": vocals_vocabulary}


def has_builtin_vocabulary(task: str) -> bool:
    return task in BUILTIN_VOCABULARIES


def load_vocabulary(task: str, path: Path | str, multi_label: bool | None = None) -> TaskVocabulary:
    """Read a vocabulary file: one label per line, blank lines and ``#`` comments skipped.

    Args:
        task: Task the vocabulary belongs to
        path: Plain-text label file
        multi_label: Override; defaults to single-label for ``key`` and ``vocals``

    Returns:
        The vocabulary in file order
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"vocabulary file not found: {path}", field=f"data.vocabularies.{task}")
    labels = [line.strip() for line in path.read_text(encoding="utf-8").splitlines()]
    labels = [label for label in labels if label and not label.startswith("#")]
    if multi_label is None:
        multi_label = task not in SINGLE_LABEL_TASKS
    return TaskVocabulary(task, tuple(labels), multi_label=multi_label)


def resolve_vocabularies(tasks: Iterable[str], files: Mapping[str, Path | str]) -> dict[str, TaskVocabulary]:
    """Vocabulary per task from ``files``, falling back to the built-ins.

    Raises:
        ConfigError: If a task has neither a file nor a built-in vocabulary
    """
    vocabs: dict[str, TaskVocabulary] = {}
    for task in tasks:
        if task in files:
            vocabs[task] = load_vocabulary(task, files[task])
        elif has_builtin_vocabulary(task):
            vocabs[task] = BUILTIN_VOCABULARIES[task]()
        else:
            raise ConfigError(f"no vocabulary file for task '{task}'", field=f"data.vocabularies.{task}")
    return vocabs


def vocabulary_hashes(vocabs: Mapping[str, TaskVocabulary]) -> dict[str, str]:
    """Label-order hash per task, as embedded in checkpoint digests."""
    return {task: vocab.digest for task, vocab in vocabs.items()}
