"""Text summaries of manifest label distributions."""

from collections.abc import Mapping, Sequence

import pandas as pd

from musecap.io.manifest import ManifestRecord
from musecap.io.vocab import TaskVocabulary


def label_frame(records: Sequence[ManifestRecord], vocabs: Mapping[str, TaskVocabulary]) -> pd.DataFrame:
    """One row per (record, task, label), with the record's line number and split."""
    rows = [
        {"line": record.line_number, "split": record.split, "task": task, "label": label}
        for record in records
        for task in vocabs
        for label in record.features.get(task, ())
    ]
    return pd.DataFrame(rows, columns=["line", "split", "task", "label"])


def describe_task(labels: pd.Series, vocab: TaskVocabulary, n_records: int, lines_with_labels: int, top: int = 5) -> str:
    """Describe one task's labels.

    Args:
        labels: Every label occurrence of the task
        vocab: The task's vocabulary
        n_records: Number of records in the manifest
        lines_with_labels: Records carrying at least one label for the task
        top: Number of most frequent labels to list

    Returns:
        Formatted multi-line description

    Examples:
        >>> print(describe_task(pd.Series(["piano", "cello", "piano"]), TaskVocabulary("instrument", ("piano", "cello", "drums")), 2, 2))
        instrument [multi-label, 3 classes]:
          Labelled: 2/2 (100.0% complete)
          Labels used: 2/3
          Values: ['piano (2)', 'cello (1)']
    """
    kind = "multi-label" if vocab.multi_label else "single-label"
    lines = [f"{vocab.task} [{kind}, {len(vocab)} classes]:"]
    pct = (lines_with_labels / n_records * 100) if n_records > 0 else 0
    lines.append(f"  Labelled: {lines_with_labels}/{n_records} ({pct:.1f}% complete)")
    if labels.empty:
        return "\n".join(lines)

    value_counts = labels.value_counts()
    lines.append(f"  Labels used: {len(value_counts)}/{len(vocab)}")
    if len(value_counts) < top:
        lines.append(f"  Values: {[f'{value} ({count})' for value, count in value_counts.items()]}")
    else:
        lines.append(f"  Top {top} values:")
        for value, count in value_counts.head(top).items():
            lines.append(f"    - {value}: {count}")
    return "\n".join(lines)


def describe_labels(records: Sequence[ManifestRecord], vocabs: Mapping[str, TaskVocabulary], top: int = 5) -> str:
    """Describe the label distribution of every task, in vocabulary order."""
    frame = label_frame(records, vocabs)
    descriptions = []
    for task, vocab in vocabs.items():
        subset = frame[frame["task"] == task]
        descriptions.append(describe_task(subset["label"], vocab, len(records), subset["line"].nunique(), top=top))
    return "\n\n".join(descriptions)
