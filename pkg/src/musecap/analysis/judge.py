"""LLM-judged music-feature match metrics.

A chat model compares a predicted and a reference caption on six musical
attributes and answers ``yes``, ``no`` or ``n/a`` for each. Per-feature
accuracy is ``yes / (yes + no)`` over the pairs where the attribute applies.
"""

import json
import logging
import time
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Any

from musecap.errors import JudgeParseError, ValidationError
from musecap.io.chat import ChatClient, ChatSettings, complete_with_retry
from musecap.prompts import load_template, render

logger = logging.getLogger(__name__)

JUDGE_TEMPLATE = "judge.txt"
FEATURES = ("key_match", "instrument_match", "genre_match", "mood_match", "vocal_presence_match", "vocal_gender_match")
ANSWERS = ("yes", "no", "n/a")
_ANSWER_ALIASES = {"na": "n/a", "n.a.": "n/a", "not applicable": "n/a"}


@dataclass(frozen=True)
class JudgeVerdict:
    """One judge answer per musical attribute."""

    key_match: str
    instrument_match: str
    genre_match: str
    mood_match: str
    vocal_presence_match: str
    vocal_gender_match: str

    def __post_init__(self) -> None:
        for name, value in asdict(self).items():
            if value not in ANSWERS:
                raise JudgeParseError(f"'{name}' must be one of {ANSWERS}, got '{value}'")

    @classmethod
    def uniform(cls, answer: str) -> "JudgeVerdict":
        return cls(**{name: answer for name in FEATURES})


def render_judge_prompt(prediction: str, reference: str) -> str:
    """The judge prompt with both captions filled in."""
    return render(load_template(JUDGE_TEMPLATE), prediction_text=prediction, reference_text=reference)


def _normalize(value: Any) -> str:
    text = str(value).strip().strip("'\"").strip().lower()
    return _ANSWER_ALIASES.get(text, text)


def parse_judge_response(text: str) -> JudgeVerdict:
    """Extract the first JSON object in ``text`` that decodes, ignoring surrounding prose.

    Keys and values are matched case-insensitively.

    Raises:
        JudgeParseError: If no object decodes, a key is missing, or a value is not yes/no/n/a
    """
    decoder = json.JSONDecoder()
    obj: dict | None = None
    for start, char in enumerate(text):
        if char != "{":
            continue
        try:
            candidate, _ = decoder.raw_decode(text, start)
        except json.JSONDecodeError:
            continue
        if isinstance(candidate, dict):
            obj = candidate
            break
    if obj is None:
        raise JudgeParseError(f"no JSON object in judge response: {text[:120]!r}")

    normalized = {str(key).strip().lower(): _normalize(value) for key, value in obj.items()}
    missing = [name for name in FEATURES if name not in normalized]
    if missing:
        raise JudgeParseError(f"judge response lacks keys {missing}")
    return JudgeVerdict(**{name: normalized[name] for name in FEATURES})


def judge_pair(
    prediction: str,
    reference: str,
    client: ChatClient,
    settings: ChatSettings | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> JudgeVerdict:
    """Ask the judge to compare one prediction with its reference.

    Raises:
        ValidationError: If either text is empty
        JudgeParseError: If the response holds no usable verdict
        ChainError: If the chat service keeps failing
    """
    if not prediction.strip() or not reference.strip():
        raise ValidationError("judge needs a non-empty prediction and reference")
    response = complete_with_retry(client, render_judge_prompt(prediction, reference), settings=settings, sleep=sleep)
    return parse_judge_response(response)


def judge_pairs(
    predictions: Sequence[str],
    references: Sequence[str],
    client: ChatClient,
    settings: ChatSettings | None = None,
    max_workers: int = 1,
    sleep: Callable[[float], None] = time.sleep,
) -> list[JudgeVerdict | None]:
    """Judge every pair, in parallel when ``max_workers > 1``.

    Returns:
        One verdict per pair index; ``None`` where either text is empty or the
        response was unusable. Empty pairs never reach the client.
    """

    def run(index: int) -> JudgeVerdict | None:
        if not predictions[index].strip() or not references[index].strip():
            logger.warning(f"Pair {index} skipped: empty prediction or reference")
            return None
        try:
            return judge_pair(predictions[index], references[index], client, settings=settings, sleep=sleep)
        except JudgeParseError as e:
            logger.warning(f"Judge response for pair {index} discarded: {e}")
            return None

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(run, range(len(predictions))))


def feature_accuracy(verdicts: Sequence[JudgeVerdict]) -> dict[str, float]:
    """``yes / (yes + no)`` per feature; features with no yes/no answers are omitted."""
    accuracy: dict[str, float] = {}
    for name in FEATURES:
        answers = [getattr(v, name) for v in verdicts]
        yes, no = answers.count("yes"), answers.count("no")
        if yes + no:
            accuracy[name] = yes / (yes + no)
    return accuracy
