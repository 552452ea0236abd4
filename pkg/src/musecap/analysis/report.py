"""Corpus-level evaluation of predicted captions against references."""

import logging
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from typing import Any

import pandas as pd

from musecap.analysis.judge import JudgeVerdict, feature_accuracy, judge_pairs
from musecap.analysis.metrics import Embedder, ToyEmbedder, bleu, embed_similarity, meteor_lite, rouge_l
from musecap.errors import ValidationError
from musecap.io.chat import ChatClient, ChatSettings

logger = logging.getLogger(__name__)

SCORE_COLUMNS = ("bleu", "bleu4", "meteor", "rouge_l", "bert_like")


@dataclass(frozen=True, eq=False)
class ScoreReport:
    """Corpus scores (means of the per-pair scores) plus judge results."""

    pairs: pd.DataFrame
    feature_accuracy: dict[str, float] = field(default_factory=dict)
    judge_failures: int = 0
    judged: bool = False

    def corpus_scores(self) -> dict[str, float]:
        return {name: float(self.pairs[name].mean()) for name in SCORE_COLUMNS}

    @property
    def bleu(self) -> float:
        return self.corpus_scores()["bleu"]

    @property
    def bleu4(self) -> float:
        return self.corpus_scores()["bleu4"]

    @property
    def meteor(self) -> float:
        return self.corpus_scores()["meteor"]

    @property
    def rouge_l(self) -> float:
        return self.corpus_scores()["rouge_l"]

    @property
    def bert_like(self) -> float:
        return self.corpus_scores()["bert_like"]

    def to_dict(self) -> dict[str, Any]:
        """JSON-ready report: corpus scores, per-pair scores and judge results."""
        report: dict[str, Any] = {
            "n_pairs": len(self.pairs),
            "corpus": self.corpus_scores(),
            "pairs": self.pairs.to_dict(orient="records"),
        }
        if self.judged:
            report["feature_accuracy"] = self.feature_accuracy
            report["judge_failures"] = self.judge_failures
        return report


def score_pair(prediction: str, reference: str, embedder: Embedder) -> dict[str, float]:
    return {
        "bleu": bleu(prediction, [reference], max_n=1),
        "bleu4": bleu(prediction, [reference], max_n=4),
        "meteor": meteor_lite(prediction, reference),
        "rouge_l": rouge_l(prediction, reference),
        "bert_like": embed_similarity(prediction, reference, embedder),
    }


def evaluate(
    predictions: Sequence[str],
    references: Sequence[str],
    embedder: Embedder | None = None,
    judge_client: ChatClient | None = None,
    settings: ChatSettings | None = None,
    max_workers: int = 1,
    sleep: Callable[[float], None] = time.sleep,
) -> ScoreReport:
    """Score aligned prediction/reference lists.

    Args:
        predictions: Predicted captions
        references: Reference captions, same length
        embedder: Token embedder for the embedding score (toy embedder by default)
        judge_client: Chat client for the feature judge; skipped when None
        settings: Retry settings for judge calls
        max_workers: Parallel judge calls
        sleep: Sleep function between judge retries

    Returns:
        ScoreReport with per-pair scores and optional judge accuracies

    Raises:
        ValidationError: If the lists are empty or differ in length
    """
    if len(predictions) != len(references):
        raise ValidationError(f"{len(predictions)} predictions for {len(references)} references")
    if not predictions:
        raise ValidationError("nothing to evaluate")
    embedder = embedder or ToyEmbedder()
    rows = [{"index": i, **score_pair(p, r, embedder)} for i, (p, r) in enumerate(zip(predictions, references, strict=True))]
    pairs = pd.DataFrame(rows, columns=["index", *SCORE_COLUMNS])
    if judge_client is None:
        return ScoreReport(pairs=pairs)

    results = judge_pairs(predictions, references, judge_client, settings=settings, max_workers=max_workers, sleep=sleep)
    verdicts: list[JudgeVerdict] = [v for v in results if v is not None]
    failures = len(results) - len(verdicts)
    if failures:
        logger.warning(f"{failures} of {len(results)} pairs could not be judged")
    return ScoreReport(pairs=pairs, feature_accuracy=feature_accuracy(verdicts), judge_failures=failures, judged=True)
