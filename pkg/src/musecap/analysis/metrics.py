"""Reference-based caption metrics.

All metrics tokenize the same way: lowercase, then split on whitespace and
punctuation, keeping numbers. Every score lies in [0, 1].

- ``bleu``: clipped n-gram precisions, geometric mean, brevity penalty
  against the closest reference length; unsmoothed by default.
- ``rouge_l``: LCS-based F-measure, ``beta`` weighting recall (F1 default).
- ``meteor_lite``: exact unigram alignment (extra matchers pluggable),
  recall-weighted harmonic mean and a fragmentation penalty.
- ``embed_similarity``: greedy token-level cosine matching F1 over a
  pluggable token embedder.
"""

import logging
import math
import re
import warnings
import zlib
from collections.abc import Callable, Sequence
from typing import Protocol

import numpy as np
from nltk.translate.bleu_score import SmoothingFunction, brevity_penalty, closest_ref_length, modified_precision, sentence_bleu

from musecap.errors import MetricError

logger = logging.getLogger(__name__)

_TOKEN = re.compile(r"[^\W_]+")

Matcher = Callable[[str, str], bool]


def tokenize(text: str) -> list[str]:
    """Lowercase word tokens; punctuation and underscores separate tokens."""
    return _TOKEN.findall(text.lower())


def _tokens(text: str | Sequence[str]) -> list[str]:
    return tokenize(text) if isinstance(text, str) else list(text)


def bleu(candidate: str | Sequence[str], references: str | Sequence[str] | Sequence[Sequence[str]], max_n: int = 4, smoothing: bool = False) -> float:
    """Sentence BLEU with uniform weights over 1..max_n-grams.

    Args:
        candidate: Candidate text or tokens
        references: One reference text, a list of reference texts, or token lists
        max_n: Highest n-gram order (1-4)
        smoothing: Add-epsilon smoothing of zero precisions instead of returning 0

    Returns:
        Score in [0, 1]; 0 when any n-gram precision is 0 (unsmoothed)
    """
    if not 1 <= max_n <= 4:
        raise ValueError(f"max_n must be in 1..4, got {max_n}")
    hyp = _tokens(candidate)
    if isinstance(references, str):
        refs = [tokenize(references)]
    else:
        refs = [_tokens(r) for r in references]
    if not hyp:
        warnings.warn("BLEU of an empty candidate is 0", UserWarning, stacklevel=2)
        return 0.0
    if not any(refs):
        return 0.0

    weights = tuple(1.0 / max_n for _ in range(max_n))
    if smoothing:
        return float(sentence_bleu(refs, hyp, weights=weights, smoothing_function=SmoothingFunction().method1))
    precisions = [float(modified_precision(refs, hyp, n)) for n in range(1, max_n + 1)]
    if any(p == 0 for p in precisions):
        return 0.0
    bp = brevity_penalty(closest_ref_length(refs, len(hyp)), len(hyp))
    return float(bp * math.exp(math.fsum(math.log(p) for p in precisions) / max_n))


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Length of the longest common subsequence."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: str | Sequence[str], reference: str | Sequence[str], beta: float = 1.0) -> float:
    """LCS F-measure ``(1 + β²)PR / (R + β²P)``; 0 for empty inputs."""
    cand, ref = _tokens(candidate), _tokens(reference)
    lcs = lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(cand), lcs / len(ref)
    return (1 + beta**2) * p * r / (r + beta**2 * p)


def align(candidate: Sequence[str], reference: Sequence[str], matchers: Sequence[Matcher] = ()) -> list[tuple[int, int]]:
    """Unigram alignment as (candidate index, reference index) pairs.

    Exact matches first: each candidate token, left to right, takes the
    leftmost unused identical reference token. Each extra matcher then runs
    the same pass over the tokens still unaligned.
    """
    used_c: set[int] = set()
    used_r: set[int] = set()
    pairs: list[tuple[int, int]] = []
    for match in [str.__eq__, *matchers]:
        for i, c in enumerate(candidate):
            if i in used_c:
                continue
            for j, r in enumerate(reference):
                if j not in used_r and match(c, r):
                    pairs.append((i, j))
                    used_c.add(i)
                    used_r.add(j)
                    break
    return sorted(pairs)


def count_chunks(pairs: Sequence[tuple[int, int]]) -> int:
    """Runs of alignments adjacent in both candidate and reference."""
    chunks = 0
    prev: tuple[int, int] | None = None
    for i, j in sorted(pairs):
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    return chunks


def meteor_lite(
    candidate: str | Sequence[str],
    reference: str | Sequence[str],
    alpha: float = 0.9,
    beta: float = 3.0,
    gamma: float = 0.5,
    matchers: Sequence[Matcher] = (),
) -> float:
    """METEOR without synonym or stem matching unless ``matchers`` are given.

    ``Fmean = PR / (αP + (1-α)R)``, penalty ``γ (chunks / matches)^β``,
    score ``Fmean · (1 - penalty)``.
    """
    cand, ref = _tokens(candidate), _tokens(reference)
    pairs = align(cand, ref, matchers)
    if not pairs:
        return 0.0
    m = len(pairs)
    p, r = m / len(cand), m / len(ref)
    fmean = p * r / (alpha * p + (1 - alpha) * r)
    penalty = gamma * (count_chunks(pairs) / m) ** beta
    return fmean * (1 - penalty)


def porter_stem_matcher() -> Matcher:
    """Matcher accepting tokens with equal Porter stems."""
    from nltk.stem import PorterStemmer

    stemmer = PorterStemmer()
    return lambda a, b: stemmer.stem(a) == stemmer.stem(b)


class Embedder(Protocol):
    """Maps tokens to one vector each, ``[n_tokens, dim]``."""

    def embed(self, tokens: Sequence[str]) -> np.ndarray: ...


class ToyEmbedder:
    """Hashed character n-gram bag per token, L2-normalized.

    Tokens are padded with ``#`` on both sides before n-grams are taken, and
    each n-gram is hashed with CRC32 into ``dim`` buckets.
    """

    def __init__(self, dim: int = 256, n: int = 3):
        self.dim = dim
        self.n = n

    def embed(self, tokens: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(tokens), self.dim), dtype=np.float64)
        for row, token in enumerate(tokens):
            padded = f"#{token}#"
            for k in range(max(1, len(padded) - self.n + 1)):
                out[row, zlib.crc32(padded[k : k + self.n].encode("utf-8")) % self.dim] += 1.0
        norms = np.linalg.norm(out, axis=1, keepdims=True)
        return out / np.where(norms > 0, norms, 1.0)


def embed_similarity(candidate: str | Sequence[str], reference: str | Sequence[str], embedder: Embedder | None = None) -> float:
    """Greedy cosine matching F1 between candidate and reference tokens.

    Raises:
        MetricError: If the embedder fails or returns vectors of the wrong shape
    """
    cand, ref = _tokens(candidate), _tokens(reference)
    if not cand or not ref:
        return 0.0
    embedder = embedder or ToyEmbedder()
    try:
        c = np.asarray(embedder.embed(cand), dtype=np.float64)
        r = np.asarray(embedder.embed(ref), dtype=np.float64)
    except Exception as e:
        raise MetricError(f"embedder failed: {e}") from e
    if c.ndim != 2 or r.ndim != 2 or c.shape[0] != len(cand) or r.shape[0] != len(ref) or c.shape[1] != r.shape[1]:
        raise MetricError(f"embedder returned shapes {c.shape} and {r.shape} for {len(cand)} and {len(ref)} tokens")

    def unit(x: np.ndarray) -> np.ndarray:
        norms = np.linalg.norm(x, axis=1, keepdims=True)
        return x / np.where(norms > 0, norms, 1.0)

    sim = unit(c) @ unit(r).T
    precision = float(sim.max(axis=1).mean())
    recall = float(sim.max(axis=0).mean())
    if precision + recall <= 0:
        return 0.0
    return float(np.clip(2 * precision * recall / (precision + recall), 0.0, 1.0))
