"""Bridge to a frozen autoregressive language model.

The captioner talks to the LM through three operations: embed the textual
query, score a caption given a prefix of continuous tokens, and greedily
decode a caption from such a prefix. ``ToyLanguageModel`` is a single-block
causal transformer with seeded frozen weights and a whitespace tokenizer;
``PretrainedLanguageModel`` adapts a Hugging Face causal LM to the same
contract.
"""

import logging
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from typing import Any, Protocol

import torch
from torch import nn
from torch.nn import functional as F

from musecap.errors import ConfigError, InvalidInputError, NumericalError, ShapeError
from musecap.models.projector import DTYPE, TokenBlock
from musecap.utils.hashing import module_digest

logger = logging.getLogger(__name__)

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
SPECIAL_TOKENS = (PAD, BOS, EOS, UNK)

DEFAULT_QUERY = "Describe this piece of music."


@dataclass(frozen=True)
class QueryText:
    """Textual query appended after the music tokens."""

    text: str

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise InvalidInputError("query text is empty")


@dataclass(frozen=True)
class CaptionTarget:
    """Caption text and its token ids under the LM vocabulary."""

    text: str
    token_ids: tuple[int, ...] = field(default=())

    def __post_init__(self) -> None:
        if not self.text.strip() or not self.token_ids:
            raise InvalidInputError("caption target is empty")


class WhitespaceTokenizer:
    """Whitespace-splitting tokenizer over a fixed, ordered vocabulary.

    Ids 0-3 are the special tokens ``<pad>``, ``<bos>``, ``<eos>``, ``<unk>``.
    Words are case-sensitive, so ``decode(encode(text))`` reproduces any
    in-vocabulary text up to whitespace normalization.
    """

    def __init__(self, words: Iterable[str]):
        ordered = dict.fromkeys(SPECIAL_TOKENS)
        ordered.update(dict.fromkeys(w for w in words if w not in SPECIAL_TOKENS))
        self.tokens: list[str] = list(ordered)
        self._ids = {token: i for i, token in enumerate(self.tokens)}

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "WhitespaceTokenizer":
        """Vocabulary of every whitespace token in ``texts``, in first-seen order."""
        return cls(word for text in texts for word in text.split())

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return self._ids[PAD]

    @property
    def bos_id(self) -> int:
        return self._ids[BOS]

    @property
    def eos_id(self) -> int:
        return self._ids[EOS]

    @property
    def unk_id(self) -> int:
        return self._ids[UNK]

    def encode(self, text: str) -> list[int]:
        return [self._ids.get(word, self.unk_id) for word in text.split()]

    def decode(self, ids: Sequence[int]) -> str:
        return " ".join(self.tokens[i] for i in ids if self.tokens[i] not in SPECIAL_TOKENS)


class LanguageModelBridge(Protocol):
    """Operations the captioner needs from a frozen LM."""

    @property
    def dim(self) -> int: ...

    def embed_query(self, query: QueryText | str) -> TokenBlock: ...

    def target(self, text: str) -> CaptionTarget: ...

    def caption_nll(self, prefix: torch.Tensor, target: CaptionTarget) -> torch.Tensor: ...

    def generate(self, prefix: torch.Tensor, max_tokens: int) -> str: ...

    def parameter_digest(self) -> str: ...


def _check_prefix(prefix: torch.Tensor, dim: int) -> None:
    if prefix.ndim != 2 or prefix.shape[0] < 1 or prefix.shape[1] != dim:
        raise ShapeError(f"prefix must be [P, {dim}], got {tuple(prefix.shape)}")
    if not bool(torch.isfinite(prefix).all()):
        raise NumericalError("prefix contains non-finite values")


class ToyLanguageModel(nn.Module):
    """Single-block causal transformer with frozen, seeded weights."""

    def __init__(self, tokenizer: WhitespaceTokenizer, dim: int = 16, seed: int = 0, max_len: int = 512):
        super().__init__()
        if dim < 1 or max_len < 2:
            raise ConfigError("toy LM needs dim >= 1 and max_len >= 2", field="lm")
        self.tokenizer = tokenizer
        self.seed = seed
        self.max_len = max_len
        self._dim = dim
        generator = torch.Generator().manual_seed(seed)

        def normal(*shape: int, std: float) -> nn.Parameter:
            return nn.Parameter(torch.randn(*shape, generator=generator, dtype=DTYPE) * std)

        vocab = len(tokenizer)
        self.token_embedding = normal(vocab, dim, std=1.0)
        self.position_embedding = normal(max_len, dim, std=0.1)
        self.w_qkv = normal(dim, 3 * dim, std=1.0 / math.sqrt(dim))
        self.w_out = normal(dim, dim, std=1.0 / math.sqrt(dim))
        self.w_up = normal(dim, 4 * dim, std=1.0 / math.sqrt(dim))
        self.w_down = normal(4 * dim, dim, std=1.0 / math.sqrt(4 * dim))
        # Output logits spread roughly N(0, 4) so the prefix can steer decoding
        self.head_weight = normal(dim, vocab, std=2.0 / math.sqrt(dim))
        self.head_bias = nn.Parameter(torch.zeros(vocab, dtype=DTYPE))
        self.requires_grad_(False)
        self.eval()

    @classmethod
    def from_corpus(cls, texts: Iterable[str], dim: int = 16, seed: int = 0, max_len: int = 512) -> "ToyLanguageModel":
        """Toy LM whose vocabulary covers every word of ``texts``."""
        return cls(WhitespaceTokenizer.from_texts(texts), dim=dim, seed=seed, max_len=max_len)

    def to_spec(self) -> dict[str, Any]:
        """Everything needed to rebuild this exact model (weights follow from the seed)."""
        return {"kind": "toy", "dim": self.dim, "seed": self.seed, "max_len": self.max_len, "vocab": list(self.tokenizer.tokens)}

    @classmethod
    def from_spec(cls, spec: dict[str, Any]) -> "ToyLanguageModel":
        words = [w for w in spec["vocab"] if w not in SPECIAL_TOKENS]
        return cls(WhitespaceTokenizer(words), dim=spec["dim"], seed=spec["seed"], max_len=spec["max_len"])

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def vocab_size(self) -> int:
        return len(self.tokenizer)

    def forward(self, inputs: torch.Tensor) -> torch.Tensor:
        """Logits ``[n, V]`` for input embeddings ``[n, d]``."""
        n = inputs.shape[0]
        if n > self.max_len:
            raise ShapeError(f"sequence of {n} tokens exceeds max_len {self.max_len}")
        x = inputs + self.position_embedding[:n]
        q, k, v = (F.layer_norm(x, (self.dim,)) @ self.w_qkv).split(self.dim, dim=1)
        scores = (q @ k.T) / math.sqrt(self.dim)
        causal = torch.ones(n, n, dtype=torch.bool).triu(diagonal=1)
        scores = scores.masked_fill(causal, float("-inf"))
        x = x + (torch.softmax(scores, dim=1) @ v) @ self.w_out
        x = x + F.gelu(F.layer_norm(x, (self.dim,)) @ self.w_up) @ self.w_down
        return F.layer_norm(x, (self.dim,)) @ self.head_weight + self.head_bias

    def embed_ids(self, ids: Sequence[int]) -> torch.Tensor:
        return self.token_embedding[torch.as_tensor(list(ids), dtype=torch.long)]

    def embed_query(self, query: QueryText | str) -> TokenBlock:
        """One embedding row per whitespace token of the query."""
        query = query if isinstance(query, QueryText) else QueryText(query)
        return TokenBlock(self.embed_ids(self.tokenizer.encode(query.text)), "query")

    def target(self, text: str) -> CaptionTarget:
        return CaptionTarget(text, tuple(self.tokenizer.encode(text)))

    def caption_nll(self, prefix: torch.Tensor, target: CaptionTarget) -> torch.Tensor:
        """Mean cross-entropy of ``target`` tokens plus ``<eos>`` after ``prefix``.

        Differentiable with respect to ``prefix``; LM weights carry no gradient.
        """
        _check_prefix(prefix, self.dim)
        ids = list(target.token_ids)
        p = prefix.shape[0]
        logits = self(torch.cat([prefix.to(DTYPE), self.embed_ids(ids)], dim=0))
        labels = torch.as_tensor(ids + [self.tokenizer.eos_id], dtype=torch.long)
        return F.cross_entropy(logits[p - 1 : p + len(ids)], labels)

    def generate(self, prefix: torch.Tensor, max_tokens: int) -> str:
        """Greedy decoding until ``<eos>`` or ``max_tokens`` words.

        ``<pad>``, ``<bos>`` and ``<unk>`` are never emitted, and ``<eos>`` is
        not allowed as the first token, so at least one word is produced.
        """
        if max_tokens < 1:
            raise InvalidInputError("max_tokens must be >= 1")
        _check_prefix(prefix, self.dim)
        tok = self.tokenizer
        if prefix.shape[0] + max_tokens > self.max_len:
            raise ShapeError(f"prefix of {prefix.shape[0]} plus {max_tokens} new tokens exceeds max_len {self.max_len}")
        banned = torch.zeros(self.vocab_size, dtype=torch.bool)
        banned[[tok.pad_id, tok.bos_id, tok.unk_id]] = True
        out: list[int] = []
        with torch.no_grad():
            seq = prefix.detach().to(DTYPE)
            for step in range(max_tokens):
                logits = self(seq)[-1].masked_fill(banned, float("-inf"))
                if step == 0:
                    logits[tok.eos_id] = float("-inf")
                next_id = int(torch.argmax(logits))
                if next_id == tok.eos_id:
                    break
                out.append(next_id)
                seq = torch.cat([seq, self.token_embedding[next_id][None, :]], dim=0)
        return tok.decode(out)

    def parameter_digest(self) -> str:
        return module_digest(self)


class PretrainedLanguageModel:
    """Adapter over a Hugging Face causal LM and its tokenizer.

    Music tokens enter through ``inputs_embeds``; every model parameter is
    frozen. Requires the ``pretrained`` extra unless model and tokenizer are
    passed in.
    """

    def __init__(self, model: Any, tokenizer: Any):
        self.model = model.eval()
        self.tokenizer = tokenizer
        for param in self.model.parameters():
            param.requires_grad = False
        self._embeddings = self.model.get_input_embeddings()

    @classmethod
    def from_pretrained(cls, name: str) -> "PretrainedLanguageModel":
        from transformers import AutoModelForCausalLM, AutoTokenizer

        logger.info(f"Loading pretrained language model {name}")
        return cls(AutoModelForCausalLM.from_pretrained(name), AutoTokenizer.from_pretrained(name))

    @property
    def dim(self) -> int:
        return int(self._embeddings.embedding_dim)

    def _ids(self, text: str) -> list[int]:
        return list(self.tokenizer(text, add_special_tokens=False)["input_ids"])

    def _embed(self, ids: Sequence[int]) -> torch.Tensor:
        return self._embeddings(torch.as_tensor(list(ids), dtype=torch.long)).to(DTYPE)

    def embed_query(self, query: QueryText | str) -> TokenBlock:
        query = query if isinstance(query, QueryText) else QueryText(query)
        return TokenBlock(self._embed(self._ids(query.text)).detach(), "query")

    def target(self, text: str) -> CaptionTarget:
        return CaptionTarget(text, tuple(self._ids(text)))

    def _logits(self, inputs: torch.Tensor) -> torch.Tensor:
        dtype = self._embeddings.weight.dtype
        return self.model(inputs_embeds=inputs.to(dtype)[None, :, :]).logits[0].to(DTYPE)

    def caption_nll(self, prefix: torch.Tensor, target: CaptionTarget) -> torch.Tensor:
        _check_prefix(prefix, self.dim)
        ids = list(target.token_ids)
        p = prefix.shape[0]
        logits = self._logits(torch.cat([prefix, self._embed(ids)], dim=0))
        labels = torch.as_tensor(ids + [self.tokenizer.eos_token_id], dtype=torch.long)
        return F.cross_entropy(logits[p - 1 : p + len(ids)], labels)

    def generate(self, prefix: torch.Tensor, max_tokens: int) -> str:
        if max_tokens < 1:
            raise InvalidInputError("max_tokens must be >= 1")
        _check_prefix(prefix, self.dim)
        out: list[int] = []
        with torch.no_grad():
            seq = prefix.detach().to(DTYPE)
            for _ in range(max_tokens):
                next_id = int(torch.argmax(self._logits(seq)[-1]))
                if next_id == self.tokenizer.eos_token_id:
                    break
                out.append(next_id)
                seq = torch.cat([seq, self._embed([next_id])], dim=0)
        return str(self.tokenizer.decode(out, skip_special_tokens=True)).strip()

    def parameter_digest(self) -> str:
        return module_digest(self.model)


def build_language_model(spec: dict[str, Any], corpus: Iterable[str] = ()) -> LanguageModelBridge:
    """Instantiate an LM from a checkpoint/config spec.

    A toy spec without a stored vocabulary builds one from ``corpus``.
    """
    kind = spec.get("kind", "toy")
    if kind == "toy":
        if "vocab" in spec:
            return ToyLanguageModel.from_spec(spec)
        return ToyLanguageModel.from_corpus(corpus, dim=spec.get("dim", 16), seed=spec.get("seed", 0), max_len=spec.get("max_len", 512))
    if kind == "pretrained":
        if not spec.get("model_name"):
            raise ConfigError("required for pretrained language models", field="lm.model_name")
        return PretrainedLanguageModel.from_pretrained(spec["model_name"])
    raise ConfigError(f"unknown language model kind '{kind}'", field="lm.kind")
