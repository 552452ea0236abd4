"""Music-to-token projection: content pathway and multi-task feature pathway.

The content pathway pools the encoder layers with learned simplex weights,
averages over time and maps the result to ``M`` LM-space tokens through ``M``
parallel two-layer MLPs. The feature pathway pools the same embedding with its
own layer weights into a shared vector, predicts ``K`` music features with
sigmoid heads, and maps each head's probabilities to ``N_k`` tokens. The
final LM input is ``[content ‖ feature ‖ query]``.
"""

import math
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from typing import Literal

import torch
from torch import nn
from torch.nn import functional as F

from musecap.errors import ConfigError, NumericalError, ShapeError
from musecap.models.encoder import LayeredEmbedding

DTYPE = torch.float64

# Head order is part of the checkpoint contract
DEFAULT_HEAD_ORDER = ("key", "instrument", "mood", "genre", "vocals")

TokenKind = Literal["content", "feature", "query"]
Variant = Literal["multitask", "content_only"]


@dataclass(frozen=True)
class TaskHeadSpec:
    """One music-feature task: ``n_classes`` outputs, ``n_tokens`` LM tokens."""

    name: str
    n_classes: int
    n_tokens: int = 5

    def __post_init__(self) -> None:
        """Validate class and token counts."""
        if self.n_classes < 1:
            raise ConfigError("n_classes must be >= 1", field=f"projector.heads.{self.name}")
        if self.n_tokens < 1:
            raise ConfigError("n_tokens must be >= 1", field=f"projector.heads.{self.name}")


@dataclass(frozen=True)
class ProjectorConfig:
    """Projector dimensions and token allocation.

    ``content_tokens + Σ n_tokens`` must equal ``token_budget``. The
    ``content_only`` variant has no heads, so all of the budget goes to the
    content pathway.
    """

    n_layers: int = 13
    embed_dim: int = 768
    lm_dim: int = 4096
    content_tokens: int = 35
    heads: tuple[TaskHeadSpec, ...] = ()
    token_budget: int = 60
    hidden_dim: int | None = None
    variant: Variant = "multitask"
    shared_weights_simplex: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        """Normalize heads to a tuple and validate structure."""
        object.__setattr__(self, "heads", tuple(self.heads))
        if self.variant not in ("multitask", "content_only"):
            raise ConfigError(f"unknown variant '{self.variant}'", field="projector.variant")
        for name in ("n_layers", "embed_dim", "lm_dim", "content_tokens"):
            if getattr(self, name) < 1:
                raise ConfigError("must be >= 1", field=f"projector.{name}")
        names = [h.name for h in self.heads]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate head names {names}", field="projector.heads")
        if self.variant == "content_only" and self.heads:
            raise ConfigError("content_only projector takes no feature heads", field="projector.heads")
        if self.variant == "multitask" and not self.heads:
            raise ConfigError("multitask projector needs at least one feature head", field="projector.heads")

    @property
    def hidden(self) -> int:
        """Hidden width of every token MLP (defaults to ``lm_dim``)."""
        return self.hidden_dim or self.lm_dim

    @property
    def feature_token_count(self) -> int:
        return sum(h.n_tokens for h in self.heads)

    @property
    def music_token_count(self) -> int:
        return self.content_tokens + self.feature_token_count

    @property
    def head_names(self) -> list[str]:
        return [h.name for h in self.heads]

    def validate_budget(self) -> None:
        """Check ``M + N`` against the declared token budget."""
        if self.music_token_count != self.token_budget:
            raise ConfigError(
                f"content tokens ({self.content_tokens}) + feature tokens ({self.feature_token_count}) = "
                f"{self.music_token_count}, declared budget is {self.token_budget}",
                field="projector.token_budget",
            )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ProjectorConfig":
        data = dict(data)
        data["heads"] = tuple(TaskHeadSpec(**h) for h in data.get("heads", ()))
        return cls(**data)


@dataclass(frozen=True, eq=False)
class TokenBlock:
    """A run of continuous LM-space vectors ``[n_tokens, d]``."""

    vectors: torch.Tensor
    kind: TokenKind

    def __post_init__(self) -> None:
        """Validate rank, length, kind and finiteness."""
        if self.kind not in ("content", "feature", "query"):
            raise ShapeError(f"unknown token block kind '{self.kind}'")
        if self.vectors.ndim != 2 or self.vectors.shape[0] < 1 or self.vectors.shape[1] < 1:
            raise ShapeError(f"{self.kind} block must be a non-empty [n_tokens, d] matrix, got {tuple(self.vectors.shape)}")
        if not bool(torch.isfinite(self.vectors).all()):
            raise NumericalError(f"{self.kind} block contains non-finite values")

    @property
    def n_tokens(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])


@dataclass(frozen=True, eq=False)
class FeaturePrediction:
    """Raw logits of one task head; probabilities are their sigmoid."""

    task: str
    logits: torch.Tensor

    @property
    def probabilities(self) -> torch.Tensor:
        return torch.sigmoid(self.logits)


@dataclass(frozen=True, eq=False)
class ProjectorOutput:
    """Everything one projector pass produces for a clip."""

    content: TokenBlock
    feature: TokenBlock | None
    predictions: list[FeaturePrediction] = field(default_factory=list)


def as_tensor(H: LayeredEmbedding | torch.Tensor) -> torch.Tensor:
    """View an embedding as a float64 tensor ``[L, T', D]``."""
    if isinstance(H, LayeredEmbedding):
        return torch.as_tensor(H.data, dtype=DTYPE)
    return H.to(DTYPE)


class LayerWeights(nn.Module):
    """Learned convex combination over encoder layers.

    Raw parameters are unconstrained; effective weights come from a softmax
    and therefore lie on the simplex. With ``simplex=False`` they are the
    affine map ``1/L + raw - mean(raw)``, which sums to one but may go
    negative.
    """

    def __init__(self, n_layers: int, simplex: bool = True):
        super().__init__()
        self.simplex = simplex
        self.raw = nn.Parameter(torch.zeros(n_layers, dtype=DTYPE))

    def forward(self) -> torch.Tensor:
        if self.simplex:
            return torch.softmax(self.raw, dim=0)
        return 1.0 / self.raw.numel() + self.raw - self.raw.mean()

    def effective_weights(self) -> torch.Tensor:
        return self()


def pool_layers(H: LayeredEmbedding | torch.Tensor, weights: LayerWeights | torch.Tensor) -> torch.Tensor:
    """Weighted sum over the layer axis: ``out[t, d] = Σ_l w_l H[l, t, d]``."""
    h = as_tensor(H)
    w = weights() if isinstance(weights, LayerWeights) else weights.to(DTYPE)
    if h.ndim != 3:
        raise ShapeError(f"expected [L, T', D] embedding, got {tuple(h.shape)}")
    if w.ndim != 1 or w.shape[0] != h.shape[0]:
        raise ShapeError(f"{w.shape[0] if w.ndim == 1 else tuple(w.shape)} layer weights for {h.shape[0]} layers")
    return torch.einsum("l,ltd->td", w, h)


def time_average(pooled: torch.Tensor) -> torch.Tensor:
    """Mean over the time axis of a ``[T', D]`` matrix."""
    if pooled.ndim != 2 or pooled.shape[0] < 1:
        raise ShapeError(f"expected non-empty [T', D] matrix, got {tuple(pooled.shape)}")
    return pooled.mean(dim=0)


class ParallelTokenMLP(nn.Module):
    """``n_tokens`` independent Linear-GELU-Linear branches over one input vector."""

    def __init__(self, in_dim: int, hidden_dim: int, out_dim: int, n_tokens: int, generator: torch.Generator):
        super().__init__()
        bound_in = 1.0 / math.sqrt(in_dim)
        bound_out = 1.0 / math.sqrt(out_dim)
        self.w1 = nn.Parameter((torch.rand(n_tokens, in_dim, hidden_dim, generator=generator, dtype=DTYPE) * 2 - 1) * bound_in)
        self.b1 = nn.Parameter(torch.zeros(n_tokens, hidden_dim, dtype=DTYPE))
        self.w2 = nn.Parameter((torch.rand(n_tokens, hidden_dim, out_dim, generator=generator, dtype=DTYPE) * 2 - 1) * bound_out)
        self.b2 = nn.Parameter(torch.zeros(n_tokens, out_dim, dtype=DTYPE))

    @property
    def in_dim(self) -> int:
        return int(self.w1.shape[1])

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Map ``[in_dim]`` to ``[n_tokens, out_dim]``."""
        if x.shape != (self.in_dim,):
            raise ShapeError(f"token MLP expects a [{self.in_dim}] vector, got {tuple(x.shape)}")
        hidden = F.gelu(torch.einsum("i,nih->nh", x, self.w1) + self.b1)
        return torch.einsum("nh,nho->no", hidden, self.w2) + self.b2


class MusicProjector(nn.Module):
    """Trainable projector from layered embeddings to LM-space tokens."""

    def __init__(self, config: ProjectorConfig):
        super().__init__()
        self.config = config
        generator = torch.Generator().manual_seed(config.seed)

        self.content_layer_weights = LayerWeights(config.n_layers)
        self.content_mlps = ParallelTokenMLP(config.embed_dim, config.hidden, config.lm_dim, config.content_tokens, generator)

        self.shared_layer_weights = LayerWeights(config.n_layers, simplex=config.shared_weights_simplex)
        self.heads = nn.ModuleDict()
        self.feature_mlps = nn.ModuleDict()
        for spec in config.heads:
            head = nn.Linear(config.embed_dim, spec.n_classes, dtype=DTYPE)
            bound = 1.0 / math.sqrt(config.embed_dim)
            with torch.no_grad():
                head.weight.copy_((torch.rand(head.weight.shape, generator=generator, dtype=DTYPE) * 2 - 1) * bound)
                head.bias.zero_()
            self.heads[spec.name] = head
            self.feature_mlps[spec.name] = ParallelTokenMLP(spec.n_classes, config.hidden, config.lm_dim, spec.n_tokens, generator)

    @property
    def head_names(self) -> list[str]:
        return self.config.head_names

    def content_tokens(self, H: LayeredEmbedding | torch.Tensor) -> TokenBlock:
        """``M`` content tokens from the layer-pooled, time-averaged embedding."""
        h = self._checked(H)
        pooled = time_average(pool_layers(h, self.content_layer_weights))
        return TokenBlock(self.content_mlps(pooled), "content")

    def shared_vector(self, H: LayeredEmbedding | torch.Tensor) -> torch.Tensor:
        """Shared backbone vector fed to every task head."""
        return time_average(pool_layers(self._checked(H), self.shared_layer_weights))

    def feature_logits(self, H: LayeredEmbedding | torch.Tensor) -> list[FeaturePrediction]:
        """One prediction per head, in head order, from a single shared vector."""
        shared = self.shared_vector(H)
        return [FeaturePrediction(name, self.heads[name](shared)) for name in self.head_names]

    def feature_tokens(self, predictions: Sequence[FeaturePrediction]) -> TokenBlock:
        """Concatenate each head's token MLP output, in the order given.

        The token MLPs consume sigmoid probabilities, not logits.
        """
        if len(predictions) != len(self.heads):
            raise ShapeError(f"{len(predictions)} predictions for {len(self.heads)} heads")
        blocks = []
        for pred in predictions:
            if pred.task not in self.feature_mlps:
                raise ShapeError(f"no feature head named '{pred.task}'")
            blocks.append(self.feature_mlps[pred.task](pred.probabilities))
        return TokenBlock(torch.cat(blocks, dim=0), "feature")

    def forward(self, H: LayeredEmbedding | torch.Tensor) -> ProjectorOutput:
        content = self.content_tokens(H)
        if not self.heads:
            return ProjectorOutput(content=content, feature=None, predictions=[])
        predictions = self.feature_logits(H)
        return ProjectorOutput(content=content, feature=self.feature_tokens(predictions), predictions=predictions)

    def parameter_groups(self) -> dict[str, nn.Module]:
        """Named parameter groups, as stored in checkpoints."""
        groups: dict[str, nn.Module] = {
            "content_layer_weights": self.content_layer_weights,
            "content_mlps": self.content_mlps,
        }
        if self.heads:
            groups["shared_layer_weights"] = self.shared_layer_weights
        for name in self.head_names:
            groups[f"head_{name}"] = self.heads[name]
            groups[f"feat_mlp_{name}"] = self.feature_mlps[name]
        return groups

    def _checked(self, H: LayeredEmbedding | torch.Tensor) -> torch.Tensor:
        h = as_tensor(H)
        if h.ndim != 3 or h.shape[0] != self.config.n_layers or h.shape[2] != self.config.embed_dim:
            raise ShapeError(f"projector expects [{self.config.n_layers}, T', {self.config.embed_dim}] embeddings, got {tuple(h.shape)}")
        return h


def assemble_tokens(content: TokenBlock, feature: TokenBlock | None, query: TokenBlock | None) -> torch.Tensor:
    """Row-wise concatenation ``[content ‖ feature ‖ query]``.

    ``feature`` is ``None`` only for the content-only projector.
    """
    if query is None:
        raise ShapeError("query block is required")
    blocks = [content] if feature is None else [content, feature]
    blocks.append(query)
    dims = {b.dim for b in blocks}
    if len(dims) != 1:
        raise ShapeError(f"token blocks disagree on embedding dimension: {[(b.kind, b.dim) for b in blocks]}")
    return torch.cat([b.vectors for b in blocks], dim=0)
