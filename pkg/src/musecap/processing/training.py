"""Weighted multi-task objective and the phase-wise training loop.

The objective is ``λ_cap · L_cap + Σ_k λ_k · L_k``: caption cross-entropy
from the frozen LM plus a binary cross-entropy per feature head. Training runs
as a list of phases (feature pretraining, caption pretraining, finetuning),
each with its own weights, dataset, optimizer settings and seed. Only
projector parameters are updated.
"""

import logging
import math
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
import pandas as pd
import torch
from torch.nn import functional as F

from musecap.errors import ConfigError, NumericalError, ShapeError, ValidationError
from musecap.io.cache import EmbeddingCache
from musecap.io.manifest import FeatureLabelSet, ManifestRecord, encode_labels
from musecap.io.vocab import TaskVocabulary
from musecap.models.captioner import Captioner
from musecap.models.encoder import AudioEncoder, EncoderConfig, LayeredEmbedding
from musecap.models.projector import DTYPE, FeaturePrediction

logger = logging.getLogger(__name__)

PHASE_NAMES = ("feature_pretrain", "caption_pretrain", "finetune")
OPTIMIZERS = ("sgd", "adam")

Loss = float | torch.Tensor


@dataclass(frozen=True)
class LossWeights:
    """``λ_cap`` and one ``λ_k`` per task; all non-negative, at least one positive."""

    lambda_cap: float = 1.0
    lambda_k: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        weights = [self.lambda_cap, *self.lambda_k.values()]
        if any(not math.isfinite(w) or w < 0 for w in weights):
            raise ConfigError(f"loss weights must be finite and >= 0, got {weights}", field="weights")
        if not any(w > 0 for w in weights):
            raise ConfigError("at least one loss weight must be positive", field="weights")

    @classmethod
    def uniform(cls, tasks: Sequence[str], lambda_cap: float, lambda_k: float) -> "LossWeights":
        return cls(lambda_cap=lambda_cap, lambda_k={task: lambda_k for task in tasks})


def default_weights(phase: str, tasks: Sequence[str]) -> LossWeights:
    """Phase weights: features only at 0.2 for pretraining, else ``λ_cap = 1.0`` and ``λ_k = 0.1``."""
    if phase == "feature_pretrain":
        return LossWeights.uniform(tasks, lambda_cap=0.0, lambda_k=0.2)
    return LossWeights.uniform(tasks, lambda_cap=1.0, lambda_k=0.1)


@dataclass(frozen=True)
class PhaseSpec:
    """One training phase."""

    name: str
    weights: LossWeights
    dataset_id: str = ""
    epochs: int = 1
    learning_rate: float = 0.01
    seed: int = 0
    batch_size: int = 1
    optimizer: str = "sgd"
    max_grad_norm: float | None = None
    max_steps: int | None = None

    def __post_init__(self) -> None:
        """Validate the phase name, schedule and optimizer settings."""
        if self.name not in PHASE_NAMES:
            raise ConfigError(f"unknown phase '{self.name}', expected one of {PHASE_NAMES}", field="phases.name")
        if self.name == "feature_pretrain" and self.weights.lambda_cap != 0:
            raise ConfigError("feature_pretrain must have lambda_cap = 0", field=f"phases.{self.name}.weights.lambda_cap")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1", field=f"phases.{self.name}")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0", field=f"phases.{self.name}.learning_rate")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer '{self.optimizer}', expected one of {OPTIMIZERS}", field=f"phases.{self.name}.optimizer")
        if self.max_grad_norm is not None and not self.max_grad_norm > 0:
            raise ConfigError("max_grad_norm must be > 0", field=f"phases.{self.name}.max_grad_norm")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1", field=f"phases.{self.name}.max_steps")


@dataclass(frozen=True, eq=False)
class TrainingExample:
    """Aligned triplet: frozen audio embedding, caption, feature labels."""

    embedding: LayeredEmbedding
    caption: str
    labels: FeatureLabelSet
    audio_path: Path | None = None


class PhaseResult(NamedTuple):
    """Result of a training phase."""

    trace: pd.DataFrame  # one row per optimizer step
    steps: int
    final_total: float


def task_loss(pred: FeaturePrediction | torch.Tensor, target: np.ndarray | torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy computed from logits.

    Raises:
        ShapeError: If logits and target lengths differ
        ValidationError: If a target entry lies outside [0, 1]
    """
    logits = pred.logits if isinstance(pred, FeaturePrediction) else pred
    y = torch.as_tensor(target, dtype=logits.dtype)
    if logits.shape != y.shape:
        raise ShapeError(f"logits {tuple(logits.shape)} and target {tuple(y.shape)} differ")
    if bool(((y < 0) | (y > 1)).any()):
        raise ValidationError("target entries must lie in [0, 1]")
    return F.binary_cross_entropy_with_logits(logits, y)


def _is_finite(value: Loss) -> bool:
    return bool(torch.isfinite(value).all()) if isinstance(value, torch.Tensor) else math.isfinite(value)


def total_loss(cap_loss: Loss | None, task_losses: Mapping[str, Loss], weights: LossWeights) -> Loss:
    """``λ_cap · L_cap + Σ_k λ_k · L_k``.

    Plain floats are summed exactly with ``math.fsum``; tensors keep their
    autograd graph. A zero ``λ_cap`` drops the caption term, so ``cap_loss``
    may be ``None`` then.

    Raises:
        ValidationError: If a task loss has no weight or ``cap_loss`` is missing while weighted
        NumericalError: If a weighted loss is not finite
    """
    unweighted = sorted(set(task_losses) - set(weights.lambda_k))
    if unweighted:
        raise ValidationError(f"no loss weight for tasks {unweighted}")
    terms: list[tuple[float, Loss]] = []
    if weights.lambda_cap > 0:
        if cap_loss is None:
            raise ValidationError("caption loss is required when lambda_cap > 0")
        terms.append((weights.lambda_cap, cap_loss))
    terms.extend((weights.lambda_k[task], loss) for task, loss in task_losses.items() if weights.lambda_k[task] > 0)
    for _, loss in terms:
        if not _is_finite(loss):
            raise NumericalError(f"non-finite loss term {loss}")

    if all(not isinstance(loss, torch.Tensor) for _, loss in terms):
        return math.fsum(w * float(loss) for w, loss in terms)
    return torch.stack([w * torch.as_tensor(loss, dtype=DTYPE) for w, loss in terms]).sum()


def loss_terms(captioner: Captioner, example: TrainingExample, weights: LossWeights) -> tuple[torch.Tensor | None, dict[str, torch.Tensor]]:
    """Caption loss and per-task losses for one example.

    The language model is not touched when ``λ_cap`` is zero.
    """
    projector = captioner.projector
    H = example.embedding
    if weights.lambda_cap > 0:
        prefix, out = captioner.project(H)
        cap = captioner.lm.caption_nll(prefix, captioner.lm.target(example.caption))
        predictions = out.predictions
    else:
        cap = None
        predictions = projector.feature_logits(H) if projector.heads else []
    tasks = {pred.task: task_loss(pred, example.labels[pred.task]) for pred in predictions}
    return cap, tasks


def _optimizer(spec: PhaseSpec, params: list[torch.nn.Parameter]) -> torch.optim.Optimizer:
    if spec.optimizer == "adam":
        return torch.optim.Adam(params, lr=spec.learning_rate)
    return torch.optim.SGD(params, lr=spec.learning_rate)


def train_phase(
    spec: PhaseSpec,
    captioner: Captioner,
    examples: Sequence[TrainingExample],
    on_step: Callable[[int, float], None] | None = None,
) -> PhaseResult:
    """Optimize the projector for one phase.

    Each epoch shuffles the examples with a generator seeded from the phase
    seed and drops the final partial batch. Encoder and LM stay untouched.

    Args:
        spec: Phase configuration
        captioner: Captioner whose projector is trained in place
        examples: Training examples with precomputed embeddings
        on_step: Optional callback receiving (step, total loss)

    Returns:
        PhaseResult with the per-step loss trace

    Raises:
        ValidationError: If there are no examples
        ConfigError: If the weights name tasks the projector lacks
        NumericalError: If a batch produces a non-finite loss
    """
    if not examples:
        raise ValidationError(f"dataset for phase '{spec.name}' is empty")
    projector = captioner.projector
    unknown = sorted(set(spec.weights.lambda_k) - set(projector.head_names))
    if unknown:
        raise ConfigError(f"weights for unknown tasks {unknown}", field=f"phases.{spec.name}.weights")

    params = [p for p in projector.parameters() if p.requires_grad]
    optimizer = _optimizer(spec, params)
    rng = np.random.default_rng(spec.seed)
    batch_size = min(spec.batch_size, len(examples))
    n_batches = len(examples) // batch_size
    # λ_k = 0 tasks are still traced but never weighted
    weights = LossWeights(spec.weights.lambda_cap, {task: spec.weights.lambda_k.get(task, 0.0) for task in projector.head_names})

    logger.info(f"Phase {spec.name}: {len(examples)} examples, {n_batches} batches/epoch, {spec.epochs} epochs, lr {spec.learning_rate}")
    projector.train()
    rows: list[dict[str, float]] = []
    step = 0
    for epoch in range(spec.epochs):
        order = rng.permutation(len(examples))
        for b in range(n_batches):
            if spec.max_steps is not None and step >= spec.max_steps:
                break
            batch = [examples[i] for i in order[b * batch_size : (b + 1) * batch_size]]
            optimizer.zero_grad()
            caps: list[torch.Tensor] = []
            tasks: dict[str, list[torch.Tensor]] = {task: [] for task in projector.head_names}
            totals: list[torch.Tensor] = []
            for example in batch:
                cap, task_losses = loss_terms(captioner, example, weights)
                if cap is not None:
                    caps.append(cap)
                for task, loss in task_losses.items():
                    tasks[task].append(loss)
                try:
                    totals.append(torch.as_tensor(total_loss(cap, task_losses, weights)))
                except NumericalError as e:
                    raise NumericalError(f"phase {spec.name}, step {step} (epoch {epoch}, batch {b}): {e}") from e
            loss = torch.stack(totals).mean()
            if not torch.isfinite(loss):
                raise NumericalError(f"phase {spec.name}, step {step} (epoch {epoch}, batch {b}): loss is {loss.item()}")
            loss.backward()
            if spec.max_grad_norm is not None:
                torch.nn.utils.clip_grad_norm_(params, spec.max_grad_norm)
            optimizer.step()

            row = {"step": step, "epoch": epoch, "loss_cap": float(torch.stack(caps).mean()) if caps else math.nan}
            row.update({f"loss_{task}": float(torch.stack(values).mean()) for task, values in tasks.items() if values})
            row["total"] = float(loss.detach())
            rows.append(row)
            if on_step is not None:
                on_step(step, row["total"])
            step += 1

    projector.eval()
    trace = pd.DataFrame(rows)
    final = float(trace["total"].iloc[-1]) if rows else math.nan
    logger.info(f"Phase {spec.name} finished after {step} steps, final total loss {final:.4f}")
    return PhaseResult(trace=trace, steps=step, final_total=final)


def write_trace(trace: pd.DataFrame, path: Path | str) -> Path:
    """Write a loss trace as CSV (step, epoch, loss_cap, loss_<task>..., total)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    trace.to_csv(path, index=False)
    return path


def prepare_examples(
    records: Sequence[ManifestRecord],
    vocabs: Mapping[str, TaskVocabulary],
    encoder: AudioEncoder,
    encoder_config: EncoderConfig,
    cache: EmbeddingCache,
) -> list[TrainingExample]:
    """Encode manifest audio (through the cache) and attach label vectors."""
    examples = []
    hits = 0
    for record in records:
        cached = cache.get_or_encode(record.audio_path, encoder, encoder_config)
        hits += cached.was_cached
        examples.append(TrainingExample(cached.embedding, record.caption, encode_labels(record, vocabs), record.audio_path))
    logger.info(f"Prepared {len(examples)} examples ({hits} embeddings from cache)")
    return examples
