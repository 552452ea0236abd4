"""Audio encoder contract producing hierarchical layered embeddings.

The captioner consumes a tensor ``H`` of shape ``[L, T', D]``: one ``[T', D]``
sequence of frame embeddings per encoder layer. ``ToyEncoder`` computes it
from windowed spectral band energies expanded to ``L`` layers through fixed
seeded random projections, so the full pipeline runs without pretrained
checkpoints. ``PretrainedEncoder`` fills the same contract from a Hugging Face
audio model.
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import Any, Protocol

import numpy as np

from musecap.errors import ConfigError, InvalidInputError, ShapeError
from musecap.io.audio import AudioClip, to_rate
from musecap.utils.hashing import array_digest, config_digest

logger = logging.getLogger(__name__)

ENCODER_KINDS = ("toy", "pretrained")


@dataclass(frozen=True)
class EncoderConfig:
    """Encoder settings; ``hop = sample_rate / frame_rate`` samples per frame."""

    kind: str = "toy"
    n_layers: int = 13
    dim: int = 768
    sample_rate: int = 24000
    frame_rate: float = 75.0
    n_bands: int = 64
    seed: int = 0
    model_name: str | None = None

    def __post_init__(self) -> None:
        """Validate ranges."""
        if self.kind not in ENCODER_KINDS:
            raise ConfigError(f"unknown encoder kind '{self.kind}', expected one of {ENCODER_KINDS}", field="encoder.kind")
        for name in ("n_layers", "dim", "sample_rate", "n_bands"):
            if getattr(self, name) < 1:
                raise ConfigError("must be >= 1", field=f"encoder.{name}")
        if self.frame_rate <= 0:
            raise ConfigError("must be > 0", field="encoder.frame_rate")
        if self.kind == "pretrained" and not self.model_name:
            raise ConfigError("required for pretrained encoders", field="encoder.model_name")

    @property
    def hop(self) -> int:
        """Samples per frame (window = hop, non-overlapping)."""
        return max(1, int(round(self.sample_rate / self.frame_rate)))

    def n_frames(self, n_samples: int) -> int:
        """Temporal resolution T' for a clip of ``n_samples``."""
        return math.ceil(n_samples / self.hop)

    @property
    def digest(self) -> str:
        return config_digest(asdict(self))


@dataclass(frozen=True, eq=False)
class LayeredEmbedding:
    """Encoder output ``H`` with layer, time and channel axes."""

    data: np.ndarray

    def __post_init__(self) -> None:
        """Validate shape and finiteness."""
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ShapeError(f"Layered embedding must have shape [L, T', D] with all axes >= 1, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise InvalidInputError("Layered embedding contains non-finite values")
        object.__setattr__(self, "data", data)

    @property
    def n_layers(self) -> int:
        return int(self.data.shape[0])

    @property
    def n_frames(self) -> int:
        return int(self.data.shape[1])

    @property
    def dim(self) -> int:
        return int(self.data.shape[2])

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n_layers, self.n_frames, self.dim)


class AudioEncoder(Protocol):
    """Anything that maps a clip to a layered embedding."""

    config: EncoderConfig

    def encode(self, clip: AudioClip) -> LayeredEmbedding: ...

    def parameter_digest(self) -> str: ...


def frame_signal(samples: np.ndarray, hop: int) -> np.ndarray:
    """Cut a signal into non-overlapping frames of ``hop`` samples.

    The final partial frame is zero-padded, giving ``ceil(len / hop)`` frames.
    """
    n_frames = math.ceil(len(samples) / hop)
    padded = np.zeros(n_frames * hop, dtype=np.float64)
    padded[: len(samples)] = samples
    return padded.reshape(n_frames, hop)


def band_energies(frames: np.ndarray, n_bands: int) -> np.ndarray:
    """Log energy in ``n_bands`` contiguous groups of FFT bins per frame."""
    window = np.hanning(frames.shape[1]) if frames.shape[1] > 1 else np.ones(1)
    power = np.abs(np.fft.rfft(frames * window, axis=1)) ** 2
    groups = np.array_split(np.arange(power.shape[1]), n_bands)
    energies = np.stack([power[:, g].sum(axis=1) if len(g) else np.zeros(len(frames)) for g in groups], axis=1)
    return np.log1p(energies)


class ToyEncoder:
    """Frozen deterministic spectral encoder.

    Per frame, log band energies are mapped through ``L`` fixed random
    projections (one per layer) followed by ``tanh``. All weights derive from
    ``config.seed``; nothing is trainable.
    """

    def __init__(self, config: EncoderConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        scale = 1.0 / math.sqrt(config.n_bands)
        self.projections = rng.standard_normal((config.n_layers, config.n_bands, config.dim)) * scale
        self.biases = rng.standard_normal((config.n_layers, config.dim)) * 0.1
        self.projections.setflags(write=False)
        self.biases.setflags(write=False)

    def encode(self, clip: AudioClip) -> LayeredEmbedding:
        """Encode a clip into ``[L, ceil(n / hop), D]``."""
        clip = to_rate(clip, self.config.sample_rate)
        features = band_energies(frame_signal(clip.samples, self.config.hop), self.config.n_bands)
        # [T', B] x [L, B, D] -> [L, T', D]
        hidden = np.tanh(np.einsum("tb,lbd->ltd", features, self.projections) + self.biases[:, None, :])
        return LayeredEmbedding(hidden)

    def parameter_digest(self) -> str:
        """Digest of the frozen projection weights."""
        return array_digest({"projections": self.projections, "biases": self.biases})


class PretrainedEncoder:
    """Adapter over a Hugging Face audio model exposing all hidden states.

    Requires the ``pretrained`` extra. The model is kept in eval mode with
    gradients disabled.
    """

    def __init__(self, config: EncoderConfig, model: Any | None = None, processor: Any | None = None):
        self.config = config
        if model is None:
            from transformers import AutoFeatureExtractor, AutoModel

            model = AutoModel.from_pretrained(config.model_name, trust_remote_code=True)
            processor = AutoFeatureExtractor.from_pretrained(config.model_name, trust_remote_code=True)
        self.model = model.eval()
        self.processor = processor
        for param in self.model.parameters():
            param.requires_grad = False

    def encode(self, clip: AudioClip) -> LayeredEmbedding:
        """Run the model and stack its hidden states into ``[L, T', D]``."""
        import torch

        clip = to_rate(clip, self.config.sample_rate)
        if self.processor is not None:
            inputs = self.processor(clip.samples, sampling_rate=clip.sample_rate, return_tensors="pt")
        else:
            inputs = {"input_values": torch.as_tensor(clip.samples, dtype=torch.float32)[None, :]}
        with torch.no_grad():
            outputs = self.model(**inputs, output_hidden_states=True)
        hidden = torch.stack(list(outputs.hidden_states), dim=0)[:, 0]
        embedding = LayeredEmbedding(hidden.double().cpu().numpy())
        if embedding.n_layers != self.config.n_layers or embedding.dim != self.config.dim:
            raise ConfigError(
                f"model produced {embedding.n_layers} layers x {embedding.dim} dims, config declares {self.config.n_layers} x {self.config.dim}",
                field="encoder",
            )
        return embedding

    def parameter_digest(self) -> str:
        from musecap.utils.hashing import module_digest

        return module_digest(self.model)


def build_encoder(config: EncoderConfig) -> AudioEncoder:
    """Instantiate the encoder named by ``config.kind``."""
    if config.kind == "toy":
        return ToyEncoder(config)
    return PretrainedEncoder(config)


def encode(clip: AudioClip, config: EncoderConfig) -> LayeredEmbedding:
    """Encode ``clip`` with the encoder ``config`` describes."""
    return build_encoder(config).encode(clip)


def toy_encode(clip: AudioClip, seed: int, config: EncoderConfig | None = None) -> LayeredEmbedding:
    """Encode with the toy encoder, overriding the config's seed."""
    base = config or EncoderConfig()
    return ToyEncoder(EncoderConfig(**{**asdict(base), "kind": "toy", "seed": seed})).encode(clip)
