"""Pytest configuration and shared fixtures for musecap tests."""

import json
import sys
from collections.abc import Callable
from pathlib import Path

import numpy as np
import pytest

# Add src directory to path for imports
src_path = Path(__file__).parent.parent / "src"
if src_path not in sys.path:
    sys.path.insert(0, str(src_path))

from musecap.io.audio import AudioClip, write_audio  # noqa: E402
from musecap.io.vocab import TaskVocabulary, key_vocabulary  # noqa: E402
from musecap.models.encoder import EncoderConfig, LayeredEmbedding  # noqa: E402
from musecap.models.lm import DEFAULT_QUERY, ToyLanguageModel  # noqa: E402
from musecap.models.projector import ProjectorConfig, TaskHeadSpec  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures" / "musecap"

CAPTIONS = ["bright piano", "dark cello", "fast drums", "slow strings"]
INSTRUMENTS = ("piano", "cello", "drums", "strings")


@pytest.fixture
def fixtures_dir() -> Path:
    """Directory holding golden files."""
    return FIXTURES


@pytest.fixture
def tiny_encoder_config() -> EncoderConfig:
    """Toy encoder small enough for per-test encoding (hop of 100 samples)."""
    return EncoderConfig(n_layers=3, dim=8, sample_rate=1000, frame_rate=10, n_bands=4, seed=0)


@pytest.fixture
def tiny_vocabs() -> dict[str, TaskVocabulary]:
    """Built-in key vocabulary plus a four-instrument vocabulary."""
    return {"key": key_vocabulary(), "instrument": TaskVocabulary("instrument", INSTRUMENTS)}


@pytest.fixture
def tiny_projector_config(tiny_vocabs) -> ProjectorConfig:
    """L=3, D=8, d=16 projector: 4 content tokens and two heads of 2 tokens."""
    return ProjectorConfig(
        n_layers=3,
        embed_dim=8,
        lm_dim=16,
        content_tokens=4,
        heads=(TaskHeadSpec("key", len(tiny_vocabs["key"]), 2), TaskHeadSpec("instrument", len(tiny_vocabs["instrument"]), 2)),
        token_budget=8,
        hidden_dim=16,
    )


@pytest.fixture
def captions() -> list[str]:
    return list(CAPTIONS)


@pytest.fixture
def toy_lm() -> ToyLanguageModel:
    """Toy LM (d=16) whose vocabulary covers the test captions and the default query."""
    return ToyLanguageModel.from_corpus([*CAPTIONS, DEFAULT_QUERY], dim=16, seed=0)


@pytest.fixture
def random_embedding() -> Callable[..., LayeredEmbedding]:
    """Factory for seeded random ``[L, T', D]`` embeddings."""

    def make(seed: int = 0, n_layers: int = 3, n_frames: int = 4, dim: int = 8) -> LayeredEmbedding:
        return LayeredEmbedding(np.random.default_rng(seed).standard_normal((n_layers, n_frames, dim)))

    return make


def sine(seconds: float, sample_rate: int = 1000, freq: float = 110.0, amplitude: float = 0.5) -> AudioClip:
    t = np.arange(int(round(seconds * sample_rate))) / sample_rate
    return AudioClip(amplitude * np.sin(2 * np.pi * freq * t), sample_rate)


@pytest.fixture
def make_wav(tmp_path) -> Callable[..., Path]:
    """Factory writing a sine-tone WAV file under ``tmp_path``."""

    def make(name: str, seconds: float, sample_rate: int = 1000, freq: float = 110.0) -> Path:
        return write_audio(tmp_path / name, sine(seconds, sample_rate, freq))

    return make


TOY_CONFIG = """\
output_dir: out
cache_dir: cache
encoder: {n_layers: 3, dim: 8, sample_rate: 1000, frame_rate: 10, n_bands: 4}
projector:
  lm_dim: 16
  content_tokens: 4
  token_budget: %(budget)d
  hidden_dim: 16
  heads: [{name: key, n_tokens: 2}, {name: instrument, n_tokens: 2}]
lm: {dim: 16, max_tokens: 6}
data:
  vocabularies: {instrument: vocab/instrument.txt}
  clip_len_s: 10
phases:
  - {name: feature_pretrain, manifest: %(manifest)s, epochs: 2}
  - {name: caption_pretrain, manifest: %(manifest)s, epochs: 2, learning_rate: 0.05, max_grad_norm: 1.0}
chat: {client: echo, backoff_s: 0, api_key_env: MUSECAP_TEST_API_KEY}
"""


@pytest.fixture
def toy_run(tmp_path, make_wav) -> Callable[..., Path]:
    """Factory writing a complete toy run directory and returning its config path.

    The run has four 2 s training clips with key and instrument labels, an
    instrument vocabulary file and a two-phase schedule.
    """

    def make(budget: int = 8, manifest: str = "data/train.jsonl", extra: str = "") -> Path:
        (tmp_path / "vocab").mkdir(exist_ok=True)
        (tmp_path / "vocab" / "instrument.txt").write_text("# instruments\n" + "\n".join(INSTRUMENTS) + "\n", encoding="utf-8")
        (tmp_path / "data").mkdir(exist_ok=True)
        keys = ["C major", "A minor", "G major", "D minor"]
        lines = []
        for i, (caption, instrument, key) in enumerate(zip(CAPTIONS, INSTRUMENTS, keys, strict=True)):
            make_wav(f"data/clip{i}.wav", 2.0, freq=110.0 * (i + 1))
            record = {"audio_path": f"clip{i}.wav", "caption": caption, "features": {"key": key, "instrument": [instrument]}}
            lines.append(json.dumps(record))
        (tmp_path / "data" / "train.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
        path = tmp_path / "run.yaml"
        path.write_text(TOY_CONFIG % {"budget": budget, "manifest": manifest} + extra, encoding="utf-8")
        return path

    return make
