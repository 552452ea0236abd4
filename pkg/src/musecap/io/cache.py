"""On-disk cache for frozen encoder outputs."""

import json
import logging
from datetime import datetime
from pathlib import Path
from typing import Any, NamedTuple

import numpy as np

from musecap.io.audio import load_audio
from musecap.models.encoder import AudioEncoder, EncoderConfig, LayeredEmbedding
from musecap.utils.hashing import file_digest, text_digest

logger = logging.getLogger(__name__)


class CachedEmbedding(NamedTuple):
    """Result from a cache lookup."""

    embedding: LayeredEmbedding
    was_cached: bool  # False if the encoder had to run
    key: str


class EmbeddingCache:
    """Layered embeddings stored as ``.npy`` arrays with JSON metadata.

    The encoder is frozen in every training phase, so an embedding depends
    only on the audio bytes and the encoder configuration; both go into the key.
    """

    def __init__(self, cache_dir: str | Path = ".cache/embeddings"):
        """Initialize cache with specified directory.

        Args:
            cache_dir: Directory to store cached files
        """
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def key_for(audio_path: Path, config: EncoderConfig) -> str:
        """Cache key from the audio file digest and the encoder config digest."""
        return text_digest(f"{file_digest(audio_path)}:{config.digest}")[:32]

    def exists(self, key: str) -> bool:
        return (self.cache_dir / f"{key}.npy").exists()

    def save(self, key: str, embedding: LayeredEmbedding, metadata: dict | None = None) -> None:
        """Save an embedding, and its metadata when given.

        Args:
            key: Cache key for the embedding
            embedding: Encoder output to store
            metadata: Optional metadata about the cached data
        """
        np.save(self.cache_dir / f"{key}.npy", embedding.data)
        if metadata is not None:
            metadata = {**metadata, "shape": list(embedding.shape), "cached_at": datetime.now().isoformat()}
            with open(self.cache_dir / f"{key}.meta.json", "w") as f:
                json.dump(metadata, f, indent=2)

    def load(self, key: str) -> LayeredEmbedding:
        """Load an embedding.

        Raises:
            FileNotFoundError: If cache key doesn't exist
        """
        cache_file = self.cache_dir / f"{key}.npy"
        if not cache_file.exists():
            raise FileNotFoundError(f"Cache key '{key}' not found")
        return LayeredEmbedding(np.load(cache_file))

    def get_metadata(self, key: str) -> dict[str, Any] | None:
        meta_file = self.cache_dir / f"{key}.meta.json"
        if meta_file.exists():
            with open(meta_file) as f:
                return dict(json.load(f))
        return None

    def delete(self, key: str) -> None:
        for suffix in (".npy", ".meta.json"):
            (self.cache_dir / f"{key}{suffix}").unlink(missing_ok=True)

    def clear(self) -> None:
        """Remove every cached embedding."""
        for pattern in ("*.npy", "*.meta.json"):
            for file in self.cache_dir.glob(pattern):
                file.unlink()

    def get_or_encode(self, audio_path: Path, encoder: AudioEncoder, config: EncoderConfig) -> CachedEmbedding:
        """Return the cached embedding of ``audio_path`` or encode and store it."""
        key = self.key_for(audio_path, config)
        if self.exists(key):
            logger.debug(f"Embedding cache hit for {audio_path}")
            return CachedEmbedding(self.load(key), was_cached=True, key=key)

        logger.debug(f"Encoding {audio_path}")
        embedding = encoder.encode(load_audio(audio_path, target_sample_rate=config.sample_rate))
        self.save(key, embedding, metadata={"audio_path": str(audio_path), "encoder_digest": config.digest})
        return CachedEmbedding(embedding, was_cached=False, key=key)
