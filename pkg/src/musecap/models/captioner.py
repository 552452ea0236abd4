"""End-to-end captioner: frozen encoder, trainable projector, frozen LM."""

import logging

import torch

from musecap.io.audio import AudioClip
from musecap.io.checkpoint import Checkpoint
from musecap.models.encoder import AudioEncoder, LayeredEmbedding, build_encoder
from musecap.models.lm import DEFAULT_QUERY, LanguageModelBridge, QueryText, build_language_model
from musecap.models.projector import MusicProjector, ProjectorOutput, assemble_tokens

logger = logging.getLogger(__name__)


class Captioner:
    """Produces ``LM([z_content ‖ z_feature ‖ q])`` captions for audio clips."""

    def __init__(self, encoder: AudioEncoder, projector: MusicProjector, lm: LanguageModelBridge, query: str = DEFAULT_QUERY, max_tokens: int = 32):
        self.encoder = encoder
        self.projector = projector
        self.lm = lm
        self.query = QueryText(query)
        self.max_tokens = max_tokens
        self.digest: str | None = None

    @classmethod
    def from_checkpoint(cls, checkpoint: Checkpoint, max_tokens: int = 32) -> "Captioner":
        lm = build_language_model(checkpoint.lm_spec)
        captioner = cls(build_encoder(checkpoint.encoder), checkpoint.projector, lm, query=checkpoint.query, max_tokens=max_tokens)
        captioner.digest = checkpoint.digest
        return captioner

    def project(self, H: LayeredEmbedding | torch.Tensor) -> tuple[torch.Tensor, ProjectorOutput]:
        """LM input prefix for one embedding, plus the projector outputs it came from."""
        out = self.projector(H)
        prefix = assemble_tokens(out.content, out.feature, self.lm.embed_query(self.query))
        return prefix, out

    def prefix(self, H: LayeredEmbedding | torch.Tensor) -> torch.Tensor:
        return self.project(H)[0]

    def caption_embedding(self, H: LayeredEmbedding) -> str:
        """Greedy caption for an already encoded clip."""
        with torch.no_grad():
            prefix = self.prefix(H)
        return self.lm.generate(prefix, self.max_tokens)

    def caption(self, clip: AudioClip) -> str:
        """Greedy caption for a raw audio clip."""
        return self.caption_embedding(self.encoder.encode(clip))
