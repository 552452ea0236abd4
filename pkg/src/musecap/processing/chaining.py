"""Long-form captions by chaining clip captions through a chat LLM.

A song is cut into fixed-length chunks, each chunk is captioned on its own,
and the chronological chunk captions are rendered into one prompt asking a
chat model for a single time-informed description of the whole song.
"""

import logging
import time
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

from musecap.errors import ConfigError, ValidationError
from musecap.io.audio import AudioClip
from musecap.io.chat import AuditLog, ChatClient, ChatSettings, complete_with_retry
from musecap.processing.clips import clip_spans
from musecap.prompts import load_template, render

logger = logging.getLogger(__name__)

CHAIN_TEMPLATE = "chain.txt"


class ClipCaptioner(Protocol):
    """Anything that captions a single clip (the trained captioner, or a test double)."""

    digest: str | None

    def caption(self, clip: AudioClip) -> str: ...


@dataclass(frozen=True)
class ChunkCaption:
    """Caption of one chunk with its time range in seconds."""

    index: int
    start_s: float
    end_s: float
    text: str

    def __post_init__(self) -> None:
        if self.index < 1:
            raise ValidationError(f"chunk index must be >= 1, got {self.index}")
        if not self.end_s > self.start_s:
            raise ValidationError(f"chunk {self.index} ends at {self.end_s} s, before it starts at {self.start_s} s")

    def line(self) -> str:
        """``"i. start to end seconds: text"`` with whole-second times."""
        return f"{self.index}. {int(round(self.start_s))} to {int(round(self.end_s))} seconds: {self.text}"


@dataclass(frozen=True)
class ChainPrompt:
    """Rendered chaining prompt and the chunks it was built from."""

    song_name: str
    chunks: tuple[ChunkCaption, ...]
    rendered: str


def song_name_for(audio_path: Path | str, song_name: str | None = None) -> str:
    """Explicit song name, else the audio file's stem."""
    return song_name if song_name else Path(audio_path).stem


def caption_chunks(
    audio: AudioClip,
    model: ClipCaptioner,
    clip_len_s: float = 10.0,
    max_workers: int = 1,
    expected_digest: str | None = None,
) -> list[ChunkCaption]:
    """Caption every kept chunk of ``audio``.

    Chunks may be captioned concurrently; the result is always in chunk order.

    Args:
        audio: Full-length audio
        model: Clip captioner
        clip_len_s: Chunk length in seconds
        max_workers: Threads captioning chunks in parallel
        expected_digest: Digest the model's checkpoint must carry

    Returns:
        One ChunkCaption per chunk, indexed from 1

    Raises:
        ConfigError: If the model's checkpoint digest differs from ``expected_digest``
        ValidationError: If the audio is shorter than half a chunk
    """
    if expected_digest is not None and model.digest != expected_digest:
        raise ConfigError(f"checkpoint digest {str(model.digest)[:12]} does not match configuration digest {expected_digest[:12]}", field="checkpoint")
    if clip_len_s <= 0:
        raise ValidationError(f"chunk length must be positive, got {clip_len_s}")
    sr = audio.sample_rate
    spans = clip_spans(len(audio), int(round(clip_len_s * sr)))
    if not spans:
        raise ValidationError(f"audio of {audio.duration_s:.2f} s is shorter than half a {clip_len_s} s chunk")

    def run(index: int, start: int, end: int) -> ChunkCaption:
        text = model.caption(AudioClip(audio.samples[start:end], sr))
        return ChunkCaption(index, start / sr, end / sr, text)

    logger.info(f"Captioning {len(spans)} chunks of {clip_len_s} s with {max_workers} worker(s)")
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = [pool.submit(run, i, start, end) for i, (start, end) in enumerate(spans, start=1)]
        chunks = [future.result() for future in as_completed(futures)]
    return sorted(chunks, key=lambda chunk: chunk.index)


def build_prompt(song_name: str, chunks: Sequence[ChunkCaption]) -> ChainPrompt:
    """Render the chaining prompt for ``chunks``.

    Raises:
        ValidationError: If there are no chunks, a chunk text is empty, or
            indices are not consecutive from 1 in chronological order
    """
    if not chunks:
        raise ValidationError("cannot build a prompt without chunks")
    for position, chunk in enumerate(chunks, start=1):
        if chunk.index != position:
            raise ValidationError(f"chunk indices must run 1..{len(chunks)}, found {chunk.index} at position {position}")
        if not chunk.text.strip():
            raise ValidationError(f"chunk {chunk.index} has an empty caption")
        if position > 1 and chunk.start_s < chunks[position - 2].end_s:
            raise ValidationError(f"chunk {chunk.index} starts before chunk {chunk.index - 1} ends")
    chunk_lines = "\n".join(chunk.line() for chunk in chunks)
    rendered = render(load_template(CHAIN_TEMPLATE), song_name=song_name, chunk_lines=chunk_lines)
    return ChainPrompt(song_name=song_name, chunks=tuple(chunks), rendered=rendered)


def chain(
    prompt: ChainPrompt,
    client: ChatClient,
    settings: ChatSettings | None = None,
    audit_log: AuditLog | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> str:
    """Send the rendered prompt to the chat service and return its completion.

    Raises:
        ChainError: When every attempt fails or the completion is blank
    """
    logger.info(f"Chaining {len(prompt.chunks)} chunk captions for '{prompt.song_name}'")
    return complete_with_retry(client, prompt.rendered, settings=settings, audit_log=audit_log, sleep=sleep)
