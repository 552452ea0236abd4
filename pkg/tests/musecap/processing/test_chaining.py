"""Tests for chunk captioning, prompt rendering and chaining."""

import random
import threading
import time

import numpy as np
import pytest

from musecap.errors import ChainError, ConfigError, TransportError, ValidationError
from musecap.io.audio import AudioClip
from musecap.io.chat import AuditLog, ChatSettings, EchoClient
from musecap.processing.chaining import ChunkCaption, build_prompt, caption_chunks, chain, song_name_for
from musecap.utils.hashing import text_digest

GOLDEN_CHUNKS = [
    ChunkCaption(1, 0.0, 10.0, "a calm piano intro in C major"),
    ChunkCaption(2, 10.0, 20.0, "drums and bass enter with an upbeat groove"),
    ChunkCaption(3, 20.0, 30.0, "the song fades out with soft strings"),
]
RAMP_SCALE = 1e6


def silence(seconds: float, sample_rate: int = 100) -> AudioClip:
    return AudioClip(np.zeros(int(seconds * sample_rate)), sample_rate)


class StartTimeCaptioner:
    """Captions a clip with its first sample, sleeping a random while first."""

    def __init__(self, digest: str | None = None, jitter: bool = False):
        self.digest = digest
        self.jitter = jitter
        self._rng = random.Random(0)
        self._lock = threading.Lock()

    def caption(self, clip: AudioClip) -> str:
        with self._lock:
            delay = self._rng.uniform(0.0, 0.05) if self.jitter else 0.0
        time.sleep(delay)
        return f"chunk starting at sample {round(clip.samples[0] * RAMP_SCALE)}"


def ramp(seconds: float, sample_rate: int = 100) -> AudioClip:
    """Sample i holds i / RAMP_SCALE, so a chunk's first sample gives its start index."""
    return AudioClip(np.arange(int(seconds * sample_rate), dtype=np.float64) / RAMP_SCALE, sample_rate)


class TestCaptionChunks:
    """Slicing, ordering and digest checks."""

    def test_thirty_seconds(self):
        chunks = caption_chunks(ramp(30), StartTimeCaptioner())
        assert [(c.index, c.start_s, c.end_s) for c in chunks] == [(1, 0.0, 10.0), (2, 10.0, 20.0), (3, 20.0, 30.0)]
        assert chunks[1].text == "chunk starting at sample 1000"

    def test_short_song_single_chunk(self):
        (chunk,) = caption_chunks(ramp(8), StartTimeCaptioner())
        assert (chunk.start_s, chunk.end_s) == (0.0, 8.0)

    def test_too_short(self):
        with pytest.raises(ValidationError, match="shorter than half"):
            caption_chunks(silence(4), StartTimeCaptioner())

    def test_parallel_results_in_order(self):
        """Chunks finishing out of order still come back chronologically."""
        model = StartTimeCaptioner(jitter=True)
        chunks = caption_chunks(ramp(120), model, max_workers=6)
        assert [c.index for c in chunks] == list(range(1, 13))
        assert [c.text for c in chunks] == [f"chunk starting at sample {i * 1000}" for i in range(12)]

    def test_digest_mismatch(self):
        with pytest.raises(ConfigError, match="digest"):
            caption_chunks(ramp(30), StartTimeCaptioner(digest="a" * 64), expected_digest="b" * 64)

    def test_digest_match(self):
        assert len(caption_chunks(ramp(30), StartTimeCaptioner(digest="a" * 64), expected_digest="a" * 64)) == 3


class TestBuildPrompt:
    """Prompt text built from chunk captions."""

    def test_golden_prompt(self, fixtures_dir):
        """Rendered prompt equals the stored golden file byte for byte."""
        golden = (fixtures_dir / "chain_prompt_3chunks.txt").read_text(encoding="utf-8")
        prompt = build_prompt("Midnight Drive", GOLDEN_CHUNKS)
        assert prompt.rendered == golden
        assert text_digest(prompt.rendered) == text_digest(golden)

    def test_numbered_lines(self):
        rendered = build_prompt("x", GOLDEN_CHUNKS).rendered
        assert "1. 0 to 10 seconds: a calm piano intro in C major\n2. 10 to 20 seconds:" in rendered
        assert rendered.endswith("3. 20 to 30 seconds: the song fades out with soft strings\nFull song description:")

    def test_song_name_verbatim(self):
        name = 'Weird {name} "quoted" song'
        rendered = build_prompt(name, GOLDEN_CHUNKS[:1]).rendered
        assert f"Chunks for “{name}\" :" in rendered

    def test_chunk_text_with_braces(self):
        chunks = [ChunkCaption(1, 0.0, 10.0, "uses {chunk_lines} literally")]
        assert "1. 0 to 10 seconds: uses {chunk_lines} literally" in build_prompt("s", chunks).rendered

    def test_empty_chunk_text(self):
        with pytest.raises(ValidationError, match="chunk 2"):
            build_prompt("s", [GOLDEN_CHUNKS[0], ChunkCaption(2, 10.0, 20.0, "  ")])

    def test_no_chunks(self):
        with pytest.raises(ValidationError):
            build_prompt("s", [])

    def test_out_of_order(self):
        with pytest.raises(ValidationError, match="indices"):
            build_prompt("s", [GOLDEN_CHUNKS[1], GOLDEN_CHUNKS[0]])

    def test_overlapping_chunks(self):
        with pytest.raises(ValidationError, match="starts before"):
            build_prompt("s", [GOLDEN_CHUNKS[0], ChunkCaption(2, 5.0, 15.0, "overlap")])

    def test_chunk_times_validated(self):
        with pytest.raises(ValidationError):
            ChunkCaption(1, 10.0, 10.0, "empty span")


class TestSongName:
    def test_explicit(self):
        assert song_name_for("/music/track01.wav", "My Song") == "My Song"

    def test_stem(self):
        assert song_name_for("/music/track01.wav") == "track01"


class TestChain:
    """Sending the prompt through a chat client."""

    def test_echo_returns_prompt(self):
        prompt = build_prompt("Midnight Drive", GOLDEN_CHUNKS)
        assert chain(prompt, EchoClient()) == prompt.rendered

    def test_flaky_then_success(self, tmp_path):
        calls = []

        class Flaky:
            model = "flaky"

            def complete(self, prompt: str) -> str:
                calls.append(prompt)
                if len(calls) < 3:
                    raise TransportError("timeout")
                return "A long song description."

        log = AuditLog(tmp_path / "audit.jsonl")
        prompt = build_prompt("s", GOLDEN_CHUNKS)
        assert chain(prompt, Flaky(), settings=ChatSettings(backoff_s=0.0), audit_log=log, sleep=lambda _: None) == "A long song description."
        assert len(calls) == 3
        assert log.entries()[0]["prompt"] == prompt.rendered

    def test_blank_completion(self):
        class Blank:
            model = "blank"

            def complete(self, prompt: str) -> str:
                return " \n\t"

        with pytest.raises(ChainError):
            chain(build_prompt("s", GOLDEN_CHUNKS), Blank(), sleep=lambda _: None)
