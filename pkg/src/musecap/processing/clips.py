"""Slicing long audio into fixed-length clips."""

from musecap.errors import InvalidInputError
from musecap.io.audio import AudioClip


def clip_spans(n_samples: int, clip_samples: int) -> list[tuple[int, int]]:
    """Sample ranges ``[start, end)`` of consecutive non-overlapping clips.

    The final partial window is kept iff it is at least half a clip long.
    The spans tile ``[0, end of last span)`` without gaps or overlaps.
    """
    if clip_samples < 1:
        raise InvalidInputError(f"clip length must be at least one sample, got {clip_samples}")
    n_full, remainder = divmod(n_samples, clip_samples)
    spans = [(i * clip_samples, (i + 1) * clip_samples) for i in range(n_full)]
    if remainder and 2 * remainder >= clip_samples:
        spans.append((n_full * clip_samples, n_samples))
    return spans


def make_clips(clip: AudioClip, clip_len_s: float) -> list[AudioClip]:
    """Cut ``clip`` into ``clip_len_s``-second clips.

    Examples (10 s clips): 30 s gives 3 clips, 35 s gives 4 (the 5 s tail is
    exactly half a clip), 12 s gives 1 (the 2 s tail is dropped), 8 s gives 1.
    """
    if clip_len_s <= 0:
        raise InvalidInputError(f"clip length must be positive, got {clip_len_s}")
    clip_samples = int(round(clip_len_s * clip.sample_rate))
    return [AudioClip(clip.samples[start:end], clip.sample_rate) for start, end in clip_spans(len(clip), clip_samples)]
