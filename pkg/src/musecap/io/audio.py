"""Audio clips and WAV/PCM file access."""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import soundfile as sf

from musecap.errors import AudioReadError, InvalidInputError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class AudioClip:
    """Mono audio samples at a fixed sample rate.

    Samples must be finite and lie in [-1, 1]; anything else raises
    ``InvalidInputError``.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self) -> None:
        """Coerce samples to a 1-D float64 array and validate."""
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise InvalidInputError(f"Audio samples must be 1-D, got shape {samples.shape}")
        if samples.size == 0:
            raise InvalidInputError("Audio clip is empty")
        if not np.all(np.isfinite(samples)):
            raise InvalidInputError("Audio clip contains non-finite samples")
        peak = float(np.abs(samples).max())
        if peak > 1.0:
            raise InvalidInputError(f"Audio samples must lie in [-1, 1], peak is {peak:.4g}")
        if self.sample_rate <= 0:
            raise InvalidInputError(f"Sample rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)

    @property
    def duration_s(self) -> float:
        """Clip length in seconds."""
        return len(self.samples) / self.sample_rate

    def __len__(self) -> int:
        return len(self.samples)


def resample_linear(samples: np.ndarray, source_rate: int, target_rate: int) -> np.ndarray:
    """Resample by linear interpolation between neighbouring samples.

    Args:
        samples: 1-D signal
        source_rate: Rate of ``samples`` in Hz
        target_rate: Desired rate in Hz

    Returns:
        Resampled signal; at least one sample long
    """
    if source_rate == target_rate:
        return np.asarray(samples, dtype=np.float64)
    n_out = max(1, int(round(len(samples) * target_rate / source_rate)))
    t_out = np.arange(n_out) / target_rate
    t_in = np.arange(len(samples)) / source_rate
    return np.interp(t_out, t_in, samples).astype(np.float64)


def to_rate(clip: AudioClip, target_rate: int) -> AudioClip:
    """Return ``clip`` at ``target_rate``, resampling only when needed."""
    if clip.sample_rate == target_rate:
        return clip
    return AudioClip(resample_linear(clip.samples, clip.sample_rate, target_rate), target_rate)


def load_audio(path: Path | str, target_sample_rate: int | None = None) -> AudioClip:
    """Read a WAV/PCM file as a mono clip.

    Stereo and multi-channel files are downmixed by the channel mean.

    Args:
        path: Audio file path
        target_sample_rate: Optional rate to resample to

    Returns:
        AudioClip with float samples

    Raises:
        AudioReadError: If the file is missing or cannot be decoded
    """
    path = Path(path)
    try:
        data, sample_rate = sf.read(str(path), dtype="float64", always_2d=True)
    except (OSError, RuntimeError, sf.LibsndfileError) as e:
        raise AudioReadError(f"Could not read audio file {path}: {e}") from e

    mono = data.mean(axis=1)
    logger.debug(f"Loaded {path.name}: {len(mono)} samples at {sample_rate} Hz, {data.shape[1]} channel(s)")
    try:
        clip = AudioClip(mono, int(sample_rate))
    except InvalidInputError as e:
        raise AudioReadError(f"Unusable audio in {path}: {e}") from e
    if target_sample_rate is not None:
        clip = to_rate(clip, target_sample_rate)
    return clip


def write_audio(path: Path | str, clip: AudioClip) -> Path:
    """Write a clip as 16-bit PCM WAV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    sf.write(str(path), np.clip(clip.samples, -1.0, 1.0), clip.sample_rate, subtype="PCM_16")
    return path
