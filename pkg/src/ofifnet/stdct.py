"""Short-time cosine-transform analysis and weighted overlap-add synthesis.

Fixed geometry: 16 kHz mono input, 512-sample (32 ms) Hamming window, 128-sample
(8 ms) hop, 512-point orthonormal type-II cosine transform. Four adjacent
frames overlap at every sample in the interior, and synthesis renormalizes by
the pointwise sum of squared windows, so analysis->synthesis reconstructs the
signal up to float error wherever at least one frame covers a sample.

The hop/window geometry fixes the algorithmic delay of synthesis: sample n is
final only once frame floor(n/H) has been added, and that frame needs input
through sample floor(n/H)*H + W - 1. For hop-aligned samples the wait is
exactly one window (512 samples, 32 ms).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigurationError, SignalTooShortError

F32 = np.float32
F64 = np.float64

SAMPLE_RATE = 16000
WINDOW_SIZE = 512          # W, 32 ms
HOP_SIZE = 128             # H, 8 ms
DCT_SIZE = 512             # N
OVERLAP_FACTOR = WINDOW_SIZE // HOP_SIZE   # 4 adjacent frames share each sample
ALGORITHMIC_DELAY = WINDOW_SIZE
DENOM_FLOOR = 1e-8


@dataclass
class OlaDiagnostics:
    """Synthesis edge bookkeeping: samples whose window-power sum was clamped."""
    clamped_samples: int = 0


@lru_cache(maxsize=4)
def hamming_window(n: int = WINDOW_SIZE) -> np.ndarray:
    """Symmetric Hamming window, float64, values in (0, 1]."""
    idx = np.arange(n, dtype=F64)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * idx / (n - 1))


@lru_cache(maxsize=4)
def dct_matrix(n: int = DCT_SIZE) -> np.ndarray:
    """Orthonormal type-II cosine basis, rows indexed by bin: D @ D.T == I."""
    k = np.arange(n, dtype=F64)[:, None]
    m = np.arange(n, dtype=F64)[None, :]
    d = np.cos(np.pi * (2.0 * m + 1.0) * k / (2.0 * n))
    d *= np.sqrt(2.0 / n)
    d[0] *= np.sqrt(0.5)
    return d


def frame_count(n_samples: int) -> int:
    """Number of complete frames in a signal of the given length."""
    if n_samples < WINDOW_SIZE:
        raise SignalTooShortError(
            f"signal of {n_samples} samples is shorter than one {WINDOW_SIZE}-sample window")
    return 1 + (n_samples - WINDOW_SIZE) // HOP_SIZE


def full_frame_count(n_samples: int) -> int:
    """Frame count once a trailing partial frame is zero-padded to full size.

    This is the framing the streaming flush produces: at most one extra frame
    beyond the complete ones, enough for every input sample to be covered.
    """
    if n_samples <= 0:
        return 0
    if n_samples < WINDOW_SIZE:
        return 1
    t_full = frame_count(n_samples)
    leftover = n_samples - ((t_full - 1) * HOP_SIZE + WINDOW_SIZE)
    return t_full + (1 if leftover > 0 else 0)


def frame_signal(wave: np.ndarray, *, windowed: bool = True) -> np.ndarray:
    """Slice a waveform into hop-spaced frames, columns ordered by time.

    Returns (W, T) float32 with T = 1 + floor((len - W) / H). Frame t covers
    samples t*H .. t*H + W - 1 only; nothing is pre-padded. When ``windowed``,
    each frame is multiplied by the Hamming window.
    """
    wave = np.asarray(wave, dtype=F32).ravel()
    t_dim = frame_count(len(wave))
    idx = np.arange(WINDOW_SIZE)[:, None] + HOP_SIZE * np.arange(t_dim)[None, :]
    frames = wave[idx]
    if windowed:
        frames = (hamming_window()[:, None] * frames.astype(F64)).astype(F32)
    return frames


def frame_signal_full(wave: np.ndarray) -> np.ndarray:
    """Raw (unwindowed) frames covering every sample; final frame zero-padded.

    Matches the framing a stream produces after flush: same frame starts, same
    zero fill on the trailing partial frame.
    """
    wave = np.asarray(wave, dtype=F32).ravel()
    t_dim = full_frame_count(len(wave))
    if t_dim == 0:
        return np.zeros((WINDOW_SIZE, 0), dtype=F32)
    padded = np.zeros((t_dim - 1) * HOP_SIZE + WINDOW_SIZE, dtype=F32)
    padded[:len(wave)] = wave
    idx = np.arange(WINDOW_SIZE)[:, None] + HOP_SIZE * np.arange(t_dim)[None, :]
    return padded[idx]


def dct_frames(frames: np.ndarray) -> np.ndarray:
    """Forward orthonormal cosine transform of each (512,) frame column."""
    frames = np.asarray(frames, dtype=F32)
    if frames.shape[0] != DCT_SIZE:
        raise ConfigurationError(f"frames must have {DCT_SIZE} rows, got {frames.shape[0]}")
    return (dct_matrix() @ frames.astype(F64)).astype(F32)


def idct_frames(spec: np.ndarray) -> np.ndarray:
    """Inverse transform (exact transpose of the forward basis)."""
    spec = np.asarray(spec, dtype=F32)
    if spec.shape[0] != DCT_SIZE:
        raise ConfigurationError(f"spectrum must have {DCT_SIZE} rows, got {spec.shape[0]}")
    return (dct_matrix().T @ spec.astype(F64)).astype(F32)


def stdct(wave: np.ndarray) -> np.ndarray:
    """Analysis: frame, window, transform. Returns (512, T) float32.

    Column t depends only on samples <= t*H + W - 1.
    """
    return dct_frames(frame_signal(wave))


def istdct_ola(spec: np.ndarray, out_len: int,
               diag: OlaDiagnostics | None = None) -> np.ndarray:
    """Weighted overlap-add synthesis back to a waveform of ``out_len`` samples.

    Each column is inverse-transformed, windowed again, summed at the hop
    interval, and normalized pointwise by the sum of squared windows actually
    covering each sample. Where that sum falls below 1e-8 it is clamped and
    counted in ``diag`` (a Hamming window never triggers this in the covered
    range).
    """
    spec = np.asarray(spec, dtype=F32)
    if spec.ndim != 2 or spec.shape[0] != DCT_SIZE:
        raise ConfigurationError(f"spectrum must be ({DCT_SIZE}, T), got {spec.shape}")
    t_dim = spec.shape[1]
    if t_dim < 1:
        raise ConfigurationError("spectrum has no frames")
    cover = (t_dim - 1) * HOP_SIZE + WINDOW_SIZE
    if not 0 <= out_len <= cover:
        raise ConfigurationError(
            f"out_len {out_len} exceeds the {cover} samples covered by {t_dim} frames")
    win = hamming_window()
    win2 = win * win
    synth = dct_matrix().T @ spec.astype(F64)          # (W, T)
    acc = np.zeros(cover, dtype=F64)
    den = np.zeros(cover, dtype=F64)
    for t in range(t_dim):
        s = t * HOP_SIZE
        acc[s:s + WINDOW_SIZE] += win * synth[:, t]
        den[s:s + WINDOW_SIZE] += win2
    clamped = np.maximum(den, DENOM_FLOOR)
    if diag is not None:
        diag.clamped_samples += int(np.count_nonzero(den[:out_len] < DENOM_FLOOR))
    return (acc[:out_len] / clamped[:out_len]).astype(F32)
