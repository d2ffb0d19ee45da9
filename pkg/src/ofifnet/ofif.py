"""Overlapped-frame fusion: pseudo future frames stacked into a 4-channel input.

Because adjacent analysis frames overlap by 3 hops, the current raw frame
already contains the first (4-k)*H samples of frame t+k. Shifting the current
frame left by k hops and zero-filling the vacated tail therefore yields a
pseudo frame that agrees exactly with the true future frame on its known
support. Masking happens on the raw frame; the window is applied afterwards,
immediately before the transform, so the taper lands where the pseudo frame
claims to start.
"""

from __future__ import annotations

import numpy as np

from . import stdct
from .errors import ConfigurationError

F32 = np.float32
F64 = np.float64

NUM_CHANNELS = stdct.OVERLAP_FACTOR   # current frame + 3 pseudo future frames


def make_pseudo_frames(frame: np.ndarray, hop: int = stdct.HOP_SIZE) -> np.ndarray:
    """Build the 4-frame group [x_t, x~_{t+1}, x~_{t+2}, x~_{t+3}] from one raw frame.

    Group member k is the input shifted left by k hops with the vacated tail
    zeroed; member 0 is the input itself, bit for bit. Pure memory movement,
    no arithmetic.
    """
    frame = np.asarray(frame, dtype=F32).ravel()
    w = len(frame)
    if hop < 1 or w != NUM_CHANNELS * hop:
        raise ConfigurationError(
            f"frame length {w} must equal {NUM_CHANNELS} hops of {hop} samples")
    group = np.zeros((NUM_CHANNELS, w), dtype=F32)
    group[0] = frame
    for k in range(1, NUM_CHANNELS):
        group[k, :w - k * hop] = frame[k * hop:]
    return group


def pseudo_channel_frames(raw_frames: np.ndarray) -> np.ndarray:
    """Group every column of a (W, T) raw frame matrix: returns (4, W, T)."""
    raw_frames = np.asarray(raw_frames, dtype=F32)
    w, t_dim = raw_frames.shape
    if w != NUM_CHANNELS * stdct.HOP_SIZE:
        raise ConfigurationError(f"raw frames must have {stdct.WINDOW_SIZE} rows, got {w}")
    out = np.zeros((NUM_CHANNELS, w, t_dim), dtype=F32)
    out[0] = raw_frames
    for k in range(1, NUM_CHANNELS):
        shift = k * stdct.HOP_SIZE
        out[k, :w - shift, :] = raw_frames[shift:, :]
    return out


def ofif_stack_frames(raw_frames: np.ndarray) -> np.ndarray:
    """Window and transform each group member across all frames: (4, 512, T).

    Channel 0 goes through exactly the same windowing and transform calls as
    plain analysis, so it equals the plain spectrogram bit for bit.
    """
    groups = pseudo_channel_frames(raw_frames)
    win = stdct.hamming_window()
    out = np.empty((NUM_CHANNELS, stdct.DCT_SIZE, raw_frames.shape[1]), dtype=F32)
    for k in range(NUM_CHANNELS):
        windowed = (win[:, None] * groups[k].astype(F64)).astype(F32)
        out[k] = stdct.dct_frames(windowed)
    return out


def ofif_stack(wave: np.ndarray) -> np.ndarray:
    """Full fusion stack of a waveform: (4, 512, T) with T the complete-frame count.

    No look-ahead beyond plain analysis: every channel's column t depends only
    on samples <= t*H + W - 1, because the pseudo frames are built from the
    current raw frame alone.
    """
    return ofif_stack_frames(stdct.frame_signal(wave, windowed=False))


def ofif_fuse(stacked: np.ndarray, block, mode: str = "cumulative") -> np.ndarray:
    """Recalibrate the stacked spectrum with an attention block (shape-preserving)."""
    stacked = np.asarray(stacked, dtype=F32)
    if stacked.ndim != 3 or stacked.shape[0] != NUM_CHANNELS:
        raise ConfigurationError(f"stack must be ({NUM_CHANNELS}, F, T), got {stacked.shape}")
    return block.forward(stacked, mode=mode)
