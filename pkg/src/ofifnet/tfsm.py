"""Dual-path sequence modeling: recurrence along frequency, then along time.

Each block runs two residual stages on a (C, F, T) map:

  1. per frame, a bidirectional GRU over the frequency axis (feature size C,
     hidden h per direction) followed by a linear projection back to C;
  2. per frequency bin, a unidirectional GRU over time (hidden h) followed by
     a projection back to C, with the hidden state carried across frames.

Stage 1 touches one frame at a time and stage 2 only looks backwards, so the
block is strictly time-causal, and running it frame by frame with carried
state reproduces the batch output bit for bit.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError
from .nn import BiGru, F32, F64, GruParams, gru_step


class TfsmState:
    """Carried time-path hidden state, one row per frequency bin."""

    def __init__(self):
        self.hidden: np.ndarray | None = None


class TfsmBlock:

    def __init__(self, channels: int, hidden: int, params: dict[str, np.ndarray]):
        self.channels = channels
        self.hidden = hidden
        self.freq_fwd = GruParams(params["ffwd.W"], params["ffwd.U"], params["ffwd.b"])
        self.freq_bwd = GruParams(params["fbwd.W"], params["fbwd.U"], params["fbwd.b"])
        self._bigru = BiGru(self.freq_fwd, self.freq_bwd)
        self.time = GruParams(params["time.W"], params["time.U"], params["time.b"])
        self.fproj_w = np.asarray(params["fproj.w"], dtype=F64)
        self.fproj_b = np.asarray(params["fproj.b"], dtype=F64)
        self.tproj_w = np.asarray(params["tproj.w"], dtype=F64)
        self.tproj_b = np.asarray(params["tproj.b"], dtype=F64)
        if self.freq_fwd.input_size != channels or self.time.input_size != channels:
            raise ConfigurationError("recurrent input sizes must equal the channel count")
        if self.fproj_w.shape != (channels, 2 * hidden) or self.tproj_w.shape != (channels, hidden):
            raise ConfigurationError(
                f"projection shapes {self.fproj_w.shape}/{self.tproj_w.shape} do not match "
                f"C={channels}, h={hidden}")

    def init_state(self) -> TfsmState:
        return TfsmState()

    def step(self, frame: np.ndarray, state: TfsmState) -> np.ndarray:
        """One (C, F) frame through both residual stages."""
        c, f_dim = frame.shape
        if c != self.channels:
            raise ConfigurationError(f"frame has {c} channels, block expects {self.channels}")
        seq = frame.astype(F64).T                                  # (F, C)
        bi = self._bigru.frame(seq)                                # (F, 2h)
        y1 = (seq + (bi @ self.fproj_w.T + self.fproj_b)).astype(F32)
        inp = y1.astype(F64)
        if state.hidden is None:
            state.hidden = np.zeros((f_dim, self.hidden), dtype=F64)
        state.hidden = gru_step(inp, state.hidden, self.time)
        y2 = (inp + (state.hidden @ self.tproj_w.T + self.tproj_b)).astype(F32)
        return y2.T

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Batch run over (C, F, T); a loop of the streaming steps."""
        x = np.asarray(x, dtype=F32)
        if x.ndim != 3:
            raise ConfigurationError(f"expected (C, F, T) input, got shape {x.shape}")
        state = self.init_state()
        out = np.empty_like(x)
        for t in range(x.shape[2]):
            out[:, :, t] = self.step(x[:, :, t], state)
        return out
