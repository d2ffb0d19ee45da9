"""Numeric building blocks: causal convolutions, GRUs, normalization, pooling.

Feature maps are float32 ndarrays laid out (channels, frequency, time).
Arithmetic runs in float64 internally and results are rounded to float32 at
each operation boundary. Batch operations over the time axis are implemented
as a loop of the same per-frame kernels the streaming engine uses, so a batch
run and an incremental run with carried state produce identical bits.

Causality conventions:
  * convolutions pad ``k_t - 1`` zero frames at the start of the time axis;
  * transposed convolutions drop the trailing ``k_t - 1`` raw frames;
  * pooling windows reach backwards only, with zero history before frame 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, WeightError

F32 = np.float32
F64 = np.float64


def check_feature_map(x: np.ndarray) -> np.ndarray:
    """Validate a (C, F, T) float32 feature map: 3-D, nonempty, finite."""
    x = np.asarray(x)
    if x.ndim != 3 or min(x.shape) < 1:
        raise ConfigurationError(f"feature map must be 3-D (C,F,T), got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ConfigurationError("feature map contains non-finite values")
    return np.asarray(x, dtype=F32)


def _f64(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=F64)


# ---------------------------------------------------------------------------
# causal 2D convolution / transposed convolution
# ---------------------------------------------------------------------------

def conv2d_out_freq(f_dim: int, k_f: int, s_f: int, pad_f: int) -> int:
    return (f_dim + 2 * pad_f - k_f) // s_f + 1


def deconv2d_out_freq(f_dim: int, k_f: int, s_f: int, pad_f: int, out_pad_f: int) -> int:
    return (f_dim - 1) * s_f - 2 * pad_f + k_f + out_pad_f


def _check_conv_args(x_channels, w, b, stride, pad_f):
    if w.ndim != 4:
        raise ConfigurationError(f"conv weight must be 4-D (C_out,C_in,k_f,k_t), got {w.shape}")
    if w.shape[1] != x_channels:
        raise ConfigurationError(
            f"conv weight expects {w.shape[1]} input channels, feature map has {x_channels}")
    if b.shape != (w.shape[0],):
        raise ConfigurationError(f"conv bias shape {b.shape} does not match {w.shape[0]} outputs")
    if stride[1] != 1:
        raise ConfigurationError("time stride must be 1 for causal frame-rate preservation")
    if pad_f < 0 or stride[0] < 1:
        raise ConfigurationError("pad_f must be >= 0 and frequency stride >= 1")


def conv_frame_taps(taps: np.ndarray, w64: np.ndarray, b64: np.ndarray,
                    s_f: int, pad_f: int) -> np.ndarray:
    """One causal conv output frame from its k_t input taps.

    ``taps`` is (k_t, C_in, F) float64 ordered oldest..current, zeros standing
    in for frames before the start of the stream. Returns (C_out, F') float64.
    """
    k_t, c_in, f_dim = taps.shape
    c_out, _, k_f, _ = w64.shape
    fp = f_dim + 2 * pad_f
    out_f = (fp - k_f) // s_f + 1
    if out_f < 1:
        raise ConfigurationError(
            f"conv produces empty frequency axis: F={f_dim} k_f={k_f} pad_f={pad_f}")
    if pad_f:
        xp = np.zeros((k_t, c_in, fp), dtype=F64)
        xp[:, :, pad_f:pad_f + f_dim] = taps
    else:
        xp = taps
    win = sliding_window_view(xp, k_f, axis=2)[:, :, ::s_f, :]   # (k_t, C_in, F', k_f)
    patches = win.transpose(1, 3, 0, 2).reshape(c_in * k_f * k_t, out_f)
    return w64.reshape(c_out, -1) @ patches + b64[:, None]


def conv2d_causal(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                  stride: tuple[int, int] = (2, 1), pad_f: int = 0) -> np.ndarray:
    """Causal 2D convolution over a (C, F, T) map.

    Output frame t depends only on input frames <= t: the time axis is padded
    with ``k_t - 1`` zero frames at the start. Frequency axis is padded by
    ``pad_f`` on both sides and strided by ``stride[0]``.
    """
    x = np.asarray(x, dtype=F32)
    w = np.asarray(w, dtype=F32)
    b = np.asarray(b, dtype=F32)
    _check_conv_args(x.shape[0], w, b, stride, pad_f)
    c_out, c_in, k_f, k_t = w.shape
    _, f_dim, t_dim = x.shape
    w64, b64 = _f64(w), _f64(b)
    out = np.empty((c_out, conv2d_out_freq(f_dim, k_f, stride[0], pad_f), t_dim), dtype=F32)
    taps = np.zeros((k_t, c_in, f_dim), dtype=F64)
    for t in range(t_dim):
        for j in range(k_t):
            src = t - (k_t - 1) + j
            taps[j] = x[:, :, src] if src >= 0 else 0.0
        out[:, :, t] = conv_frame_taps(taps, w64, b64, stride[0], pad_f).astype(F32)
    return out


def _check_deconv_args(x_channels, w, b, stride, pad_f, out_pad_f, f_dim):
    if w.ndim != 4:
        raise ConfigurationError(f"deconv weight must be 4-D (C_in,C_out,k_f,k_t), got {w.shape}")
    if w.shape[0] != x_channels:
        raise ConfigurationError(
            f"deconv weight expects {w.shape[0]} input channels, feature map has {x_channels}")
    if b.shape != (w.shape[1],):
        raise ConfigurationError(f"deconv bias shape {b.shape} does not match {w.shape[1]} outputs")
    if stride[1] != 1:
        raise ConfigurationError("time stride must be 1 for causal frame-rate preservation")
    if pad_f < 0 or not 0 <= out_pad_f < stride[0]:
        raise ConfigurationError("require pad_f >= 0 and 0 <= out_pad_f < frequency stride")
    out_f = deconv2d_out_freq(f_dim, w.shape[2], stride[0], pad_f, out_pad_f)
    if out_f < 1:
        raise ConfigurationError(
            f"deconv output frequency size {out_f} is not positive "
            f"(F={f_dim} k_f={w.shape[2]} stride={stride[0]} pad_f={pad_f})")


def deconv_tap_matrices(w64: np.ndarray) -> list[np.ndarray]:
    """Per-time-tap weight matrices (C_out*k_f, C_in), precomputed once."""
    c_in, c_out, k_f, k_t = w64.shape
    return [np.ascontiguousarray(
        w64[:, :, :, j].transpose(1, 2, 0).reshape(c_out * k_f, c_in))
        for j in range(k_t)]


def deconv_frame_taps(taps: np.ndarray, w_taps: list[np.ndarray], b64: np.ndarray,
                      s_f: int, pad_f: int, out_pad_f: int,
                      acc_buf: np.ndarray | None = None) -> np.ndarray:
    """One causal transposed-conv output frame from its k_t input taps.

    Raw time index t of a stride-1 transposed convolution mixes input frames
    t-j against kernel tap j, so evaluating only at t (never t+1..t+k_t-1)
    is exactly the trailing-frame discard that keeps the layer causal.
    """
    k_t, c_in, f_dim = taps.shape
    c_out = b64.shape[0]
    k_f = w_taps[0].shape[0] // c_out
    raw_len = (f_dim - 1) * s_f + k_f
    if acc_buf is None:
        acc = np.zeros((c_out, raw_len), dtype=F64)
    else:
        acc = acc_buf
        acc.fill(0.0)
    for j in range(k_t):
        xk = taps[k_t - 1 - j]                                    # frame t - j
        m = (w_taps[j] @ xk).reshape(c_out, k_f, f_dim)
        for kf in range(k_f):
            acc[:, kf:kf + s_f * (f_dim - 1) + 1:s_f] += m[:, kf, :]
    trim_hi = pad_f - out_pad_f
    if trim_hi >= 0:
        y = acc[:, pad_f:raw_len - trim_hi]
    else:
        y = np.concatenate([acc[:, pad_f:], np.zeros((c_out, -trim_hi), dtype=F64)], axis=1)
    return y + b64[:, None]


def deconv2d_causal(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                    stride: tuple[int, int] = (2, 1), pad_f: int = 0,
                    out_pad_f: int = 0) -> np.ndarray:
    """Causal transposed 2D convolution over a (C, F, T) map.

    The stride-1 time axis would produce ``T + k_t - 1`` raw frames; the
    trailing ones reach into the future and are discarded, so output frame t
    depends only on input frames <= t. Weight layout is (C_in, C_out, k_f, k_t).
    """
    x = np.asarray(x, dtype=F32)
    w = np.asarray(w, dtype=F32)
    b = np.asarray(b, dtype=F32)
    _, f_dim, t_dim = x.shape
    _check_deconv_args(x.shape[0], w, b, stride, pad_f, out_pad_f, f_dim)
    c_in, c_out, k_f, k_t = w.shape
    w_taps, b64 = deconv_tap_matrices(_f64(w)), _f64(b)
    out_f = deconv2d_out_freq(f_dim, k_f, stride[0], pad_f, out_pad_f)
    out = np.empty((c_out, out_f, t_dim), dtype=F32)
    taps = np.zeros((k_t, c_in, f_dim), dtype=F64)
    for t in range(t_dim):
        for j in range(k_t):
            src = t - (k_t - 1) + j
            taps[j] = x[:, :, src] if src >= 0 else 0.0
        out[:, :, t] = deconv_frame_taps(taps, w_taps, b64,
                                         stride[0], pad_f, out_pad_f).astype(F32)
    return out


# ---------------------------------------------------------------------------
# gated recurrent units
# ---------------------------------------------------------------------------

@dataclass
class GruParams:
    """GRU weights, float64. ``w_in`` (3h, d_in), ``w_rec`` (3h, h), ``bias`` (3h,).

    Gate convention (rows ordered reset, update, candidate):
        r  = sigmoid(W_r x + U_r h + b_r)
        z  = sigmoid(W_z x + U_z h + b_z)
        n  = tanh(W_n x + r * (U_n h + b_n))
        h' = (1 - z) * n + z * h
    """
    w_in: np.ndarray
    w_rec: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.w_in = _f64(self.w_in)
        self.w_rec = _f64(self.w_rec)
        self.bias = _f64(self.bias)
        h = self.w_rec.shape[1]
        if self.w_in.shape[0] != 3 * h or self.w_rec.shape != (3 * h, h) \
                or self.bias.shape != (3 * h,):
            raise ConfigurationError(
                f"inconsistent GRU shapes: w_in {self.w_in.shape}, "
                f"w_rec {self.w_rec.shape}, bias {self.bias.shape}")

    @property
    def hidden(self) -> int:
        return self.w_rec.shape[1]

    @property
    def input_size(self) -> int:
        return self.w_in.shape[1]


def _sigmoid(v):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-v))


def gru_step_pre(gx: np.ndarray, h: np.ndarray, p: GruParams) -> np.ndarray:
    """One GRU step with the input projection ``gx = x @ w_in.T`` precomputed."""
    hd = p.hidden
    gh = h @ p.w_rec.T
    r = _sigmoid(gx[:, :hd] + gh[:, :hd] + p.bias[:hd])
    z = _sigmoid(gx[:, hd:2 * hd] + gh[:, hd:2 * hd] + p.bias[hd:2 * hd])
    n = np.tanh(gx[:, 2 * hd:] + r * (gh[:, 2 * hd:] + p.bias[2 * hd:]))
    return (1.0 - z) * n + z * h


def gru_step(x: np.ndarray, h: np.ndarray, p: GruParams) -> np.ndarray:
    """One GRU step for a (B, d_in) batch against (B, h) carried state; float64."""
    return gru_step_pre(x @ p.w_in.T, h, p)


def gru_sequence(seq: np.ndarray, p: GruParams,
                 h0: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Run a GRU over a time-major (T, d_in) sequence.

    Returns (outputs (T, h) float32, final state (h,) float64). A batch run is
    literally the loop of single steps, so it matches an incremental run with
    carried state bit for bit.
    """
    seq64 = _f64(np.asarray(seq))
    t_dim = seq64.shape[0]
    if h0 is None:
        h = np.zeros((1, p.hidden), dtype=F64)
    else:
        h0 = _f64(h0)
        if h0.shape != (p.hidden,):
            raise ConfigurationError(f"h0 shape {h0.shape} does not match hidden {p.hidden}")
        h = h0[None, :].copy()
    out = np.empty((t_dim, p.hidden), dtype=F32)
    for t in range(t_dim):
        h = gru_step(seq64[t:t + 1], h, p)
        out[t] = h[0].astype(F32)
    return out, h[0]


class BiGru:
    """Both directions of a bidirectional GRU, stepped together as a batch of 2.

    Requires matching hidden and input sizes (the two directions are separate
    weight sets, only their shapes must agree). Precomputes stacked transposed
    weights once so the per-step work is a single batched matmul plus gates.
    """

    def __init__(self, fwd: GruParams, bwd: GruParams):
        if fwd.hidden != bwd.hidden or fwd.input_size != bwd.input_size:
            raise ConfigurationError("both directions need identical hidden/input sizes")
        self.fwd = fwd
        self.bwd = bwd
        self.hidden = fwd.hidden
        h = fwd.hidden
        self._w_in2 = np.stack([fwd.w_in.T, bwd.w_in.T])       # (2, d, 3h)
        self._w_rec2 = np.stack([fwd.w_rec.T, bwd.w_rec.T])    # (2, h, 3h)
        bias2 = np.stack([fwd.bias, bwd.bias])[:, None]        # (2, 1, 3h)
        self._bias_rz2 = np.ascontiguousarray(bias2[..., :2 * h])
        self._bias_n2 = np.ascontiguousarray(bias2[..., 2 * h:])

    def frame(self, seq64: np.ndarray) -> np.ndarray:
        """Run both directions over one (F, C) sequence; returns (F, 2h) float64.

        State starts at zero in both directions every call, so the result for
        frame t never sees any other frame.
        """
        f_dim = seq64.shape[0]
        h = self.hidden
        out = np.empty((f_dim, 2 * h), dtype=F64)
        seq2 = np.stack([seq64, seq64[::-1]])                  # (2, F, C)
        gx2 = seq2 @ self._w_in2                               # (2, F, 3h)
        gx2[..., :2 * h] += self._bias_rz2     # candidate bias stays inside the r product
        hs = np.zeros((2, 1, h), dtype=F64)
        for i in range(f_dim):
            gh = hs @ self._w_rec2
            rz = _sigmoid(gx2[:, i:i + 1, :2 * h] + gh[..., :2 * h])
            n = np.tanh(gx2[:, i:i + 1, 2 * h:]
                        + rz[..., :h] * (gh[..., 2 * h:] + self._bias_n2))
            hs = n + rz[..., h:] * (hs - n)
            out[i, :h] = hs[0, 0]
            out[f_dim - 1 - i, h:] = hs[1, 0]
        return out


def bigru_frame(seq64: np.ndarray, fwd: GruParams, bwd: GruParams) -> np.ndarray:
    """Bidirectional GRU over one frame's (F, C) sequence; returns (F, 2h) float64."""
    if fwd.hidden == bwd.hidden and fwd.input_size == bwd.input_size:
        return BiGru(fwd, bwd).frame(seq64)
    f_dim = seq64.shape[0]
    h = fwd.hidden
    out = np.empty((f_dim, h + bwd.hidden), dtype=F64)
    gx_f = seq64 @ fwd.w_in.T
    gx_b = seq64[::-1] @ bwd.w_in.T
    hf = np.zeros((1, h), dtype=F64)
    hb = np.zeros((1, bwd.hidden), dtype=F64)
    for i in range(f_dim):
        hf = gru_step_pre(gx_f[i:i + 1], hf, fwd)
        hb = gru_step_pre(gx_b[i:i + 1], hb, bwd)
        out[i, :h] = hf[0]
        out[f_dim - 1 - i, h:] = hb[0]
    return out


def bigru_over_frequency(x: np.ndarray, fwd: GruParams, bwd: GruParams) -> np.ndarray:
    """Per-frame bidirectional GRU along frequency: (C, F, T) -> (2h, F, T).

    Each time frame is processed independently (fresh zero state), which keeps
    the op time-causal despite the frequency-axis bidirectionality.
    """
    x = np.asarray(x, dtype=F32)
    c, f_dim, t_dim = x.shape
    if fwd.input_size != c or bwd.input_size != c:
        raise ConfigurationError(
            f"BiGRU expects feature size {fwd.input_size}/{bwd.input_size}, map has C={c}")
    pair = (BiGru(fwd, bwd)
            if fwd.hidden == bwd.hidden and fwd.input_size == bwd.input_size else None)
    out = np.empty((fwd.hidden + bwd.hidden, f_dim, t_dim), dtype=F32)
    for t in range(t_dim):
        seq = _f64(x[:, :, t]).T
        res = pair.frame(seq) if pair is not None else bigru_frame(seq, fwd, bwd)
        out[:, :, t] = res.T.astype(F32)
    return out


# ---------------------------------------------------------------------------
# normalization and activations (pointwise in time => causal)
# ---------------------------------------------------------------------------

BN_EPS = 1e-5


def batchnorm_eval(x: np.ndarray, gamma, beta, mean, var, eps: float = BN_EPS) -> np.ndarray:
    """Evaluation-mode batch norm per channel: gamma*(x-mean)/sqrt(var+eps)+beta."""
    x = np.asarray(x, dtype=F32)
    gamma, beta, mean, var = (_f64(a) for a in (gamma, beta, mean, var))
    c = x.shape[0]
    for name, a in (("gamma", gamma), ("beta", beta), ("mean", mean), ("var", var)):
        if a.shape != (c,):
            raise ConfigurationError(f"batchnorm {name} shape {a.shape}, expected ({c},)")
    if np.any(var < 0):
        raise WeightError("batchnorm running variance contains negative entries")
    scale = gamma / np.sqrt(var + eps)
    shift = beta - mean * scale
    bshape = (c,) + (1,) * (x.ndim - 1)
    return (_f64(x) * scale.reshape(bshape) + shift.reshape(bshape)).astype(F32)


def prelu(x: np.ndarray, slopes) -> np.ndarray:
    """PReLU with one learned slope per channel (channel axis first)."""
    x = np.asarray(x, dtype=F32)
    slopes = _f64(slopes)
    if slopes.shape != (x.shape[0],):
        raise ConfigurationError(f"prelu slopes shape {slopes.shape}, expected ({x.shape[0]},)")
    x64 = _f64(x)
    bshape = (x.shape[0],) + (1,) * (x.ndim - 1)
    return np.where(x64 >= 0, x64, slopes.reshape(bshape) * x64).astype(F32)


def tanh_act(x: np.ndarray) -> np.ndarray:
    return np.tanh(_f64(np.asarray(x))).astype(F32)


# ---------------------------------------------------------------------------
# attention softmax helpers
# ---------------------------------------------------------------------------

def masked_softmax(scores: np.ndarray) -> np.ndarray:
    """Row softmax of a square score matrix under a lower-triangular mask.

    Masked positions contribute exp(-inf) = 0, i.e. they are excluded from the
    normalization rather than zeroed afterwards, so each row is a proper
    distribution over columns 0..row. Returns float64; the strict upper
    triangle is exactly zero.
    """
    s = _f64(np.asarray(scores))
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ConfigurationError(f"masked_softmax needs a square matrix, got {s.shape}")
    t = s.shape[0]
    keep = np.tril(np.ones((t, t), dtype=bool))
    neg = np.where(keep, s, -np.inf)
    m = neg.max(axis=1, keepdims=True)
    e = np.exp(neg - m)
    return e / e.sum(axis=1, keepdims=True)


def row_softmax(scores: np.ndarray) -> np.ndarray:
    """Numerically stable softmax along the last axis, float64."""
    s = _f64(np.asarray(scores))
    m = s.max(axis=-1, keepdims=True)
    e = np.exp(s - m)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_1d(scores: np.ndarray) -> np.ndarray:
    s = _f64(scores)
    e = np.exp(s - s.max())
    return e / e.sum()


# ---------------------------------------------------------------------------
# causal pooling
# ---------------------------------------------------------------------------

class CausalPoolState:
    """The last ``window`` per-frame reductions, oldest first, zero-filled history.

    Rows are kept in arrival order so the float summation order is identical
    no matter how the stream was chunked.
    """

    def __init__(self, window: int, width: int):
        if window < 1:
            raise ConfigurationError("pooling window must be >= 1")
        self._sums = np.zeros((window, width), dtype=F64)
        self._maxes = np.zeros((window, width), dtype=F64)

    def push(self, frame_sum: np.ndarray, frame_max: np.ndarray) -> None:
        self._sums[:-1] = self._sums[1:]
        self._sums[-1] = frame_sum
        self._maxes[:-1] = self._maxes[1:]
        self._maxes[-1] = frame_max

    def window_sum(self) -> np.ndarray:
        return self._sums.sum(axis=0)

    def window_max(self) -> np.ndarray:
        return self._maxes.max(axis=0)


def causal_pool_time(x: np.ndarray, window: int, mode: str = "avg",
                     reduce: str = "channel") -> np.ndarray:
    """Pool a (C, F, T) map over a trailing time window and one full axis.

    ``reduce='channel'`` averages/maxes over all channels and the last
    ``window`` frames, returning (F, T); ``reduce='frequency'`` swaps the
    roles and returns (C, T). History before frame 0 counts as zeros, so the
    average at early frames is diluted by the zero padding.
    """
    x = np.asarray(x, dtype=F32)
    if mode not in ("avg", "max"):
        raise ConfigurationError(f"unknown pooling mode {mode!r}")
    if reduce not in ("channel", "frequency"):
        raise ConfigurationError(f"unknown reduce axis {reduce!r}")
    c, f_dim, t_dim = x.shape
    axis, width, n_reduced = (0, f_dim, c) if reduce == "channel" else (1, c, f_dim)
    state = CausalPoolState(window, width)
    out = np.empty((width, t_dim), dtype=F32)
    for t in range(t_dim):
        fr = _f64(x[:, :, t])
        state.push(fr.sum(axis=axis), fr.max(axis=axis))
        if mode == "avg":
            out[:, t] = (state.window_sum() / (window * n_reduced)).astype(F32)
        else:
            out[:, t] = state.window_max().astype(F32)
    return out


def global_pool_cf(x: np.ndarray, mode: str = "avg") -> np.ndarray:
    """Pool each frame over all channels and frequencies: (C, F, T) -> (T,)."""
    x = np.asarray(x, dtype=F32)
    if mode not in ("avg", "max"):
        raise ConfigurationError(f"unknown pooling mode {mode!r}")
    t_dim = x.shape[2]
    out = np.empty(t_dim, dtype=F32)
    for t in range(t_dim):
        fr = _f64(x[:, :, t])
        out[t] = F32(fr.mean() if mode == "avg" else fr.max())
    return out
