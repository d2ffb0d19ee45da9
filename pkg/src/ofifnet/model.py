"""Full enhancement model: encoder, sequence modeling, attention skips, decoder.

The pipeline for a waveform is: 4-channel fused spectrum -> attention
recalibration -> 5 causal conv blocks (conv, batch norm, PReLU) -> 3 dual-path
recurrent blocks -> 5 causal deconv blocks. Every encoder output passes an
attention block before concatenating onto the decoder stream, and another
attention block follows each decoder block except the last, whose activation
is Tanh so the predicted mask lies in [-1, 1]. The mask multiplies the noisy
spectrum and overlap-add synthesis returns a waveform of the input length.

Weight tensors live in a flat name -> array mapping with canonical dotted
paths (``enc.0.conv.w`` ...); ``weight_layout`` enumerates the exact names and
shapes a configuration requires, and loading validates against it tensor by
tensor.
"""

from __future__ import annotations

import json
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

from . import ofif, stdct
from .errors import ConfigurationError, SignalTooShortError, UndefinedMetricError, WeightError
from .nn import (
    BN_EPS,
    F32,
    F64,
    conv2d_out_freq,
    conv_frame_taps,
    deconv2d_out_freq,
    deconv_frame_taps,
    deconv_tap_matrices,
)
from .tfca import TFCA_PARAM_SHAPES, TfcaBlock
from .tfsm import TfsmBlock

ATTENTION_MODES = ("cumulative", "offline")
SI_SNR_CAP_DB = 120.0
MASK_EPS = 1e-8


@dataclass(frozen=True)
class ModelConfig:
    """Structural hyperparameters; the default values are the deployed setup."""

    in_channels: int = 4
    encoder_channels: tuple[int, ...] = (16, 32, 64, 128, 128)
    decoder_channels: tuple[int, ...] = (128, 64, 32, 16, 1)
    kernel: tuple[int, int] = (5, 2)
    stride: tuple[int, int] = (2, 1)
    freq_pad: int = 2
    freq_out_pad: int = 1
    tfsm_hidden: tuple[int, ...] = (128, 64, 32)
    pool_window: int = 15
    freq_bins: int = 512
    fuse_attention: bool = True
    attention_mode: str = "cumulative"

    def __post_init__(self):
        if self.attention_mode not in ATTENTION_MODES:
            raise ConfigurationError(f"attention_mode must be one of {ATTENTION_MODES}")
        if self.in_channels < 1 or self.freq_bins < 1 or self.pool_window < 1:
            raise ConfigurationError("channel, frequency, and pooling sizes must be >= 1")
        if self.stride[1] != 1:
            raise ConfigurationError("time stride must be 1")
        if self.decoder_channels and len(self.decoder_channels) != len(self.encoder_channels):
            raise ConfigurationError("decoder must mirror the encoder block for block")
        if self.decoder_channels and self.decoder_channels[-1] != 1:
            raise ConfigurationError("last decoder block must emit a single mask channel")
        self.encoder_freqs()  # raises if any stage collapses

    def encoder_freqs(self) -> list[int]:
        """Frequency sizes entering each encoder block, plus the bottleneck size."""
        freqs = [self.freq_bins]
        for _ in self.encoder_channels:
            nxt = conv2d_out_freq(freqs[-1], self.kernel[0], self.stride[0], self.freq_pad)
            if nxt < 1:
                raise ConfigurationError("encoder collapses the frequency axis to nothing")
            freqs.append(nxt)
        if self.decoder_channels:
            f = freqs[-1]
            for _ in self.decoder_channels:
                f = deconv2d_out_freq(f, self.kernel[0], self.stride[0],
                                      self.freq_pad, self.freq_out_pad)
                if f < 1:
                    raise ConfigurationError("decoder collapses the frequency axis to nothing")
            if f != self.freq_bins:
                raise ConfigurationError(
                    f"decoder returns {f} frequency bins instead of {self.freq_bins}; "
                    "adjust padding so the ladders mirror")
        return freqs

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config is not valid JSON: {exc}") from exc
        known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown config fields: {sorted(unknown)}")
        for key in ("encoder_channels", "decoder_channels", "kernel", "stride", "tfsm_hidden"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)


DEFAULT_CONFIG = ModelConfig()


# ---------------------------------------------------------------------------
# weight layout and initialization
# ---------------------------------------------------------------------------

def _tfca_layout(prefix: str, channels: int) -> "OrderedDict[str, tuple[int, ...]]":
    out: "OrderedDict[str, tuple[int, ...]]" = OrderedDict()
    for name, shape_of in TFCA_PARAM_SHAPES:
        out[f"{prefix}.{name}"] = shape_of(channels)
    return out


def weight_layout(config: ModelConfig) -> "OrderedDict[str, tuple[int, ...]]":
    """Every tensor name and shape the configuration requires, canonical order."""
    k_f, k_t = config.kernel
    out: "OrderedDict[str, tuple[int, ...]]" = OrderedDict()
    if config.fuse_attention:
        out.update(_tfca_layout("fuse", config.in_channels))
    c_prev = config.in_channels
    for i, c in enumerate(config.encoder_channels):
        out[f"enc.{i}.conv.w"] = (c, c_prev, k_f, k_t)
        out[f"enc.{i}.conv.b"] = (c,)
        for stat in ("gamma", "beta", "mean", "var"):
            out[f"enc.{i}.bn.{stat}"] = (c,)
        out[f"enc.{i}.prelu.slope"] = (c,)
        c_prev = c
    bott = config.encoder_channels[-1] if config.encoder_channels else config.in_channels
    for j, h in enumerate(config.tfsm_hidden):
        for d in ("ffwd", "fbwd"):
            out[f"tfsm.{j}.{d}.W"] = (3 * h, bott)
            out[f"tfsm.{j}.{d}.U"] = (3 * h, h)
            out[f"tfsm.{j}.{d}.b"] = (3 * h,)
        out[f"tfsm.{j}.fproj.w"] = (bott, 2 * h)
        out[f"tfsm.{j}.fproj.b"] = (bott,)
        out[f"tfsm.{j}.time.W"] = (3 * h, bott)
        out[f"tfsm.{j}.time.U"] = (3 * h, h)
        out[f"tfsm.{j}.time.b"] = (3 * h,)
        out[f"tfsm.{j}.tproj.w"] = (bott, h)
        out[f"tfsm.{j}.tproj.b"] = (bott,)
    if config.decoder_channels:
        for i, c in enumerate(config.encoder_channels):
            out.update(_tfca_layout(f"skip.{i}", c))
        d_prev = bott
        n = len(config.decoder_channels)
        for j, c in enumerate(config.decoder_channels):
            c_in = d_prev + config.encoder_channels[n - 1 - j]
            out[f"dec.{j}.conv.w"] = (c_in, c, k_f, k_t)
            out[f"dec.{j}.conv.b"] = (c,)
            for stat in ("gamma", "beta", "mean", "var"):
                out[f"dec.{j}.bn.{stat}"] = (c,)
            if j < n - 1:
                out[f"dec.{j}.prelu.slope"] = (c,)
                out.update(_tfca_layout(f"dectfca.{j}", c))
            d_prev = c
    return out


def init_weights(config: ModelConfig, seed: int) -> "OrderedDict[str, np.ndarray]":
    """Deterministic seeded weights: uniform [-0.1, 0.1] for learned tensors.

    Normalization tensors get their natural evaluation-mode defaults (gamma 1,
    beta 0, running mean 0, running var 1) and PReLU slopes start at 0.25, so
    a fresh model is numerically tame enough for self-tests.
    """
    rng = np.random.default_rng(seed)
    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for name, shape in weight_layout(config).items():
        if name.endswith((".bn.gamma", ".bn.var")):
            tensors[name] = np.ones(shape, dtype=F32)
        elif name.endswith((".bn.beta", ".bn.mean")):
            tensors[name] = np.zeros(shape, dtype=F32)
        elif name.endswith(".prelu.slope"):
            tensors[name] = np.full(shape, 0.25, dtype=F32)
        else:
            tensors[name] = rng.uniform(-0.1, 0.1, size=shape).astype(F32)
    return tensors


def param_count_of(tensors: "OrderedDict[str, np.ndarray]") -> int:
    """Learned scalar parameters; batch-norm running statistics do not count."""
    return sum(int(np.prod(a.shape)) for n, a in tensors.items()
               if not n.endswith((".bn.mean", ".bn.var")))


def param_breakdown(tensors: "OrderedDict[str, np.ndarray]") -> "OrderedDict[str, int]":
    """Per-layer learned-parameter totals keyed by the first two name parts."""
    out: "OrderedDict[str, int]" = OrderedDict()
    for name, arr in tensors.items():
        if name.endswith((".bn.mean", ".bn.var")):
            continue
        parts = name.split(".")
        key = ".".join(parts[:2]) if parts[1].isdigit() else parts[0]
        out[key] = out.get(key, 0) + int(np.prod(arr.shape))
    return out


# ---------------------------------------------------------------------------
# layer blocks
# ---------------------------------------------------------------------------

class _ConvState:
    def __init__(self):
        self.taps: np.ndarray | None = None    # (k_t, C_in, F) float64, oldest first
        self.acc: np.ndarray | None = None     # transposed-conv scatter scratch


class _ConvBlock:
    """Causal conv (or deconv), batch norm, then PReLU or Tanh."""

    def __init__(self, w, b, gamma, beta, mean, var, slopes, stride, pad_f,
                 out_pad_f=None, transposed=False, final_tanh=False):
        self.w64 = np.asarray(w, dtype=F64)
        self.b64 = np.asarray(b, dtype=F64)
        self.stride_f = stride[0]
        self.pad_f = pad_f
        self.out_pad_f = out_pad_f
        self.transposed = transposed
        self.final_tanh = final_tanh
        self.k_t = self.w64.shape[3]
        self.c_in = self.w64.shape[0] if transposed else self.w64.shape[1]
        self._w_taps = deconv_tap_matrices(self.w64) if transposed else None
        var = np.asarray(var, dtype=F64)
        if np.any(var < 0):
            raise WeightError("batch-norm running variance contains negative entries")
        self.bn_scale = np.asarray(gamma, dtype=F64) / np.sqrt(var + BN_EPS)
        self.bn_shift = np.asarray(beta, dtype=F64) - np.asarray(mean, dtype=F64) * self.bn_scale
        self.slopes = None if final_tanh else np.asarray(slopes, dtype=F64)

    def init_state(self) -> _ConvState:
        return _ConvState()

    def step(self, frame: np.ndarray, state: _ConvState) -> np.ndarray:
        c, f_dim = frame.shape
        if c != self.c_in:
            raise ConfigurationError(f"frame has {c} channels, block expects {self.c_in}")
        if state.taps is None:
            state.taps = np.zeros((self.k_t, c, f_dim), dtype=F64)
            if self.transposed:
                k_f = self.w64.shape[2]
                state.acc = np.empty(
                    (self.w64.shape[1], (f_dim - 1) * self.stride_f + k_f), dtype=F64)
        elif self.k_t > 1:
            state.taps[:-1] = state.taps[1:]
        state.taps[-1] = frame
        if self.transposed:
            y = deconv_frame_taps(state.taps, self._w_taps, self.b64,
                                  self.stride_f, self.pad_f, self.out_pad_f,
                                  acc_buf=state.acc)
        else:
            y = conv_frame_taps(state.taps, self.w64, self.b64, self.stride_f, self.pad_f)
        y = y.astype(F32)
        y = (y.astype(F64) * self.bn_scale[:, None] + self.bn_shift[:, None]).astype(F32)
        y64 = y.astype(F64)
        if self.final_tanh:
            return np.tanh(y64).astype(F32)
        return np.where(y64 >= 0, y64, self.slopes[:, None] * y64).astype(F32)

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=F32)
        state = self.init_state()
        cols = [self.step(x[:, :, t], state) for t in range(x.shape[2])]
        return np.stack(cols, axis=2)


# ---------------------------------------------------------------------------
# the model
# ---------------------------------------------------------------------------

class Model:
    """Immutable bundle of configuration and layer blocks; shareable across threads."""

    def __init__(self, config: ModelConfig, tensors: "OrderedDict[str, np.ndarray]"):
        layout = weight_layout(config)
        missing = [n for n in layout if n not in tensors]
        if missing:
            raise WeightError(f"missing tensor {missing[0]!r} "
                              f"({len(missing)} required tensors absent)")
        extra = [n for n in tensors if n not in layout]
        if extra:
            raise WeightError(f"unexpected tensor {extra[0]!r} "
                              f"({len(extra)} tensors not in the layout)")
        for name, shape in layout.items():
            got = tuple(tensors[name].shape)
            if got != shape:
                raise WeightError(f"tensor {name!r} has shape {got}, expected {shape}")
        self.config = config
        self.tensors: "OrderedDict[str, np.ndarray]" = OrderedDict(
            (n, np.asarray(tensors[n], dtype=F32)) for n in layout)
        self._build()

    def _sub(self, prefix: str) -> dict[str, np.ndarray]:
        plen = len(prefix) + 1
        return {n[plen:]: a for n, a in self.tensors.items() if n.startswith(prefix + ".")}

    def _build(self):
        cfg = self.config
        self.fuse = (TfcaBlock(cfg.in_channels, cfg.pool_window, self._sub("fuse"))
                     if cfg.fuse_attention else None)
        self.enc: list[_ConvBlock] = []
        for i in range(len(cfg.encoder_channels)):
            p = self._sub(f"enc.{i}")
            self.enc.append(_ConvBlock(
                p["conv.w"], p["conv.b"], p["bn.gamma"], p["bn.beta"], p["bn.mean"],
                p["bn.var"], p["prelu.slope"], cfg.stride, cfg.freq_pad))
        bott = cfg.encoder_channels[-1] if cfg.encoder_channels else cfg.in_channels
        self.tfsm: list[TfsmBlock] = [
            TfsmBlock(bott, h, self._sub(f"tfsm.{j}"))
            for j, h in enumerate(cfg.tfsm_hidden)]
        self.skip: list[TfcaBlock] = []
        self.dec: list[_ConvBlock] = []
        self.dectfca: list[TfcaBlock] = []
        if cfg.decoder_channels:
            self.skip = [TfcaBlock(c, cfg.pool_window, self._sub(f"skip.{i}"))
                         for i, c in enumerate(cfg.encoder_channels)]
            n = len(cfg.decoder_channels)
            for j, c in enumerate(cfg.decoder_channels):
                p = self._sub(f"dec.{j}")
                last = j == n - 1
                self.dec.append(_ConvBlock(
                    p["conv.w"], p["conv.b"], p["bn.gamma"], p["bn.beta"], p["bn.mean"],
                    p["bn.var"], None if last else p["prelu.slope"], cfg.stride,
                    cfg.freq_pad, out_pad_f=cfg.freq_out_pad, transposed=True,
                    final_tanh=last))
                if not last:
                    self.dectfca.append(TfcaBlock(c, cfg.pool_window,
                                                  self._sub(f"dectfca.{j}")))

    # -- bookkeeping -----------------------------------------------------------

    def param_count(self) -> int:
        return param_count_of(self.tensors)

    def param_breakdown(self) -> "OrderedDict[str, int]":
        return param_breakdown(self.tensors)

    # -- inference ---------------------------------------------------------------

    def forward(self, wave: np.ndarray, mode: str | None = None,
                mask_override: np.ndarray | None = None):
        """Enhance a waveform; returns (enhanced, mask) with len(enhanced) == len(wave).

        ``mode`` overrides the configured attention mode. ``mask_override``
        bypasses the network entirely and applies the given (512, T) mask to
        the noisy spectrum, which is how the identity-mask round trip is
        checked.
        """
        wave = np.asarray(wave, dtype=F32).ravel()
        n_samples = len(wave)
        if n_samples < stdct.WINDOW_SIZE:
            raise SignalTooShortError(
                f"need at least {stdct.WINDOW_SIZE} samples, got {n_samples}")
        raw = stdct.frame_signal_full(wave)
        if mask_override is not None:
            mask = np.asarray(mask_override, dtype=F32)
            if mask.shape != (stdct.DCT_SIZE, raw.shape[1]):
                raise ConfigurationError(
                    f"mask shape {mask.shape} does not match ({stdct.DCT_SIZE}, {raw.shape[1]})")
            win = stdct.hamming_window()
            noisy = stdct.dct_frames((win[:, None] * raw.astype(F64)).astype(F32))
            s_hat = (mask.astype(F64) * noisy.astype(F64)).astype(F32)
            return stdct.istdct_ola(s_hat, n_samples), mask
        mode = mode or self.config.attention_mode
        if mode not in ATTENTION_MODES:
            raise ConfigurationError(f"unknown attention mode {mode!r}")
        if not self.dec:
            raise ConfigurationError("configuration has no decoder; inference is undefined")
        if mode == "cumulative":
            from .stream import StreamState, stream_flush, stream_push
            state = StreamState(self)
            head = stream_push(state, self, wave)
            tail = stream_flush(state, self)
            return np.concatenate([head, tail]), np.stack(state.mask_frames, axis=1)
        return self._forward_offline(wave, raw)

    def _forward_offline(self, wave: np.ndarray, raw: np.ndarray):
        stacked = ofif.ofif_stack_frames(raw)
        noisy = stacked[0]
        x = self.fuse.forward(stacked, mode="offline") if self.fuse is not None else stacked
        enc_outs = []
        for blk in self.enc:
            x = blk.forward(x)
            enc_outs.append(x)
        for blk in self.tfsm:
            x = blk.forward(x)
        d = x
        n = len(self.dec)
        for j, blk in enumerate(self.dec):
            s = self.skip[n - 1 - j].forward(enc_outs[n - 1 - j], mode="offline")
            d = blk.forward(np.concatenate([d, s], axis=0))
            if j < n - 1:
                d = self.dectfca[j].forward(d, mode="offline")
        mask = d[0]
        s_hat = (mask.astype(F64) * noisy.astype(F64)).astype(F32)
        return stdct.istdct_ola(s_hat, len(wave)), mask


def build_model(config: ModelConfig, tensors: "OrderedDict[str, np.ndarray]") -> Model:
    return Model(config, tensors)


# ---------------------------------------------------------------------------
# training-objective and evaluation functions
# ---------------------------------------------------------------------------

def target_mask(clean_spec: np.ndarray, noisy_spec: np.ndarray,
                eps: float = MASK_EPS) -> np.ndarray:
    """Clamped ratio mask S*X / (X^2 + eps) in [-1, 1], matching the Tanh range."""
    s64 = np.asarray(clean_spec, dtype=F64)
    x64 = np.asarray(noisy_spec, dtype=F64)
    if s64.shape != x64.shape:
        raise ConfigurationError(f"spectra shapes differ: {s64.shape} vs {x64.shape}")
    return np.clip(s64 * x64 / (x64 * x64 + eps), -1.0, 1.0).astype(F32)


def loss_fn(est_wave, ref_wave, est_mask, ref_mask) -> float:
    """Mean absolute waveform error plus mean squared mask error (both means)."""
    e, r = np.asarray(est_wave, dtype=F64), np.asarray(ref_wave, dtype=F64)
    em, rm = np.asarray(est_mask, dtype=F64), np.asarray(ref_mask, dtype=F64)
    if e.shape != r.shape or em.shape != rm.shape:
        raise ConfigurationError("waveforms and masks must pair up shape for shape")
    return float(np.abs(e - r).mean() + ((em - rm) ** 2).mean())


def si_snr(est_wave, ref_wave, cap_db: float = SI_SNR_CAP_DB) -> float:
    """Scale-invariant signal-to-noise ratio in dB, clipped to +-cap_db.

    Both signals are zero-meaned; the estimate is projected onto the target
    direction, so rescaling the target leaves the value unchanged.
    """
    e = np.asarray(est_wave, dtype=F64).ravel()
    r = np.asarray(ref_wave, dtype=F64).ravel()
    if e.shape != r.shape:
        raise ConfigurationError(f"signal lengths differ: {e.shape[0]} vs {r.shape[0]}")
    e = e - e.mean()
    r = r - r.mean()
    ref_energy = float(r @ r)
    if ref_energy == 0.0:
        raise UndefinedMetricError("target signal has no energy after zero-meaning")
    proj = (float(e @ r) / ref_energy) * r
    noise = e - proj
    p_sig = float(proj @ proj)
    p_noise = float(noise @ noise)
    if p_noise == 0.0 or (p_noise > 0 and p_sig / p_noise >= 10.0 ** (cap_db / 10.0)):
        return cap_db
    if p_sig == 0.0 or p_sig / p_noise <= 10.0 ** (-cap_db / 10.0):
        return -cap_db
    return float(10.0 * math.log10(p_sig / p_noise))
