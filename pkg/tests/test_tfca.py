"""Attention block: mask structure, mode consistency, causality, shapes."""

import numpy as np
import pytest

from ofifnet.errors import ConfigurationError
from ofifnet.tfca import TFCA_PARAM_SHAPES, TfcaBlock

F32 = np.float32


def make_block(rng, channels, window=15, zero_bias=False, zero_qk=False, scale=0.4):
    params = {}
    for name, shape_of in TFCA_PARAM_SHAPES:
        arr = rng.uniform(-scale, scale, shape_of(channels)).astype(F32)
        if zero_bias and name.endswith(".b"):
            arr = np.zeros_like(arr)
        if zero_qk and name[:2] in ("tq", "tk", "fq", "fk", "cq", "ck"):
            arr = np.zeros_like(arr)
        params[name] = arr
    return TfcaBlock(channels, window, params)


def pick_time_branch(rng, channels):
    """Weights that make the block output exactly the time-branch values."""
    params = {name: np.zeros(shape_of(channels), dtype=F32)
              for name, shape_of in TFCA_PARAM_SHAPES}
    params["vt.w"] = np.eye(channels, dtype=F32)
    out_w = np.zeros((channels, 3 * channels), dtype=F32)
    out_w[:, :channels] = np.eye(channels, dtype=F32)
    params["out.w"] = out_w
    return TfcaBlock(channels, 15, params)


class TestTimeBranch:

    def test_single_frame_attention_is_identity(self, rng):
        block = make_block(rng, 3)
        x = rng.uniform(-1, 1, (3, 8, 1)).astype(F32)
        att = block.attentions(x, mode="cumulative")["time"]
        np.testing.assert_array_equal(att, [[1.0]])

    def test_single_frame_output_equals_time_values(self, rng):
        # fusion wired to pass the time branch through untouched, values
        # wired to the identity: with T=1 the output must be the input frame
        block = pick_time_branch(rng, 4)
        x = rng.uniform(-1, 1, (4, 16, 1)).astype(F32)
        out = block.forward(x, mode="cumulative")
        np.testing.assert_array_equal(out, x)

    def test_zero_queries_uniform_prefix_rows(self, rng):
        block = make_block(rng, 3, zero_qk=True)
        x = rng.uniform(-1, 1, (3, 8, 4)).astype(F32)
        att = block.attentions(x, mode="offline")["time"]
        for t in range(4):
            np.testing.assert_allclose(att[t, :t + 1], 1.0 / (t + 1), atol=1e-12)
            assert np.all(att[t, t + 1:] == 0.0)

    def test_random_inputs_lower_triangular_row_stochastic(self, rng):
        block = make_block(rng, 5)
        for trial in range(5):
            x = rng.uniform(-2, 2, (5, 10, 13)).astype(F32)
            att = block.attentions(x, mode="cumulative")["time"]
            assert np.all(np.triu(att, 1) == 0.0)
            np.testing.assert_allclose(att.sum(axis=1), 1.0, atol=1e-6)


class TestAxisBranches:

    def test_cumulative_final_frame_matches_offline(self, rng):
        block = make_block(rng, 6)
        x = rng.uniform(-1, 1, (6, 24, 18)).astype(F32)
        cum = block.attentions(x, mode="cumulative")
        off = block.attentions(x, mode="offline")
        for key in ("frequency", "channel"):
            assert np.abs(cum[key] - off[key]).max() <= 1e-6

    def test_offline_rows_sum_to_one(self, rng):
        block = make_block(rng, 4)
        x = rng.uniform(-1, 1, (4, 12, 9)).astype(F32)
        att = block.attentions(x, mode="offline")
        np.testing.assert_allclose(att["frequency"].sum(axis=1), 1.0, atol=1e-6)
        np.testing.assert_allclose(att["channel"].sum(axis=1), 1.0, atol=1e-6)

    def test_single_bin_attention_is_identity(self, rng):
        block = make_block(rng, 3)
        x = rng.uniform(-1, 1, (3, 1, 5)).astype(F32)
        att = block.attentions(x, mode="offline")["frequency"]
        np.testing.assert_allclose(att, [[1.0]], atol=1e-12)


class TestTfcaForward:

    def test_bottleneck_shape_preserved(self, rng):
        block = make_block(rng, 128, scale=0.05)
        x = rng.uniform(-1, 1, (128, 16, 20)).astype(F32)
        assert block.forward(x, mode="cumulative").shape == (128, 16, 20)
        assert block.forward(x, mode="offline").shape == (128, 16, 20)

    def test_zero_input_zero_biases_zero_output(self, rng):
        block = make_block(rng, 4, zero_bias=True)
        x = np.zeros((4, 10, 6), dtype=F32)
        assert np.all(block.forward(x, mode="cumulative") == 0.0)

    def test_cumulative_prefix_stability_bit_exact(self, rng):
        block = make_block(rng, 5)
        x = rng.uniform(-1, 1, (5, 12, 11)).astype(F32)
        t0 = 7
        x2 = x.copy()
        x2[:, :, t0:] = rng.uniform(-1, 1, (5, 12, 11 - t0)).astype(F32)
        a = block.forward(x, mode="cumulative")
        b = block.forward(x2, mode="cumulative")
        assert np.array_equal(a[:, :, :t0], b[:, :, :t0])
        assert not np.array_equal(a[:, :, t0:], b[:, :, t0:])

    def test_offline_mode_not_prefix_stable(self, rng):
        # the literal whole-utterance attention lets late frames reach
        # early outputs; this is exactly the ambiguity the two modes document
        block = make_block(rng, 5)
        x = rng.uniform(-1, 1, (5, 12, 11)).astype(F32)
        x2 = x.copy()
        x2[:, :, 7:] += 1.0
        a = block.forward(x, mode="offline")
        b = block.forward(x2, mode="offline")
        assert not np.array_equal(a[:, :, :7], b[:, :, :7])

    def test_final_frame_modes_agree(self, rng):
        block = make_block(rng, 6)
        x = rng.uniform(-1, 1, (6, 20, 14)).astype(F32)
        a = block.forward(x, mode="cumulative")
        b = block.forward(x, mode="offline")
        assert np.abs(a[:, :, -1].astype(np.float64) - b[:, :, -1]).max() <= 1e-5

    def test_unknown_mode_rejected(self, rng):
        block = make_block(rng, 3)
        with pytest.raises(ConfigurationError):
            block.forward(rng.uniform(-1, 1, (3, 4, 5)).astype(F32), mode="sliding")

    def test_step_streaming_equals_batch(self, rng):
        block = make_block(rng, 4)
        x = rng.uniform(-1, 1, (4, 9, 8)).astype(F32)
        batch = block.forward(x, mode="cumulative")
        state = block.init_state()
        stepped = np.stack([block.step(x[:, :, t], state) for t in range(8)], axis=2)
        assert np.array_equal(batch, stepped)
