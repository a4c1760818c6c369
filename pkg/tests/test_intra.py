"""Intra pipeline: routing table, context geometry, scaling round trips,
signaling truth tables, and the end-to-end prediction paths."""

import numpy as np
import pytest

from qnn.errors import MissingModel, OutOfFrame
from qnn.intra import (
    ALLOWED_SHAPES,
    ChromaMode,
    ContextSpec,
    IntraModelSet,
    NATIVE_SHAPES,
    NeighborMode,
    PlanarFallback,
    SignalPath,
    TRANSFORM_TABLE,
    apply_transform,
    base_context_value,
    context_spec,
    extract_context,
    invert_transform,
    mpm_substitute,
    postprocess_float,
    postprocess_int,
    predict_block,
    preprocess,
    signal_chroma,
    signal_luma,
    split_outputs,
    transform_rule,
)
from qnn.model_io import save_model_file
from qnn.refmodels import build_intra_model
from qnn.tensor import ElementWidth, Tensor

RNG = np.random.default_rng(41)
FRAME = RNG.integers(0, 1024, (200, 200)).astype(np.int64)


class TestTransformTable:
    def test_row_examples(self):
        r = transform_rule(8, 32)
        assert (r.gamma, r.delta, r.transpose, r.net_shape) == (2, 1, False, (8, 16))
        r = transform_rule(64, 64)
        assert (r.gamma, r.delta, r.transpose, r.net_shape) == (4, 4, False, (16, 16))
        assert transform_rule(64, 32) is None

    def test_native_shapes_map_to_themselves(self):
        for s in NATIVE_SHAPES:
            r = transform_rule(*s)
            assert (r.gamma, r.delta, r.transpose) == (1, 1, False)
            assert r.net_shape == s

    def test_rejects_everything_else_exhaustively(self):
        for h in range(4, 65):
            for w in range(4, 65):
                rule = transform_rule(h, w)
                assert (rule is not None) == ((h, w) in TRANSFORM_TABLE)

    def test_transposed_rows_swap_to_native(self):
        for (h, w), rule in TRANSFORM_TABLE.items():
            hh, ww = h // rule.delta, w // rule.gamma
            if rule.transpose:
                hh, ww = ww, hh
            assert (hh, ww) == rule.net_shape


class TestContextGeometry:
    def test_flat_length_formula(self):
        spec = ContextSpec(4, 4, 4, 4)
        h, w = 4, 8
        assert spec.flat_len(h, w) == 4 * (4 + 16 + 4) + (8 + 4) * 4

    def test_transformed_context_stays_within_8(self):
        for (h, w), rule in TRANSFORM_TABLE.items():
            ctx = extract_context(FRAME, 64, 64, h, w, context_spec(h, w))
            t = apply_transform(ctx, rule)
            assert t.spec.n_a <= 8 and t.spec.n_l <= 8
            assert (t.h, t.w) == rule.net_shape
            assert t.flat_len == t.spec.flat_len(t.h, t.w)

    def test_full_availability_interior(self):
        ctx = extract_context(FRAME, 64, 64, 4, 4, context_spec(4, 4))
        assert ctx.above_avail.all() and ctx.left_avail.all()
        total = int(ctx.above.sum()) + int(ctx.left.sum())
        n = ctx.above.size + ctx.left.size
        assert ctx.mu == (total + n // 2) // n

    def test_constant_frame_mean(self):
        flat = np.full((64, 64), 512, dtype=np.int64)
        ctx = extract_context(flat, 16, 16, 4, 4, context_spec(4, 4))
        assert ctx.mu == 512

    def test_out_of_frame_left_and_top(self):
        spec = context_spec(4, 4)
        with pytest.raises(OutOfFrame):
            extract_context(FRAME, spec.n_l - 1, 32, 4, 4, spec)
        with pytest.raises(OutOfFrame):
            extract_context(FRAME, 32, spec.n_a - 1, 4, 4, spec)

    def test_right_edge_marks_unavailable(self):
        # block whose above strip extends past the picture's right border
        h = w = 4
        spec = context_spec(h, w)
        x = FRAME.shape[1] - w
        ctx = extract_context(FRAME, x, 64, h, w, spec)
        assert not ctx.above_avail[:, -1].any()
        assert ctx.above_avail[:, : spec.n_l + w].all()
        assert (ctx.above[~ctx.above_avail] == 0).all()

    def test_availability_callback(self):
        ctx = extract_context(FRAME, 64, 64, 4, 4, context_spec(4, 4),
                              avail_fn=lambda r, c: r < 62)
        assert not ctx.above_avail[-1].any() and not ctx.left_avail.any()


class TestTransforms:
    def test_identity_rule_roundtrip(self):
        rule = transform_rule(4, 4)
        ctx = extract_context(FRAME, 64, 64, 4, 4)
        t = apply_transform(ctx, rule)
        assert np.array_equal(t.above, ctx.above)
        assert np.array_equal(t.left, ctx.left)
        blk = RNG.integers(0, 1024, (4, 4))
        assert np.array_equal(invert_transform(blk, rule), blk)

    def test_transpose_is_involution(self):
        from qnn.intra import TransformRule

        rule = transform_rule(8, 4)  # pure transpose
        ctx = extract_context(FRAME, 64, 64, 8, 4)
        t = apply_transform(ctx, rule)
        back = apply_transform(t, TransformRule(1, 1, True, (8, 4)))
        assert np.array_equal(back.above, ctx.above)
        assert np.array_equal(back.left, ctx.left)

    def test_downsample_window_means(self):
        rule = transform_rule(8, 32)  # gamma=2
        ctx = extract_context(FRAME, 64, 64, 8, 32)
        t = apply_transform(ctx, rule)
        a, b = int(ctx.above[0, 0]), int(ctx.above[0, 1])
        assert t.above[0, 0] == (a + b + 1) // 2

    def test_upsample_replicates(self):
        rule = transform_rule(64, 64)
        blk = np.arange(256).reshape(16, 16)
        up = invert_transform(blk, rule)
        assert up.shape == (64, 64)
        assert (up[0:4, 0:4] == blk[0, 0]).all()
        assert (up[4:8, 0:4] == blk[1, 0]).all()

    def test_prediction_dims_for_every_rule(self):
        for (h, w), rule in TRANSFORM_TABLE.items():
            blk = np.zeros(rule.net_shape)
            assert invert_transform(blk, rule).shape == (h, w)


class TestPreprocess:
    def test_all_samples_at_mean_give_zeros(self):
        flat = np.full((64, 64), 700, dtype=np.int64)
        ctx = extract_context(flat, 16, 16, 4, 4)
        v = preprocess(ctx)
        assert not v.data.any()

    def test_float_scaling(self):
        # symmetric pair keeps the mean at 512: deviations scale by 1/4
        flat = np.full((64, 64), 512, dtype=np.int64)
        flat[15, 16] = 600
        flat[15, 17] = 424
        ctx = extract_context(flat, 16, 16, 4, 4)
        assert ctx.mu == 512
        v = preprocess(ctx)
        nz = np.sort(v.data[0][v.data[0] != 0])
        assert nz.tolist() == [-22.0, 22.0]

    def test_integer_scaling_lands_on_input_quantizer(self):
        flat = np.full((64, 64), 512, dtype=np.int64)
        flat[15, 16] = 600
        flat[15, 17] = 424
        ctx = extract_context(flat, 16, 16, 4, 4)
        v = preprocess(ctx, ElementWidth.int16)
        assert v.q == 7
        nz = np.sort(v.data[0][v.data[0] != 0])
        assert nz.tolist() == [(424 - 512) * 32, (600 - 512) * 32]

    def test_unavailable_become_zero(self):
        h = w = 4
        spec = context_spec(h, w)
        x = FRAME.shape[1] - w
        ctx = extract_context(FRAME, x, 64, h, w, spec)
        v = preprocess(ctx)
        flat_avail = np.concatenate([ctx.above_avail.reshape(-1),
                                     ctx.left_avail.reshape(-1)])
        assert not v.data[0, ~flat_avail].any()

    def test_vector_length(self):
        ctx = extract_context(FRAME, 64, 64, 8, 8)
        assert preprocess(ctx).dims == (1, ctx.spec.flat_len(8, 8))


class TestPostprocess:
    def test_zero_residual_returns_mean(self):
        out = postprocess_float(np.zeros(16), 512, 10, 4, 4)
        assert (out == 512).all()

    def test_clip_floor(self):
        out = postprocess_float(np.array([-130.0]), 20, 10, 1, 1)
        assert out[0] == 0  # -130/0.25 + 20 = -500, clipped

    def test_clip_ceiling(self):
        out = postprocess_float(np.array([130.0]), 900, 10, 1, 1)
        assert out[0] == 1023

    def test_exhaustive_round_trip(self):
        """Scaling then unscaling is exact for every 10-bit sample value."""
        samples = np.arange(1024, dtype=np.float64)
        for mu in (0, 512, 1023):
            resid = (samples - mu) * 0.25
            back = postprocess_float(resid, mu, 10, 32, 32)
            assert np.array_equal(back.reshape(-1), samples)

    def test_integer_postprocess_matches_float(self):
        # multiples of 8 divide exactly, so both paths land on integers
        vals = np.arange(-512, 512, 8, dtype=np.int64)
        t = Tensor((128,), ElementWidth.int16, 7, (vals * 4).astype(np.int16))
        got = postprocess_int(t, 512, 10, 16, 8)
        want = postprocess_float(vals / 32.0, 512, 10, 16, 8)
        assert np.array_equal(got.reshape(-1), want.reshape(-1))


class TestSignaling:
    def test_luma_truth_table(self):
        s = signal_luma(4, 4, True)
        assert s.path is SignalPath.NN_MODE and s.flag_present
        s = signal_luma(16, 16, False)
        assert s.path is SignalPath.REGULAR and s.flag_present
        s = signal_luma(64, 32, True)
        assert s.path is SignalPath.REGULAR and not s.flag_present

    def test_luma_no_flag_outside_family_exhaustive(self):
        for h in range(4, 65):
            for w in range(4, 65):
                s1 = signal_luma(h, w, True)
                s0 = signal_luma(h, w, False)
                inside = (h, w) in TRANSFORM_TABLE
                assert s1.flag_present == s0.flag_present == inside
                assert (s1.path is SignalPath.NN_MODE) == inside
                assert s0.path is SignalPath.REGULAR

    def test_chroma_cases(self):
        assert signal_chroma(True, True, dm_requested=True) is ChromaMode.NN_MODE
        assert signal_chroma(True, False, dm_requested=True) is ChromaMode.PLANAR
        assert signal_chroma(False, True, nn_flag=True) is ChromaMode.NN_MODE
        assert signal_chroma(False, True, nn_flag=False) is ChromaMode.REGULAR
        assert signal_chroma(False, False, nn_flag=True) is ChromaMode.REGULAR
        assert signal_chroma(True, True, dm_requested=False) is ChromaMode.REGULAR

    def test_chroma_exhaustive(self):
        for col in (False, True):
            for fam in (False, True):
                for flag in (False, True):
                    for dm in (False, True):
                        got = signal_chroma(col, fam, flag, dm)
                        if col and dm:
                            want = ChromaMode.NN_MODE if fam else ChromaMode.PLANAR
                        elif not col and fam and flag:
                            want = ChromaMode.NN_MODE
                        else:
                            want = ChromaMode.REGULAR
                        assert got is want


class TestMpm:
    def test_nn_neighbor_contributes_substitute(self):
        assert mpm_substitute(NeighborMode(True, rep_index=50)) == 50

    def test_conventional_neighbors(self):
        assert mpm_substitute(NeighborMode(False, mode_index=0)) == 0
        assert mpm_substitute(NeighborMode(False, mode_index=1)) == 1


@pytest.fixture(scope="module")
def models():
    return {
        "float": IntraModelSet({s: build_intra_model(s, ElementWidth.float32)
                                for s in [(4, 4), (4, 8)]}),
        "int": IntraModelSet({s: build_intra_model(s, ElementWidth.int16)
                              for s in [(4, 4), (4, 8)]}),
    }


class TestPredictBlock:

    def test_constant_frame_zero_network(self, models):
        """A near-zero network on a flat frame predicts roughly the mean."""
        flat = np.full((64, 64), 700, dtype=np.int64)
        out = predict_block(flat, 16, 16, 4, 4, models["float"])
        assert out.block.shape == (4, 4)
        # zero input -> only biases fire; prediction stays near the mean
        assert np.abs(out.block - 700).max() <= 12

    def test_fallback_at_origin(self, models):
        assert isinstance(predict_block(FRAME, 0, 0, 4, 4, models["float"]),
                          PlanarFallback)

    def test_transposed_route_uses_wide_model(self, models):
        out = predict_block(FRAME, 64, 64, 8, 4, models["float"])
        assert out.block.shape == (8, 4)

    def test_missing_model(self, models):
        with pytest.raises(MissingModel):
            predict_block(FRAME, 64, 64, 16, 16, models["float"])

    def test_disallowed_shape(self, models):
        with pytest.raises(MissingModel):
            predict_block(FRAME, 64, 64, 64, 32, models["float"])

    def test_side_outputs_in_range(self, models):
        out = predict_block(FRAME, 64, 64, 4, 8, models["int"])
        assert 0 <= out.rep_index <= 66
        assert 0 <= out.grp_index1 <= 7 and 0 <= out.grp_index2 <= 7

    def test_float_and_integer_paths_agree_within_one_lsb(self):
        """High-shift latents keep the integer path within 1 sample step."""
        rng = np.random.default_rng(77)
        frame = (512 + rng.integers(-30, 31, (64, 64))).astype(np.int64)
        gf = build_intra_model((4, 4), ElementWidth.float32, seed=5)
        gi = build_intra_model((4, 4), ElementWidth.int16, seed=5, input_q=10)
        from qnn.graph import predict_quantizers

        assert min(predict_quantizers(gi).values()) >= 0
        mf = IntraModelSet({(4, 4): gf})
        mi = IntraModelSet({(4, 4): gi})
        for (x, y) in [(16, 16), (32, 8), (8, 32)]:
            pf = predict_block(frame, x, y, 4, 4, mf)
            pi = predict_block(frame, x, y, 4, 4, mi)
            assert np.abs(pf.block - pi.block).max() <= 1

    def test_model_set_from_dir(self, tmp_path, models):
        g = models["int"].models[(4, 4)]
        save_model_file(g, tmp_path / "nn_intra_4x4.smf1")
        (tmp_path / "nn_intra_4x4.json").write_text('{"context": 4, "bitdepth": 10}')
        ms = IntraModelSet.from_dir(tmp_path)
        assert (4, 4) in ms.models and ms.base_for((4, 4)) == 4
        out = predict_block(FRAME, 64, 64, 4, 4, ms)
        want = predict_block(FRAME, 64, 64, 4, 4, models["int"])
        assert np.array_equal(out.block, want.block)


class TestSplitOutputs:
    def test_layout(self):
        n = 16
        flat = np.zeros(n + 67 + 8 + 8, dtype=np.float32)
        flat[n + 3] = 5          # rep head peak at 3
        flat[n + 67 + 6] = 2     # first group head peak at 6
        flat[n + 67 + 8 + 1] = 9
        t = Tensor((1, flat.size), ElementWidth.float32, 0, flat[None])
        y, rep, g1, g2 = split_outputs(t, 4, 4)
        assert y.size == 16 and (rep, g1, g2) == (3, 6, 1)

    def test_argmax_tie_breaks_low(self):
        flat = np.zeros(16 + 67 + 8 + 8, dtype=np.float32)
        t = Tensor((1, flat.size), ElementWidth.float32, 0, flat[None])
        _, rep, g1, g2 = split_outputs(t, 4, 4)
        assert (rep, g1, g2) == (0, 0, 0)
