"""Acceptance criteria, one test per criterion.

Each test prints a PASS/FAIL line with the measured figure (run with -s to
see them live).  Criteria cover: the integer kernel formulas against a
big-integer oracle, bit-exact deterministic inference, sparse/dense
multiply equivalence, published sparsity and complexity figures, the
scaling round trip, the shape-routing table, signaling truth tables,
residual scaling optimality, rate-distortion parameter selection, and
static-quantization fidelity.
"""

import time
from fractions import Fraction

import numpy as np
import pytest

import support as S
from qnn import kernels as K
from qnn.cli import main
from qnn.complexity import kmac_per_pixel
from qnn.graph import infer, predict_quantizers
from qnn.intra import (
    TRANSFORM_TABLE,
    apply_transform,
    context_spec,
    extract_context,
    postprocess_float,
    signal_chroma,
    signal_luma,
    transform_rule,
    ChromaMode,
    SignalPath,
)
from qnn.loopfilter import (
    FilterInputs,
    apply_nn_filter,
    apply_scale,
    candidate_list,
    derive_scale,
    select_params,
)
from qnn.model_io import save_model_file
from qnn.quantize import static_quantize
from qnn.refmodels import build_filter_model, build_intra_model
from qnn.sparse import (
    Run,
    SparsePackedMatrix,
    density,
    dense_mac_count,
    pack_sparse,
    sparse_mac_count,
    spmv_q,
)
from qnn.tensor import ElementWidth, Tensor, dequantize, load_stn1, save_stn1

I16 = ElementWidth.int16


def report(ok: bool, label: str, detail: str = ""):
    line = f"{'PASS' if ok else 'FAIL'}  {label}"
    if detail:
        line += f"  [{detail}]"
    print(line)
    assert ok, line


# ---------------------------------------------------------------------------
# 1. integer-kernel formula suite vs big-integer oracle
# ---------------------------------------------------------------------------

class TestCriterion1KernelFormulas:
    CASES = 10_000

    def t(self, vals, q):
        vals = np.asarray(vals, dtype=np.int16)
        return Tensor(vals.shape, I16, q, vals)

    def test_kernel_formula_suite(self):
        rng = np.random.default_rng(1001)
        t0 = time.time()
        mism = 0
        n = self.CASES

        def vec(k=4):
            return rng.integers(-32767, 32768, k)

        for _ in range(n):  # bias add
            q1 = int(rng.integers(0, 8)); q0 = q1 + int(rng.integers(0, 8))
            x0, x1 = vec(), vec()
            got = K.bias_add_q(self.t(x0, q0), self.t(x1, q1))
            if list(got.data) != S.o_bias_add(x0.tolist(), q0, x1.tolist(), q1, 16):
                mism += 1
        for _ in range(n):  # add
            q0, q1 = (int(v) for v in rng.integers(0, 12, 2))
            x0, x1 = vec(), vec()
            got = K.add_q(self.t(x0, q0), self.t(x1, q1))
            if list(got.data) != S.o_add(x0.tolist(), q0, x1.tolist(), q1, 16):
                mism += 1
        for _ in range(n):  # mul
            q0, q1 = (int(v) for v in rng.integers(0, 12, 2))
            qi = int(rng.integers(0, q0 + 1))
            x0, x1 = vec(), vec()
            got = K.mul_q(self.t(x0, q0), self.t(x1, q1), qi)
            if list(got.data) != S.o_mul(x0.tolist(), q0, x1.tolist(), q1, qi, 16):
                mism += 1
        for _ in range(n):  # matmul
            k, m = (int(v) for v in rng.integers(1, 5, 2))
            q0, q1 = (int(v) for v in rng.integers(0, 12, 2))
            qi = int(rng.integers(0, q0 + 1))
            x0 = rng.integers(-32767, 32768, (1, k))
            w = rng.integers(-32767, 32768, (k, m))
            got = K.matmul_q(self.t(x0, q0), self.t(w, q1), qi)
            if got.data[0].tolist() != S.o_matmul(x0[0].tolist(), q0, w.tolist(),
                                                  q1, qi, 16):
                mism += 1
        for _ in range(n):  # concat
            qs = [int(v) for v in rng.integers(0, 10, 2)]
            parts = [vec(2) for _ in qs]
            got = K.concat_q([self.t(p, q) for p, q in zip(parts, qs)])
            if list(got.data) != S.o_concat([p.tolist() for p in parts], qs, 16):
                mism += 1
        for _ in range(n):  # leaky relu
            alpha = float(rng.uniform(-0.99, 0.99))
            x = vec()
            got = K.leaky_relu_q(self.t(x, 5), alpha)
            if list(got.data) != S.o_leaky_relu(x.tolist(), alpha, 16):
                mism += 1
        for _ in range(n):  # maximum
            q1 = int(rng.integers(0, 8)); q0 = q1 + int(rng.integers(0, 6))
            x0, x1 = vec(), vec()
            got = K.maximum_q(self.t(x0, q0), self.t(x1, q1))
            if list(got.data) != S.o_maximum(x0.tolist(), q0, x1.tolist(), q1, 16):
                mism += 1
        for _ in range(n):  # conv2d
            q0, q1 = (int(v) for v in rng.integers(0, 8, 2))
            stride = int(rng.integers(1, 3))
            padding = ("same", "valid")[int(rng.integers(0, 2))]
            x = rng.integers(-32767, 32768, (1, 3, 3, 1))
            w = rng.integers(-32767, 32768, (2, 2, 1, 1))
            got = K.conv2d_q(self.t(x, q0), self.t(w, q1), stride=stride,
                             padding=padding)
            want = S.o_conv2d(x[0].tolist(), q0, w.tolist(), q1, stride,
                              padding, 0, 16)
            if got.data[0].tolist() != want:
                mism += 1
        dt = time.time() - t0
        report(mism == 0 and dt < 30.0,
               "criterion 1: kernel formulas vs big-integer oracle",
               f"{8 * n} cases, {mism} mismatches, {dt:.1f}s")


# ---------------------------------------------------------------------------
# 2. bit-exact deterministic inference through the CLI
# ---------------------------------------------------------------------------

class TestCriterion2Determinism:
    def test_infer_byte_identical(self, tmp_path, monkeypatch, capsys):
        g = build_intra_model((4, 4), I16, seed=9)
        model = tmp_path / "m.smf1"
        save_model_file(g, model)
        rng = np.random.default_rng(2002)
        x = Tensor((1, g.inputs[0].dims[1]), I16, g.inputs[0].q,
                   rng.integers(-8000, 8000, (1, g.inputs[0].dims[1]))
                   .astype(np.int16))
        xin = tmp_path / "x.stn1"
        save_stn1(x, xin)
        blobs = set()
        for i in range(5):
            out = tmp_path / f"run{i}.stn1"
            assert main(["infer", "--model", str(model), "--input", str(xin),
                         "--out", str(out)]) == 0
            blobs.add(out.read_bytes())
        monkeypatch.setenv("QNN_PORTABLE", "1")
        out = tmp_path / "portable.stn1"
        assert main(["infer", "--model", str(model), "--input", str(xin),
                     "--out", str(out)]) == 0
        blobs.add(out.read_bytes())
        monkeypatch.delenv("QNN_PORTABLE")
        capsys.readouterr()
        report(len(blobs) == 1,
               "criterion 2: bit-exact deterministic inference",
               "5 runs + de-vectorized path, 1 unique byte stream")


# ---------------------------------------------------------------------------
# 3. sparse multiply equivalence
# ---------------------------------------------------------------------------

class TestCriterion3SparseEquivalence:
    def test_thousand_random_matrices(self):
        rng = np.random.default_rng(3003)
        mism = 0
        for i in range(1000):
            rows = int(rng.integers(1, 257))
            cols = int(rng.integers(1, 257))
            dens = float(rng.uniform(0.05, 0.5))
            align = (8, 16)[int(rng.integers(0, 2))]
            d = rng.integers(-32767, 32768, (rows, cols))
            d[rng.random((rows, cols)) >= dens] = 0
            dense = Tensor((rows, cols), I16, int(rng.integers(0, 12)),
                           d.astype(np.int16))
            m = pack_sparse(dense, align)
            q_i = int(rng.integers(0, 3))
            x = Tensor((cols,), I16, 10 + q_i,
                       rng.integers(-32767, 32768, cols).astype(np.int16))
            got = spmv_q(m, x, q_i)
            wt = Tensor((cols, rows), I16, dense.q, dense.data.T.copy())
            want = K.matmul_q(x, wt, q_i)
            if not (np.array_equal(got.data, want.data) and got.q == want.q):
                mism += 1
        report(mism == 0, "criterion 3: sparse == dense multiply",
               f"1000 matrices, {mism} mismatches")


# ---------------------------------------------------------------------------
# 4. published sparsity ratios
# ---------------------------------------------------------------------------

class TestCriterion4SparsityRatios:
    # (dense MAC/pix, executed MAC/pix, pixels, rows, printed density)
    CASES = [
        (108300, 7773, 16, 1425, "7.2"),
        (33155, 2624, 64, 1745, "7.9"),
        (15627, 1411, 256, 15627, "9.0"),
    ]

    def build(self, dense_total, sparse_total, rows):
        cols = dense_total // rows
        assert rows * cols == dense_total
        align = 8
        n_runs = sparse_total // align
        assert n_runs * align == sparse_total
        runs = []
        per_row = n_runs // rows
        extra = n_runs % rows
        slots = cols // align
        for r in range(rows):
            want = per_row + (1 if r < extra else 0)
            assert want <= slots
            for s in range(want):
                runs.append(Run(r, s * align,
                                np.ones(align, dtype=np.int16)))
        return SparsePackedMatrix(rows, cols, align, I16, 0, runs)

    def test_density_reproduces_printed_figures(self):
        results = []
        for dense_pp, sparse_pp, pix, rows, want in self.CASES:
            m = self.build(dense_pp * pix, sparse_pp * pix, rows)
            assert sparse_mac_count(m) == sparse_pp * pix
            assert dense_mac_count(m) == dense_pp * pix
            got = f"{float(density(m)) * 100:.1f}"
            results.append((got, want))
        ok = all(g == w for g, w in results)
        report(ok, "criterion 4: published density ratios",
               " ".join(f"{g}%~{w}%" for g, w in results))


# ---------------------------------------------------------------------------
# 5. worst-case intra complexity
# ---------------------------------------------------------------------------

class TestCriterion5IntraComplexity:
    def test_reference_4x4_model(self):
        g = build_intra_model((4, 4), I16, sparse=True)
        k = kmac_per_pixel(g, 16)
        ok = abs(k - 7.7) / 7.7 <= 0.10
        report(ok, "criterion 5: 4x4 intra model complexity",
               f"{k:.3f} kMAC/pixel vs 7.7 +-10%")


# ---------------------------------------------------------------------------
# 6. scaling round trip, exhaustive
# ---------------------------------------------------------------------------

class TestCriterion6RoundTrip:
    def test_exhaustive_samples_and_means(self):
        samples = np.arange(1024, dtype=np.float64)
        mismatches = 0
        for mu in (0, 512, 1023):
            resid = (samples - mu) * 0.25
            back = postprocess_float(resid, mu, 10, 32, 32).reshape(-1)
            mismatches += int((back != samples).sum())
        report(mismatches == 0, "criterion 6: scale/unscale round trip",
               f"3x1024 sample values, {mismatches} mismatches")


# ---------------------------------------------------------------------------
# 7. shape-routing table conformance
# ---------------------------------------------------------------------------

class TestCriterion7RoutingTable:
    EXPECTED = {
        (4, 4): (1, 1, False, (4, 4)), (4, 8): (1, 1, False, (4, 8)),
        (8, 4): (1, 1, True, (4, 8)), (4, 16): (1, 1, False, (4, 16)),
        (16, 4): (1, 1, True, (4, 16)), (4, 32): (1, 1, False, (4, 32)),
        (32, 4): (1, 1, True, (4, 32)), (8, 8): (1, 1, False, (8, 8)),
        (8, 16): (1, 1, False, (8, 16)), (16, 8): (1, 1, True, (8, 16)),
        (8, 32): (2, 1, False, (8, 16)), (32, 8): (1, 2, True, (8, 16)),
        (16, 16): (1, 1, False, (16, 16)), (16, 32): (2, 1, False, (16, 16)),
        (32, 16): (1, 2, False, (16, 16)), (32, 32): (2, 2, False, (16, 16)),
        (64, 64): (4, 4, False, (16, 16)),
    }

    def test_rows_and_rejections(self):
        t0 = time.time()
        bad = 0
        for (h, w), want in self.EXPECTED.items():
            r = transform_rule(h, w)
            if (r.gamma, r.delta, r.transpose, r.net_shape) != want:
                bad += 1
        for h in range(4, 65):
            for w in range(4, 65):
                if ((h, w) in self.EXPECTED) != (transform_rule(h, w) is not None):
                    bad += 1
        frame = np.random.default_rng(7).integers(0, 1024, (200, 200))
        for (h, w) in self.EXPECTED:
            ctx = extract_context(frame, 64, 64, h, w, context_spec(h, w))
            t = apply_transform(ctx, transform_rule(h, w))
            if t.spec.n_a > 8 or t.spec.n_l > 8:
                bad += 1
        dt = time.time() - t0
        report(bad == 0 and dt < 1.0,
               "criterion 7: shape-routing table conformance",
               f"{len(self.EXPECTED)} rows, all other shapes rejected, {dt:.2f}s")


# ---------------------------------------------------------------------------
# 8. signaling truth tables
# ---------------------------------------------------------------------------

class TestCriterion8Signaling:
    def test_exhaustive(self):
        bad = 0
        for h in range(4, 65):
            for w in range(4, 65):
                inside = (h, w) in TRANSFORM_TABLE
                for flag in (False, True):
                    s = signal_luma(h, w, flag)
                    want_path = SignalPath.NN_MODE if (inside and flag) \
                        else SignalPath.REGULAR
                    if s.path is not want_path or s.flag_present != inside:
                        bad += 1
        for col in (False, True):
            for fam in (False, True):
                for flag in (False, True):
                    for dm in (False, True):
                        got = signal_chroma(col, fam, flag, dm)
                        if col and dm:
                            want = ChromaMode.NN_MODE if fam else ChromaMode.PLANAR
                        elif (not col) and fam and flag:
                            want = ChromaMode.NN_MODE
                        else:
                            want = ChromaMode.REGULAR
                        if got is not want:
                            bad += 1
        report(bad == 0, "criterion 8: signaling truth tables",
               f"{61 * 61 * 2} luma + 16 chroma cases, {bad} mismatches")


# ---------------------------------------------------------------------------
# 9. residual scaling optimality and algebra
# ---------------------------------------------------------------------------

class TestCriterion9ResidualScaling:
    def test_thousand_plane_triples(self):
        rng = np.random.default_rng(9009)
        grid = [Fraction(i, 64) for i in range(-128, 129)]
        dominated = 0
        algebra_bad = 0
        for _ in range(1000):
            orig = rng.integers(0, 1024, (4, 4))
            db = rng.integers(0, 1024, (4, 4))
            nn = db + rng.integers(-40, 41, (4, 4))
            w = derive_scale(orig, nn, db)
            d = nn.astype(object) - db.astype(object)
            e = orig.astype(object) - db.astype(object)
            A = int((e * e).sum()); B = int((e * d).sum()); C = int((d * d).sum())

            def sse(om):
                return A - 2 * om * B + om * om * C

            best = sse(w)
            if any(sse(om) < best for om in grid):
                dominated += 1
            lhs = w * (nn.astype(object) - db.astype(object)) + db.astype(object)
            rhs = w * nn.astype(object) + (1 - w) * db.astype(object)
            if not (lhs == rhs).all():
                algebra_bad += 1
        degenerate = derive_scale(np.ones((3, 3)), np.ones((3, 3)) * 4,
                                  np.ones((3, 3)) * 4)
        report(dominated == 0 and algebra_bad == 0 and degenerate == 0,
               "criterion 9: residual scaling",
               f"1000 triples; grid dominated, both formulas equal, "
               f"degenerate -> {degenerate}")


# ---------------------------------------------------------------------------
# 10. parameter selection against an exhaustive oracle
# ---------------------------------------------------------------------------

class TestCriterion10ParameterSelection:
    def test_two_region_threshold_and_oracle(self):
        from test_loopfilter import brute_force_best

        rng = np.random.default_rng(1010)
        h = w = 32
        gain = 0.004
        rec = rng.integers(200, 800, (h, w))
        g = build_filter_model("qp-linear", patch=16, border=8, qp_gain=gain)
        cands = candidate_list(32, "low")
        assert cands == (32, 27, 22)
        assert candidate_list(32, "high") == (32, 27, 37)
        fi = FilterInputs(rec, rec, np.zeros((h, w), dtype=np.int64),
                          np.zeros((h, w), dtype=np.int64))
        shift = [round(gain * q / 64 * 1023) for q in cands]
        orig = rec.copy()
        orig[:, : w // 2] += shift[0]
        orig[:, w // 2:] += shift[2]
        filtered = [apply_nn_filter(fi, g, p) for p in cands]
        zero_costs = brute_force_best(orig, rec, filtered, 0.0, 16)
        gap = min(zero_costs[:4]) - zero_costs[4]
        lam_star = gap / (4 * 3)  # 4 blocks, at most 3 extra bits each
        low = select_params(orig, rec, rec, fi, g, cands, lam_star / 4, 16)
        high = select_params(orig, rec, rec, fi, g, cands, lam_star * 400, 16)
        oracle_ok = True
        for lam in (0.0, 1.0, lam_star, 1e6):
            dec = select_params(orig, rec, rec, fi, g, cands, lam, 16)
            want = brute_force_best(orig, rec, filtered, lam, 16)
            if dec.costs != pytest.approx(want) or \
                    dec.cost != pytest.approx(min(want)):
                oracle_ok = False
        ok = (low.mode == "per-block" and high.mode in ("uniform", "off")
              and oracle_ok)
        report(ok, "criterion 10: parameter selection",
               f"per-block below lam*={lam_star:.1f}, {high.mode} above; "
               f"oracle matched")


# ---------------------------------------------------------------------------
# 11. static quantization fidelity
# ---------------------------------------------------------------------------

class TestCriterion11QuantizationFidelity:
    def test_fifty_random_graphs(self):
        worst = 0.0
        min_q = 99
        bad = 0
        for seed in range(50):
            rng = np.random.default_rng(4000 + seed)
            if seed % 2 == 0:
                layers = int(rng.integers(1, 6))
                g = S.build_random_mlp(np.random.default_rng(seed),
                                       n_layers=layers)
                in_dims = (1, 8)
                q_in = 14
            else:
                layers = int(rng.integers(1, 4))
                g = S.build_random_cnn(np.random.default_rng(seed),
                                       n_layers=layers)
                in_dims = (1, 6, 6, 3)
                q_in = 13
            calib = [S.float_tensor(rng, in_dims) for _ in range(3)]
            qg = static_quantize(g, calib, I16, input_q=q_in)
            pred = predict_quantizers(qg)
            from qnn.graph import OpKind

            latents = [pred[n.id] for n in qg.nodes
                       if n.kind is not OpKind.Const] + [q_in]
            min_q = min(min_q, min(latents))
            held = S.float_tensor(rng, in_dims, scale=0.9)
            xq = Tensor(held.dims, I16, q_in,
                        np.rint(held.data * (1 << q_in)).astype(np.int16))
            got = dequantize(infer(qg, [xq])[0])
            ref = infer(g, [held])[0]
            err = float(np.abs(got.data - ref.data).max())
            worst = max(worst, err)
            if err > 2 ** -6 or min(latents) < 10:
                bad += 1
        report(bad == 0, "criterion 11: static quantization fidelity",
               f"50 graphs, worst err {worst:.2e} <= 2^-6, min latent q {min_q}")
