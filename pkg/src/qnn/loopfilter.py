"""Control machinery around the residual-learning loop filter.

The filter model predicts a residual from a stack of aligned planes
(reconstruction, prediction, boundary strength, a constant QP plane, and
per-sample prediction types; plus two collocated planes in temporal mode).
The harness tiles the picture into core patches with a reusable border,
adds the residual back onto the unfiltered reconstruction, selects a QP
parameter per picture or per block by rate-distortion cost, and blends
the result with the deblocked plane through a least-squares scale.

Plane value conventions (model I/O is normalized):
    sample planes / (2**b - 1), QP / 64, boundary strength / 2,
    prediction type / 2; the model's residual output is scaled back by
    (2**b - 1) and rounded to integer sample units.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import MissingPlane, ShapeMismatch
from .graph import ExecutionContext, Graph
from .tensor import ElementWidth, Tensor, quantize_float

OMEGA_STEP = Fraction(1, 64)


@dataclass
class FilterInputs:
    """Aligned planes feeding the filter; chroma carries no prediction-type
    plane, collocated planes exist only for high temporal layers."""

    rec: np.ndarray
    pred: np.ndarray
    bs: np.ndarray
    ipb: np.ndarray | None = None
    col0: np.ndarray | None = None
    col1: np.ndarray | None = None
    bitdepth: int = 10

    def planes(self, param_qp: int) -> list[np.ndarray]:
        peak = float((1 << self.bitdepth) - 1)
        out = [
            self.rec.astype(np.float64) / peak,
            self.pred.astype(np.float64) / peak,
            self.bs.astype(np.float64) / 2.0,
            np.full(self.rec.shape, param_qp / 64.0),
        ]
        if self.ipb is not None:
            out.append(self.ipb.astype(np.float64) / 2.0)
        if self.col0 is not None or self.col1 is not None:
            if self.col0 is None or self.col1 is None:
                raise MissingPlane("temporal mode needs both collocated planes")
            out.append(self.col0.astype(np.float64) / peak)
            out.append(self.col1.astype(np.float64) / peak)
        for p in out[1:]:
            if p.shape != out[0].shape:
                raise ShapeMismatch("filter input planes disagree in size")
        return out


def candidate_list(q: int, layer: str) -> tuple[int, int, int]:
    """Three QP parameters: {q, q-5, q-10} for low temporal layers,
    {q, q-5, q+5} for high ones (stronger filtering high up)."""
    if layer == "low":
        return (q, q - 5, q - 10)
    if layer == "high":
        return (q, q - 5, q + 5)
    raise ValueError(f"layer must be 'low' or 'high', got {layer!r}")


def temporal_gate(tid: int) -> str:
    """Collocated-plane filtering only for the three highest layers."""
    if tid < 0:
        raise ValueError("temporal layer index must be non-negative")
    return "temporal" if tid >= 3 else "regular"


def granularity(width: int, height: int, bitrate: str) -> int:
    """On/off and parameter-selection block size: coarser for larger
    pictures, finer when bits are cheap."""
    if bitrate not in ("low", "high"):
        raise ValueError(f"bitrate must be 'low' or 'high', got {bitrate!r}")
    if height >= 2160:
        return 256
    if height >= 1080:
        return 128 if bitrate == "low" else 64
    return 64 if bitrate == "low" else 32


def _thread_count() -> int:
    try:
        return max(1, int(os.environ.get("QNN_THREADS", "1")))
    except ValueError:
        return 1


def apply_nn_filter(
    inputs: FilterInputs, g: Graph, param_qp: int, border: int = 8,
) -> np.ndarray:
    """Residual-learning pass: filtered = clamp(rec + residual(inputs)).

    The model fixes the patch size through its input dims; the picture is
    tiled into (side - 2*border) cores with edge-replicated context, and
    only each core is written back.  Patch inferences are independent;
    QNN_THREADS > 1 runs them concurrently without changing the output.
    """
    h, w = inputs.rec.shape
    in_dims = g.inputs[0].dims
    if len(in_dims) != 4:
        raise ShapeMismatch(f"filter model input must be NHWC, got {in_dims}")
    side, chans = in_dims[1], in_dims[3]
    core = side - 2 * border
    if core <= 0:
        raise ShapeMismatch(f"patch side {side} too small for border {border}")
    planes = inputs.planes(param_qp)
    if len(planes) != chans:
        raise MissingPlane(
            f"model wants {chans} input planes, assembly provides {len(planes)}"
        )
    gh = -(-h // core) * core
    gw = -(-w // core) * core
    stack = np.stack(planes, axis=-1)
    padded = np.pad(
        stack, ((border, border + gh - h), (border, border + gw - w), (0, 0)),
        mode="edge",
    )
    peak = (1 << inputs.bitdepth) - 1
    q_in = g.inputs[0].q if g.width.is_integer else 0

    tiles = [(by, bx) for by in range(gh // core) for bx in range(gw // core)]

    def run(tile, ctx=None):
        by, bx = tile
        win = padded[by * core : by * core + side, bx * core : bx * core + side, :]
        if g.width.is_integer:
            data = quantize_float(win, q_in, g.width)
            t = Tensor((1, side, side, chans), g.width, q_in, data[None])
        else:
            t = Tensor((1, side, side, chans), ElementWidth.float32, 0,
                       win.astype(np.float32)[None])
        out = (ctx or ExecutionContext(g)).run([t])[0]
        res = out.data.reshape(side, side, -1)[..., 0]
        if g.width.is_integer:
            res = res.astype(np.float64) / (1 << out.q)
        return res[border : border + core, border : border + core]

    residual = np.zeros((gh, gw), dtype=np.float64)
    workers = _thread_count()
    if workers > 1 and len(tiles) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda t: run(t, ExecutionContext(g)), tiles))
    else:
        ctx = ExecutionContext(g)
        results = [run(t, ctx) for t in tiles]
    for (by, bx), res in zip(tiles, results):
        residual[by * core : (by + 1) * core, bx * core : (bx + 1) * core] = res
    residual = residual[:h, :w]
    filtered = inputs.rec.astype(np.int64) + np.rint(residual * peak).astype(np.int64)
    return np.clip(filtered, 0, peak)


# ---------------------------------------------------------------------------
# residual scaling
# ---------------------------------------------------------------------------

def derive_scale(orig: np.ndarray, r_nn: np.ndarray, r_db: np.ndarray) -> Fraction:
    """Exact least-squares blend factor for orig ~ w*(r_nn-r_db) + r_db.

    A zero-energy residual (r_nn == r_db) degenerates to 0: the output is
    then the deblocked plane unchanged.
    """
    if orig.shape != r_nn.shape or orig.shape != r_db.shape:
        raise ShapeMismatch("scale derivation planes disagree in size")
    d = r_nn.astype(np.int64) - r_db.astype(np.int64)
    e = orig.astype(np.int64) - r_db.astype(np.int64)
    den = int((d * d).sum())
    if den == 0:
        return Fraction(0)
    num = int((e * d).sum())
    return Fraction(num, den)


def quantize_scale(omega: Fraction, step: Fraction = OMEGA_STEP) -> Fraction:
    """Snap a scale factor to the signaling grid (default 1/64 steps)."""
    return Fraction(round(omega / step)) * step


def apply_scale(
    r_nn: np.ndarray, r_db: np.ndarray, omega, bitdepth: int = 10,
) -> np.ndarray:
    """clamp(omega * (r_nn - r_db) + r_db); rational omegas are applied in
    exact integer arithmetic with half-away-from-zero rounding."""
    if r_nn.shape != r_db.shape:
        raise ShapeMismatch("scaled planes disagree in size")
    peak = (1 << bitdepth) - 1
    diff = r_nn.astype(np.int64) - r_db.astype(np.int64)
    if isinstance(omega, Fraction):
        n = diff * omega.numerator
        q = omega.denominator
        scaled = np.sign(n) * ((2 * np.abs(n) + q) // (2 * q))
        out = r_db.astype(np.int64) + scaled
    else:
        out = r_db.astype(np.int64) + np.rint(float(omega) * diff).astype(np.int64)
    return np.clip(out, 0, peak)


def pipeline_order(
    r_nn: np.ndarray, r_db: np.ndarray, omega, bitdepth: int = 10, alf_hook=None,
) -> np.ndarray:
    """Deblocking and the residual filter run in parallel and blend; the
    sample-offset stage is skipped; later adaptive filters hook in after."""
    combined = apply_scale(r_nn, r_db, omega, bitdepth)
    return alf_hook(combined) if alf_hook is not None else combined


# ---------------------------------------------------------------------------
# parameter selection
# ---------------------------------------------------------------------------

@dataclass
class FilterDecision:
    mode: str                      # "off" | "uniform" | "per-block"
    param_index: int | None        # 1-based candidate index for "uniform"
    block_map: np.ndarray | None   # per-block 0=off / candidate index
    omega: Fraction
    costs: list[float]
    block_size: int
    params: tuple

    @property
    def cost(self) -> float:
        idx = {"off": 0}.get(self.mode)
        if idx is None:
            idx = self.param_index if self.mode == "uniform" else 4
        return self.costs[idx]


def _sse(a: np.ndarray, b: np.ndarray) -> int:
    d = a.astype(np.int64) - b.astype(np.int64)
    return int((d * d).sum())


def default_lambda(qp: int) -> float:
    """Conventional rate-distortion multiplier for a given QP."""
    return 0.57 * 2.0 ** ((qp - 12) / 3.0)


PARAM_BITS = 2  # ceil(log2(3)) bits to signal one of three candidates


def select_params(
    orig: np.ndarray,
    r_no: np.ndarray,
    r_db: np.ndarray,
    inputs: FilterInputs,
    g: Graph,
    candidates,
    lam: float,
    block_size: int,
    all_intra: bool = False,
    border: int = 8,
) -> FilterDecision:
    """Pick between filter-off, one parameter everywhere, and a per-block
    choice, by SSE + lambda * signaled bits.

    Bits: picture-off spends nothing; a uniform parameter spends one
    on/off flag plus the candidate index; each block in per-block mode
    spends its own flag plus the index when on.  Ties break toward the
    lower cost index.  All-intra keeps only the sequence parameter and the
    on/off control.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    params = (candidates[0],) if all_intra else tuple(candidates)
    param_bits = 0 if all_intra else PARAM_BITS
    filtered = [apply_nn_filter(inputs, g, p, border) for p in params]
    h, w = orig.shape
    bs = block_size
    grid = [(by, bx) for by in range(0, h, bs) for bx in range(0, w, bs)]

    def block_sse(plane, by, bx):
        return _sse(orig[by : by + bs, bx : bx + bs], plane[by : by + bs, bx : bx + bs])

    costs = [float(_sse(orig, r_no))]  # all off, nothing signaled
    for f in filtered:
        costs.append(_sse(orig, f) + lam * (1 + param_bits))
    while len(costs) < 4:
        costs.append(float("inf"))  # unused candidate slots in all-intra
    block_map = np.zeros((-(-h // bs), -(-w // bs)), dtype=np.int32)
    per_block_cost = 0.0
    for by, bx in grid:
        best = block_sse(r_no, by, bx) + lam * 1
        best_idx = 0
        for i, f in enumerate(filtered):
            c = block_sse(f, by, bx) + lam * (1 + param_bits)
            if c < best:
                best, best_idx = c, i + 1
        block_map[by // bs, bx // bs] = best_idx
        per_block_cost += best
    costs.append(per_block_cost)

    order = np.argsort([costs[0], costs[1], costs[2], costs[3], costs[4]],
                       kind="stable")
    winner = int(order[0])
    if winner == 0:
        selected = r_no
        decision = FilterDecision("off", None, None, Fraction(0), costs, bs, params)
    elif winner < 4:
        selected = filtered[winner - 1]
        decision = FilterDecision("uniform", winner, None, Fraction(0), costs, bs,
                                  params)
    else:
        selected = np.zeros_like(r_no)
        for by, bx in grid:
            idx = block_map[by // bs, bx // bs]
            src = r_no if idx == 0 else filtered[idx - 1]
            selected[by : by + bs, bx : bx + bs] = src[by : by + bs, bx : bx + bs]
        decision = FilterDecision("per-block", None, block_map, Fraction(0), costs,
                                  bs, params)
    if decision.mode != "off":
        decision.omega = quantize_scale(derive_scale(orig, selected, r_db))
    return decision
