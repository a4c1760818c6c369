"""Block intra prediction from an L-shaped reference-sample context.

The predictor network for a block of shape (h, w) consumes a flattened,
mean-removed context of n_a rows above and n_l columns left of the block
(with e_w / e_h extensions), and emits the predicted block plus three side
outputs: the index of the closest conventional mode (for most-probable-mode
lists) and two secondary-transform group codes.  Shapes without their own
network reach one through context down-sampling and/or transposition; the
transformed context never exceeds 8 rows or 8 columns.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import json

import numpy as np

from .errors import MissingModel, OutOfFrame, ShapeMismatch
from .graph import Graph, infer
from .model_io import load_model_file
from .tensor import ElementWidth, Tensor, clip

# Shapes with their own trained network.
NATIVE_SHAPES = (
    (4, 4), (4, 8), (4, 16), (4, 32), (8, 8), (8, 16), (16, 16),
)


@dataclass(frozen=True)
class TransformRule:
    gamma: int        # horizontal down-sample factor
    delta: int        # vertical down-sample factor
    transpose: bool
    net_shape: tuple  # (h, w) of the network that does the prediction


# (h, w) -> rule; shapes absent from this table cannot use the mode.
TRANSFORM_TABLE: dict[tuple, TransformRule] = {
    (4, 4):   TransformRule(1, 1, False, (4, 4)),
    (4, 8):   TransformRule(1, 1, False, (4, 8)),
    (8, 4):   TransformRule(1, 1, True, (4, 8)),
    (4, 16):  TransformRule(1, 1, False, (4, 16)),
    (16, 4):  TransformRule(1, 1, True, (4, 16)),
    (4, 32):  TransformRule(1, 1, False, (4, 32)),
    (32, 4):  TransformRule(1, 1, True, (4, 32)),
    (8, 8):   TransformRule(1, 1, False, (8, 8)),
    (8, 16):  TransformRule(1, 1, False, (8, 16)),
    (16, 8):  TransformRule(1, 1, True, (8, 16)),
    (8, 32):  TransformRule(2, 1, False, (8, 16)),
    (32, 8):  TransformRule(1, 2, True, (8, 16)),
    (16, 16): TransformRule(1, 1, False, (16, 16)),
    (16, 32): TransformRule(2, 1, False, (16, 16)),
    (32, 16): TransformRule(1, 2, False, (16, 16)),
    (32, 32): TransformRule(2, 2, False, (16, 16)),
    (64, 64): TransformRule(4, 4, False, (16, 16)),
}

# All shapes the mode handles, natively or through a transformation.
ALLOWED_SHAPES = tuple(sorted(TRANSFORM_TABLE))

REP_HEAD = 67   # conventional-mode indices 0..66
GRP_HEAD = 8    # 4 secondary-transform sets x transpose flag


def transform_rule(h: int, w: int) -> TransformRule | None:
    """Rule routing shape (h, w) to a network, or None when disallowed."""
    return TRANSFORM_TABLE.get((h, w))


@dataclass(frozen=True)
class ContextSpec:
    n_a: int   # reference rows above
    n_l: int   # reference columns left
    e_h: int   # extra rows below the 2h left span
    e_w: int   # extra columns right of the 2w top span

    def flat_len(self, h: int, w: int) -> int:
        return self.n_a * (self.n_l + 2 * w + self.e_w) + (2 * h + self.e_h) * self.n_l


def base_context_value(net_shape: tuple) -> int:
    """Spec value for a native network shape: 4 around thin blocks, else 8."""
    return 4 if min(net_shape) == 4 else 8


def context_spec(h: int, w: int, base: int | None = None) -> ContextSpec:
    """Source-shape context spec: the target network's spec scaled back up
    by the down-sampling factors, so the transformed context lands exactly
    on the network's layout (and never exceeds 8 rows / 8 columns)."""
    rule = transform_rule(h, w)
    if rule is None:
        raise ShapeMismatch(f"no context layout for disallowed shape {(h, w)}")
    v = base if base is not None else base_context_value(rule.net_shape)
    return ContextSpec(
        n_a=v * rule.delta, n_l=v * rule.gamma,
        e_h=v * rule.delta, e_w=v * rule.gamma,
    )


def _mean_half_away(total: int, count: int) -> int:
    """Integer mean of non-negative samples, half rounded away from zero."""
    return (total + count // 2) // count


@dataclass
class IntraContext:
    """L-shaped reference region: an above strip (which includes the
    top-left corner) and a left strip below it, with availability masks."""

    h: int
    w: int
    spec: ContextSpec
    above: np.ndarray
    left: np.ndarray
    above_avail: np.ndarray
    left_avail: np.ndarray
    bitdepth: int = 10
    mu: int = field(init=False)

    def __post_init__(self):
        n = int(self.above_avail.sum()) + int(self.left_avail.sum())
        if n == 0:
            self.mu = 1 << (self.bitdepth - 1)
            return
        total = int(self.above[self.above_avail].sum()) + int(
            self.left[self.left_avail].sum()
        )
        self.mu = _mean_half_away(total, n)

    @property
    def flat_len(self) -> int:
        return self.above.size + self.left.size


def extract_context(
    frame: np.ndarray, x: int, y: int, h: int, w: int,
    spec: ContextSpec | None = None, bitdepth: int = 10, avail_fn=None,
) -> IntraContext:
    """Copy the reference region around block (x, y); samples beyond the
    frame (or rejected by avail_fn) are flagged unavailable.

    Raises OutOfFrame when x < n_l or y < n_a: there the conventional
    PLANAR prediction replaces this mode entirely.
    """
    if spec is None:
        spec = context_spec(h, w)
    if x < spec.n_l or y < spec.n_a:
        raise OutOfFrame(
            f"block at ({x},{y}) needs {spec.n_l} columns / {spec.n_a} rows of context"
        )
    fh, fw = frame.shape
    if x + w > fw or y + h > fh:
        raise ShapeMismatch(f"block {(h, w)} at ({x},{y}) exceeds frame {(fh, fw)}")
    aw = spec.n_l + 2 * w + spec.e_w
    lh = 2 * h + spec.e_h
    above = np.zeros((spec.n_a, aw), dtype=np.int64)
    above_avail = np.zeros((spec.n_a, aw), dtype=bool)
    left = np.zeros((lh, spec.n_l), dtype=np.int64)
    left_avail = np.zeros((lh, spec.n_l), dtype=bool)
    for r in range(spec.n_a):
        fy = y - spec.n_a + r
        for c in range(aw):
            fx = x - spec.n_l + c
            ok = 0 <= fy < fh and 0 <= fx < fw
            if ok and avail_fn is not None:
                ok = bool(avail_fn(fy, fx))
            if ok:
                above[r, c] = frame[fy, fx]
                above_avail[r, c] = True
    for r in range(lh):
        fy = y + r
        for c in range(spec.n_l):
            fx = x - spec.n_l + c
            ok = 0 <= fy < fh and 0 <= fx < fw
            if ok and avail_fn is not None:
                ok = bool(avail_fn(fy, fx))
            if ok:
                left[r, c] = frame[fy, fx]
                left_avail[r, c] = True
    return IntraContext(h, w, spec, above, left, above_avail, left_avail, bitdepth)


def _downsample(values: np.ndarray, avail: np.ndarray, dy: int, dx: int):
    """Window means over available samples; a window with no available
    sample stays unavailable (value 0)."""
    if dy == 1 and dx == 1:
        return values.copy(), avail.copy()
    rows, cols = values.shape
    out = np.zeros((rows // dy, cols // dx), dtype=np.int64)
    out_avail = np.zeros((rows // dy, cols // dx), dtype=bool)
    for r in range(rows // dy):
        for c in range(cols // dx):
            win = values[r * dy : (r + 1) * dy, c * dx : (c + 1) * dx]
            w_av = avail[r * dy : (r + 1) * dy, c * dx : (c + 1) * dx]
            n = int(w_av.sum())
            if n:
                out[r, c] = _mean_half_away(int(win[w_av].sum()), n)
                out_avail[r, c] = True
    return out, out_avail


def apply_transform(ctx: IntraContext, rule: TransformRule) -> IntraContext:
    """Down-sample by (gamma, delta), then transpose if the rule says so."""
    s = ctx.spec
    above, above_avail = _downsample(ctx.above, ctx.above_avail, rule.delta, rule.gamma)
    left, left_avail = _downsample(ctx.left, ctx.left_avail, rule.delta, rule.gamma)
    h, w = ctx.h // rule.delta, ctx.w // rule.gamma
    spec = ContextSpec(s.n_a // rule.delta, s.n_l // rule.gamma,
                       s.e_h // rule.delta, s.e_w // rule.gamma)
    if rule.transpose:
        # the above strip holds corner + top; the transpose swaps roles
        corner = above[:, : spec.n_l]
        top = above[:, spec.n_l :]
        corner_avail = above_avail[:, : spec.n_l]
        top_avail = above_avail[:, spec.n_l :]
        above_t = np.hstack([corner.T, left.T])
        above_avail_t = np.hstack([corner_avail.T, left_avail.T])
        left_t = top.T
        left_avail_t = top_avail.T
        spec = ContextSpec(spec.n_l, spec.n_a, spec.e_w, spec.e_h)
        h, w = w, h
        above, above_avail = above_t, above_avail_t
        left, left_avail = left_t, left_avail_t
    return IntraContext(h, w, spec, above, left, above_avail, left_avail, ctx.bitdepth)


def invert_transform(block: np.ndarray, rule: TransformRule) -> np.ndarray:
    """Transpose back first, then replicate samples up by (delta, gamma)."""
    out = block.T if rule.transpose else block
    if rule.delta > 1:
        out = np.repeat(out, rule.delta, axis=0)
    if rule.gamma > 1:
        out = np.repeat(out, rule.gamma, axis=1)
    return out


def preprocess(
    ctx: IntraContext, width: ElementWidth = ElementWidth.float32,
    input_q: int | None = None,
) -> Tensor:
    """Mean-removed, scaled, zero-filled, flattened context vector [1, L].

    Float path scales by 1 / 2**(b-8); integer paths scale by
    2**(Q_in - b + 8) and land exactly on quantizer Q_in.
    """
    b = ctx.bitdepth
    parts = []
    masks = []
    for strip, avail in ((ctx.above, ctx.above_avail), (ctx.left, ctx.left_avail)):
        parts.append(strip.reshape(-1))
        masks.append(avail.reshape(-1))
    flat = np.concatenate(parts)
    mask = np.concatenate(masks)
    centered = np.where(mask, flat - ctx.mu, 0)
    if not width.is_integer:
        rho = np.float32(1.0 / (1 << (b - 8)))
        data = centered.astype(np.float32) * rho
        return Tensor((1, flat.size), ElementWidth.float32, 0, data[None, :])
    from .quantize import DEFAULT_INPUT_Q

    q_in = DEFAULT_INPUT_Q[width] if input_q is None else input_q
    exp = q_in - b + 8
    if exp >= 0:
        vals = centered << exp
    else:
        half = 1 << (-exp - 1)
        vals = (centered + half) >> (-exp)
    data = clip(vals, width).astype(width.dtype)
    return Tensor((1, flat.size), width, q_in, data[None, :])


def postprocess_float(y: np.ndarray, mu: int, bitdepth: int, h: int, w: int) -> np.ndarray:
    """Reshape, divide by the scale, add the mean, clamp to sample range."""
    if y.size != h * w:
        raise ShapeMismatch(f"residual length {y.size} != {h}x{w}")
    block = y.reshape(h, w).astype(np.float64) * float(1 << (bitdepth - 8)) + mu
    return np.clip(block, 0, (1 << bitdepth) - 1)


def postprocess_int(y: Tensor, mu: int, bitdepth: int, h: int, w: int) -> np.ndarray:
    """Integer twin of the float postprocessing; the network-output shift
    is undone with round-half-up before the mean is added back."""
    if y.size != h * w:
        raise ShapeMismatch(f"residual length {y.size} != {h}x{w}")
    v = y.data.reshape(h, w).astype(np.int64)
    net = (bitdepth - 8) - y.q
    if net >= 0:
        v = v << net
    else:
        half = 1 << (-net - 1)
        v = (v + half) >> (-net)
    return np.clip(v + mu, 0, (1 << bitdepth) - 1)


# ---------------------------------------------------------------------------
# prediction outputs and model sets
# ---------------------------------------------------------------------------

@dataclass
class PredictionOutputs:
    block: np.ndarray          # h x w predicted samples
    rep_index: int             # closest conventional mode, 0..66
    grp_index1: int            # transform-set/transpose code, 0..7
    grp_index2: int


@dataclass
class PlanarFallback:
    """Marker: the context left the frame, PLANAR replaces this mode."""


@dataclass
class IntraModelSet:
    """Per-shape prediction graphs plus their layout metadata."""

    models: dict[tuple, Graph]
    base: dict[tuple, int] = field(default_factory=dict)
    bitdepth: int = 10

    @classmethod
    def from_dir(cls, path) -> "IntraModelSet":
        """Load nn_intra_<h>x<w>.smf1 files (optional .json sidecars may
        override the context value and bit depth)."""
        path = Path(path)
        models = {}
        base = {}
        bitdepth = 10
        for f in sorted(path.glob("nn_intra_*.smf1")):
            stem = f.stem.replace("nn_intra_", "")
            h, w = (int(v) for v in stem.split("x"))
            models[(h, w)] = load_model_file(f)
            side = f.with_suffix(".json")
            if side.exists():
                meta = json.loads(side.read_text())
                if "context" in meta:
                    base[(h, w)] = int(meta["context"])
                if "bitdepth" in meta:
                    bitdepth = int(meta["bitdepth"])
        return cls(models, base, bitdepth)

    def graph_for(self, net_shape: tuple) -> Graph:
        if net_shape not in self.models:
            raise MissingModel(f"no model for network shape {net_shape}")
        return self.models[net_shape]

    def base_for(self, net_shape: tuple) -> int:
        return self.base.get(net_shape, base_context_value(net_shape))


def split_outputs(out: Tensor, h: int, w: int):
    """Network output layout: residual | rep logits | two group heads."""
    flat = out.data.reshape(-1)
    n = h * w
    want = n + REP_HEAD + 2 * GRP_HEAD
    if flat.size != want:
        raise ShapeMismatch(f"output length {flat.size}, layout wants {want}")
    y = flat[:n]
    rep = int(np.argmax(flat[n : n + REP_HEAD]))
    g1 = int(np.argmax(flat[n + REP_HEAD : n + REP_HEAD + GRP_HEAD]))
    g2 = int(np.argmax(flat[n + REP_HEAD + GRP_HEAD : want]))
    return y, rep, g1, g2


def predict_block(
    frame: np.ndarray, x: int, y: int, h: int, w: int, models: IntraModelSet,
    avail_fn=None,
):
    """Full pipeline: extract, transform, preprocess, infer, split,
    postprocess, invert.  Returns PredictionOutputs, or PlanarFallback
    when the context starts outside the frame."""
    rule = transform_rule(h, w)
    if rule is None:
        raise MissingModel(f"shape {(h, w)} is not handled by this mode")
    g = models.graph_for(rule.net_shape)
    base = models.base_for(rule.net_shape)
    spec = context_spec(h, w, base)
    try:
        ctx = extract_context(frame, x, y, h, w, spec, models.bitdepth, avail_fn)
    except OutOfFrame:
        return PlanarFallback()
    tctx = apply_transform(ctx, rule)
    nh, nw = rule.net_shape
    if (tctx.h, tctx.w) != rule.net_shape:
        raise ShapeMismatch(
            f"transformed block {(tctx.h, tctx.w)} != network shape {rule.net_shape}"
        )
    q_in = g.inputs[0].q if g.width.is_integer else None
    vec = preprocess(tctx, g.width, q_in)
    out = infer(g, [vec])[0]
    y_net, rep, g1, g2 = split_outputs(out, nh, nw)
    if g.width.is_integer:
        y_t = Tensor((y_net.size,), g.width, out.q, y_net)
        block_net = postprocess_int(y_t, tctx.mu, tctx.bitdepth, nh, nw)
    else:
        block_net = postprocess_float(y_net, tctx.mu, tctx.bitdepth, nh, nw)
        block_net = np.rint(block_net)
    block = invert_transform(block_net, rule).astype(np.int64)
    return PredictionOutputs(block, rep, g1, g2)


# ---------------------------------------------------------------------------
# signaling
# ---------------------------------------------------------------------------

class SignalPath(Enum):
    NN_MODE = "nn"
    REGULAR = "regular"


@dataclass(frozen=True)
class LumaSignal:
    path: SignalPath
    flag_present: bool


def signal_luma(h: int, w: int, nn_flag: bool) -> LumaSignal:
    """The mode flag exists only for shapes the mode can handle."""
    if (h, w) in TRANSFORM_TABLE:
        return LumaSignal(SignalPath.NN_MODE if nn_flag else SignalPath.REGULAR, True)
    return LumaSignal(SignalPath.REGULAR, False)


class ChromaMode(Enum):
    NN_MODE = "nn"
    PLANAR = "planar"
    REGULAR = "regular"


def signal_chroma(
    collocated_luma_is_nn: bool,
    shape_allowed: bool,
    nn_flag: bool = False,
    dm_requested: bool = False,
) -> ChromaMode:
    """Chroma decision tree: when the collocated luma block used this mode,
    the direct mode becomes it (or PLANAR when the chroma shape cannot);
    otherwise a dedicated flag placed before the direct-mode flag selects
    it for supported shapes."""
    if collocated_luma_is_nn:
        if dm_requested:
            return ChromaMode.NN_MODE if shape_allowed else ChromaMode.PLANAR
        return ChromaMode.REGULAR
    if shape_allowed and nn_flag:
        return ChromaMode.NN_MODE
    return ChromaMode.REGULAR


@dataclass(frozen=True)
class NeighborMode:
    nn_coded: bool
    mode_index: int = 0     # conventional mode of a non-NN neighbor
    rep_index: int = 0      # stored substitute of an NN-coded neighbor


def mpm_substitute(neighbor: NeighborMode) -> int:
    """Candidate index a neighbor contributes to the most-probable-mode
    list: its own mode, or the stored substitute for NN-coded blocks."""
    return neighbor.rep_index if neighbor.nn_coded else neighbor.mode_index
