"""Command-line entry point.

Exit codes: 0 success, 2 usage, 3 malformed file, 4 numeric/semantic
contract violation.  Diagnostics are one-line and machine-parsable;
--json switches them to structured records.  QNN_THREADS controls the
patch-parallel filter path (default 1; outputs never depend on it).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import complexity, loopfilter, report
from .errors import FormatError, QnnError
from .frames import read_frame
from .graph import dequantize_graph, infer, validate
from .intra import IntraModelSet, PlanarFallback, predict_block
from .model_io import load_model_file, save_model_file
from .quantize import static_quantize
from .refmodels import build_filter_model, build_intra_model
from .tensor import ElementWidth, Tensor, dequantize, load_stn1, save_stn1

WIDTH_BY_BITS = {"8": ElementWidth.int8, "16": ElementWidth.int16,
                 "32": ElementWidth.int32}


def _emit(args, payload: dict, text: str) -> None:
    if getattr(args, "json", False):
        print(json.dumps(payload))
    else:
        print(text)


def _fail(args, exc: Exception) -> None:
    if getattr(args, "json", False):
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
    else:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)


# ---------------------------------------------------------------------------
# subcommand handlers
# ---------------------------------------------------------------------------

def cmd_infer(args) -> int:
    g = load_model_file(args.model)
    inputs = [load_stn1(p) for p in args.input]
    if args.float and g.width.is_integer:
        g = dequantize_graph(g)
        inputs = [dequantize(t) for t in inputs]
    outputs = infer(g, inputs)
    if len(outputs) == 1 and args.out:
        paths = [args.out]
    elif args.out_prefix:
        paths = [f"{args.out_prefix}{i}.stn1" for i in range(len(outputs))]
    elif args.out:
        raise QnnError(f"graph has {len(outputs)} outputs; use --out-prefix")
    else:
        raise QnnError("give --out (single output) or --out-prefix")
    for t, p in zip(outputs, paths):
        save_stn1(t, p)
    _emit(args, {"ok": True, "outputs": paths},
          "\n".join(f"wrote {p}" for p in paths))
    return 0


def cmd_quantize(args) -> int:
    g = load_model_file(args.model)
    calib_dir = Path(args.calib)
    files = sorted(calib_dir.glob("*.stn1"))
    groups: dict[str, list] = {}
    for f in files:
        stem = f.stem
        key, _, tail = stem.rpartition(".in")
        if key and tail.isdigit():
            groups.setdefault(key, []).append((int(tail), f))
        else:
            groups.setdefault(stem, []).append((0, f))
    samples = [
        [load_stn1(f) for _, f in sorted(group)] for _, group in sorted(groups.items())
    ]
    width = WIDTH_BY_BITS[args.width]
    qg = static_quantize(g, samples, width, input_q=args.input_q)
    save_model_file(qg, args.out)
    _emit(args, {"ok": True, "out": args.out, "width": width.value},
          f"wrote {args.out} ({width.value})")
    return 0


def cmd_info(args) -> int:
    g = load_model_file(args.model)
    rep = complexity.count_macs(g)
    kmac = complexity.kmac_per_pixel(g, args.pixels) if args.pixels else None
    if args.report_dir:
        written = report.write_mac_report(rep, args.report_dir, kmac)
    else:
        written = []
    if args.json:
        payload = {
            "width": g.width.value,
            "nodes": [
                {"id": c.node_id, "kind": c.kind, "out_dims": list(c.out_dims),
                 "macs": c.macs, "other_ops": c.other_ops}
                for c in rep.per_node
            ],
            "total_macs": rep.total_macs,
            "total_other_ops": rep.total_other_ops,
        }
        if kmac is not None:
            payload["kmac_per_pixel"] = kmac
        if written:
            payload["report_files"] = written
        print(json.dumps(payload))
        return 0
    print(f"{'node':>6}  {'kind':<16} {'out dims':<18} {'MACs':>14} {'ops':>12}")
    for c in rep.per_node:
        dims = "x".join(map(str, c.out_dims))
        print(f"{c.node_id:>6}  {c.kind:<16} {dims:<18} {c.macs:>14,} "
              f"{c.other_ops:>12,}")
    print(f"{'total':>6}  {'':<16} {'':<18} {rep.total_macs:>14,} "
          f"{rep.total_other_ops:>12,}")
    if kmac is not None:
        print(f"{kmac:.1f} kMAC/pixel over {args.pixels} pixels")
    for p in written:
        print(f"wrote {p}")
    return 0


def cmd_intra_predict(args) -> int:
    frame, depth = read_frame(args.frame)
    x, y = (int(v) for v in args.pos.split(","))
    h, w = (int(v) for v in args.size.lower().split("x"))
    models = IntraModelSet.from_dir(args.models)
    models.bitdepth = depth if depth > 8 else models.bitdepth
    out = predict_block(frame, x, y, h, w, models)
    if isinstance(out, PlanarFallback):
        _emit(args, {"fallback": True},
              "repIdx=- grpIdx1=- grpIdx2=- fallback=1")
        return 0
    if args.out:
        save_stn1(Tensor(out.block.shape, ElementWidth.int16, 0,
                         out.block.astype(np.int16)), args.out)
    written = report.write_intra_report(out, args.report_dir) if args.report_dir else []
    payload = {
        "fallback": False, "repIdx": out.rep_index,
        "grpIdx1": out.grp_index1, "grpIdx2": out.grp_index2,
    }
    if args.out:
        payload["block"] = args.out
    if written:
        payload["report_files"] = written
    text = (f"repIdx={out.rep_index} grpIdx1={out.grp_index1} "
            f"grpIdx2={out.grp_index2} fallback=0")
    if args.out:
        text += f"\nwrote {args.out}"
    for p in written:
        text += f"\nwrote {p}"
    _emit(args, payload, text)
    return 0


def _load_plane(path) -> np.ndarray:
    t = load_stn1(path)
    if len(t.dims) != 2:
        raise QnnError(f"plane file {path} must be 2-D, got dims {t.dims}")
    return t.data.astype(np.int64)


def cmd_filter_run(args) -> int:
    g = load_model_file(args.model)
    orig = _load_plane(args.orig)
    rec = _load_plane(args.rec)
    db = _load_plane(args.db)
    pred = _load_plane(args.pred)
    bs = _load_plane(args.bs)
    ipb = _load_plane(args.ipb) if args.ipb else None
    col0 = _load_plane(args.col0) if args.col0 else None
    col1 = _load_plane(args.col1) if args.col1 else None
    mode = loopfilter.temporal_gate(args.tid)
    if mode != "temporal":
        col0 = col1 = None
    fi = loopfilter.FilterInputs(rec, pred, bs, ipb, col0, col1, args.bitdepth)
    layer = "high" if args.tid >= 3 else "low"
    candidates = loopfilter.candidate_list(args.qp, layer)
    lam = args.rd_lambda if args.rd_lambda is not None else \
        loopfilter.default_lambda(args.qp)
    block = args.block_size or loopfilter.granularity(
        rec.shape[1], rec.shape[0], args.bitrate
    )
    dec = loopfilter.select_params(
        orig, rec, db, fi, g, candidates, lam, block,
        all_intra=args.all_intra, border=args.border,
    )
    if dec.mode == "off":
        selected = rec
    elif dec.mode == "uniform":
        selected = loopfilter.apply_nn_filter(fi, g, dec.params[dec.param_index - 1],
                                              args.border)
    else:
        selected = np.zeros_like(rec)
        bs_sz = dec.block_size
        for by in range(0, rec.shape[0], bs_sz):
            for bx in range(0, rec.shape[1], bs_sz):
                idx = dec.block_map[by // bs_sz, bx // bs_sz]
                src = rec if idx == 0 else loopfilter.apply_nn_filter(
                    fi, g, dec.params[idx - 1], args.border)
                selected[by : by + bs_sz, bx : bx + bs_sz] = \
                    src[by : by + bs_sz, bx : bx + bs_sz]
    final = loopfilter.pipeline_order(selected, db, dec.omega, args.bitdepth)
    if args.out:
        save_stn1(Tensor(final.shape, ElementWidth.int16, 0,
                         final.astype(np.int16)), args.out)
    written = report.write_filter_report(dec, args.report_dir) \
        if args.report_dir else []
    payload = {
        "mode": dec.mode,
        "param_index": dec.param_index,
        "omega": [dec.omega.numerator, dec.omega.denominator],
        "costs": [c if np.isfinite(c) else None for c in dec.costs],
        "block_size": dec.block_size,
        "candidates": list(dec.params),
    }
    if args.out:
        payload["plane"] = args.out
    if written:
        payload["report_files"] = written
    lines = [
        f"mode={dec.mode} param={dec.param_index or '-'} "
        f"omega={dec.omega.numerator}/{dec.omega.denominator} block={dec.block_size}",
        "costs: " + " ".join(
            f"{name}={cost:.1f}" if np.isfinite(cost) else f"{name}=-"
            for name, cost in zip(
                ["off", "p1", "p2", "p3", "per-block"], dec.costs)
        ),
    ]
    if args.out:
        lines.append(f"wrote {args.out}")
    lines.extend(f"wrote {p}" for p in written)
    _emit(args, payload, "\n".join(lines))
    return 0


def cmd_convert_check(args) -> int:
    g = load_model_file(args.model)
    problems = validate(g)
    if args.json:
        print(json.dumps({
            "valid": not problems,
            "violations": [
                {"node": v.node_id, "code": v.code, "message": v.message}
                for v in problems
            ],
        }))
    else:
        if problems:
            for v in problems:
                print(str(v))
        else:
            print("model validates: no violations")
    return 4 if problems else 0


def cmd_make_model(args) -> int:
    made = []
    if args.kind == "intra":
        width = ElementWidth.float32 if args.float else WIDTH_BY_BITS[args.width]
        outdir = Path(args.out_dir)
        outdir.mkdir(parents=True, exist_ok=True)
        if args.shapes == "all":
            shapes = [(4, 4), (4, 8), (4, 16), (4, 32), (8, 8), (8, 16), (16, 16)]
        else:
            shapes = [tuple(int(v) for v in s.split("x"))
                      for s in args.shapes.split(",")]
        for shape in shapes:
            g = build_intra_model(shape, width, args.seed, not args.dense)
            path = outdir / f"nn_intra_{shape[0]}x{shape[1]}.smf1"
            save_model_file(g, path)
            made.append(str(path))
    else:
        width = ElementWidth.float32 if args.float else WIDTH_BY_BITS[args.width]
        g = build_filter_model(args.filter_kind, args.patch, args.border,
                               args.channels, width, args.seed,
                               args.qp_gain, args.bias)
        save_model_file(g, args.out)
        made.append(args.out)
    _emit(args, {"ok": True, "models": made},
          "\n".join(f"wrote {p}" for p in made))
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="qnn",
        description="Shift-only fixed-point inference engine and codec-tool "
                    "harnesses over SMF1 models and STN1 tensors.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("infer", help="run a model on tensor files")
    sp.add_argument("--model", required=True)
    sp.add_argument("--input", action="append", required=True)
    sp.add_argument("--float", action="store_true",
                    help="dequantize an integer model and run the float path")
    sp.add_argument("--out")
    sp.add_argument("--out-prefix")
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("quantize", help="static-quantize a float model")
    sp.add_argument("--model", required=True)
    sp.add_argument("--calib", required=True, help="directory of STN1 samples")
    sp.add_argument("--width", choices=sorted(WIDTH_BY_BITS), default="16")
    sp.add_argument("--input-q", type=int, default=None)
    sp.add_argument("--out", required=True)
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_quantize)

    sp = sub.add_parser("info", help="per-node MAC table and totals")
    sp.add_argument("--model", required=True)
    sp.add_argument("--pixels", type=int, default=None)
    sp.add_argument("--report-dir")
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_info)

    sp = sub.add_parser("intra-predict", help="predict one block from a frame")
    sp.add_argument("--frame", required=True, help="PGM or YUV4MPEG2 file")
    sp.add_argument("--pos", required=True, help="x,y of the block's top-left")
    sp.add_argument("--size", required=True, help="HxW, e.g. 4x8")
    sp.add_argument("--models", required=True, help="directory of intra models")
    sp.add_argument("--out", help="write the predicted block as STN1")
    sp.add_argument("--report-dir")
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_intra_predict)

    sp = sub.add_parser("filter-run", help="loop-filter control over one picture")
    sp.add_argument("--orig", required=True)
    sp.add_argument("--rec", required=True)
    sp.add_argument("--db", required=True)
    sp.add_argument("--pred", required=True)
    sp.add_argument("--bs", required=True)
    sp.add_argument("--ipb")
    sp.add_argument("--col0")
    sp.add_argument("--col1")
    sp.add_argument("--qp", type=int, required=True)
    sp.add_argument("--tid", type=int, required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--bitdepth", type=int, default=10)
    sp.add_argument("--lambda", dest="rd_lambda", type=float, default=None)
    sp.add_argument("--bitrate", choices=("low", "high"), default="low")
    sp.add_argument("--block-size", type=int, default=None)
    sp.add_argument("--border", type=int, default=8)
    sp.add_argument("--all-intra", action="store_true")
    sp.add_argument("--out")
    sp.add_argument("--report-dir")
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_filter_run)

    sp = sub.add_parser("convert-check", help="validate a model file")
    sp.add_argument("--model", required=True)
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_convert_check)

    sp = sub.add_parser("make-model", help="build reference models")
    kinds = sp.add_subparsers(dest="kind", required=True)
    si = kinds.add_parser("intra", help="intra predictors with published shapes")
    si.add_argument("--shapes", default="all", help="'all' or e.g. 4x4,8x8")
    si.add_argument("--out-dir", required=True)
    si.add_argument("--width", choices=sorted(WIDTH_BY_BITS), default="16")
    si.add_argument("--float", action="store_true")
    si.add_argument("--dense", action="store_true")
    si.add_argument("--seed", type=int, default=0)
    si.add_argument("--json", action="store_true")
    si.set_defaults(func=cmd_make_model)
    sf = kinds.add_parser("filter", help="small loop-filter graphs")
    sf.add_argument("--filter-kind", default="zero",
                    choices=("zero", "bias", "qp-linear", "conv"))
    sf.add_argument("--patch", type=int, default=32)
    sf.add_argument("--border", type=int, default=8)
    sf.add_argument("--channels", type=int, default=5)
    sf.add_argument("--qp-gain", type=float, default=0.0)
    sf.add_argument("--bias", type=float, default=0.0)
    sf.add_argument("--width", choices=sorted(WIDTH_BY_BITS), default="16")
    sf.add_argument("--float", action="store_true")
    sf.add_argument("--seed", type=int, default=0)
    sf.add_argument("--out", required=True)
    sf.add_argument("--json", action="store_true")
    sf.set_defaults(func=cmd_make_model)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as e:
        _fail(args, e)
        return 2
    except FormatError as e:
        _fail(args, e)
        return 3
    except QnnError as e:
        _fail(args, e)
        return 4


if __name__ == "__main__":
    sys.exit(main())
