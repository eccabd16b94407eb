"""``nestquant`` command line.

Every verb prints JSON by default; ``--format csv`` and ``--format text`` are
available where a table makes sense. Set ``NESTQUANT_LOG=debug`` for logs.
"""
import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

from . import refnet, resources, store, transfer
from .errors import NestQuantError
from .nesting import advise_nested_bits, check_combination, error_census, nest_model, quantize_model
from .resources import percent
from .rounding import SCALAR_STRATEGIES, RoundingStrategy
from .switch import Mode, diverse_switch_baseline, launch_part_bit

log = logging.getLogger("nestquant")
MB = 1_000_000


class Output:
    """A verb result: records for json/csv plus an optional text rendering."""

    def __init__(self, data, columns=None, text=None):
        self.data = data
        self.columns = columns
        self.text = text

    def render(self, fmt):
        if fmt == "json":
            return json.dumps(self.data, indent=2, default=str)
        rows = self.data if isinstance(self.data, list) else [self.data]
        if fmt == "csv":
            cols = self.columns or list(rows[0].keys())
            buf = io.StringIO()
            writer = csv.writer(buf, lineterminator="\n")
            writer.writerow(cols)
            for row in rows:
                writer.writerow([row.get(c, "") for c in cols])
            return buf.getvalue().rstrip("\n")
        if self.text is not None:
            return self.text
        return "\n".join("  ".join(f"{k}={v}" for k, v in row.items()) for row in rows)


def _table(rows, columns):
    widths = [max(len(str(c)), *(len(str(r.get(c, ""))) for r in rows)) for c in columns]
    lines = ["  ".join(str(c).rjust(w) for c, w in zip(columns, widths))]
    lines += ["  ".join(str(r.get(c, "")).rjust(w) for c, w in zip(columns, widths)) for r in rows]
    return "\n".join(lines)


def _bits_range(text):
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(x) for x in text.split(",")]


def _mb(x):
    return round(float(x) / MB, 3)


# -- verbs -----------------------------------------------------------------


def cmd_quantize(args):
    weights = store.load_fp32(args.input)
    model = quantize_model(weights, args.n, args.strategy, name=args.name or Path(args.input).stem, jobs=args.jobs)
    written = store.save(model, args.out)
    return Output({"out": str(args.out), "n": args.n, "layers": len(model.layers), "bytes": written})


def cmd_nest(args):
    weights = store.load_fp32(args.input)
    if args.h == "auto":
        fp32_mb = 4 * sum(w.size for w in weights.values()) / MB
        h = advise_nested_bits(fp32_mb, args.n)
    else:
        h = int(args.h)
    check_combination(args.n, h)
    model = nest_model(weights, args.n, h, args.strategy, name=args.name or Path(args.input).stem, jobs=args.jobs)
    written = store.save(model, args.out)
    rep = store.size_report(model)
    return Output({"out": str(args.out), "n": args.n, "h": h, "strategy": args.strategy,
                   "layers": len(model.layers), "bytes": written, **rep.as_dict()})


def cmd_inspect(args):
    model = store.load(args.model)
    rep = store.size_report(model)
    rows = []
    for layer in model.layers:
        rows.append({
            "layer": layer.name, "shape": "x".join(map(str, layer.shape)), "params": layer.size,
            "scale": float(layer.scale), "high_bytes": layer.w_high.nbytes,
            "low_bytes": layer.w_low.nbytes if layer.w_low is not None else 0,
        })
    manifest = {"name": model.name, "version": store.VERSION, "n": model.n, "h": model.h,
                "layers": len(model.layers), "params": model.param_count, "metadata": model.metadata}
    text = (f"{model.name or '(unnamed)'}  INT({model.n}|{model.h})  {len(model.layers)} layers  "
            f"{model.param_count} params  {rep.total_bytes} bytes\n"
            + (_table(rows, list(rows[0])) if rows else "(no layers)"))
    return Output({"manifest": manifest, "size": rep.as_dict(), "layers": rows} if args.format == "json" else rows,
                  columns=["layer", "shape", "params", "scale", "high_bytes", "low_bytes"], text=text)


def cmd_census(args):
    strategies = SCALAR_STRATEGIES if args.strategy == "all" else (RoundingStrategy.parse(args.strategy),)
    rows = []
    for strat in strategies:
        for h in _bits_range(args.h):
            c = error_census(args.n, h, strat, compensate=args.compensate)
            rows.append({"strategy": strat.value, "n": args.n, "h": h, "nonzero": c.nonzero_count,
                         "min": c.error_min, "max": c.error_max})
    cols = ["strategy", "n", "h", "nonzero", "min", "max"]
    text = _table([{**r, "range": f"[{r['min']},{r['max']}]"} for r in rows],
                  ["strategy", "n", "h", "nonzero", "range"])
    return Output(rows, cols, text)


def cmd_advise(args):
    h = advise_nested_bits(args.size_mb, args.n)
    return Output({"size_mb": args.size_mb, "n": args.n, "h": h}, text=f"h={h}")


def cmd_switch(args):
    state = launch_part_bit(args.model)
    launched = {"direction": "launch", "bytes_paged_in": state.high_bytes, "bytes_paged_out": 0,
                "bytes_read": state.bytes_read}
    for _ in range(args.cycles):
        state.upgrade()
        state.downgrade()
    if args.mode == "full":
        state.upgrade()
    log_rows = [launched] + [
        {"direction": t.direction, "bytes_paged_in": t.bytes_paged_in, "bytes_paged_out": t.bytes_paged_out}
        for t in state.transition_log
    ]
    result = {"model": str(args.model), "n": state.n, "h": state.h, "mode": state.mode.value,
              "transitions": log_rows}
    if args.u_int8_mb is not None:
        result["memory_mb"] = round(float(state.memory_estimate(args.u_int8_mb)), 1)
    if not args.report:
        return Output(result, text=f"mode={state.mode.value}")
    text = (f"INT({state.n}|{state.h}) now {state.mode.value}-bit\n"
            + _table([{k: (_mb(v) if k.startswith("bytes") else v) for k, v in r.items()} for r in log_rows],
                     ["direction", "bytes_paged_in", "bytes_paged_out"]) + "\n(MB)")
    return Output(result if args.format == "json" else log_rows,
                  columns=["direction", "bytes_paged_in", "bytes_paged_out"], text=text)


def overhead_rows(model_path, diverse=None):
    """Table-7/8/9 style numbers for one nested file; diverse sizes come from
    the given standalone files or from exact same-shape size arithmetic."""
    model = store.load(model_path)
    if not model.nested:
        raise NestQuantError("report needs a nested model (h < n)")
    n, h = model.n, model.h
    nested_bytes = os.path.getsize(model_path)
    if diverse:
        up = diverse_switch_baseline(diverse[0], diverse[1], "upgrade")
        size_n, size_h = up.bytes_paged_in, up.bytes_paged_out
    else:
        size_n, size_h = store.plain_file_size(model, n), store.plain_file_size(model, h)
    state = launch_part_bit(model_path)
    state.upgrade()
    state.downgrade()
    up_t, down_t = state.transition_log
    high_share, low_share = resources.nest_page_costs(nested_bytes, n, h)
    row = {
        "n": n, "h": h,
        "ideal_reduction_pct": percent(resources.ideal_storage_reduction(n, h)),
        "nested_bytes": nested_bytes, "diverse_bytes": size_n + size_h,
        "storage_reduction_pct": percent(1 - resources.Fraction(nested_bytes, size_n + size_h)),
        "fp32_bytes": 4 * model.param_count,
        "up_page_in": up_t.bytes_paged_in, "up_page_out": up_t.bytes_paged_out,
        "diverse_up_page_in": size_n, "diverse_up_page_out": size_h,
        "down_page_in": down_t.bytes_paged_in, "down_page_out": down_t.bytes_paged_out,
        "reduced_overhead_pct": percent(resources.reduced_overhead(up_t, (size_n, size_h))),
        "closed_form_low_page_in": round(float(low_share)),
        "closed_form_reduced_pct": percent(resources.reduced_overhead((low_share, 0), (size_n, size_h))),
    }
    return row


def cmd_report(args):
    row = overhead_rows(args.model, args.diverse)
    text = "\n".join([
        f"INT({row['n']}|{row['h']})  ideal storage reduction {row['ideal_reduction_pct']}%",
        f"model size  nested {_mb(row['nested_bytes'])} MB  diverse {_mb(row['diverse_bytes'])} MB  "
        f"reduction {row['storage_reduction_pct']}%  fp32 {_mb(row['fp32_bytes'])} MB",
        f"upgrade     nested in/out {_mb(row['up_page_in'])}/{_mb(row['up_page_out'])} MB  "
        f"diverse in/out {_mb(row['diverse_up_page_in'])}/{_mb(row['diverse_up_page_out'])} MB  "
        f"reduced {row['reduced_overhead_pct']}%",
        f"downgrade   nested in/out {_mb(row['down_page_in'])}/{_mb(row['down_page_out'])} MB",
    ])
    return Output(row, text=text)


def cmd_train_ref(args):
    config = refnet.load_config(args.config)
    net, data = refnet.train_reference(config, args.seed)
    store.save_fp32(net.weights, args.out)
    acc = refnet.evaluate(net, data, "fp32")
    return Output({"out": str(args.out), "seed": args.seed, "test_accuracy": acc,
                   "layers": list(net.weights)})


def _parse_data(spec):
    kind, _, value = spec.partition(":")
    if kind != "seed" or not value.lstrip("-").isdigit():
        raise ValueError(f"--data must look like seed:N, got {spec!r}")
    return int(value)


def cmd_eval(args):
    config = refnet.load_config(args.config)
    data = refnet.dataset_from_config(config, _parse_data(args.data))
    path = Path(args.model)
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == store.FP32_MAGIC:
        weights = store.load_fp32(path)
        net = refnet.RefNet.from_weights(weights, refnet.input_shape_for(config, weights))
        if args.mode != "fp32":
            raise NestQuantError("a float archive can only be evaluated in fp32 mode")
        acc = refnet.evaluate(net, data, "fp32")
    else:
        if args.mode == "fp32":
            raise NestQuantError("fp32 evaluation needs a .nqf float archive")
        state = launch_part_bit(path)
        if args.mode == "full":
            state.upgrade()
        qweights = state.weights()
        shapes = {name: q.ints for name, q in qweights.items()}
        net = refnet.RefNet.from_weights(shapes, refnet.input_shape_for(config, shapes))
        mode = "full_bit" if args.mode == "full" else "part_bit"
        net = net.with_quantized(qweights, mode)
        acc = refnet.evaluate(net, data, mode, args.act_bits)
    return Output({"model": str(path), "mode": args.mode, "accuracy": acc}, text=f"accuracy={acc:.4f}")


def cmd_serve(args):
    transfer.serve(args.listen, args.dir)
    return Output({"stopped": True})


def cmd_push(args):
    sent = transfer.push(args.model, args.to, args.what.replace("-", "_"))
    return Output({"model": str(args.model), "to": args.to, "what": args.what, "bytes_sent": sent},
                  text=f"sent {sent} bytes")


# -- parser ----------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=("json", "csv", "text"), default="json")

    parser = argparse.ArgumentParser(prog="nestquant", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True, metavar="verb")
    strategies = [s.value for s in RoundingStrategy]

    p = sub.add_parser("quantize", parents=[common], help="quantize a float archive to a plain INT n model")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--strategy", choices=strategies, default="adaptive")
    p.add_argument("--name")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("nest", parents=[common], help="build an INT(n|h) nested model")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--h", default="auto", help="nested bits, or 'auto' to use the size pattern")
    p.add_argument("--strategy", choices=strategies, default="adaptive")
    p.add_argument("--name")
    p.add_argument("--jobs", type=int, default=1, help="layer-parallel workers")
    p.set_defaults(func=cmd_nest)

    p = sub.add_parser("inspect", parents=[common], help="print manifest and per-layer sizes")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("census", parents=[common], help="exhaustive decompose/recompose error census")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--h", default="3..7", help="e.g. 4, 4..7 or 3,5")
    p.add_argument("--strategy", choices=[s.value for s in SCALAR_STRATEGIES] + ["all"], default="all")
    p.add_argument("--compensate", action="store_true", help="keep the extra residual bit")
    p.set_defaults(func=cmd_census)

    p = sub.add_parser("advise", parents=[common], help="critical nested bits for a model size")
    p.add_argument("--size-mb", type=float, required=True)
    p.add_argument("--n", type=int, default=8)
    p.set_defaults(func=cmd_advise)

    p = sub.add_parser("switch", parents=[common], help="launch part-bit and switch precision")
    p.add_argument("--model", required=True)
    p.add_argument("--mode", choices=[m.value for m in Mode], default="part")
    p.add_argument("--cycles", type=int, default=0, help="up/down cycles before settling")
    p.add_argument("--u-int8-mb", type=float, help="measured INT8 memory usage, for the estimate")
    p.add_argument("--report", action="store_true")
    p.set_defaults(func=cmd_switch)

    p = sub.add_parser("report", parents=[common], help="storage and switching overheads")
    p.add_argument("--model", required=True)
    p.add_argument("--diverse", nargs=2, metavar=("INT_N", "INT_H"))
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("train-ref", parents=[common], help="train the reference network")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_ref)

    p = sub.add_parser("eval", parents=[common], help="accuracy of a model on the synthetic task")
    p.add_argument("--model", required=True)
    p.add_argument("--mode", choices=("part", "full", "fp32"), default="full")
    p.add_argument("--data", default="seed:0")
    p.add_argument("--config")
    p.add_argument("--act-bits", type=int, default=8)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", parents=[common], help="receive pushed models")
    p.add_argument("--listen", required=True)
    p.add_argument("--dir", required=True)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("push", parents=[common], help="send a model or one of its sections")
    p.add_argument("--to", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--what", choices=("full", "part", "low-delta"), default="full")
    p.set_defaults(func=cmd_push)
    return parser


def main(argv=None):
    level = os.environ.get("NESTQUANT_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        out = args.func(args)
    except (NestQuantError, OSError, ValueError, KeyError) as exc:
        print(f"nestquant {args.verb}: error: {exc}", file=sys.stderr)
        return 1
    print(out.render(args.format))
    return 0


if __name__ == "__main__":
    sys.exit(main())
