"""``dsa-forge`` command line.

Exit status: 0 on success, 1 on usage errors, 2 on data or validation
errors.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import perf, surgery, zoo
from .dsfp import FormatParams
from .executor import compare, run_quantized, run_reference
from .fileio import FileFormatError, read_features, read_image, write_features
from .graph import (DepthwiseSeparable, FCHead, GraphError, ShortcutBlock, atomic_write,
                    is_vgg_type, load_model, quantize_graph, save_model, validate)
from .layout import coverage_check, dump_plan, plan_layout
from .testing import seeded_rng

log = logging.getLogger("dsa_forge")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _cmd_lower(args) -> None:
    g = load_model(args.model)
    report: list[str] = []
    if args.pass_name is None:
        g = surgery.lower_all(g, report)
    elif args.pass_name == "compress":
        if args.layer is None or args.k is None:
            raise UsageError("--pass compress needs --layer and --k")
        g = surgery.compress_channels(g, args.layer, args.k)
        report.append(f"layer {args.layer}: kept first {args.k} channels; dense layers removed")
    else:
        if args.layer is None:
            raise UsageError(f"--pass {args.pass_name} needs --layer")
        kinds = {"shortcut": ShortcutBlock, "dws": DepthwiseSeparable, "fc": FCHead}
        if not 0 <= args.layer < len(g.layers):
            raise GraphError(f"layer {args.layer} out of range for {len(g.layers)} layers")
        if not isinstance(g.layers[args.layer], kinds[args.pass_name]):
            raise GraphError(f"layer {args.layer} is {type(g.layers[args.layer]).__name__}, "
                             f"not a {args.pass_name} layer")
        g = surgery.lower_layer(g, args.layer, report)
    save_model(g, args.output)
    for line in report:
        print(line)
    shape = validate(g)[-1] if g.layers else g.input_shape
    print(f"{len(g.layers)} layers, output {shape}, vgg-type: {str(is_vgg_type(g)).lower()}")


def _cmd_quantize(args) -> None:
    g = load_model(args.model)
    if not is_vgg_type(g):
        raise GraphError("model still has composite or dense layers; run `lower` first")
    q = quantize_graph(g, FormatParams(args.act_bias, args.coef_bias))
    save_model(q, args.output)
    print(f"quantized {len(q.layers)} layers (act_bias {args.act_bias}, coef_bias {args.coef_bias})")


def _cmd_plan(args) -> int:
    g = load_model(args.bundle)
    if not is_vgg_type(g):
        raise GraphError("only VGG-type models can be planned")
    chunks = []
    bad = 0
    for i, layer in enumerate(g.layers):
        plan = plan_layout(layer.in_ch, layer.out_ch, args.ne, args.direction)
        rep = coverage_check(plan)
        bad += len(rep.violations)
        chunks.append(f"== layer {i}: conv3x3 {layer.in_ch}->{layer.out_ch} ==\n"
                      + dump_plan(plan) + "coverage:\n" + rep.summary() + "\n")
        print(f"layer {i}: {plan.n_imagery_groups} imagery groups, {plan.n_filter_groups} filter groups, "
              f"{plan.rotation_steps} engine steps, utilization {rep.utilization:.4f}, "
              f"violations {len(rep.violations)}")
    atomic_write(args.output, "\n".join(chunks))
    return 2 if bad else 0


def _cmd_run(args) -> None:
    g = load_model(args.bundle)
    image = read_image(args.image)
    if args.reference:
        out = run_reference(g, image)
        write_features(args.output, out)
    else:
        res = run_quantized(g, image, tiled=not args.untiled, ne=args.ne, threads=args.threads)
        write_features(args.output, steps=res.output.steps, signed=res.output.signed,
                       params=res.output.params)
        if not args.untiled:
            print(f"tiles per layer: {res.tiles}; engine steps: {res.engine_steps}")
        out = res.output.values()
    print(f"wrote {args.output} shape {tuple(out.shape)}")


def _cmd_compare(args) -> None:
    print(compare(read_features(args.a), read_features(args.b)).summary(), end="")


def _cmd_perf(args) -> None:
    g = load_model(args.model)
    g = surgery.lower_all(g)
    watts = perf.BENCH_WATTS if args.bench_power else args.watts
    report = perf.perf_report(g, args.freq, watts)
    print(report.to_text(), end="")
    if args.json:
        atomic_write(args.json, report.to_json())


def _cmd_zoo(args) -> None:
    rng = seeded_rng() if args.random else None
    if args.name == "vgg16":
        g = zoo.vgg_graph(rng=rng)
    elif args.name == "gnet2":
        g = zoo.vgg_graph(zoo.gnet2_cfg(), rng=rng)
    else:
        g = zoo.vgg_graph([16, "M", 16], input_shape=(3, 28, 28), rng=rng)
    save_model(g, args.output)
    print(f"wrote {args.output}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dsa-forge", description="Compile and simulate networks for the 3x3 convolution accelerator.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("lower", help="lower composite layers to 3x3 convolutions")
    s.add_argument("model")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--pass", dest="pass_name", choices=["shortcut", "dws", "fc", "compress"])
    s.add_argument("--layer", type=int)
    s.add_argument("--k", type=int)
    s.set_defaults(func=_cmd_lower)

    s = sub.add_parser("quantize", help="round coefficients to DSFP and write a bundle")
    s.add_argument("model")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--act-bias", type=int, default=12)
    s.add_argument("--coef-bias", type=int, default=14)
    s.set_defaults(func=_cmd_quantize)

    s = sub.add_parser("plan", help="layout plan and coverage report per layer")
    s.add_argument("bundle")
    s.add_argument("--ne", type=int, default=16)
    s.add_argument("--direction", type=int, choices=[1, -1], default=1)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=_cmd_plan)

    s = sub.add_parser("run", help="run a bundle on an image")
    s.add_argument("bundle")
    s.add_argument("image")
    s.add_argument("--reference", action="store_true", help="float reference instead of the ring")
    s.add_argument("--untiled", action="store_true", help="direct DSFP convolution, no ring")
    s.add_argument("--ne", type=int, default=16)
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=_cmd_run)

    s = sub.add_parser("compare", help="error statistics between two feature files")
    s.add_argument("a")
    s.add_argument("b")
    s.set_defaults(func=_cmd_compare)

    s = sub.add_parser("perf", help="throughput, efficiency and size report")
    s.add_argument("model")
    s.add_argument("--freq", type=float, default=66e6)
    s.add_argument("--watts", type=float, default=0.4)
    s.add_argument("--bench-power", action="store_true", help="use the 0.1356 W bench measurement")
    s.add_argument("--json", help="also write the report as JSON")
    s.set_defaults(func=_cmd_perf)

    s = sub.add_parser("zoo", help="write a built-in model (weights zero unless --random)")
    s.add_argument("name", choices=["vgg16", "gnet2", "toy"])
    s.add_argument("--random", action="store_true", help="random weights seeded by DSA_FORGE_SEED")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=_cmd_zoo)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be at least 1")
    try:
        return args.func(args) or 0
    except UsageError as exc:
        print(f"dsa-forge: error: {exc}", file=sys.stderr)
        return 1
    except (GraphError, FileFormatError, ValueError, OverflowError, OSError) as exc:
        print(f"dsa-forge: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
