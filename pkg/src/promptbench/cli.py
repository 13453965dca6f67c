"""Command-line surface: decompose, sample, segment, evaluate, run, report.

Exit codes are stable for scripting: 0 success, 2 usage or validation
failure, 3 backend/protocol failure. Worker count comes from --workers, the
PROMPTBENCH_WORKERS environment variable, or the machine's CPU count, in
that order.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .experiment import (
    ConfigError,
    compare_strategies,
    config_from_json,
    load_results,
    render_table_with_warnings,
    run_experiment,
)
from .metrics import dice, nsd
from .sampling import (
    SamplingError,
    StrategySpec,
    build_strategy_prompts,
    prompt_set_from_json,
    prompt_set_to_json,
)
from .segmenter import (
    ExternalProcessBackend,
    OracleParams,
    ProtocolError,
    SyntheticOracleBackend,
)
from .subregion import decompose
from .volume import VolumeIOError, load_volume, mask_array, save_volume

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_BACKEND = 3


def _default_workers() -> int:
    env = os.environ.get("PROMPTBENCH_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _add_decompose(sub):
    p = sub.add_parser("decompose", help="split a gt mask into boundary/margin/center")
    p.add_argument("--gt", required=True, help="path to the binary mask (.nii/.raw/.json)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--format", choices=("nii", "raw"), default="nii",
                   help="output volume format (default nii)")


def _cmd_decompose(args) -> int:
    gt = load_volume(args.gt)
    mask_array(gt, "gt")  # validation: must be binary
    regions = decompose(gt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ext = ".nii" if args.format == "nii" else ".raw"
    save_volume(regions.boundary, out / f"boundary{ext}")
    save_volume(regions.margin, out / f"margin{ext}")
    save_volume(regions.center, out / f"center{ext}")
    summary = regions.counts()
    (out / "summary.json").write_text(json.dumps(summary))
    print(json.dumps(summary))
    return EXIT_OK


def _add_sample(sub):
    p = sub.add_parser("sample", help="draw seeded prompts from a region of a gt mask")
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True, help="output prompts JSON file")
    p.add_argument("--region", default="whole",
                   help="comma-separated sub-regions (B,M,C) or 'whole' (default)")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)


def _cmd_sample(args) -> int:
    gt = load_volume(args.gt)
    regions = decompose(gt)
    selector = tuple(t.strip() for t in args.region.split(",") if t.strip())
    if selector == ("whole",):
        spec = StrategySpec(kind="random-whole", name="sample", count=args.count)
    else:
        spec = StrategySpec(kind="region-constrained", name="sample",
                            region=selector, count=args.count)
    ps = build_strategy_prompts(spec, regions, fixed_seed=args.seed, run_seed=args.seed)
    Path(args.out).write_text(json.dumps(prompt_set_to_json(ps), indent=2))
    for w in ps.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"wrote {len(ps)} prompts to {args.out}")
    return EXIT_OK


def _add_segment(sub):
    p = sub.add_parser("segment", help="run one segmentation from a prompts file")
    p.add_argument("--gt", required=True, help="ground truth (oracle input / protocol gt)")
    p.add_argument("--prompts", required=True, help="prompts JSON (see sample)")
    p.add_argument("--out", required=True, help="output mask path")
    p.add_argument("--backend", choices=("synthetic", "external"), default="synthetic")
    p.add_argument("--r-base", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--r-neg", type=float, default=0.0)
    p.add_argument("--command", help="external command (whitespace-split)")
    p.add_argument("--image", help="image volume for external backends")
    p.add_argument("--workdir", help="work directory for external backends")
    p.add_argument("--timeout", type=float, default=None)


def _cmd_segment(args) -> int:
    gt = load_volume(args.gt)
    prompts = prompt_set_from_json(json.loads(Path(args.prompts).read_text()))
    if args.backend == "synthetic":
        backend = SyntheticOracleBackend(
            params=OracleParams(r_base=args.r_base, alpha=args.alpha, r_neg=args.r_neg)
        )
        pred = backend.segment(gt=gt, prompts=prompts)
    else:
        if not args.command or not args.image or not args.workdir:
            raise ConfigError("external backend needs --command, --image and --workdir")
        backend = ExternalProcessBackend(
            command=tuple(args.command.split()), timeout_s=args.timeout
        )
        image = load_volume(args.image)
        pred = backend.segment(gt=gt, prompts=prompts, image=image, workdir=args.workdir)
    save_volume(pred, args.out)
    print(f"wrote {args.out} ({int(pred.data.sum())} foreground voxels)")
    return EXIT_OK


def _add_evaluate(sub):
    p = sub.add_parser("evaluate", help="Dice and NSD of a prediction against gt")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--tau-mm", type=float, default=1.0)


def _cmd_evaluate(args) -> int:
    pred = load_volume(args.pred)
    gt = load_volume(args.gt)
    result = {
        "dice": dice(pred, gt),
        "nsd": nsd(pred, gt, args.tau_mm),
        "tau_mm": args.tau_mm,
    }
    print(json.dumps(result))
    return EXIT_OK


def _add_run(sub):
    p = sub.add_parser("run", help="run a full strategy grid from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--workers", type=int, default=None,
                   help="parallel grid workers (default: PROMPTBENCH_WORKERS or CPU count)")


def _cmd_run(args) -> int:
    config_path = Path(args.config)
    try:
        obj = json.loads(config_path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {config_path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    config = config_from_json(obj, base_dir=config_path.parent)
    workers = args.workers if args.workers else _default_workers()
    table = run_experiment(config, workers=workers)

    out_dir = Path(config.output_dir)
    written = ["results.jsonl", "aggregate.json"]
    kinds = {s.kind for s in config.strategies}
    layout_map = {
        "table1": kinds & {"random-whole", "region-constrained"},
        "table2": kinds & {"cumulative"},
        "table3": kinds & {"initial-varied"},
    }
    for layout, present in layout_map.items():
        if not present:
            continue
        for fmt, ext in (("markdown", "md"), ("csv", "csv")):
            text, _ = render_table_with_warnings(table, layout, fmt)
            name = f"{layout}.{ext}"
            (out_dir / name).write_text(text)
            written.append(name)

    n_failed = sum(1 for r in table.records if r.failed)
    print(f"grid complete: {len(table.records)} records, {n_failed} failed cells")
    print(f"outputs in {out_dir}: {', '.join(written)}")
    return EXIT_OK


def _add_report(sub):
    p = sub.add_parser("report", help="render result tables from a results directory")
    p.add_argument("--results", required=True,
                   help="output dir of a run, or its results.jsonl/aggregate.json")
    p.add_argument("--layout", choices=("table1", "table2", "table3"), default="table1")
    p.add_argument("--format", choices=("markdown", "csv"), default="markdown")
    p.add_argument("--out", help="write to a file instead of stdout")
    p.add_argument("--ttest", nargs=2, metavar=("A", "B"),
                   help="also run a paired t-test between two strategy names")
    p.add_argument("--count", type=int, default=1, help="prompt count for --ttest")
    p.add_argument("--count-b", type=int, default=None,
                   help="prompt count for the second --ttest strategy (default: --count)")
    p.add_argument("--pairing", choices=("runs", "subjects"), default="runs")


def _cmd_report(args) -> int:
    table = load_results(args.results)
    text, warnings = render_table_with_warnings(table, args.layout, args.format)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    if args.ttest:
        a, b = args.ttest
        count_b = args.count if args.count_b is None else args.count_b
        r = compare_strategies(table, a, b, args.count,
                               pairing=args.pairing, count_b=count_b)
        flag = ", degenerate" if r.degenerate else ""
        print(f"paired t-test {a} ({args.count}P) vs {b} ({count_b}P): "
              f"t={r.t:.6g}, df={r.df}, p={r.p:.6g}{flag}")
    return EXIT_OK


_COMMANDS = {
    "decompose": _cmd_decompose,
    "sample": _cmd_sample,
    "segment": _cmd_segment,
    "evaluate": _cmd_evaluate,
    "run": _cmd_run,
    "report": _cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="promptbench",
        description="Point-prompt selection harness for interactive 3D segmentation.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    _add_decompose(sub)
    _add_sample(sub)
    _add_segment(sub)
    _add_evaluate(sub)
    _add_run(sub)
    _add_report(sub)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.subcommand](args)
    except ProtocolError as e:
        detail = f"\n{e.stderr.strip()}" if e.stderr else ""
        print(f"error: {e}{detail}", file=sys.stderr)
        return EXIT_BACKEND
    except (ConfigError, SamplingError, VolumeIOError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
