"""Command-line front end: ``quantize``, ``evaluate`` and ``bench-synthetic``."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from . import bench
from .checkpoint import (
    FLOAT_DTYPES,
    QuantPolicy,
    load_checkpoint,
    pair_layers,
    write_quantized_checkpoint,
)
from .errors import DeltaQuantError, FormatError, InvalidConfig, ShapeError
from .metrics import MetricKind, compute_delta, delta_stats
from .quantizer import Granularity
from .report import LayerReport, RunReport, write_report
from .search import SearchConfig, default_workers, search_model

log = logging.getLogger("deltaquant")


def parse_range(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"range must look like 'lo,hi', got {text!r}") from None
    if not 0 < lo <= 1 <= hi:
        raise argparse.ArgumentTypeError(f"range {text!r} must satisfy 0 < lo <= 1 <= hi")
    return lo, hi


def _granularity(text: str) -> Granularity:
    try:
        return Granularity.parse(text)
    except InvalidConfig as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _metric(text: str) -> MetricKind:
    try:
        return MetricKind.parse(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _default_report(out_path) -> Path:
    out = Path(out_path)
    return out.with_name(out.name + ".report.json")


def cmd_quantize(
    base_path,
    post_path,
    out_path,
    metric: MetricKind = MetricKind.SIGN_RATE,
    granularity: Granularity | None = None,
    alpha_range: tuple[float, float] = (0.8, 1.25),
    n_coarse: int = 5,
    n_fine: int = 10,
    delta: float | None = None,
    policy: QuantPolicy = QuantPolicy(),
    report_path=None,
    csv_path=None,
    workers: int | None = None,
    max_shard_bytes: int | None = None,
) -> RunReport:
    start = time.perf_counter()
    config = SearchConfig(alpha_range[0], alpha_range[1], n_coarse, n_fine, delta,
                          metric, granularity or Granularity.block())
    base, post = load_checkpoint(base_path), load_checkpoint(post_path)
    pairs, passthrough = pair_layers(base, post, policy)
    log.info("%d layers to search, %d passthrough tensors", len(pairs), len(passthrough))

    results = search_model(pairs, config, workers=workers)
    rows = []
    for pair, (outcome, layer) in zip(pairs, results):
        stats = delta_stats(compute_delta(pair, layer.dequantize()))
        rows.append(LayerReport.from_stats(
            pair.name, str(layer.granularity), stats,
            chosen_alpha=outcome.chosen_alpha, baseline_metric=outcome.baseline_metric,
            best_metric=outcome.best_metric, zero_delta=outcome.zero_delta,
        ))

    write_quantized_checkpoint(
        [layer for _, layer in results],
        [(name, post.raw(name)) for name in passthrough],
        out_path,
        max_shard_bytes=max_shard_bytes,
    )
    report = RunReport(
        config={"command": "quantize", **config.describe(), "policy": _describe_policy(policy)},
        per_layer=rows,
        wall_seconds=time.perf_counter() - start,
    )
    write_report(report, report_path or _default_report(out_path), csv_path)
    return report


def cmd_evaluate(
    base_path, post_path, quant_path, report_path=None, policy: QuantPolicy = QuantPolicy(), csv_path=None
) -> RunReport:
    """Score an existing quantized (or plain) checkpoint against base and post."""
    start = time.perf_counter()
    base, post, quant = (load_checkpoint(p) for p in (base_path, post_path, quant_path))
    pairs, _ = pair_layers(base, post, policy)
    rows = []
    for pair in pairs:
        if pair.name not in quant:
            raise FormatError("layer missing from quantized checkpoint", pair.name)
        info = quant.info(pair.name)
        if info.dtype not in FLOAT_DTYPES + ("F8_E4M3",):
            raise FormatError(f"cannot evaluate a {info.dtype} tensor", pair.name)
        w_quant = quant.weights(pair.name)
        if w_quant.shape != pair.shape:
            raise ShapeError(f"{pair.name}: quantized shape {list(w_quant.shape)} != {list(pair.shape)}")
        alpha, gran = None, "none"
        if info.dtype == "F8_E4M3":
            gran = quant.metadata.get(f"{pair.name}.granularity", "inferred")
            alpha_text = quant.metadata.get(f"{pair.name}.alpha")
            alpha = float(alpha_text) if alpha_text is not None else None
        stats = delta_stats(compute_delta(pair, w_quant))
        rows.append(LayerReport.from_stats(pair.name, gran, stats, chosen_alpha=alpha))
    report = RunReport(
        config={"command": "evaluate", "base": str(base_path), "post": str(post_path),
                "quant": str(quant_path), "policy": _describe_policy(policy)},
        per_layer=rows,
        wall_seconds=time.perf_counter() - start,
    )
    write_report(report, report_path or _default_report(quant_path), csv_path)
    return report


def cmd_bench_synthetic(report_path=None, workers: int = 1, **kwargs) -> dict:
    result = bench.run_benchmark(workers=workers, **kwargs)
    if report_path is not None:
        path = Path(report_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(bench.bench_json(result))
        path.with_suffix(".txt").write_text(bench.bench_table(result))
    return result


def _describe_policy(policy: QuantPolicy) -> dict:
    return {"include": list(policy.include), "exclude": list(policy.exclude),
            "min_rank": policy.min_rank, "min_elements": policy.min_elements}


def _add_policy_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--include", nargs="*", default=["*"], metavar="GLOB",
                   help="tensor name globs eligible for quantization")
    p.add_argument("--exclude", nargs="*", default=["*embed*"], metavar="GLOB")
    p.add_argument("--min-rank", type=int, default=2)
    p.add_argument("--min-elements", type=int, default=4096)


def _policy(args) -> QuantPolicy:
    return QuantPolicy(tuple(args.include), tuple(args.exclude), args.min_rank, args.min_elements)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deltaquant", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    q = sub.add_parser("quantize", help="search scales and write an FP8 checkpoint")
    q.add_argument("--base", required=True, help="base checkpoint (.safetensors, index json or dir)")
    q.add_argument("--post", required=True, help="post-trained checkpoint")
    q.add_argument("--out", required=True, help="output .safetensors path")
    q.add_argument("--metric", type=_metric, default=MetricKind.SIGN_RATE, help="sign | cosine | mse")
    q.add_argument("--granularity", type=_granularity, default=Granularity.block(),
                   help="tensor | channel | block | block:RxC (default block:128x128)")
    q.add_argument("--range", type=parse_range, default=(0.8, 1.25), dest="alpha_range",
                   help="alpha search range 'lo,hi' (default 0.8,1.25)")
    q.add_argument("--n-coarse", type=int, default=5)
    q.add_argument("--n-fine", type=int, default=10)
    q.add_argument("--delta", type=float, default=None, help="fine-stage half width (default: one coarse step)")
    q.add_argument("--report", default=None, help="JSON report path (default <out>.report.json)")
    q.add_argument("--csv", default=None, help="optional per-layer CSV export")
    q.add_argument("--workers", type=int, default=default_workers())
    q.add_argument("--max-shard-bytes", type=int, default=None)
    _add_policy_args(q)

    e = sub.add_parser("evaluate", help="score a quantized checkpoint against base/post")
    e.add_argument("--base", required=True)
    e.add_argument("--post", required=True)
    e.add_argument("--quant", required=True)
    e.add_argument("--report", default=None, help="JSON report path (default <quant>.report.json)")
    e.add_argument("--csv", default=None)
    _add_policy_args(e)

    b = sub.add_parser("bench-synthetic", help="compare objectives on random Gaussian layers")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--layers", type=int, default=8)
    b.add_argument("--rows", type=int, default=256)
    b.add_argument("--cols", type=int, default=256)
    b.add_argument("--delta-sigma", type=float, default=0.01)
    b.add_argument("--configs", default="absmax,mse,sign,cosine")
    b.add_argument("--granularity", type=_granularity, default=Granularity.block())
    b.add_argument("--range", type=parse_range, default=(0.8, 1.25), dest="alpha_range")
    b.add_argument("--n-coarse", type=int, default=5)
    b.add_argument("--n-fine", type=int, default=10)
    b.add_argument("--workers", type=int, default=default_workers())
    b.add_argument("--report", default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "quantize":
            report = cmd_quantize(
                args.base, args.post, args.out, args.metric, args.granularity, args.alpha_range,
                args.n_coarse, args.n_fine, args.delta, _policy(args), args.report, args.csv,
                args.workers, args.max_shard_bytes,
            )
            print(report.to_text(), end="")
        elif args.command == "evaluate":
            report = cmd_evaluate(args.base, args.post, args.quant, args.report, _policy(args), args.csv)
            print(report.to_text(), end="")
        else:
            result = cmd_bench_synthetic(
                report_path=args.report, workers=args.workers, seed=args.seed, layers=args.layers,
                rows=args.rows, cols=args.cols, delta_sigma=args.delta_sigma,
                configs=[c.strip() for c in args.configs.split(",") if c.strip()],
                granularity=args.granularity, alpha_range=args.alpha_range,
                n_coarse=args.n_coarse, n_fine=args.n_fine,
            )
            print(bench.bench_table(result), end="")
    except DeltaQuantError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
