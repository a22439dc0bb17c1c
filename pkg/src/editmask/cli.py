"""``editmask`` command line: synth, maskgen, batch, report, ema-sim.

Exit codes: 0 success, 1 data errors, 2 usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import emasim, imagecore, maskgen, pipeline
from .imagecore import Ellipse, Rect, SynthSpec
from .maskgen import MaskGenConfig
from .weighting import DEFAULT_X_CAP, WeightFunctionKind, WeightSpec

EXIT_OK = 0
EXIT_DATA = 1
EXIT_USAGE = 2

# Largest P simulated with real arrays; beyond this only accounting runs.
MAX_SIMULATED_PARAMS = 50_000_000

_STEP_NAMES = ("step1_diff", "step2_dilate", "step3_filter", "step4_pool")


# -- argument parsing -----------------------------------------------------------


def _add_maskgen_flags(p: argparse.ArgumentParser) -> None:
    d = MaskGenConfig()
    p.add_argument("--tolerance", type=int, default=d.tolerance,
                   help="per-channel |difference| a pixel must exceed (default: %(default)s)")
    p.add_argument("--dilation", type=int, default=d.dilation_radius,
                   help="square dilation radius in pixels (default: %(default)s)")
    p.add_argument("--min-area", type=int, default=d.min_component_area,
                   help="smallest connected component kept, in pixels (default: %(default)s)")
    p.add_argument("--connectivity", type=int, choices=(4, 8), default=d.connectivity,
                   help="component connectivity (default: %(default)s)")
    p.add_argument("--pool", type=int, default=d.pool_kernel,
                   help="max-pool window and stride in pixels (default: %(default)s)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="editmask", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write synthetic edit pairs with ground-truth masks")
    p.add_argument("--count", type=int, default=10, help="number of pairs (default: %(default)s)")
    p.add_argument("--width", type=int, default=512, help="(default: %(default)s)")
    p.add_argument("--height", type=int, default=512, help="(default: %(default)s)")
    p.add_argument("--region", default=None,
                   help="rect:x0,y0,x1,y1 | ellipse:cx,cy,rx,ry | none | full; "
                        "random per pair when omitted")
    p.add_argument("--noise", type=int, default=0, help="noise amplitude, 8-bit units (default: %(default)s)")
    p.add_argument("--speckle", type=int, default=0, help="isolated speckle pixels per pair (default: %(default)s)")
    p.add_argument("--seed", type=int, default=0, help="(default: %(default)s)")
    p.add_argument("--outdir", required=True, type=Path)

    p = sub.add_parser("maskgen", help="run the mask pipeline on one pair, dumping every step")
    p.add_argument("--reference", required=True, type=Path)
    p.add_argument("--target", required=True, type=Path)
    _add_maskgen_flags(p)
    p.add_argument("--out-prefix", required=True,
                   help="writes <prefix>.step{1..4}_*.png and <prefix>.stats.json")

    p = sub.add_parser("batch", help="generate masks and weights for a JSONL manifest")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--outdir", required=True, type=Path)
    _add_maskgen_flags(p)
    p.add_argument("--weight-fn", choices=[k.value for k in WeightFunctionKind],
                   default=WeightFunctionKind.LOGARITHMIC.value, help="(default: %(default)s)")
    p.add_argument("--x-cap", type=float, default=DEFAULT_X_CAP,
                   help="upper clamp on the area ratio, <= 0 disables (default: %(default)s)")
    p.add_argument("--parallelism", type=int, default=1, help="worker threads (default: %(default)s)")
    p.add_argument("--fail-fast", action="store_true", help="stop at the first failing record")
    p.add_argument("--allow-errors", action="store_true", help="exit 0 even if some records failed")

    p = sub.add_parser("report", help="corpus statistics for an output manifest")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--json", type=Path, default=None,
                   help="JSON report path (default: report.json next to the manifest)")

    p = sub.add_parser("ema-sim", help="sharded FP32 EMA equivalence and accounting")
    p.add_argument("--params", required=True, help="parameter count P, e.g. 10007 or 20e9")
    p.add_argument("--workers", default="1,2,8", help="comma-separated worker counts N (default: %(default)s)")
    p.add_argument("--decay", type=float, default=emasim.DEFAULT_DECAY, help="(default: %(default)s)")
    p.add_argument("--steps", type=int, default=100, help="(default: %(default)s)")
    p.add_argument("--seed", type=int, default=0, help="trajectory seed (default: %(default)s)")
    p.add_argument("--update-every", type=int, default=1, help="(default: %(default)s)")
    p.add_argument("--precision", choices=("fp32", "fp16"), default="fp32",
                   help="precision of the trajectory fed to the FP32 EMA (default: %(default)s)")
    p.add_argument("--accounting-only", action="store_true",
                   help="memory/compute tables only; nothing of size P is allocated")
    p.add_argument("--constant-trajectory", action="store_true",
                   help="hold params fixed and check against the closed form")
    p.add_argument("--out", type=Path, default=Path("ema_report.json"),
                   help="JSON report path (default: %(default)s)")
    return parser


class UsageError(Exception):
    def __init__(self, flag: str, message: str):
        super().__init__(f"argument {flag}: {message}")


def _mask_config(args: argparse.Namespace) -> MaskGenConfig:
    checks = [
        ("--tolerance", 0 <= args.tolerance <= 255, "must be in [0, 255]"),
        ("--dilation", args.dilation >= 0, "must be >= 0"),
        ("--min-area", args.min_area >= 0, "must be >= 0"),
        ("--pool", args.pool >= 1, "must be >= 1"),
    ]
    for flag, ok, message in checks:
        if not ok:
            raise UsageError(flag, message)
    return MaskGenConfig(args.tolerance, args.dilation, args.min_area, args.connectivity, args.pool)


def parse_region(text: str, width: int, height: int) -> Rect | Ellipse | None:
    kind, _, rest = text.partition(":")
    kind = kind.strip().lower()
    if kind == "none" and not rest:
        return None
    if kind == "full" and not rest:
        return Rect(0, 0, width, height)
    try:
        nums = [float(v) for v in rest.split(",")]
    except ValueError:
        raise UsageError("--region", f"cannot parse {text!r}") from None
    if len(nums) != 4:
        raise UsageError("--region", f"expected 4 numbers in {text!r}")
    if kind == "rect":
        if any(v != int(v) for v in nums):
            raise UsageError("--region", "rect coordinates must be integers")
        region: Rect | Ellipse = Rect(*(int(v) for v in nums))
    elif kind == "ellipse":
        region = Ellipse(*nums)
    else:
        raise UsageError("--region", f"unknown region kind {kind!r}")
    if not region.within(width, height):
        raise UsageError("--region", f"{text!r} is out of bounds for {width}x{height}")
    return region


def parse_count(text: str, flag: str) -> int:
    try:
        value = float(text.replace("_", ""))
    except ValueError:
        raise UsageError(flag, f"not a number: {text!r}") from None
    if not math.isfinite(value) or value != int(value):
        raise UsageError(flag, f"must be a whole number: {text!r}")
    return int(value)


# -- synth ----------------------------------------------------------------------


def random_region(width: int, height: int, rng: np.random.Generator,
                  min_fraction: float = 0.002, max_fraction: float = 0.5) -> Rect | Ellipse:
    """Rectangle or ellipse with log-uniform area fraction, fully in bounds."""
    fraction = math.exp(rng.uniform(math.log(min_fraction), math.log(max_fraction)))
    aspect = math.exp(rng.uniform(math.log(0.5), math.log(2.0)))
    area = fraction * width * height
    if rng.integers(2) == 0:
        w = max(1, min(width, round(math.sqrt(area * aspect))))
        h = max(1, min(height, round(area / w)))
        x0 = int(rng.integers(0, width - w + 1))
        y0 = int(rng.integers(0, height - h + 1))
        return Rect(x0, y0, x0 + w, y0 + h)
    rx = min(width / 2, math.sqrt(area * aspect / math.pi))
    ry = min(height / 2, area / (math.pi * rx))
    cx = float(rng.uniform(rx, width - rx))
    cy = float(rng.uniform(ry, height - ry))
    return Ellipse(cx, cy, rx, ry)


def region_label(region: Rect | Ellipse | None) -> str:
    if region is None:
        return "none"
    if isinstance(region, Rect):
        return f"rect:{region.x0},{region.y0},{region.x1},{region.y1}"
    return f"ellipse:{region.cx:.6g},{region.cy:.6g},{region.rx:.6g},{region.ry:.6g}"


def cmd_synth(args: argparse.Namespace) -> int:
    if args.count < 0:
        raise UsageError("--count", "must be >= 0")
    if args.width < 1 or args.height < 1:
        raise UsageError("--width" if args.width < 1 else "--height", "must be >= 1")
    if args.noise < 0:
        raise UsageError("--noise", "must be >= 0")
    if args.speckle < 0:
        raise UsageError("--speckle", "must be >= 0")
    if not 0 <= args.seed < 2**63:
        raise UsageError("--seed", "must be in [0, 2**63)")
    fixed = parse_region(args.region, args.width, args.height) if args.region else None

    outdir: Path = args.outdir
    outdir.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(args.count):
        rng = imagecore.counter_rng(args.seed, 1 + i)
        region = fixed if args.region else random_region(args.width, args.height, rng)
        truth_px = region.rasterize(args.width, args.height) if region is not None else None
        speckle = imagecore.scatter_speckle(args.width, args.height, args.speckle, rng, avoid=truth_px)
        spec = SynthSpec(args.width, args.height, region, args.noise, speckle)
        reference, target, truth = imagecore.synth_pair(spec, int(rng.integers(0, 2**63)))
        pid = f"pair{i:05d}"
        imagecore.save_image(reference, outdir / f"{pid}.ref.png")
        imagecore.save_image(target, outdir / f"{pid}.tgt.png")
        imagecore.save_mask(truth, outdir / f"{pid}.truth.png")
        shape = "none" if region is None else type(region).__name__.lower()
        rows.append({
            "id": pid,
            "reference_path": f"{pid}.ref.png",
            "target_path": f"{pid}.tgt.png",
            "instruction": f"recolor the {shape} region" if region is not None else "leave unchanged",
            "task_tag": f"synthetic-{shape}",
            "truth_path": f"{pid}.truth.png",
            "region": region_label(region),
            "truth_area": truth.count(),
        })
    pipeline.write_manifest(outdir / "manifest.jsonl", rows)
    print(f"wrote {len(rows)} pairs to {outdir / 'manifest.jsonl'}")
    return EXIT_OK


# -- maskgen --------------------------------------------------------------------


def cmd_maskgen(args: argparse.Namespace) -> int:
    config = _mask_config(args)
    prefix = Path(args.out_prefix)
    try:
        reference = imagecore.load_image(args.reference)
        target = imagecore.load_image(args.target)
        steps = maskgen.run_steps(reference, target, config)
    except (OSError, imagecore.ImageError, maskgen.PairMismatchError) as exc:
        print(f"editmask maskgen: {exc}", file=sys.stderr)
        return EXIT_DATA

    prefix.parent.mkdir(parents=True, exist_ok=True)
    masks = (steps.diff, steps.dilated, steps.filtered, steps.pooled)
    for name, mask in zip(_STEP_NAMES, masks):
        imagecore.save_mask(mask, f"{prefix}.{name}.png")
    stats = maskgen.stats_for(steps.pooled, reference.width, reference.height)
    body = {
        "a_edit": stats.a_edit,
        "a_total": stats.a_total,
        "x": stats.x,
        "degenerate_no_edit": stats.degenerate_no_edit,
        "degenerate_full_edit": stats.degenerate_full_edit,
        "w": {k.value: WeightSpec.for_ratio(k, stats.x, None).w for k in WeightFunctionKind},
        "step_counts": {name: m.count() for name, m in zip(_STEP_NAMES, masks)},
        "config": config.to_dict(),
    }
    Path(f"{prefix}.stats.json").write_text(json.dumps(body, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(body))
    return EXIT_OK


# -- batch / report -------------------------------------------------------------


def cmd_batch(args: argparse.Namespace) -> int:
    mask_config = _mask_config(args)
    if args.parallelism < 1:
        raise UsageError("--parallelism", "must be >= 1")
    if not args.manifest.is_file():
        raise UsageError("--manifest", f"no such file: {args.manifest}")
    config = pipeline.RunConfig(
        mask=mask_config,
        weight_kind=WeightFunctionKind(args.weight_fn),
        x_cap=args.x_cap if args.x_cap > 0 else None,
        parallelism=args.parallelism,
        outdir=args.outdir,
        fail_fast=args.fail_fast,
    )
    try:
        result = pipeline.run_batch(args.manifest, config)
    except pipeline.PairFailure as exc:
        print(f"editmask batch: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (pipeline.ManifestError, OSError) as exc:
        print(f"editmask batch: {exc}", file=sys.stderr)
        return EXIT_DATA
    s = result.summary
    print(f"{s.total} records: ok {s.ok}, degenerate {s.degenerate}, error {s.error} -> {result.output_manifest}")
    return EXIT_OK if s.error == 0 or args.allow_errors else EXIT_DATA


def cmd_report(args: argparse.Namespace) -> int:
    if not args.manifest.is_file():
        raise UsageError("--manifest", f"no such file: {args.manifest}")
    try:
        stats = pipeline.report(args.manifest)
    except (pipeline.ManifestError, TypeError, ValueError) as exc:
        print(f"editmask report: {exc}", file=sys.stderr)
        return EXIT_DATA
    out = args.json or args.manifest.parent / "report.json"
    out.write_text(json.dumps(stats, indent=2) + "\n", encoding="utf-8")
    print(pipeline.format_report(stats))
    return EXIT_OK


# -- ema-sim --------------------------------------------------------------------


def _memory_line(mem: emasim.MemoryReport) -> str:
    # GB = 1e9 bytes, GiB = 2**30 bytes
    return (
        f"N={mem.workers}: {mem.max_per_worker_bytes} bytes/worker = "
        f"{mem.per_worker_gb:.1f} GB/worker ({mem.per_worker_gib:.2f} GiB)"
    )


def cmd_ema_sim(args: argparse.Namespace) -> int:
    total = parse_count(args.params, "--params")
    try:
        workers = [int(v) for v in args.workers.split(",") if v.strip()]
    except ValueError:
        raise UsageError("--workers", f"expected comma-separated integers, got {args.workers!r}") from None
    if total < 1:
        raise UsageError("--params", "must be >= 1")
    if not workers or any(n < 1 or n > total for n in workers):
        raise UsageError("--workers", f"each N must satisfy 1 <= N <= P={total}")
    if not 0.0 < args.decay < 1.0:
        raise UsageError("--decay", "must lie in (0, 1)")
    if args.steps < 0:
        raise UsageError("--steps", "must be >= 0")
    if args.update_every < 1:
        raise UsageError("--update-every", "must be >= 1")
    if not 0 <= args.seed < 2**63:
        raise UsageError("--seed", "must be in [0, 2**63)")
    if not args.accounting_only and total > MAX_SIMULATED_PARAMS:
        raise UsageError("--params", f"{total} exceeds {MAX_SIMULATED_PARAMS} for simulation; pass --accounting-only")

    config = emasim.EmaConfig(args.decay, args.steps, args.update_every)
    mode = "constant" if args.constant_trajectory else "random_walk"
    rows = []
    lines = []
    for n in workers:
        layout = emasim.partition(total, n)
        if args.accounting_only:
            mem = emasim.memory_report(layout)
            comp = emasim.compute_report(layout, config)
            row = {"workers": n, "memory": mem.to_dict(), "compute": comp.to_dict()}
            verdict = "accounting only"
        else:
            res = emasim.simulate(total, n, config, args.seed, mode=mode, precision=args.precision)
            mem, comp = res.memory, res.compute
            row = {"workers": n, **res.to_dict()}
            verdict = f"bitwise_equal={res.bitwise_equal}"
        rows.append(row)
        lines.append(
            f"{_memory_line(mem)}; {max(comp.elements_per_step)} elements/worker/step "
            f"({comp.max_fraction:.4f} of P); {verdict}"
        )

    report = {
        "params": total,
        "config": {
            "decay": args.decay,
            "steps": args.steps,
            "update_every": args.update_every,
            "seed": args.seed,
            "precision": args.precision,
            "mode": mode,
            "accounting_only": args.accounting_only,
        },
        "runs": rows,
    }
    ok = all(r.get("bitwise_equal", True) for r in rows)
    if args.constant_trajectory and not args.accounting_only:
        check = emasim.convergence_check(total, args.decay, args.steps, args.seed)
        check["fp32_rounding_bound"] = emasim.fp32_rounding_bound(args.decay, args.steps)
        report["closed_form"] = check
        lines.append(
            f"closed form: max relative error {check['max_rel_error']:.3e} over {args.steps} steps "
            f"(FP32 rounding bound {check['fp32_rounding_bound']:.3e})"
        )
        ok = ok and check["max_rel_error"] <= check["fp32_rounding_bound"]

    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    print("\n".join(lines))
    return EXIT_OK if ok else EXIT_DATA


COMMANDS = {
    "synth": cmd_synth,
    "maskgen": cmd_maskgen,
    "batch": cmd_batch,
    "report": cmd_report,
    "ema-sim": cmd_ema_sim,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"editmask {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
