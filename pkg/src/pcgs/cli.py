"""Command-line surface: synth, encode, decode, truncate, inspect, verify, rate-report.

Exit codes: 0 success, 1 I/O failure, 2 malformed file, 3 invariant violation.
Machine-readable output goes to stdout as JSON (--json) or CSV (--csv PATH);
human tables are the default.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import container, pipeline
from .errors import FormatError, PcgsError, ValidationError
from .masking import build_mask_state
from .model import validate_grid, validate_scene
from .modelio import read_scene_file, write_reconstruction_file, write_scene_file
from .synth import SynthSpec, generate, parse_spec_file


def _threads_flag(parser):
    parser.add_argument(
        "--threads",
        type=int,
        default=0,
        help="worker threads for table construction (0 = hardware count; "
        "PCGS_THREADS overrides)",
    )


def _apply_threads(args) -> None:
    n = int(os.environ.get("PCGS_THREADS", "0") or 0) or getattr(args, "threads", 0)
    if n > 0:
        try:
            import numba

            numba.set_num_threads(n)
        except (ImportError, ValueError):
            pass


def _cmd_synth(args) -> int:
    if args.spec:
        spec = parse_spec_file(args.spec)
    else:
        spec = SynthSpec()
    for name in ("num_anchors", "offsets_per_anchor", "feat_dim", "num_levels", "seed"):
        v = getattr(args, name)
        if v is not None:
            setattr(spec, name, v)
    if args.mode:
        spec.mode = args.mode
    bundle = generate(spec)
    write_scene_file(args.output, bundle)
    print(f"wrote {args.output}: N={spec.num_anchors} K={spec.offsets_per_anchor} "
          f"D={spec.feat_dim} S={spec.num_levels} mode={spec.mode} seed={spec.seed}")
    return 0


def _cmd_encode(args) -> int:
    bundle = read_scene_file(args.input)
    result = pipeline.encode_bundle(bundle, levels=args.levels)
    result.bitstream.save(args.output)
    total = os.path.getsize(args.output)
    print(f"wrote {args.output}: {total} bytes, "
          f"levels {[s.chunk_bytes for s in result.stats]}")
    return 0


def _cmd_decode(args) -> int:
    bs = container.ProgressiveBitstream.load(args.input)
    recon = pipeline.decode(bs, levels=args.levels)
    write_reconstruction_file(args.output, recon)
    print(f"wrote {args.output}: level {recon.level}, "
          f"{recon.original_index.shape[0]} anchors "
          f"({recon.anchor_coverage:.1%} coverage)")
    return 0


def _cmd_truncate(args) -> int:
    bs = container.ProgressiveBitstream.load(args.input)
    container.truncate(bs, args.level).save(args.output)
    print(f"wrote {args.output}: {args.level} of {bs.num_levels} levels kept")
    return 0


def _cmd_inspect(args) -> int:
    bs = container.ProgressiveBitstream.load(args.input)
    report = container.inspect(bs)
    if args.json:
        json.dump(report, sys.stdout, indent=2)
        print()
        return 0
    print(f"file_bytes={report['file_bytes']}")
    print(f"header_bytes={report['header_bytes']}")
    print(f"levels={report['present_levels']} anchors={report['total_anchors']} "
          f"valid={report['valid_anchors']}")
    for sec in report["header_sections"]:
        print(f"header.{sec['tag']}={sec['bytes']}")
    print(f"{'level':>5} {'delta_bytes':>12} {'cumulative':>12} {'r_anchor':>9} {'r_gauss':>8}")
    for lv in report["levels"]:
        print(f"{lv['level']:>5} {lv['delta_bytes']:>12} {lv['cumulative_bytes']:>12} "
              f"{lv['anchor_ratio']:>9.4f} {lv['gauss_ratio']:>8.4f}")
    return 0


def _cmd_verify(args) -> int:
    bundle = read_scene_file(args.input)
    report = validate_scene(bundle.scene, bundle.params, bundle.net, bundle.cfg)
    report += validate_grid(bundle.grid, bundle.net)
    if report:
        for line in report:
            print(f"violation: {line}")
        raise ValidationError(f"{len(report)} invariant violations")
    print(f"{args.input}: consistent "
          f"(N={bundle.scene.num_anchors} K={bundle.scene.offsets_per_anchor} "
          f"D={bundle.scene.feat_dim} S={bundle.cfg.num_levels})")
    return 0


def _cmd_rate_report(args) -> int:
    bundle = read_scene_file(args.scene)
    bs = container.ProgressiveBitstream.load(args.bitstream)
    report = container.inspect(bs)
    recons = pipeline.decode(bs, snapshots=True)
    rows = []
    for lv, recon in zip(report["levels"], recons):
        err = pipeline.reconstruction_error(bundle.scene, recon)
        rows.append(
            {
                "level": lv["level"],
                "delta_bytes": lv["delta_bytes"],
                "cumulative_bytes": lv["cumulative_bytes"],
                "anchor_ratio": lv["anchor_ratio"],
                "gauss_ratio": lv["gauss_ratio"],
                "feat_mse": err.feat_mse,
                "scaling_mse": err.scaling_mse,
                "offset_mse": err.offset_mse,
            }
        )
    header = list(rows[0].keys()) if rows else []
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(repr(row[k]) if isinstance(row[k], float) else str(row[k])
                                  for k in header) + "\n")
    print(f"{'level':>5} {'delta_bytes':>12} {'cumulative':>12} {'r_anchor':>9} "
          f"{'r_gauss':>8} {'feat_mse':>12} {'scal_mse':>12} {'off_mse':>12}")
    for row in rows:
        print(f"{row['level']:>5} {row['delta_bytes']:>12} {row['cumulative_bytes']:>12} "
              f"{row['anchor_ratio']:>9.4f} {row['gauss_ratio']:>8.4f} "
              f"{row['feat_mse']:>12.4e} {row['scaling_mse']:>12.4e} {row['offset_mse']:>12.4e}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pcgs", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic scene/model file")
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--spec", help="key=value spec file")
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("-N", "--num-anchors", dest="num_anchors", type=int, default=None)
    sp.add_argument("-K", "--offsets-per-anchor", dest="offsets_per_anchor", type=int, default=None)
    sp.add_argument("-D", "--feat-dim", dest="feat_dim", type=int, default=None)
    sp.add_argument("-S", "--num-levels", dest="num_levels", type=int, default=None)
    sp.add_argument("--mode", choices=("calibrated", "adversarial"), default=None)
    _threads_flag(sp)
    sp.set_defaults(func=_cmd_synth)

    sp = sub.add_parser("encode", help="encode a scene file to a progressive bitstream")
    sp.add_argument("-i", "--input", required=True)
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--levels", type=int, default=None)
    _threads_flag(sp)
    sp.set_defaults(func=_cmd_encode)

    sp = sub.add_parser("decode", help="decode a bitstream to a reconstruction file")
    sp.add_argument("-i", "--input", required=True)
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--levels", type=int, default=None)
    _threads_flag(sp)
    sp.set_defaults(func=_cmd_decode)

    sp = sub.add_parser("truncate", help="drop levels past a prefix boundary")
    sp.add_argument("-i", "--input", required=True)
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--level", type=int, required=True)
    sp.set_defaults(func=_cmd_truncate)

    sp = sub.add_parser("inspect", help="size ledger and mask ratios of a bitstream")
    sp.add_argument("-i", "--input", required=True)
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=_cmd_inspect)

    sp = sub.add_parser("verify", help="check scene/model invariants")
    sp.add_argument("-i", "--input", required=True)
    sp.set_defaults(func=_cmd_verify)

    sp = sub.add_parser("rate-report", help="per-level sizes, ratios, and MSE table")
    sp.add_argument("-i", "--scene", required=True)
    sp.add_argument("-b", "--bitstream", required=True)
    sp.add_argument("--csv", default=None)
    _threads_flag(sp)
    sp.set_defaults(func=_cmd_rate_report)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _apply_threads(args)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except PcgsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
