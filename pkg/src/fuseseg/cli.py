"""Command-line interface.

Exit codes: 0 success, 1 usage/config error, 2 data or parse error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .caseio import Case, read_case, read_manifest, write_case, write_manifest
from .checkpoint import load_checkpoint
from .config import load_config
from .errors import (ConfigError, ContractError, DegenerateInputError,
                     DimensionError, NumericError, ParseError)
from .evaluate import (ablate, evaluate_cases, parse_modalities,
                       reconstruct_volumes, subset_name)
from .gradcheck import run_all
from .phantom import PhantomConfig, synth_case
from .train import train


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def build_parser() -> _Parser:
    p = _Parser(prog="fuseseg",
                description="Multimodal tumor segmentation with feature "
                            "disentanglement and gated fusion")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic phantom dataset")
    s.add_argument("--cases", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--edge", type=int, default=48)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="missing-modality evaluation")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--modalities",
                   help="comma-separated subset, e.g. FLAIR,T1c")
    g.add_argument("--all-combinations", action="store_true")
    s.add_argument("--csv", help="write the table as CSV here")
    s.add_argument("--md", help="write the table as Markdown here")
    s.add_argument("--predictions",
                   help="directory for predicted label volumes")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("reconstruct",
                       help="reconstruct all modalities from a subset")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--case", required=True)
    s.add_argument("--modalities", required=True)
    s.add_argument("--out", help="output path (default: alongside the case)")
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("ablate", help="train and compare fusion variants")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    s.add_argument("--tol", type=float, default=1e-5)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gradcheck)
    return p


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = PhantomConfig(extents=(args.edge,) * 3)
    names = []
    for i in range(args.cases):
        case = synth_case(cfg, args.seed + i)
        name = f"case_{i:03d}.mmvc"
        write_case(case, out / name)
        names.append(name)
    manifest = write_manifest(out / "manifest.txt", names)
    print(f"wrote {len(names)} cases and {manifest}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    result = train(cfg, args.out)
    print(f"trained {result.epochs} epochs, {result.iterations} iterations")
    print(f"log: {result.log_path}")
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


def cmd_eval(args) -> int:
    net, _, _ = load_checkpoint(args.checkpoint)
    cases = [read_case(p) for p in read_manifest(args.manifest)]
    subsets = None
    if args.modalities:
        subsets = [parse_modalities(args.modalities, net.config.modalities)]
    table = evaluate_cases(net, cases, subsets=subsets,
                           predictions_dir=args.predictions)
    md = table.to_markdown()
    print(md, end="")
    if args.csv:
        Path(args.csv).write_text(table.to_csv())
    if args.md:
        Path(args.md).write_text(md)
    return 0


def cmd_reconstruct(args) -> int:
    net, _, _ = load_checkpoint(args.checkpoint)
    case = read_case(args.case)
    subset = parse_modalities(args.modalities, net.config.modalities)
    recons = reconstruct_volumes(net, case, subset)
    tag = subset_name(subset, net.config.modalities).replace("+", "-")
    out = Path(args.out) if args.out else Path(
        args.case).with_suffix(f".recon-{tag}.mmvc")
    write_case(Case(id=out.stem, volumes=recons, labels=case.labels,
                    brain_mask=case.brain_mask, classes=case.classes), out)
    print(f"wrote reconstructions to {out}")
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    report = ablate(cfg, args.out)
    print(report.merged_markdown(), end="")
    return 0


def cmd_gradcheck(args) -> int:
    results, ok = run_all(args.seed, args.tol)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status}  {r.name:<24} max_rel={r.max_rel_error:.3e} "
              f"tol={r.tol:.1e}")
    if not ok:
        print("gradient check FAILED", file=sys.stderr)
        return 3
    print(f"all {len(results)} gradient checks passed")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"fuseseg: error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except (ConfigError, ContractError) as exc:
        print(f"fuseseg: error: {exc}", file=sys.stderr)
        return 1
    except (ParseError, DegenerateInputError, DimensionError, OSError) as exc:
        print(f"fuseseg: data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"fuseseg: numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
