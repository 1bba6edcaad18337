"""``dlmorder`` command line: train, compare, verify, ablate, pdg.

Exit codes: 0 ok, 1 a verification check failed, 2 usage or input error,
3 runtime failure (for example training divergence).
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from ..corpus import import_jsonl
from ..errors import DlmOrderError, InvalidInput, TrainingDiverged
from ..model import aggregate_attention, checkpoint_json, load_checkpoint
from ..theory import (
    MAX_EXACT_BLOCK, best_order, brute_force_min_exact_pdg, masked_block_attention, pdg_report, pdg_surrogate,
)
from . import experiments
from .config import ConfigError, load_config
from .reports import dumps, write_csv, write_json
from .svg import emit_svg_scatter
from .verification import run_verify

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _config(args):
    if not args.config:
        raise UsageError("--config is required")
    return load_config(args.config, seed=args.seed, out_dir=args.out)


def _load_params(path):
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"checkpoint not found: {path}")
    try:
        return load_checkpoint(path)
    except (ValueError, KeyError) as exc:
        raise UsageError(f"unreadable checkpoint {path}: {exc}") from None


def cmd_train(args) -> int:
    cfg = _config(args)
    result = experiments.run_training(cfg)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    ck = cfg.checkpoint_path
    ck.parent.mkdir(parents=True, exist_ok=True)
    ck.write_text(checkpoint_json(result.params), encoding="utf-8")
    write_csv([{"step": i, "loss": v} for i, v in enumerate(result.losses)], ("step", "loss"),
              out / "train_loss.csv")
    if result.losses:
        print(f"trained {len(result.losses)} steps: loss {result.losses[0]:.4f} -> {result.losses[-1]:.4f}")
    print(f"checkpoint: {ck}")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _config(args)
    params = _load_params(args.checkpoint or cfg.checkpoint_path)
    report = experiments.compare(params, cfg)
    out = cfg.out_dir
    write_json({"block_range": report["block_range"], "rows": report["rows"]}, out / "compare.json")
    write_csv(report["rows"], experiments.COMPARE_COLUMNS, out / "compare.csv")
    write_csv(report["blocks"], experiments.BLOCK_COLUMNS, out / "compare_blocks.csv")
    emit_svg_scatter(report["rows"], "tokens_per_forward", "mean_loglik", out / "compare.svg",
                     title="tokens per forward vs log-likelihood")
    # wall time is machine dependent, so it stays out of the deterministic reports
    write_json({"seconds": report["timing"]}, out / "compare_timing.json")
    for row in report["rows"]:
        print(f"{row['sampler']:<40} tpf={row['tokens_per_forward']:.3f} loglik={row['mean_loglik']:.4f} "
              f"pdg={row['mean_pdg']:.4f} acc={row['accuracy']:.3f}")
    return EXIT_OK


def cmd_verify(args, order_fn=best_order) -> int:
    t0 = time.perf_counter()
    results = run_verify(args.trials, args.seed if args.seed is not None else 0, order_fn)
    ok = all(r.passed for r in results)
    report = {"passed": ok, "seed": args.seed if args.seed is not None else 0,
              "checks": [r.to_dict() for r in results]}
    if args.out:
        write_json(report, Path(args.out) / "verify.json")
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name:<20} trials={r.trials} max_violation={r.max_violation:.3e}")
        if not r.passed:
            print(f"  counterexample: {json.dumps(r.counterexample, sort_keys=True, default=float)}")
    print(f"{'all checks passed' if ok else 'verification FAILED'} ({time.perf_counter() - t0:.2f}s)")
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_ablate(args) -> int:
    if args.axis not in experiments.ABLATE_AXES:
        raise UsageError(f"--axis must be one of {', '.join(experiments.ABLATE_AXES)}")
    cfg = _config(args)
    params = _load_params(args.checkpoint or cfg.checkpoint_path)
    rows = experiments.ablate(params, cfg, args.axis)
    out = cfg.out_dir
    stem = f"ablate_{args.axis}"
    write_csv(rows, experiments.ABLATE_COLUMNS, out / f"{stem}.csv")
    write_json({"axis": args.axis, "rows": rows}, out / f"{stem}.json")
    for row in rows:
        row["label"] = f"{row['value']}: {row['sampler']}" if args.axis != "attn_strategy" else row["sampler"]
    emit_svg_scatter(rows, "tokens_per_forward", "mean_loglik", out / f"{stem}.svg", label_field="label",
                     title=f"ablation over {args.axis}")
    for row in rows:
        print(f"{row['label']:<40} tpf={row['tokens_per_forward']:.3f} loglik={row['mean_loglik']:.4f}")
    return EXIT_OK


def parse_block(spec: str) -> tuple[int, int]:
    try:
        a, b = spec.split(":")
        start, stop = int(a), int(b)
    except ValueError:
        raise UsageError(f"--block must look like START:STOP, got {spec!r}") from None
    if not 0 <= start < stop:
        raise UsageError(f"--block {spec}: need 0 <= START < STOP")
    return start, stop


def cmd_pdg(args) -> int:
    if not args.checkpoint or not args.sequences or not args.block:
        raise UsageError("pdg needs --checkpoint, --sequences and --block")
    params = _load_params(args.checkpoint)
    try:
        corpus = import_jsonl(args.sequences)
    except FileNotFoundError:
        raise UsageError(f"sequence file not found: {args.sequences}") from None
    start, stop = parse_block(args.block)
    b = stop - start
    if stop > corpus.seq_len:
        raise UsageError(f"block {start}:{stop} exceeds sequence length {corpus.seq_len}")
    perm_spec = args.perm
    explicit = None
    if perm_spec not in ("best_order", "brute_force"):
        try:
            explicit = tuple(int(x) for x in perm_spec.split(","))
        except ValueError:
            raise UsageError("--perm must be best_order, brute_force or a comma list of offsets") from None
        if sorted(explicit) != list(range(b)):
            raise UsageError(f"--perm {perm_spec} is not a permutation of 0..{b - 1}")
    if perm_spec == "brute_force" and b > MAX_EXACT_BLOCK:
        raise UsageError(f"brute_force needs a block of at most {MAX_EXACT_BLOCK} positions, got {b}")
    limit = corpus.sequences.shape[0] if args.limit is None else min(args.limit, corpus.sequences.shape[0])
    reports = []
    for idx in range(limit):
        seq = corpus.sequences[idx]
        A = aggregate_attention(masked_block_attention(params, seq, (start, stop)))
        if perm_spec == "best_order":
            perm = best_order(A, (start, stop))
        elif perm_spec == "brute_force":
            perm, _ = brute_force_min_exact_pdg(params, seq, (start, stop), frozen=args.frozen)
        else:
            perm = explicit
        rep = pdg_report(params, seq, (start, stop), perm, frozen_attention=args.frozen).to_dict()
        rep["sequence_index"] = idx
        rep["identity_surrogate"] = pdg_surrogate(A, tuple(range(b)), (start, stop))
        rep["best_order_surrogate"] = pdg_surrogate(A, best_order(A, (start, stop)), (start, stop))
        reports.append(rep)
    doc = {"block": [start, stop], "permutation_spec": perm_spec, "frozen_attention": args.frozen,
           "reports": reports}
    text = dumps(doc)
    if args.out:
        path = Path(args.out) / "pdg.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON)")
    common.add_argument("--seed", type=int, default=None, help="override the config seeds")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--trials", type=int, default=None, help="trials per verification sweep")

    parser = argparse.ArgumentParser(prog="dlmorder", description="Decoding-order experiments for toy masked diffusion LMs")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train a toy model from a config")
    p = sub.add_parser("compare", parents=[common], help="evaluate the configured samplers")
    p.add_argument("--checkpoint", default=None, help="checkpoint to evaluate (default: the config's)")
    sub.add_parser("verify", parents=[common], help="run the verification sweeps")
    p = sub.add_parser("ablate", parents=[common], help="layer, head or strategy ablation")
    p.add_argument("--axis", required=True, help="layers, heads or attn_strategy")
    p.add_argument("--checkpoint", default=None)
    p = sub.add_parser("pdg", parents=[common], help="exact PDG, bound and surrogate for given blocks")
    p.add_argument("--checkpoint")
    p.add_argument("--sequences", help="corpus JSONL file")
    p.add_argument("--block", help="START:STOP")
    p.add_argument("--perm", default="best_order", help="best_order, brute_force or e.g. 2,0,1,3")
    p.add_argument("--limit", type=int, default=None, help="evaluate only the first N sequences")
    p.add_argument("--frozen", action=argparse.BooleanOptionalAction, default=True,
                   help="evaluate with the attention of the fully masked block")
    return parser


COMMANDS = {"train": cmd_train, "compare": cmd_compare, "verify": cmd_verify, "ablate": cmd_ablate, "pdg": cmd_pdg}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if args.trials is not None and args.trials < 0:
        print("error: --trials must be nonnegative", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except InvalidInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DlmOrderError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
