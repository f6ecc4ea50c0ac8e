"""Command-line harness.

Exit codes: 0 success, 2 user/config error, 3 numerical failure, 4 I/O error.
Verbosity follows the ``ERVQ_LOG`` environment variable (error, info, debug).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import diagnostics, formats, trainer
from .errors import ErvqIOError, FormatError, InputError, NumericalError
from .rvq import RvqStack, decode, rvq_quantize

log = logging.getLogger("ervq")

EXIT_OK, EXIT_USER, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class UserError(Exception):
    pass


def _read_json(path, what: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise UserError(f"{what} file not found: {p}")
    try:
        return formats.load_json(p)
    except json.JSONDecodeError as exc:
        raise UserError(f"{what} file {p} is not valid JSON: {exc}") from exc


def _load_stack(path) -> RvqStack:
    doc = _read_json(path, "checkpoint")
    try:
        return RvqStack.from_dict(doc)
    except InputError as exc:
        raise UserError(f"checkpoint {path}: {exc}") from exc


def _read_input(reader, path, what: str):
    p = Path(path)
    if not p.is_file():
        raise UserError(f"{what} file not found: {p}")
    try:
        return reader(p)
    except FormatError as exc:
        raise UserError(f"{what} file {p}: {exc}") from exc


def _indices_for(stack: RvqStack, path) -> np.ndarray:
    idx, _ = _read_input(formats.read_indices, path, "indices")
    if idx.shape[1] != stack.M:
        raise UserError(f"indices file {path} has {idx.shape[1]} stages, checkpoint has {stack.M}")
    for m, cb in enumerate(stack.codebooks):
        if idx.shape[0] and idx[:, m].max() >= cb.K:
            raise UserError(f"indices file {path}: stage {m} index {idx[:, m].max()} out of range [0, {cb.K})")
    return idx


def _stack_K(stack: RvqStack) -> int:
    return max(cb.K for cb in stack.codebooks)


# --- subcommands ----------------------------------------------------------

def cmd_train(args) -> int:
    doc = _read_json(args.config, "config")
    try:
        cfg = trainer.TrainConfig.from_dict(doc)
    except InputError as exc:
        raise UserError(f"invalid config {args.config}: {exc}") from exc
    out = Path(args.out)
    try:
        model, history, rep = trainer.run(cfg)
    except NumericalError as exc:
        if exc.state is not None:
            formats.dump_json(out / "failure_state.json", exc.state)
        raise
    formats.dump_json(out / "checkpoint.json", model.checkpoint(cfg))
    formats.atomic_write_text(out / "train_log.csv", trainer.log_csv(history))
    diagnostics.write_report(rep, out / "stats.json", out / "stats.csv")
    log.info("trained %d steps; final total loss %.6g", cfg.steps, history[-1].total)
    return EXIT_OK


def cmd_quantize(args) -> int:
    stack = _load_stack(args.checkpoint)
    x = _read_input(formats.read_matrix, args.features, "features")
    try:
        res = rvq_quantize(x, stack)
    except InputError as exc:
        raise UserError(str(exc)) from exc
    formats.write_indices(args.out, res.indices, _stack_K(stack))
    return EXIT_OK


def cmd_decode(args) -> int:
    stack = _load_stack(args.checkpoint)
    idx = _indices_for(stack, args.indices)
    formats.write_matrix(args.out, decode(idx, stack))
    return EXIT_OK


def analyze_report(stack: RvqStack, indices=None, features=None) -> dict:
    if features is not None:
        indices = rvq_quantize(features, stack).indices
    counts = [np.bincount(indices[:, m], minlength=cb.K) for m, cb in enumerate(stack.codebooks)]
    return diagnostics.report(counts)


def cmd_analyze(args) -> int:
    stack = _load_stack(args.checkpoint)
    if args.indices:
        rep = analyze_report(stack, indices=_indices_for(stack, args.indices))
    else:
        x = _read_input(formats.read_matrix, args.features, "features")
        try:
            rep = analyze_report(stack, features=x)
        except InputError as exc:
            raise UserError(str(exc)) from exc
    if args.csv:
        sys.stdout.write(diagnostics.report_csv(rep))
    else:
        sys.stdout.write(json.dumps(rep, indent=1) + "\n")
    return EXIT_OK


def cmd_export(args) -> int:
    stack = _load_stack(args.checkpoint)
    x = (_read_input(formats.read_matrix, args.features, "features") if args.features
         else np.zeros((0, stack.N)))
    diagnostics.export_embedding_dump(stack, x, args.out)
    return EXIT_OK


def cmd_grad_check(args) -> int:
    model, batch = trainer.small_model(seed=args.seed)
    errs = trainer.grad_check(model, batch)
    worst = max(errs[t] for t in trainer.TERMS)
    for t in trainer.TERMS:
        print(f"{t:<15} max relative error {errs[t]:.3e}")
    print(f"{'overall':<15} max relative error {worst:.3e} ({model.num_params} parameters, "
          f"{errs['rows_used']} rows)")
    return EXIT_OK if worst < args.tolerance else EXIT_NUMERIC


def cmd_collapse_demo(args) -> int:
    overrides = {"num_stages": args.stages} if args.stages else {}
    base = trainer.canonical_collapse_config(args.seed, ervq_enabled=False, **overrides)
    ervq = trainer.canonical_collapse_config(args.seed, **overrides)
    arms = trainer.collapse_experiment(base, ervq)
    out = Path(args.out)
    for name, rep in arms.items():
        diagnostics.write_report(rep, out / f"{name}_stats.json", out / f"{name}_stats.csv")
    summary = trainer.collapse_summary(arms)
    formats.atomic_write_text(out / "summary.txt", summary)
    sys.stdout.write(summary)
    return EXIT_OK


# --- entry point ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ervq", description="Residual VQ with online-clustering codebooks")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", help="train the toy codec from a JSON config")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("quantize", help="quantize a feature matrix file into an index stream")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_quantize)

    s = sub.add_parser("decode", help="sum codewords of an index stream into a matrix file")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--indices", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("analyze", help="print utilization, perplexity and bitrate efficiency")
    s.add_argument("--checkpoint", required=True)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--indices")
    g.add_argument("--features")
    s.add_argument("--csv", action="store_true", help="print the flat CSV form instead of JSON")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("export", help="dump codebooks and per-stage features as JSON")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--features")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export)

    s = sub.add_parser("grad-check", help="finite-difference check of the manual gradients")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tolerance", type=float, default=1e-4)
    s.set_defaults(func=cmd_grad_check)

    s = sub.add_parser("collapse-demo", help="baseline vs ERVQ on the canonical collapse experiment")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--stages", type=int, default=None, help="override the number of RVQ stages")
    s.set_defaults(func=cmd_collapse_demo)
    return p


def _configure_logging() -> None:
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("ERVQ_LOG", "error").lower(), logging.ERROR)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UserError, InputError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ErvqIOError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
