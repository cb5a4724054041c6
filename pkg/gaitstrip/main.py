"""Command-line entry point: init, fuse, infer, eval, bench and selftest."""

from __future__ import annotations

import argparse
import sys
import time
from collections.abc import Sequence
from pathlib import Path

from loguru import logger
from pydantic import ValidationError

from gaitstrip.app import LOG_LEVELS, Settings, configure_logging, load_settings
from gaitstrip.modules.ecm import BlockKind
from gaitstrip.modules.errors import GaitStripError, ParameterError
from gaitstrip.modules.metric import rank1_accuracy, to_embedding_set
from gaitstrip.modules.model import ModelConfig, build_model, forward, parameter_count
from gaitstrip.modules.reparam import fuse_model, verify_fusion
from gaitstrip.modules.sequence import load_sequence
from gaitstrip.modules.serialization import (
    append_embedding,
    load_embeddings,
    load_weights,
    save_weights,
)
from gaitstrip.modules.util import rank1_by_condition, rank1_by_view
from gaitstrip.selftest import run_selftest

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

_KINDS = [k.value for k in BlockKind if k is not BlockKind.FUSED]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gaitstrip",
        description="GaitStrip embeddings, ECM re-parameterization and rank-1 evaluation.",
    )
    parser.add_argument(
        "--log-level",
        type=str.upper,
        choices=LOG_LEVELS,
        default=None,
        help="overrides GAITSTRIP_LOG_LEVEL",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    init = sub.add_parser("init", help="build seeded multi-branch weights")
    init.add_argument("--config", choices=["casiab", "oumvlp"], required=True)
    init.add_argument("--seed", type=int, required=True)
    init.add_argument("--out", type=Path, required=True)
    init.add_argument("--block-kind", choices=_KINDS, default=BlockKind.FULL_ECM.value)
    init.add_argument("--levels", choices=["both", "low", "high"], default="both")
    init.add_argument("--dim", type=int, default=None, help="embedding width d_out")

    fuse = sub.add_parser("fuse", help="re-parameterize ECM blocks into single convolutions")
    fuse.add_argument("--in", dest="src", type=Path, required=True)
    fuse.add_argument("--out", type=Path, required=True)
    fuse.add_argument("--verify", action="store_true")
    fuse.add_argument("--probes", type=int, default=3)
    fuse.add_argument("--seed", type=int, default=0)

    infer = sub.add_parser("infer", help="embed one sequence directory")
    infer.add_argument("--weights", type=Path, required=True)
    infer.add_argument("--seq", type=Path, required=True)
    infer.add_argument("--out", type=Path, required=True)
    infer.add_argument("--binarize", action="store_true")
    infer.add_argument("--id", dest="seq_id", default=None)
    infer.add_argument("--label", type=int, default=None)
    infer.add_argument("--view", default="")

    evaluate = sub.add_parser("eval", help="rank-1 accuracy of probe against gallery")
    evaluate.add_argument("--gallery", type=Path, required=True)
    evaluate.add_argument("--probe", type=Path, required=True)
    evaluate.add_argument("--exclude-same-view", action="store_true")
    evaluate.add_argument("--per-view", action="store_true")
    evaluate.add_argument("--by-condition", action="store_true")

    bench = sub.add_parser("bench", help="time multi-branch against fused inference")
    bench.add_argument("--weights", type=Path, required=True)
    bench.add_argument("--seq", type=Path, required=True)
    bench.add_argument("--repeat", type=int, default=10)
    bench.add_argument("--binarize", action="store_true")

    selftest = sub.add_parser("selftest", help="run the invariant suite")
    selftest.add_argument("--quick", action="store_true")
    return parser


def _cmd_init(args: argparse.Namespace, settings: Settings) -> int:
    cfg = ModelConfig.preset(
        args.config,
        block_kind=BlockKind(args.block_kind),
        levels=args.levels,
        embedding_dim=args.dim if args.dim is not None else settings.embed_dim,
        gem_p=settings.gem_p,
        leaky_slope=settings.leaky_slope,
    )
    w = build_model(cfg, args.seed)
    save_weights(w, args.out)
    print(f"fingerprint={cfg.fingerprint()} params={parameter_count(w)}")  # noqa: T201
    return EXIT_OK


def _cmd_fuse(args: argparse.Namespace, _: Settings) -> int:
    w = load_weights(args.src)
    fused = fuse_model(w)
    save_weights(fused, args.out)
    logger.info(f"fused weights written to {args.out}")
    if args.verify:
        report = verify_fusion(w, fused, args.probes, args.seed)
        print(report.to_line())  # noqa: T201
    return EXIT_OK


def _cmd_infer(args: argparse.Namespace, _: Settings) -> int:
    w = load_weights(args.weights)
    x = load_sequence(args.seq, binarize=args.binarize, frame_size=w.config.input_size)
    seq_id = args.seq_id if args.seq_id is not None else args.seq.name
    embedding = forward(x, w, sequence_id=seq_id, label=args.label, view=args.view)
    count = append_embedding(embedding, args.out)
    print(f"id={seq_id} frames={x.shape[2]} count={count}")  # noqa: T201
    return EXIT_OK


def _cmd_eval(args: argparse.Namespace, settings: Settings) -> int:
    gallery = to_embedding_set(load_embeddings(args.gallery))
    probe = to_embedding_set(load_embeddings(args.probe))
    accuracy = rank1_accuracy(
        gallery,
        probe,
        args.exclude_same_view,
        chunk=settings.distance_chunk,
    )
    print(f"rank1={accuracy!r}")  # noqa: T201
    if args.per_view:
        print(rank1_by_view(gallery, probe).to_string(float_format="{:.4f}".format))  # noqa: T201
    if args.by_condition:
        scores = rank1_by_condition(gallery, probe, exclude_same_view=args.exclude_same_view)
        for condition, score in scores.items():
            print(f"condition={condition} rank1={float(score)!r}")  # noqa: T201
    return EXIT_OK


def _cmd_bench(args: argparse.Namespace, _: Settings) -> int:
    if args.repeat < 1:
        msg = f"--repeat must be >= 1, got {args.repeat}"
        raise ParameterError(msg)
    w = load_weights(args.weights)
    fused = fuse_model(w)
    x = load_sequence(args.seq, binarize=args.binarize, frame_size=w.config.input_size)

    timings = {}
    for name, weights in (("unfused", w), ("fused", fused)):
        forward(x, weights)  # warm-up
        start = time.perf_counter()
        for _ in range(args.repeat):
            forward(x, weights)
        timings[name] = (time.perf_counter() - start) / args.repeat
        logger.info(f"{name}: {timings[name]:.4f}s per sequence")

    speedup = timings["unfused"] / timings["fused"]
    print(  # noqa: T201
        f"unfused_s={timings['unfused']:.6f} fused_s={timings['fused']:.6f} speedup={speedup:.3f}",
    )
    return EXIT_OK


def _cmd_selftest(args: argparse.Namespace, _: Settings) -> int:
    results = run_selftest(quick=args.quick)
    for r in results:
        print(f"{r.name}={'ok' if r.passed else 'FAIL'} {r.detail}")  # noqa: T201
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILURE


_COMMANDS = {
    "init": _cmd_init,
    "fuse": _cmd_fuse,
    "infer": _cmd_infer,
    "eval": _cmd_eval,
    "bench": _cmd_bench,
    "selftest": _cmd_selftest,
}


def main_cli(argv: Sequence[str] | None = None) -> int:
    """Parse argv, run one subcommand and return its exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    try:
        settings = load_settings()
        configure_logging(args.log_level or settings.log_level)
        return _COMMANDS[args.command](args, settings)
    except (GaitStripError, OSError, ValidationError) as e:
        print(f"error: {e}", file=sys.stderr)  # noqa: T201
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main_cli())
