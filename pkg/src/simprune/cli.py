"""Command-line front end for the pruning pipeline.

Exit codes: 0 success, 1 validation/usage error, 2 verification failure
(a convergence, bound, or inequality check that ran but did not hold).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .clustering import Linkage
from .distance import bn_channel_stats, build_distance_matrix, matrix_to_csv
from .io import (
    ManifestError,
    atomic_write_bytes,
    atomic_write_text,
    load_model,
    save_model,
)
from .models import random_model
from .planner import PruneConfig, apply_plan, build_pruning_plan, flops_count
from .tensor import ActivationKind, NumericalError, ShapeError, Tensor4, model_forward
from .verify import (
    distance_matrix_report,
    verify_activation_inequality,
    verify_distance_convergence,
    verify_shift_bound,
)

OK, USAGE_ERROR, VERIFY_FAILURE = 0, 1, 2


class CliError(Exception):
    """Usage or validation problem surfaced to the user, exit code 1."""


class _Parser(argparse.ArgumentParser):
    # argparse's default error() exits with code 2, which this tool reserves
    # for verification failures; route through CliError instead.
    def error(self, message):
        raise CliError(f"{message}\n{self.format_usage()}".rstrip())


def _build_parser() -> _Parser:
    parser = _Parser(prog="simprune", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prune", help="cluster channels and write a pruned model")
    p.add_argument("--model", required=True, help="input model manifest")
    p.add_argument("--threshold", type=float, required=True, help="global clustering threshold")
    p.add_argument(
        "--linkage",
        choices=[l.value for l in Linkage],
        default=Linkage.COMPLETE.value,
        help="inter-cluster distance rule (default complete)",
    )
    p.add_argument("--min-channels", type=int, default=1, help="per-layer retention floor")
    p.add_argument(
        "--no-compensate",
        action="store_true",
        help="drop channels without folding kernels into representatives",
    )
    p.add_argument(
        "--freeze-final",
        action="store_true",
        help="exempt the final conv block from pruning",
    )
    p.add_argument("--out", required=True, help="output model manifest path")
    p.add_argument("--plan", required=True, help="output plan JSON path")

    p = sub.add_parser("distances", help="write per-layer channel distance matrices as CSV")
    p.add_argument("--model", required=True)
    p.add_argument(
        "--empirical",
        action="store_true",
        help="also measure distances from forwarded activations",
    )
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("flops", help="print the FLOPs report for a model")
    p.add_argument("--model", required=True)
    p.add_argument("--batch", type=int, default=1)

    p = sub.add_parser("verify", help="run a numerical verification harness")
    p.add_argument(
        "check",
        choices=["prop1", "prop2", "activation"],
        help="prop1: distance convergence; prop2: shift bound; "
        "activation: contraction inequality",
    )
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--trials",
        type=int,
        default=None,
        help="trial count (prop1/prop2) or sample count (activation)",
    )
    p.add_argument("--model", default=None, help="model manifest (prop2; default: built-in fixture)")
    p.add_argument("--out-dir", default=None, help="also write the JSON report here")

    p = sub.add_parser(
        "report", help="empirical vs closed-form distance matrices, with differences"
    )
    p.add_argument("--model", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser(
        "forward",
        help="run a forward pass on a raw float32 input blob (C,H,W,B row-major)",
    )
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help="little-endian float32 blob")
    p.add_argument("--shape", required=True, help="input shape as C,H,W,B")
    p.add_argument("--out", required=True, help="output blob for the final post-activation stage")

    return parser


def _cmd_prune(args) -> int:
    model = load_model(args.model)
    config = PruneConfig(
        threshold=args.threshold,
        linkage=Linkage(args.linkage),
        min_channels=args.min_channels,
        compensate=not args.no_compensate,
        freeze_final=args.freeze_final,
    )
    plan = build_pruning_plan(model, config)
    pruned = apply_plan(model, plan)
    save_model(pruned, args.out)
    atomic_write_text(args.plan, plan.to_json())

    baseline = flops_count(model).total
    after = flops_count(pruned, baseline_total=baseline)
    total_channels = sum(b.out_channels for b in model.blocks)
    print(
        f"removed {plan.total_removed()} of {total_channels} channels; "
        f"flops {baseline} -> {after.total} "
        f"(pruned ratio {after.pruned_ratio:.4f})"
    )
    return OK


def _cmd_distances(args) -> int:
    model = load_model(args.model)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{Path(args.model).stem}_distances_{args.seed}"
    for idx, block in enumerate(model.blocks):
        matrix = build_distance_matrix(bn_channel_stats(block.bn))
        atomic_write_text(
            out_dir / f"{stem}_layer{idx}_probabilistic.csv", matrix_to_csv(matrix)
        )
    if args.empirical:
        triples = distance_matrix_report(
            model, trials=args.trials, batch=args.batch, seed=args.seed
        )
        for t in triples:
            atomic_write_text(
                out_dir / f"{stem}_layer{t.layer}_empirical.csv",
                matrix_to_csv(t.empirical),
            )
    print(f"wrote distance matrices for {len(model.blocks)} layers to {out_dir}")
    return OK


def _cmd_flops(args) -> int:
    model = load_model(args.model)
    report = flops_count(model, batch=args.batch)
    sys.stdout.write(report.to_json())
    return OK


def _verify_out(args, name: str, text: str) -> None:
    if args.out_dir is None:
        return
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(args.model).stem if args.model else "builtin"
    atomic_write_text(out_dir / f"{stem}_{name}_{args.seed}.json", text)


def _cmd_verify(args) -> int:
    if args.check == "prop1":
        trials = 20 if args.trials is None else args.trials
        report = verify_distance_convergence(trials=trials, seed=args.seed)
        sys.stdout.write(report.to_json())
        _verify_out(args, "prop1", report.to_json())
        return OK if report.passed else VERIFY_FAILURE

    if args.check == "prop2":
        trials = 10 if args.trials is None else args.trials
        if args.model is not None:
            model = load_model(args.model)
        else:
            model = random_model(num_blocks=2, channels=6, num_classes=None, seed=args.seed)
        report = verify_shift_bound(model, trials=trials, seed=args.seed)
        sys.stdout.write(report.to_json())
        _verify_out(args, "prop2", report.to_json())
        return OK if report.all_satisfied else VERIFY_FAILURE

    samples = 10**6 if args.trials is None else args.trials
    reports = [
        verify_activation_inequality(kind, samples=samples, seed=args.seed)
        for kind in (ActivationKind.RELU, ActivationKind.SIGMOID)
    ]
    for report in reports:
        sys.stdout.write(report.to_json())
        _verify_out(args, f"activation_{report.kind.value}", report.to_json())
    return OK if all(r.passed for r in reports) else VERIFY_FAILURE


def _cmd_report(args) -> int:
    model = load_model(args.model)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{Path(args.model).stem}_report_{args.seed}"
    triples = distance_matrix_report(model, trials=args.trials, batch=args.batch, seed=args.seed)
    summary = []
    for t in triples:
        for name, matrix in (
            ("empirical", t.empirical),
            ("probabilistic", t.probabilistic),
            ("difference", t.difference),
        ):
            atomic_write_text(out_dir / f"{stem}_layer{t.layer}_{name}.csv", matrix_to_csv(matrix))
        summary.append(
            {
                "layer": t.layer,
                "max_abs_difference": t.max_abs_difference,
                "probabilistic_max": t.probabilistic_max,
            }
        )
    atomic_write_text(
        out_dir / f"{stem}.json",
        json.dumps(
            {"check": "distance_report", "seed": args.seed, "trials": args.trials,
             "batch": args.batch, "layers": summary},
            indent=2,
            sort_keys=True,
        )
        + "\n",
    )
    print(f"wrote distance report for {len(triples)} layers to {out_dir}")
    return OK


def _cmd_forward(args) -> int:
    model = load_model(args.model)
    try:
        shape = tuple(int(v) for v in args.shape.split(","))
    except ValueError:
        raise CliError(f"--shape must be C,H,W,B integers, got {args.shape!r}") from None
    if len(shape) != 4 or any(v < 1 for v in shape):
        raise CliError(f"--shape must be four positive integers, got {args.shape!r}")
    raw = Path(args.input).read_bytes()
    expected = 4 * int(np.prod(shape))
    if len(raw) != expected:
        raise CliError(
            f"input blob holds {len(raw)} bytes, expected {expected} for shape {shape}"
        )
    x = Tensor4(np.frombuffer(raw, dtype="<f4").reshape(shape).copy())
    acts = model_forward(x, model)
    out = acts[-1].post_act
    atomic_write_bytes(args.out, np.ascontiguousarray(out.data, dtype="<f4").tobytes())
    print(
        json.dumps(
            {
                "output_shape": list(out.data.shape),
                "output_blob": args.out,
            },
            sort_keys=True,
        )
    )
    return OK


_COMMANDS = {
    "prune": _cmd_prune,
    "distances": _cmd_distances,
    "flops": _cmd_flops,
    "verify": _cmd_verify,
    "report": _cmd_report,
    "forward": _cmd_forward,
}


def cli_main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except CliError as err:
        print(f"error: {err}", file=sys.stderr)
        return USAGE_ERROR
    except (ManifestError, ShapeError, NumericalError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return USAGE_ERROR
    except SystemExit as err:  # argparse --help
        code = err.code
        return 0 if code is None else int(code)


def main() -> None:
    sys.exit(cli_main(sys.argv[1:]))
