"""Command-line entry point: ``mmmqa <subcommand> ...``.

Exit codes: 0 success, 1 usage error (bad flags, config or input data),
2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import List, Optional

from . import autodiff as ad
from .benchmarks import BENCHMARKS, load_benchmark
from .data.io import load_dataset, save_json
from .data.synthetic import SyntheticSpec, gen_synthetic_mcqa, gen_synthetic_nli
from .errors import LoadError, MMMError, UsageError
from .evaluation import evaluate
from .experiments import (RunCache, compare_training_orders, convergence_comparison, run_ablation,
                          sweep_reasoning_steps)
from .training.checkpoint import load_checkpoint
from .training.loop import run_pipeline
from .training.plan import TrainPlan

log = logging.getLogger("mmmqa")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--config", help="training plan JSON")
    p.add_argument("--seed", type=int, help="override the plan seed (first seed for multi-seed runs)")
    p.add_argument("--out", required=out_required, help="output directory")
    p.add_argument("--precision", choices=("f32", "f64"), help="override the plan precision")


def _harness(p: argparse.ArgumentParser) -> None:
    _common(p)
    p.add_argument("--benchmark", choices=BENCHMARKS, default="transfer",
                   help="shipped plan used when --config is absent (default: transfer)")
    p.add_argument("--n-seeds", type=int, default=5)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mmmqa", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="run a training plan")
    _common(p)
    p.add_argument("--benchmark", choices=BENCHMARKS, help="shipped plan used when --config is absent")
    p.add_argument("--resume", help="resume from a mid-stage checkpoint")
    p.add_argument("--stop-after", metavar="STAGE:STEP", help="write resume.ckpt at this point and stop")

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--kind", choices=("mcqa", "pair"), default="mcqa")
    p.add_argument("--normalize-speakers", action="store_true")
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--out", help="directory for predictions.csv")

    p = sub.add_parser("ablate", help="full model against single-component removals")
    _harness(p)

    p = sub.add_parser("sweep-k", help="accuracy per number of reasoning steps")
    _harness(p)
    p.add_argument("--k", type=int, nargs="+", default=[0, 1, 2, 3, 4, 5])

    p = sub.add_parser("compare-orders", help="sequential, multi-task, merged and staged training")
    _harness(p)

    p = sub.add_parser("converge", help="stage-2 loss curves with and without coarse-tuning")
    _harness(p)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--window", type=int, default=20)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--quick", action="store_true", help="one seed per primitive, fewer model cases")

    p = sub.add_parser("synth-gen", help="write synthetic datasets as JSON")
    p.add_argument("--spec", required=True, help="JSON generator spec (object, list, or {'datasets': {...}})")
    p.add_argument("--seed", type=int, help="override every spec's seed")
    p.add_argument("--out", required=True)
    return parser


# ---------------------------------------------------------------- helpers

def _plan(args, default: Optional[str] = None) -> TrainPlan:
    name = getattr(args, "benchmark", None) or default
    if args.config:
        plan = TrainPlan.from_json(args.config)
    elif name:
        plan = load_benchmark(name)
    else:
        raise UsageError("--config is required")
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.precision:
        changes["precision"] = args.precision
    return plan.replace(**changes) if changes else plan


def _seeds(args, plan: TrainPlan) -> List[int]:
    if args.n_seeds < 1:
        raise UsageError("--n-seeds must be >= 1")
    return list(range(plan.seed, plan.seed + args.n_seeds))


def _write_table(table, out: str) -> None:
    os.makedirs(out, exist_ok=True)
    table.to_csv(os.path.join(out, "results.csv"))
    table.save_configs(os.path.join(out, "configs.json"))
    text = table.render()
    with open(os.path.join(out, "table.txt"), "w", encoding="utf-8") as fh:
        fh.write(text + "\n")
    print(text)


# ---------------------------------------------------------------- commands

def cmd_train(args) -> int:
    plan = _plan(args)
    stop = None
    if args.stop_after:
        try:
            stage, step = (int(x) for x in args.stop_after.split(":"))
        except ValueError:
            raise UsageError("--stop-after expects STAGE:STEP") from None
        stop = (stage, step)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "plan.json"), "w", encoding="utf-8") as fh:
        json.dump(plan.to_dict(), fh, indent=1, sort_keys=True)
    result = run_pipeline(plan, args.out, resume_from=args.resume, stop_after=stop)
    for path in result.checkpoints:
        print(f"checkpoint {path}")
    print(f"metrics {os.path.join(args.out, 'metrics.csv')}")
    for stage, acc in result.dev_accuracy.items():
        if acc is not None:
            print(f"stage {stage} best dev accuracy {acc:.4f}")
    if not result.completed:
        print("stopped early; resume with --resume", os.path.join(args.out, "resume.ckpt"))
    return 0


def cmd_eval(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    model = ck.model
    examples = load_dataset(args.data, args.kind)
    with ad.precision(ck.manifest["precision"]):
        if args.kind == "pair":
            if model.pair_head is None:
                raise UsageError("checkpoint has no pair-classification head")
            data = model.encode_pairs(examples)
        else:
            data = model.encode_mcqa(examples, args.normalize_speakers)
        report = evaluate(model, data, os.path.basename(args.data), args.batch_size)
    print(f"accuracy {report.accuracy:.6f} ({report.correct}/{len(report.records)})")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        report.to_csv(os.path.join(args.out, "predictions.csv"))
    return 0


def cmd_ablate(args) -> int:
    plan = _plan(args)
    _write_table(run_ablation(plan, _seeds(args, plan)), args.out)
    return 0


def cmd_sweep_k(args) -> int:
    plan = _plan(args)
    _write_table(sweep_reasoning_steps(plan, args.k, _seeds(args, plan)), args.out)
    return 0


def cmd_compare_orders(args) -> int:
    plan = _plan(args)
    _write_table(compare_training_orders(plan, _seeds(args, plan)), args.out)
    return 0


def cmd_converge(args) -> int:
    plan = _plan(args)
    res = convergence_comparison(plan, _seeds(args, plan), args.steps, args.window, RunCache())
    os.makedirs(args.out, exist_ok=True)
    res.to_csv(os.path.join(args.out, "curves.csv"))
    print(res.render())
    return 0


def cmd_gradcheck(args) -> int:
    from .gradsuite import TOLERANCE, full_suite
    cases = full_suite(quick=args.quick)
    worst = max(cases, key=lambda c: c.error)
    for c in cases:
        if not c.ok:
            print(f"FAIL {c.name} {c.error:.3e}")
    print(f"cases {len(cases)} max relative error {worst.error:.3e} ({worst.name})")
    return 0 if worst.error < TOLERANCE else 2


def _spec_entries(raw):
    if isinstance(raw, dict) and "datasets" in raw:
        return [dict(v, name=k) for k, v in raw["datasets"].items()]
    if isinstance(raw, dict):
        return [raw]
    if isinstance(raw, list):
        return raw
    raise UsageError("spec must be an object, a list, or {'datasets': {...}}")


def cmd_synth_gen(args) -> int:
    try:
        with open(args.spec, encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"{args.spec}: {exc}") from None
    os.makedirs(args.out, exist_ok=True)
    for entry in _spec_entries(raw):
        entry = dict(entry)
        kind = entry.pop("kind", "mcqa")
        if args.seed is not None:
            entry["seed"] = args.seed
        name = entry.pop("name", None)
        try:
            spec = SyntheticSpec(**entry)
        except TypeError as exc:
            raise UsageError(f"bad synthetic spec: {exc}") from None
        if kind == "mcqa":
            records = gen_synthetic_mcqa(spec)
        elif kind in ("nli", "pair"):
            records = gen_synthetic_nli(spec)
        else:
            raise UsageError(f"unknown dataset kind {kind!r}")
        path = os.path.join(args.out, f"{name or f'{kind}-{spec.seed}'}.json")
        save_json(records, path)
        print(f"wrote {len(records)} records to {path}")
    return 0


COMMANDS = {
    "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate, "sweep-k": cmd_sweep_k,
    "compare-orders": cmd_compare_orders, "converge": cmd_converge, "gradcheck": cmd_gradcheck,
    "synth-gen": cmd_synth_gen,
}


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"mmmqa: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, LoadError) as exc:
        print(f"mmmqa: error: {exc}", file=sys.stderr)
        return 1
    except MMMError as exc:
        print(f"mmmqa: failed: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - last resort
        log.exception("unexpected failure")
        print(f"mmmqa: failed: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
