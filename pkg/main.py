"""
TsallisSeg - Command Line Entry Point

Subcommands:
    gen-data         Write a synthetic shapes-world dataset
    train            Train a clean or adversarially trained victim
    attack           Attack one dataset split with one objective
    bench            Run a benchmark config and rank the attacks
    select-schedule  Choose a linear q-schedule on the validation split
    rank             Rank a score CSV and print Avg. Rank
    curves           Emit per-pixel gradient weighting curves

Exit codes: 0 success, 1 partial failure, 2 config error.
"""
import argparse
import logging
import sys
from pathlib import Path

# Add project root to path
BASE_DIR = Path(__file__).parent
sys.path.insert(0, str(BASE_DIR))

from shared.constants import (
    AttackDefaults, ExitCode, ShapesWorldDefaults, TrainDefaults,
)
from shared.models import (
    AttackConfig, DatasetSplits, LossKind, LossName, MaskNormalization, ShapesWorldSpec, TieRule, TrainConfig,
)
from shared.utils import (
    ConfigError, CoverageError, TrainingDivergedError, TsallisSegError, parse_fraction, split_list,
)
from backend.core_logic.schedules import parse_loss_kind, parse_phases, parse_q_schedule
from backend.core_logic.segmodel import save_params
from backend.core_logic.trainer import train_and_check
from backend.harness.bench import emit_curves, rank_table, run_attack_command, run_benchmark, schedule_selection
from backend.harness.dataset_store import load_split
from config.bench_config import build_bench_config, get_workers, load_bench_config
from simulation.scenarios import PROFILES, profile_values
from simulation.shapes_world import gen_dataset

logger = logging.getLogger("tsallisseg")


def _banner(title: str) -> None:
    print("=" * 60)
    print(f"  {title}")
    print("=" * 60)


# ================= COMMANDS =================

def cmd_gen_data(args) -> int:
    spec = ShapesWorldSpec(
        image_size=args.size, num_classes=args.classes, color_noise=args.noise, contrast=args.contrast,
        shapes_per_image=(args.min_shapes, args.max_shapes), seed=args.seed,
    )
    splits = DatasetSplits(train=args.train, val=args.val, test=args.test)
    manifest = gen_dataset(spec, splits, args.out)
    print(f"✓ Wrote {splits.total} image(s) to {args.out} (manifest {manifest.name})")
    return ExitCode.OK


def cmd_train(args) -> int:
    dataset = load_split(args.data, args.split)
    config = TrainConfig(
        epochs=args.epochs, learning_rate=args.lr, batch_size=args.batch_size,
        adv_steps=args.adv_steps, adv_eps=parse_fraction(args.adv_eps), seed=args.seed,
    )
    held_out = load_split(args.data, args.eval_split)
    params, accuracy = train_and_check(dataset, config, TrainDefaults.MIN_CLEAN_ACCURACY, progress=True,
                                       eval_dataset=held_out)
    save_params(args.out, params)
    kind = "adversarial" if config.adv_steps else "clean"
    print(f"✓ Trained {kind} victim: {accuracy:.1f}% pixel accuracy on {args.eval_split} -> {args.out}")
    return ExitCode.OK


def _attack_kind(args) -> LossKind:
    if args.loss == LossName.TSALLIS.value:
        return LossKind(name=LossName.TSALLIS, q_schedule=parse_q_schedule(args.q_schedule))
    if args.loss == LossName.MASKED_CE.value:
        return LossKind(name=LossName.MASKED_CE, mask_normalization=MaskNormalization(args.mask_norm))
    return LossKind(name=LossName(args.loss))


def cmd_attack(args) -> int:
    config = AttackConfig(
        loss=_attack_kind(args), eps=parse_fraction(args.eps), iters=args.iters,
        phases=parse_phases(args.phases), seed=args.seed, restarts=args.restarts,
    )
    results, csv_path = run_attack_command(args.model, args.data, args.split, config, args.out,
                                           workers=get_workers(), progress=True)
    failed = [r for r in results if r.failed]
    aborted = sum(r.aborted for r in results)
    print(f"✓ {config.loss.display_name}: {len(results)} image(s), {len(failed)} failed, "
          f"{aborted} aborted -> {csv_path}")
    return ExitCode.PARTIAL_FAILURE if failed else ExitCode.OK


def _bench_config(args):
    if args.config:
        return load_bench_config(args.config)
    if not (args.profile and args.data and args.models and args.out):
        raise ConfigError("give --config, or --profile with --data, --models and --out")
    return build_bench_config(profile_values(args.profile, args.data, args.models, args.out, args.seed))


def cmd_bench(args) -> int:
    config = _bench_config(args)
    report = run_benchmark(config, workers=get_workers(), progress=True)
    _banner("Avg. Rank")
    if report.table is not None:
        print(report.table.avg_rank.round(2).to_string())
    else:
        print("No complete rows to rank")
    if report.failed:
        print(f"⚠️ {sum(c.error is not None for c in report.cells)} cell(s) failed; see run_log.json")
        return ExitCode.PARTIAL_FAILURE
    return ExitCode.OK


def cmd_select_schedule(args) -> int:
    config = _bench_config(args)
    candidates = [parse_q_schedule(c) for c in split_list(args.candidates)] if args.candidates else None
    selection = schedule_selection(config, candidates, workers=get_workers(), progress=True)
    _banner("Validation Avg. Rank")
    print(selection.avg_rank.round(2).to_string())
    print(f"\n✓ Selected schedule: {selection.chosen.label}")
    return ExitCode.OK


def cmd_rank(args) -> int:
    table = rank_table(args.input, args.out, TieRule(args.tie_rule))
    _banner(f"Avg. Rank ({args.tie_rule} rank on ties)")
    print(table.avg_rank.round(2).to_string())
    return ExitCode.OK


def cmd_curves(args) -> int:
    kinds = [parse_loss_kind(k) for k in split_list(args.kinds)]
    frame = emit_curves(kinds, args.step, args.out)
    print(f"✓ Wrote {len(kinds)} curve(s), {len(frame)} point(s) -> {args.out}")
    return ExitCode.OK


# ================= PARSER =================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tsallisseg", description="Tsallis-loss segmentation attacks")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic shapes-world dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=ShapesWorldDefaults.IMAGE_SIZE)
    p.add_argument("--classes", type=int, default=TrainDefaults.NUM_CLASSES)
    p.add_argument("--train", type=int, default=ShapesWorldDefaults.TRAIN_COUNT)
    p.add_argument("--val", type=int, default=ShapesWorldDefaults.VAL_COUNT)
    p.add_argument("--test", type=int, default=ShapesWorldDefaults.TEST_COUNT)
    p.add_argument("--noise", type=float, default=ShapesWorldDefaults.COLOR_NOISE)
    p.add_argument("--contrast", type=float, default=ShapesWorldDefaults.CONTRAST)
    p.add_argument("--min-shapes", type=int, default=ShapesWorldDefaults.SHAPES_PER_IMAGE[0])
    p.add_argument("--max-shapes", type=int, default=ShapesWorldDefaults.SHAPES_PER_IMAGE[1])
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a victim model")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--eval-split", default="val", choices=["train", "val", "test"],
                   help="split the clean accuracy is reported on")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=TrainDefaults.EPOCHS)
    p.add_argument("--lr", type=float, default=TrainDefaults.LEARNING_RATE)
    p.add_argument("--batch-size", type=int, default=TrainDefaults.BATCH_SIZE)
    p.add_argument("--adv-steps", type=int, default=0, help="PGD steps per example; 0 trains clean")
    p.add_argument("--adv-eps", default="8/255")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="attack one split")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--loss", required=True, choices=[n.value for n in LossName])
    p.add_argument("--q-schedule", default=AttackDefaults.Q_SCHEDULE)
    p.add_argument("--mask-norm", default=MaskNormalization.MASKED.value,
                   choices=[m.value for m in MaskNormalization])
    p.add_argument("--eps", default=AttackDefaults.EPS)
    p.add_argument("--iters", type=int, default=AttackDefaults.ITERS)
    p.add_argument("--phases", default="2@0.3,1.5@0.3,1@0.4")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restarts", type=int, default=AttackDefaults.RESTARTS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attack)

    for name, func, help_text in (
        ("bench", cmd_bench, "run a benchmark"),
        ("select-schedule", cmd_select_schedule, "choose a q-schedule on the validation split"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key=value benchmark config file")
        p.add_argument("--profile", choices=sorted(PROFILES))
        p.add_argument("--data")
        p.add_argument("--models", help="name:path,name:path")
        p.add_argument("--out")
        p.add_argument("--seed", type=int, default=0)
        if name == "select-schedule":
            p.add_argument("--candidates", help="comma-separated linear:A:B schedules")
        p.set_defaults(func=func)

    p = sub.add_parser("rank", help="rank a score CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--out")
    p.add_argument("--tie-rule", default=TieRule.MIN.value, choices=[t.value for t in TieRule])
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("curves", help="emit gradient weighting curves")
    p.add_argument("--kinds", default="tsallis:-3,tsallis:0,ce")
    p.add_argument("--step", type=float, default=1e-3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_curves)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return int(args.func(args))
    except (ConfigError, CoverageError) as e:
        logger.error("%s", e)
        return int(ExitCode.CONFIG_ERROR)
    except TrainingDivergedError as e:
        logger.error("%s", e)
        return int(ExitCode.PARTIAL_FAILURE)
    except ValueError as e:
        logger.error("%s", e)
        return int(ExitCode.CONFIG_ERROR)
    except TsallisSegError as e:
        logger.error("%s", e)
        return int(ExitCode.PARTIAL_FAILURE)


if __name__ == "__main__":
    sys.exit(main())
