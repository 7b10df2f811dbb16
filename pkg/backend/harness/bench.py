"""
Benchmark orchestration behind the CLI.

run_benchmark runs every (model, eps, attack) cell, scores it, ranks the
attacks per row and writes the report files; schedule_selection picks the
linear q-schedule with the best average validation rank.
"""
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent.parent))

from shared.constants import CURVE_COLUMNS, SCHEDULE_Q_ENDS, SCHEDULE_Q_STARTS, SCORE_COLUMNS
from shared.models import (
    AttackConfig, BenchConfig, LossKind, LossName, QSchedule, RowScores, ScheduleType, TieRule,
)
from shared.utils import ConfigError, CoverageError, TsallisSegError, format_eps
from backend.core_logic.attack import AttackResult, attack_batch, save_attack_results
from backend.core_logic.metrics import (
    DatasetScores, RankTable, dataset_scores, format_rank_markdown, rank_rows, report_frame,
    rows_from_frame, rows_to_frame, sea_scores,
)
from backend.core_logic.objectives import resolve_kind, uniform_grid, weighting_curve
from backend.core_logic.segmodel import load_params, predict
from backend.core_logic.state import RunLog
from .dataset_store import load_split

logger = logging.getLogger(__name__)

DATASET_NAME = "shapes"
BEST_OF_LABEL = "Best-of"


@dataclass
class CellOutcome:
    model: str
    eps: str
    attack: str
    scores: Optional[DatasetScores] = None
    predictions: Optional[List[np.ndarray]] = None
    aborted_images: int = 0
    error: Optional[str] = None


@dataclass
class BenchmarkReport:
    rows: List[RowScores]
    table: Optional[RankTable]
    best_of: List[RowScores]
    cells: List[CellOutcome]
    clean: Dict[str, DatasetScores] = field(default_factory=dict)
    output_dir: Optional[Path] = None

    @property
    def failed(self) -> bool:
        return any(c.error is not None for c in self.cells)


# ============== BENCHMARK ==============

def _attack_config(config: BenchConfig, kind: LossKind, eps: float) -> AttackConfig:
    return AttackConfig(loss=kind, eps=eps, iters=config.iters, phases=config.phases,
                        seed=config.seed, restarts=config.restarts)


def _run_cell(params, dataset, attack_config: AttackConfig, outcome: CellOutcome,
              workers: int, progress: bool, run_log: RunLog) -> None:
    results: List[AttackResult] = attack_batch(params, dataset, attack_config, workers=workers, progress=progress)
    failures = [r for r in results if r.failed]
    outcome.aborted_images = sum(r.aborted for r in results)
    if outcome.aborted_images:
        run_log.log_decision("attack_aborted", f"{outcome.aborted_images} image(s) returned early",
                             {"model": outcome.model, "eps": outcome.eps, "attack": outcome.attack})
    if failures:
        outcome.error = f"{len(failures)} image(s) failed, first: {failures[0].error}"
        return
    outcome.predictions = [predict(params, r.adversarial) for r in results]
    outcome.scores = dataset_scores(outcome.predictions, list(dataset.labels),
                                    dataset.num_classes, dataset.ignore_index)


def _assemble_rows(cells: Sequence[CellOutcome], attacks: Sequence[str], dataset,
                   run_log: RunLog) -> Tuple[List[RowScores], List[RowScores]]:
    groups: Dict[Tuple[str, str], List[CellOutcome]] = {}
    for cell in cells:
        groups.setdefault((cell.model, cell.eps), []).append(cell)

    rows, best_of = [], []
    for (model, eps), group in groups.items():
        if any(c.scores is None for c in group) or len(group) != len(attacks):
            run_log.log_decision("drop_row", f"{model} @ {eps} has failed cells, excluded from ranking")
            continue
        scores = {c.attack: c.scores.as_score() for c in group}
        rows.append(RowScores(dataset=DATASET_NAME, model=model, eps=eps, scores=scores))
        if len(group) >= 2:
            combined = sea_scores({c.attack: c.predictions for c in group}, list(dataset.labels),
                                  dataset.num_classes, dataset.ignore_index)
            best_of.append(RowScores(dataset=DATASET_NAME, model=model, eps=eps,
                                     scores={BEST_OF_LABEL: combined}))
    return rows, best_of


def _write_report(report: BenchmarkReport, output_dir: Path) -> None:
    output_dir.mkdir(parents=True, exist_ok=True)
    detail = []
    for model, scores in report.clean.items():
        detail.append((DATASET_NAME, model, "0", "clean", scores.acc, scores.miou,
                       scores.acc_pooled, scores.miou_image_mean, 0, ""))
    for c in report.cells:
        s = c.scores
        detail.append((DATASET_NAME, c.model, c.eps, c.attack,
                       s.acc if s else np.nan, s.miou if s else np.nan,
                       s.acc_pooled if s else np.nan, s.miou_image_mean if s else np.nan,
                       c.aborted_images, c.error or ""))
    pd.DataFrame(detail, columns=SCORE_COLUMNS + ["acc_pooled", "miou_image_mean", "aborted", "error"]) \
        .to_csv(output_dir / "scores_detail.csv", index=False)

    if report.table is not None:
        report_frame(report.table).to_csv(output_dir / "report.csv", index=False)
        avg = report.table.avg_rank.rename_axis("attack").reset_index()
        avg.to_csv(output_dir / "avg_rank.csv", index=False)
        (output_dir / "report.md").write_text(format_rank_markdown(report.table))
    if report.best_of:
        rows_to_frame(report.best_of).to_csv(output_dir / "best_of.csv", index=False)


def run_benchmark(config: BenchConfig, workers: int = 1, progress: bool = False,
                  run_log: Optional[RunLog] = None, write: bool = True) -> BenchmarkReport:
    """
    Attack every (model, eps, attack) cell of `config` and rank the attacks.

    A failing cell is recorded and its row left out of the ranking; the run
    continues. Outputs (report.csv, report.md, avg_rank.csv,
    scores_detail.csv, best_of.csv, run_log.json) go to `config.output_dir`.

    Args:
        config: Validated benchmark config
        workers: Threads per cell
        progress: Show progress bars
        run_log: Decision log (one is created in the output directory if omitted)
        write: Write report files

    Returns:
        BenchmarkReport
    """
    output_dir = Path(config.output_dir)
    run_log = run_log or RunLog(output_dir if write else None, command="bench")
    dataset = load_split(config.dataset_dir, config.split)
    attacks = [k.display_name for k in config.attacks]
    run_log.log_decision("benchmark_start", f"{len(config.models)} model(s) x {len(config.eps)} eps x "
                         f"{len(attacks)} attack(s) on {len(dataset)} {config.split} image(s)",
                         {"iters": config.iters, "phases": config.phases.label, "seed": config.seed})

    cells: List[CellOutcome] = []
    clean: Dict[str, DatasetScores] = {}
    for model_name, model_path in config.models.items():
        try:
            params = load_params(model_path)
            clean_preds = [predict(params, image) for image in dataset.images]
            clean[model_name] = dataset_scores(clean_preds, list(dataset.labels),
                                               dataset.num_classes, dataset.ignore_index)
        except (OSError, ValueError) as e:
            run_log.log_failure(f"model {model_name}", f"cannot load {model_path}: {e}")
            cells.extend(CellOutcome(model=model_name, eps=format_eps(eps), attack=a, error=str(e))
                         for eps in config.eps for a in attacks)
            continue

        for eps in config.eps:
            for kind, attack in zip(config.attacks, attacks):
                outcome = CellOutcome(model=model_name, eps=format_eps(eps), attack=attack)
                logger.info("cell %s / %s / %s", model_name, outcome.eps, attack)
                try:
                    _run_cell(params, dataset, _attack_config(config, kind, eps), outcome,
                              workers, progress, run_log)
                except (TsallisSegError, ValueError) as e:
                    outcome.error = str(e)
                if outcome.error:
                    run_log.log_failure(f"{model_name}/{outcome.eps}/{attack}", outcome.error)
                cells.append(outcome)

    rows, best_of = _assemble_rows(cells, attacks, dataset, run_log)
    table = rank_rows(rows) if rows else None
    report = BenchmarkReport(rows=rows, table=table, best_of=best_of, cells=cells, clean=clean,
                             output_dir=output_dir if write else None)
    if write:
        _write_report(report, output_dir)
    return report


# ============== SCHEDULE SELECTION ==============

@dataclass(frozen=True)
class ScheduleSelection:
    chosen: QSchedule
    avg_rank: pd.DataFrame   # index: schedule label; columns acc, miou, pooled


def default_candidates() -> List[QSchedule]:
    return [QSchedule.linear(s, e) for s in SCHEDULE_Q_STARTS for e in SCHEDULE_Q_ENDS]


def schedule_selection(config: BenchConfig, candidates: Optional[Sequence[QSchedule]] = None,
                       workers: int = 1, progress: bool = False,
                       run_log: Optional[RunLog] = None) -> ScheduleSelection:
    """
    Pick the q-schedule with the best average rank on the validation split.

    Ranks are averaged over every row and both metrics (pooled); ties go
    to the larger q_start, then the larger q_end. Test images are never read.

    Raises:
        ValueError: for an empty candidate list or an empty validation split
        ConfigError: for a candidate that is not a linear schedule
    """
    candidates = list(candidates) if candidates is not None else default_candidates()
    if not candidates:
        raise ValueError("schedule selection needs at least one candidate")
    fixed = [c.label for c in candidates if c.kind != ScheduleType.LINEAR]
    if fixed:
        raise ConfigError(f"schedule selection takes linear:A:B candidates, got {', '.join(fixed)}")
    output_dir = Path(config.output_dir) / "schedule_selection"
    run_log = run_log or RunLog(output_dir, command="select-schedule")

    if len(candidates) == 1:
        only = candidates[0]
        run_log.log_decision("schedule_selected", f"{only.label} is the only candidate")
        frame = pd.DataFrame({"acc": [1.0], "miou": [1.0], "pooled": [1.0]}, index=[only.label])
        return ScheduleSelection(chosen=only, avg_rank=frame)

    kinds = [LossKind(name=LossName.TSALLIS, q_schedule=c) for c in candidates]
    by_name = {k.display_name: c for k, c in zip(kinds, candidates)}
    val_config = config.model_copy(update={
        "split": "val", "attacks": kinds, "output_dir": str(output_dir),
    })
    report = run_benchmark(val_config, workers=workers, progress=progress, run_log=run_log)
    if report.table is None:
        raise TsallisSegError("schedule selection: every validation row failed")

    avg = report.table.avg_rank
    avg.index = [by_name[name].label for name in avg.index]
    ordered = sorted(
        candidates,
        key=lambda c: (avg.loc[c.label, "pooled"], -c.q_start, -c.q_end),
    )
    chosen = ordered[0]
    run_log.log_decision("schedule_selected", f"{chosen.label} has the best average validation rank",
                         {"avg_rank": avg.round(4).to_dict(orient="index")})
    return ScheduleSelection(chosen=chosen, avg_rank=avg)


# ============== RANK / CURVES / ATTACK ==============

def rank_table(input_csv, output_dir=None, tie_rule: TieRule = TieRule.MIN) -> RankTable:
    """
    Rank a long score CSV (dataset,model,eps,attack,acc,miou).

    Writes ranks.csv and avg_rank.csv to `output_dir` when given.

    Raises:
        CoverageError: for ragged tables or fewer than two attacks
    """
    frame = pd.read_csv(input_csv, dtype={"dataset": str, "model": str, "eps": str, "attack": str})
    rows = rows_from_frame(frame)
    if not rows:
        raise CoverageError(f"{input_csv}: no rows")
    if len(rows[0].scores) < 2:
        raise CoverageError(f"{input_csv}: ranking needs at least two attacks")
    table = rank_rows(rows, tie_rule)
    if output_dir is not None:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        report_frame(table).to_csv(out / "ranks.csv", index=False)
        table.avg_rank.rename_axis("attack").reset_index().to_csv(out / "avg_rank.csv", index=False)
    return table


def emit_curves(kinds: Sequence[LossKind], grid_step: float, output_path) -> pd.DataFrame:
    """
    Write one weighting curve per kind to a CSV with columns kind,q,p,weight.

    Raises:
        ValueError: for unknown or iteration-dependent kinds, or a bad grid
    """
    grid = uniform_grid(grid_step)
    records = []
    for kind in kinds:
        q = np.nan
        if kind.name == LossName.TSALLIS:
            concrete = resolve_kind(kind)
            q = concrete.q if concrete.name == LossName.TSALLIS else 1.0
        elif kind.name == LossName.CE:
            q = 1.0
        for p, weight in weighting_curve(kind, grid):
            records.append((kind.label, q, p, weight))
    frame = pd.DataFrame(records, columns=CURVE_COLUMNS)
    path = Path(output_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    return frame


def run_attack_command(model_path, dataset_dir, split: str, config: AttackConfig, output_dir,
                       workers: int = 1, progress: bool = False) -> Tuple[List[AttackResult], Path]:
    """Attack one split with one model; writes per-image TSEG1 tensors and results.csv."""
    params = load_params(model_path)
    dataset = load_split(dataset_dir, split)
    results = attack_batch(params, dataset, config, workers=workers, progress=progress)
    csv_path = save_attack_results(results, output_dir)
    return results, csv_path
