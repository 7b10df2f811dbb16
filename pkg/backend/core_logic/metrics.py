"""
Segmentation metrics, SEA-style worst-case selection and row-wise attack ranking.

Dataset-level Acc is the mean of per-image pixel accuracies; dataset-level
mIoU comes from the summed confusion matrix. The pooled/per-image
counterparts are reported alongside.
"""
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent.parent))

from shared.constants import IGNORE_INDEX, METRIC_NAMES, REPORT_COLUMNS, SCORE_COLUMNS
from shared.models import AttackScore, RowScores, SeaMetric, TieRule
from shared.utils import CoverageError


# ============== CONFUSION-BASED METRICS ==============

def confusion(pred: np.ndarray, truth: np.ndarray, num_classes: int,
              ignore_index: int = IGNORE_INDEX) -> np.ndarray:
    """
    K x K counts; entry (i, j) = pixels with ground truth i predicted j.

    Raises:
        ValueError: on shape mismatch or out-of-range classes
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    if pred.size and (pred.min() < 0 or pred.max() >= num_classes):
        raise ValueError(f"predictions must lie in [0, {num_classes})")
    valid = truth != ignore_index
    t = truth[valid].astype(np.int64)
    if t.size and (t.min() < 0 or t.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes}) or equal {ignore_index}")
    index = num_classes * t + pred[valid].astype(np.int64)
    return np.bincount(index, minlength=num_classes ** 2).reshape(num_classes, num_classes)


def pixel_accuracy(cm: np.ndarray) -> float:
    """100 * trace / total."""
    total = cm.sum()
    if total == 0:
        raise ValueError("pixel accuracy of an empty confusion matrix is undefined")
    return 100.0 * float(np.trace(cm)) / float(total)


def miou(cm: np.ndarray) -> float:
    """Mean IoU over classes present in the truth or the prediction, in percent."""
    if cm.sum() == 0:
        raise ValueError("mIoU of an empty confusion matrix is undefined")
    diag = np.diag(cm).astype(np.float64)
    union = cm.sum(axis=0) + cm.sum(axis=1) - diag
    present = (cm.sum(axis=0) + cm.sum(axis=1)) > 0
    return 100.0 * float(np.mean(diag[present] / union[present]))


@dataclass(frozen=True)
class ImageScore:
    acc: float      # NaN when every pixel is ignored
    miou: float
    matrix: np.ndarray


@dataclass(frozen=True)
class DatasetScores:
    acc: float              # mean of per-image accuracies
    miou: float             # mIoU of the summed confusion matrix
    acc_pooled: float       # accuracy of the summed confusion matrix
    miou_image_mean: float  # mean of per-image mIoUs

    def as_score(self) -> AttackScore:
        return AttackScore(acc=self.acc, miou=self.miou)


def per_image_scores(preds: Sequence[np.ndarray], truths: Sequence[np.ndarray], num_classes: int,
                     ignore_index: int = IGNORE_INDEX) -> List[ImageScore]:
    if len(preds) != len(truths):
        raise ValueError(f"{len(preds)} predictions for {len(truths)} label maps")
    scores = []
    for pred, truth in zip(preds, truths):
        cm = confusion(pred, truth, num_classes, ignore_index)
        if cm.sum() == 0:
            scores.append(ImageScore(acc=float("nan"), miou=float("nan"), matrix=cm))
        else:
            scores.append(ImageScore(acc=pixel_accuracy(cm), miou=miou(cm), matrix=cm))
    return scores


def dataset_scores(preds: Sequence[np.ndarray], truths: Sequence[np.ndarray], num_classes: int,
                   ignore_index: int = IGNORE_INDEX) -> DatasetScores:
    """
    Aggregate Acc / mIoU over a set of images.

    Raises:
        ValueError: if no image has a non-ignored pixel
    """
    scores = per_image_scores(preds, truths, num_classes, ignore_index)
    scored = [s for s in scores if not np.isnan(s.acc)]
    if not scored:
        raise ValueError("no image has a non-ignored pixel")
    total = sum(s.matrix for s in scores)
    return DatasetScores(
        acc=float(np.mean([s.acc for s in scored])),
        miou=miou(total),
        acc_pooled=pixel_accuracy(total),
        miou_image_mean=float(np.mean([s.miou for s in scored])),
    )


# ============== SEA SELECTION ==============

@dataclass(frozen=True)
class SeaSelection:
    metric: SeaMetric
    choices: Tuple[str, ...]            # attack picked for each image
    predictions: List[np.ndarray]


def sea_select(predictions: Mapping[str, Sequence[np.ndarray]], truths: Sequence[np.ndarray],
               num_classes: int, metric: SeaMetric, ignore_index: int = IGNORE_INDEX,
               accuracy_driven: bool = False) -> SeaSelection:
    """
    Per image, keep the attack output with the lowest value of `metric`.

    Ties go to the attack listed first. With `accuracy_driven`, the
    selection for either metric is made on per-image accuracy.

    Args:
        predictions: attack name -> one predicted label map per image (ordered)
        truths: Ground truth per image
        num_classes: K
        metric: Metric the selection minimizes
        ignore_index: Label value excluded from scoring
        accuracy_driven: Select on accuracy regardless of `metric`

    Raises:
        CoverageError: if an attack is missing images
    """
    if not predictions:
        raise CoverageError("SEA needs at least one attack")
    n = len(truths)
    for name, preds in predictions.items():
        if len(preds) != n or any(p is None for p in preds):
            raise CoverageError(f"attack '{name}' covers {sum(p is not None for p in preds)} of {n} images")

    criterion = SeaMetric.ACC if accuracy_driven else SeaMetric(metric)
    names = list(predictions)
    table = np.empty((len(names), n), dtype=np.float64)
    for a, name in enumerate(names):
        scores = per_image_scores(predictions[name], truths, num_classes, ignore_index)
        table[a] = [getattr(s, criterion.value) for s in scores]
    table = np.where(np.isnan(table), np.inf, table)
    picks = np.argmin(table, axis=0)
    return SeaSelection(
        metric=SeaMetric(metric),
        choices=tuple(names[i] for i in picks),
        predictions=[predictions[names[i]][j] for j, i in enumerate(picks)],
    )


def sea_scores(predictions: Mapping[str, Sequence[np.ndarray]], truths: Sequence[np.ndarray],
               num_classes: int, ignore_index: int = IGNORE_INDEX,
               accuracy_driven: bool = False) -> AttackScore:
    """Best-of score: Acc from the Acc selection, mIoU from the mIoU selection."""
    values = {}
    for metric in (SeaMetric.ACC, SeaMetric.MIOU):
        selection = sea_select(predictions, truths, num_classes, metric, ignore_index, accuracy_driven)
        scores = dataset_scores(selection.predictions, truths, num_classes, ignore_index)
        values[metric.value] = scores.acc if metric == SeaMetric.ACC else scores.miou
    return AttackScore(**values)


# ============== RANKING ==============

@dataclass(frozen=True)
class RankTable:
    attacks: Tuple[str, ...]
    rows: Tuple[RowScores, ...]
    values: Dict[str, pd.DataFrame]   # metric -> rows x attacks
    ranks: Dict[str, pd.DataFrame]
    tie_rule: TieRule

    @property
    def avg_rank(self) -> pd.DataFrame:
        """Per attack: mean rank per metric and pooled over both metrics."""
        frame = pd.DataFrame({m: self.ranks[m].mean(axis=0) for m in METRIC_NAMES})
        frame["pooled"] = pd.concat([self.ranks[m] for m in METRIC_NAMES]).mean(axis=0)
        return frame.loc[list(self.attacks)]


def rows_from_frame(frame: pd.DataFrame) -> List[RowScores]:
    """
    Group a long score table (dataset,model,eps,attack,acc,miou) into rows.

    Raises:
        CoverageError: on missing columns, duplicates or ragged rows
    """
    missing = [c for c in SCORE_COLUMNS if c not in frame.columns]
    if missing:
        raise CoverageError(f"score table lacks columns {missing}")
    frame = frame.astype({"dataset": str, "model": str, "eps": str, "attack": str})
    dupes = frame.duplicated(subset=["dataset", "model", "eps", "attack"])
    if dupes.any():
        first = frame[dupes].iloc[0]
        raise CoverageError(f"duplicate score for {first['attack']} in row "
                            f"({first['dataset']}, {first['model']}, {first['eps']})")

    rows = []
    for (dataset, model, eps), group in frame.groupby(["dataset", "model", "eps"], sort=False):
        scores = {r.attack: AttackScore(acc=float(r.acc), miou=float(r.miou)) for r in group.itertuples()}
        rows.append(RowScores(dataset=dataset, model=model, eps=eps, scores=scores))
    return rows


def rows_to_frame(rows: Sequence[RowScores]) -> pd.DataFrame:
    records = [
        (row.dataset, row.model, row.eps, attack, score.acc, score.miou)
        for row in rows for attack, score in row.scores.items()
    ]
    return pd.DataFrame(records, columns=SCORE_COLUMNS)


def rank_rows(rows: Sequence[RowScores], tie_rule: TieRule = TieRule.MIN) -> RankTable:
    """
    Rank attacks within every row, independently per metric (1 = strongest).

    Exact ties share a rank: the lowest one under TieRule.MIN, the mean
    under TieRule.AVERAGE.

    Raises:
        CoverageError: if any row lacks a score for some attack
    """
    if not rows:
        raise CoverageError("rank table needs at least one row")
    attacks = tuple(rows[0].scores)
    for i, row in enumerate(rows):
        if set(row.scores) != set(attacks):
            gap = sorted(set(attacks).symmetric_difference(row.scores))
            raise CoverageError(f"row {i} {row.key}: attack set differs from row 0 on {gap}")

    index = pd.MultiIndex.from_tuples([row.key for row in rows], names=["dataset", "model", "eps"])
    values, ranks = {}, {}
    for metric in METRIC_NAMES:
        table = pd.DataFrame(
            [[getattr(row.scores[a], metric) for a in attacks] for row in rows],
            index=index, columns=list(attacks),
        )
        values[metric] = table
        ranks[metric] = table.rank(axis=1, method=TieRule(tie_rule).value, ascending=True)
    return RankTable(attacks=attacks, rows=tuple(rows), values=values, ranks=ranks, tie_rule=TieRule(tie_rule))


def count_best(table: RankTable, metric: str) -> Dict[str, int]:
    """Rows where each attack attains the row minimum (ties all count)."""
    values = table.values[metric]
    best = values.eq(values.min(axis=1), axis=0)
    return {a: int(best[a].sum()) for a in table.attacks}


def report_frame(table: RankTable) -> pd.DataFrame:
    """Long report with columns dataset,model,eps,attack,acc,miou,rank_acc,rank_miou."""
    records = []
    for key in table.values["acc"].index:
        for attack in table.attacks:
            records.append((
                *key, attack,
                table.values["acc"].loc[key, attack], table.values["miou"].loc[key, attack],
                table.ranks["acc"].loc[key, attack], table.ranks["miou"].loc[key, attack],
            ))
    return pd.DataFrame(records, columns=REPORT_COLUMNS)


def format_rank_markdown(table: RankTable, decimals: int = 1) -> str:
    """
    Markdown table: one line per row with `acc / miou` per attack, the
    rounded best value of each metric in bold, and a closing Avg. Rank line.
    """
    header = "| Dataset | Model | eps | " + " | ".join(table.attacks) + " |"
    rule = "|" + "---|" * (3 + len(table.attacks))
    lines = [header, rule]
    for key in table.values["acc"].index:
        cells = []
        rounded = {m: table.values[m].loc[key].round(decimals) for m in METRIC_NAMES}
        for attack in table.attacks:
            parts = []
            for m in METRIC_NAMES:
                text = f"{rounded[m][attack]:.{decimals}f}"
                if rounded[m][attack] == rounded[m].min():
                    text = f"**{text}**"
                parts.append(text)
            cells.append(" / ".join(parts))
        lines.append(f"| {key[0]} | {key[1]} | {key[2]} | " + " | ".join(cells) + " |")
    avg = table.avg_rank
    lines.append("| **Avg. Rank** | | | " + " | ".join(
        f"{avg.loc[a, 'acc']:.2f} / {avg.loc[a, 'miou']:.2f}" for a in table.attacks) + " |")
    return "\n".join(lines) + "\n"


def best_attack(table: RankTable, metric: Optional[str] = None) -> str:
    """Attack with the lowest Avg. Rank (pooled when `metric` is None); ties go to list order."""
    column = metric or "pooled"
    avg = table.avg_rank[column]
    return str(avg.idxmin())
