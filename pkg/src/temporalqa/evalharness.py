"""Scoring of model predictions against benchmark items.

The headline report shows per-dimension accuracy in a fixed column order —
LO (location), DU (duration), DY (dynamic), OR (order), RE (reasoning) —
plus AVG, the unweighted mean over dimensions, alongside the analytic
random-guess row those numbers should be compared to.

Letter extraction is intentionally literal: the first standalone letter in
the output is the model's choice, and a letter outside the option range
counts as unparsed rather than being coerced to anything.
"""

from __future__ import annotations

import json
import logging
import re
import string
from dataclasses import dataclass
from pathlib import Path

from .qagen import QAFormat, QAItem
from .seeding import derive_rng
from .taskgen import Dimension

logger = logging.getLogger(__name__)

# Column order for reports.
DIMENSION_ORDER = (
    Dimension.LOCATION,
    Dimension.DURATION,
    Dimension.DYNAMIC,
    Dimension.ORDER,
    Dimension.REASONING,
)

DIMENSION_LABELS = {
    Dimension.LOCATION: "LO",
    Dimension.DURATION: "DU",
    Dimension.DYNAMIC: "DY",
    Dimension.ORDER: "OR",
    Dimension.REASONING: "RE",
}

# First standalone single letter, optionally behind an opening parenthesis;
# "option (B)" and "b. because..." both yield that letter, while letters
# embedded in words ("Answer", "A1") never match.
_LETTER = re.compile(r"(?<![A-Za-z0-9])\(?([A-Za-z])(?![A-Za-z0-9])")


class UnknownItemId(Exception):
    """A prediction references an item that is not in the benchmark."""


@dataclass(frozen=True)
class PredictionRecord:
    item_id: str
    raw_output: str


def extract_letter(text: str, option_count: int) -> str | None:
    """The option letter a free-form reply selects, or None.

    The first standalone letter wins; it must fall inside the option range
    (A..chr(A+option_count-1)) or the reply counts as unparsed.
    """
    match = _LETTER.search(text)
    if match is None:
        return None
    letter = match.group(1).upper()
    if string.ascii_uppercase.index(letter) >= option_count:
        return None
    return letter


@dataclass(frozen=True)
class ScoreReport:
    """Accuracy per dimension plus the aggregate rows of the report."""

    per_dimension: dict  # dim value -> {"accuracy_pct", "count", "random_pct"}
    average_pct: float  # unweighted mean over dimensions (headline number)
    item_weighted_pct: float
    random_average_pct: float
    total_items: int
    unparsed_count: int  # missing predictions and unusable replies

    def to_dict(self) -> dict:
        return {
            "per_dimension": self.per_dimension,
            "average_pct": self.average_pct,
            "item_weighted_pct": self.item_weighted_pct,
            "random_average_pct": self.random_average_pct,
            "total_items": self.total_items,
            "unparsed_count": self.unparsed_count,
        }

    def to_text(self) -> str:
        """Fixed-width table in LO DU DY OR RE AVG column order."""
        labels = [DIMENSION_LABELS[d] for d in DIMENSION_ORDER] + ["AVG"]
        random_row = []
        scored_row = []
        for dim in DIMENSION_ORDER:
            stats = self.per_dimension.get(dim.value)
            random_row.append(f"{stats['random_pct']:.1f}" if stats else "-")
            scored_row.append(f"{stats['accuracy_pct']:.1f}" if stats else "-")
        random_row.append(f"{self.random_average_pct:.1f}")
        scored_row.append(f"{self.average_pct:.1f}")
        width = 8
        lines = [
            "".join(f"{c:>{width}}" for c in [""] + labels),
            "".join(f"{c:>{width}}" for c in ["random"] + random_row),
            "".join(f"{c:>{width}}" for c in ["scored"] + scored_row),
            f"items: {self.total_items}  unparsed: {self.unparsed_count}",
        ]
        return "\n".join(lines)


def _is_correct(item: QAItem, raw_output: str) -> tuple[bool, bool]:
    """(correct, parsed) for one prediction against one item."""
    if item.format is QAFormat.MULTIPLE_CHOICE:
        letter = extract_letter(raw_output, len(item.options))
        return letter == item.answer, letter is not None
    normalized = raw_output.strip().lower()
    return normalized == item.answer_text.strip().lower(), bool(normalized)


def score(items: list[QAItem], predictions: list[PredictionRecord]) -> ScoreReport:
    """Score predictions; absent or unparseable ones count as incorrect."""
    by_id = {i.item_id: i for i in items}
    outputs: dict[str, str] = {}
    for record in predictions:
        if record.item_id not in by_id:
            raise UnknownItemId(f"prediction for unknown item {record.item_id!r}")
        outputs[record.item_id] = record.raw_output

    per_dim_total: dict[str, int] = {}
    per_dim_correct: dict[str, int] = {}
    per_dim_random: dict[str, float] = {}
    unparsed = 0
    correct_total = 0
    for item in items:
        dim = item.dimension.value
        per_dim_total[dim] = per_dim_total.get(dim, 0) + 1
        if item.format is QAFormat.MULTIPLE_CHOICE:
            chance = 100.0 / len(item.options)
        else:
            chance = 0.0
        per_dim_random[dim] = per_dim_random.get(dim, 0.0) + chance
        raw = outputs.get(item.item_id)
        if raw is None:
            unparsed += 1
            continue
        correct, parsed = _is_correct(item, raw)
        if not parsed:
            unparsed += 1
        if correct:
            per_dim_correct[dim] = per_dim_correct.get(dim, 0) + 1
            correct_total += 1

    per_dimension = {}
    for dim in sorted(per_dim_total):
        n = per_dim_total[dim]
        per_dimension[dim] = {
            "accuracy_pct": 100.0 * per_dim_correct.get(dim, 0) / n,
            "count": n,
            "random_pct": per_dim_random[dim] / n,
        }
    dims_present = list(per_dimension)
    average = (
        sum(per_dimension[d]["accuracy_pct"] for d in dims_present) / len(dims_present)
        if dims_present
        else 0.0
    )
    random_average = (
        sum(per_dimension[d]["random_pct"] for d in dims_present) / len(dims_present)
        if dims_present
        else 0.0
    )
    total = len(items)
    return ScoreReport(
        per_dimension=per_dimension,
        average_pct=average,
        item_weighted_pct=100.0 * correct_total / total if total else 0.0,
        random_average_pct=random_average,
        total_items=total,
        unparsed_count=unparsed,
    )


def uniform_random_predictions(items: list[QAItem], seed: int) -> list[PredictionRecord]:
    """A baseline that picks a uniformly random letter per item."""
    out = []
    for item in items:
        rng = derive_rng(seed, "randpred", item.item_id)
        if item.format is QAFormat.MULTIPLE_CHOICE:
            letter = rng.choice(string.ascii_uppercase[: len(item.options)])
            out.append(PredictionRecord(item.item_id, letter))
        else:
            out.append(PredictionRecord(item.item_id, ""))
    return out


def load_predictions(path: str | Path) -> list[PredictionRecord]:
    """Read JSONL predictions: {"item_id": ..., "output": ...} per line."""
    records = []
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
        if not line.strip():
            continue
        data = json.loads(line)
        if "item_id" not in data or "output" not in data:
            raise ValueError(f"line {line_no}: predictions need item_id and output keys")
        records.append(PredictionRecord(data["item_id"], str(data["output"])))
    return records


def write_predictions(path: str | Path, records: list[PredictionRecord]) -> None:
    lines = [
        json.dumps({"item_id": r.item_id, "output": r.raw_output}, sort_keys=True)
        for r in records
    ]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
