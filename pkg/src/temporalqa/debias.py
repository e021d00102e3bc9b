"""Answer-distribution repair for generated item sets.

Three passes, applied in order by ``debias_items``:

1. ``downsample_longtail`` — dimensions with open answer spaces (reasoning,
   order) get their most frequent answers capped relative to the median
   answer frequency, so no single answer dominates.
2. ``add_reversal_augmentation`` — a seeded fraction of direction-of-motion
   items gain a time-reversed sibling whose answer is the opposite
   direction, making "play the clip backwards" a label-flipping edit.
3. ``balance_answers`` — dimensions with closed answer spaces (dynamic,
   duration, location) are downsampled to the least frequent answer's
   count, so the spread between the most and least frequent answer ends
   well inside ``balance_gap``.

All sampling is seeded and order-preserving, so a rerun reproduces the
same survivors.
"""

from __future__ import annotations

import logging
import string
from collections import Counter, defaultdict
from dataclasses import dataclass, replace

from .editplan import ReverseOp
from .qagen import DURATION_PHRASES, LOCATION_PHRASES, QAFormat, QAItem
from .seeding import derive_rng, short_id
from .taskgen import OPPOSITE, Dimension, Direction

logger = logging.getLogger(__name__)

# The complete answer-text space for each closed-answer dimension; values
# absent from a batch still count (as zero) toward its balance target.
ANSWER_SPACES: dict[Dimension, tuple[str, ...]] = {
    Dimension.DYNAMIC: tuple(d.value for d in Direction),
    Dimension.DURATION: tuple(DURATION_PHRASES[k] for k in ("short", "medium", "long")),
    Dimension.LOCATION: tuple(LOCATION_PHRASES[k] for k in ("start", "middle", "end")),
}

LONGTAIL_DIMENSIONS = (Dimension.REASONING, Dimension.ORDER)


@dataclass(frozen=True)
class BalanceReport:
    """What one repair pass did to one dimension."""

    op: str
    dimension: str
    per_answer_counts: dict
    downsampled: int = 0
    reversal_pairs: int = 0
    warnings: tuple[str, ...] = ()

    @property
    def max_min_gap(self) -> int:
        counts = self.per_answer_counts.values()
        return max(counts) - min(counts) if counts else 0

    def to_dict(self) -> dict:
        return {
            "op": self.op,
            "dimension": self.dimension,
            "per_answer_counts": dict(sorted(self.per_answer_counts.items())),
            "max_min_gap": self.max_min_gap,
            "downsampled": self.downsampled,
            "reversal_pairs": self.reversal_pairs,
            "warnings": list(self.warnings),
        }


def _sample_keep(group: list[QAItem], target: int, rng) -> set[str]:
    """Seeded choice of which item_ids survive, preserving input order."""
    if len(group) <= target:
        return {i.item_id for i in group}
    keep_positions = sorted(rng.sample(range(len(group)), target))
    return {group[p].item_id for p in keep_positions}


# ---------------------------------------------------------------------------
# Pass 1: long-tail caps for open answer spaces
# ---------------------------------------------------------------------------


def _median(values: list[int]) -> float:
    ordered = sorted(values)
    mid = len(ordered) // 2
    if len(ordered) % 2:
        return float(ordered[mid])
    return (ordered[mid - 1] + ordered[mid]) / 2


def downsample_longtail(
    items: list[QAItem],
    *,
    seed: int,
    longtail_cap: float = 3.0,
    dimensions: tuple[Dimension, ...] = LONGTAIL_DIMENSIONS,
) -> tuple[list[QAItem], list[BalanceReport]]:
    """Cap each answer's frequency at longtail_cap x the median frequency."""
    reports = []
    keep: set[str] = set()
    covered = set(dimensions)
    for dim in dimensions:
        groups: dict[str, list[QAItem]] = defaultdict(list)
        for item in items:
            if item.dimension is dim:
                groups[item.answer_text].append(item)
        if not groups:
            continue
        cap = max(1, int(longtail_cap * _median([len(g) for g in groups.values()])))
        removed = 0
        counts = {}
        for answer_text in sorted(groups):
            group = groups[answer_text]
            rng = derive_rng(seed, "longtail", dim.value, answer_text)
            kept_ids = _sample_keep(group, cap, rng)
            removed += len(group) - len(kept_ids)
            counts[answer_text] = len(kept_ids)
            keep.update(kept_ids)
        reports.append(
            BalanceReport("longtail", dim.value, counts, downsampled=removed)
        )
    survivors = [
        i for i in items if i.dimension not in covered or i.item_id in keep
    ]
    return survivors, reports


# ---------------------------------------------------------------------------
# Pass 2: time-reversal siblings for direction items
# ---------------------------------------------------------------------------


def _reversed_sibling(item: QAItem, rng) -> QAItem:
    direction = Direction(item.answer_text)
    flipped = OPPOSITE[direction].value
    edit = item.edit.with_op(ReverseOp())
    sibling_id = short_id(
        "item",
        item.dimension.value,
        item.clip_id,
        item.provenance.candidate_key,
        item.format.value,
        item.provenance.template_index,
        "reversal",
    )
    provenance = replace(item.provenance, parent_item_id=item.item_id)
    if item.format is QAFormat.MULTIPLE_CHOICE:
        options = list(item.options)
        rng.shuffle(options)
        answer = string.ascii_uppercase[options.index(flipped)]
        return replace(
            item,
            item_id=sibling_id,
            question=item.question,
            options=tuple(options),
            answer=answer,
            answer_text=flipped,
            edit=edit,
            provenance=provenance,
        )
    return replace(
        item,
        item_id=sibling_id,
        answer=flipped,
        answer_text=flipped,
        edit=edit,
        provenance=provenance,
    )


def add_reversal_augmentation(
    items: list[QAItem], *, seed: int, fraction: float = 0.5
) -> tuple[list[QAItem], list[BalanceReport]]:
    """Give a seeded fraction of dynamic items a played-backwards twin.

    The twin shares the parent's question and video but reverses the edit
    and flips the answer to the opposite direction; its provenance points
    back at the parent.
    """
    out = []
    added = 0
    for item in items:
        out.append(item)
        if item.dimension is not Dimension.DYNAMIC or item.edit is None:
            continue
        rng = derive_rng(seed, "reversal", item.item_id)
        if rng.random() >= fraction:
            continue
        out.append(_reversed_sibling(item, rng))
        added += 1
    counts = Counter(
        i.answer_text for i in out if i.dimension is Dimension.DYNAMIC
    )
    report = BalanceReport(
        "reversal",
        Dimension.DYNAMIC.value,
        {d.value: counts.get(d.value, 0) for d in Direction},
        reversal_pairs=added,
    )
    return out, [report]


# ---------------------------------------------------------------------------
# Pass 3: strict balance for closed answer spaces
# ---------------------------------------------------------------------------


def balance_answers(
    items: list[QAItem],
    *,
    seed: int,
    balance_gap: int = 1,
    dimensions: tuple[Dimension, ...] = tuple(ANSWER_SPACES),
) -> tuple[list[QAItem], list[BalanceReport]]:
    """Downsample every answer group to the least frequent answer's count.

    The floor is computed over the dimension's full answer space, so an
    answer that never occurs drags every group to zero; a warning is
    recorded when that wipes out populated groups.  The resulting spread
    is always 0, which satisfies any ``balance_gap`` >= 0 (the gap is kept
    as a declared tolerance for report consumers).
    """
    if balance_gap < 0:
        raise ValueError("balance_gap must be >= 0")
    reports = []
    keep: set[str] = set()
    covered = set(dimensions)
    for dim in dimensions:
        space = ANSWER_SPACES[dim]
        groups: dict[str, list[QAItem]] = {text: [] for text in space}
        present = False
        for item in items:
            if item.dimension is dim:
                groups[item.answer_text].append(item)
                present = True
        if not present:
            continue
        sizes = {text: len(g) for text, g in groups.items()}
        target = min(sizes.values())
        warnings = []
        if target == 0 and max(sizes.values()) > 0:
            warnings.append(
                f"answers {sorted(t for t, n in sizes.items() if n == 0)} never occur; "
                "populated groups were emptied to balance at zero"
            )
        removed = 0
        counts = {}
        for answer_text in space:
            group = groups[answer_text]
            rng = derive_rng(seed, "balance", dim.value, answer_text)
            kept_ids = _sample_keep(group, target, rng)
            removed += len(group) - len(kept_ids)
            counts[answer_text] = len(kept_ids)
            keep.update(kept_ids)
        reports.append(
            BalanceReport(
                "balance",
                dim.value,
                counts,
                downsampled=removed,
                warnings=tuple(warnings),
            )
        )
    survivors = [
        i for i in items if i.dimension not in covered or i.item_id in keep
    ]
    return survivors, reports


# ---------------------------------------------------------------------------
# Combined stage
# ---------------------------------------------------------------------------


def debias_items(
    items: list[QAItem],
    *,
    seed: int,
    longtail_cap: float = 3.0,
    reversal_fraction: float = 0.5,
    balance_gap: int = 1,
) -> tuple[list[QAItem], list[BalanceReport]]:
    """Run the long-tail, reversal, and balance passes in order."""
    items, reports = downsample_longtail(items, seed=seed, longtail_cap=longtail_cap)
    items, rev_reports = add_reversal_augmentation(
        items, seed=seed, fraction=reversal_fraction
    )
    items, bal_reports = balance_answers(items, seed=seed, balance_gap=balance_gap)
    return items, reports + rev_reports + bal_reports
