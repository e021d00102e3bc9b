"""Shortcut auditing: find and remove items answerable without watching.

A trustworthy temporal benchmark must not reward single-frame heuristics.
The audit shows each candidate item to three judge models under degraded
conditions and compares them against chance:

1. Every multiple-choice item is probed with one frame sampled from its
   source video (``single_frame``). An item that two or more of the three
   judges answer correctly from that one frame carries a static shortcut
   and is removed.
2. Surviving items are probed again with a solid black image (``blind``)
   to measure how much of the remaining accuracy is pure text prior.
3. Correct options are then re-dealt across positions so every letter is
   (near-)equally often correct.

The report carries Acc_s (single frame), Acc_b (blind), and Acc_r (the
analytic random baseline, mean of 1/option_count). A debiased benchmark
should show Acc_s and Acc_b at or below Acc_r.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

from .evalharness import extract_letter
from .judge import (
    ChatJudgeClient,
    JudgeUnavailable,
    black_image_data_uri,
    frame_reference,
    user_message,
)
from .qagen import QAFormat, QAItem, with_option_order
from .seeding import derive_rng
from .taskgen import Dimension

logger = logging.getLogger(__name__)

REQUIRED_JUDGES = 3
MAJORITY_THRESHOLD = 2

# Instruction appended to every probe prompt, verbatim.
EVAL_PROMPT = (
    "Answer with the option's letter from the given choices directly "
    "and only give the best option"
)


class IncompleteVerdicts(Exception):
    """Some items lack the full set of judge verdicts."""


class Condition(str, Enum):
    SINGLE_FRAME = "single_frame"
    BLIND = "blind"
    FULL_VIDEO = "full_video"


@dataclass(frozen=True)
class JudgeVerdict:
    """One judge's answer to one item under one probe condition.

    ``correct`` is fixed at probe time against the letters the judge saw;
    later option re-dealing does not retroactively change it.
    """

    item_id: str
    judge_id: str
    condition: Condition
    raw_response: str
    chosen_letter: str | None
    correct: bool


@dataclass(frozen=True)
class FilterDecision:
    """The majority vote on one item, with the verdicts behind it."""

    item_id: str
    verdicts: tuple[JudgeVerdict, ...]
    filtered: bool

    def __post_init__(self):
        if len(self.verdicts) != REQUIRED_JUDGES:
            raise IncompleteVerdicts(
                f"{self.item_id}: {len(self.verdicts)} verdicts, "
                f"need {REQUIRED_JUDGES}"
            )
        if self.filtered != (self.correct_votes >= MAJORITY_THRESHOLD):
            raise ValueError(
                f"{self.item_id}: filtered={self.filtered} contradicts "
                f"{self.correct_votes} correct votes"
            )

    @property
    def correct_votes(self) -> int:
        return sum(v.correct for v in self.verdicts)

    def to_dict(self) -> dict:
        return {
            "item_id": self.item_id,
            "votes": {v.judge_id: v.correct for v in self.verdicts},
            "correct_votes": self.correct_votes,
            "filtered": self.filtered,
        }


@dataclass(frozen=True)
class DiagnosticsReport:
    acc_s: float
    acc_b: float
    acc_r: float
    per_dimension: dict

    def to_dict(self) -> dict:
        return {
            "acc_single_frame": self.acc_s,
            "acc_blind": self.acc_b,
            "acc_random": self.acc_r,
            "per_dimension": self.per_dimension,
        }


def _source_uri(item: QAItem) -> str:
    return item.edit.source_uri if item.edit is not None else item.provenance.video_uri


def probe_items(
    items: list[QAItem],
    clients: list[ChatJudgeClient],
    *,
    seed: int,
    condition: Condition,
    shared_frame: bool = True,
    blind_size: tuple[int, int] = (336, 336),
) -> list[JudgeVerdict]:
    """Collect one verdict per (item, judge) under the given condition.

    The probed frame position is a seeded draw per item (per item and judge
    when ``shared_frame`` is off). An unreachable judge yields an incorrect
    verdict rather than aborting the audit.
    """
    verdicts = []
    for client in clients:
        judge_id = client.spec.judge_id
        requests = []
        metas = []
        for item in items:
            if item.format is not QAFormat.MULTIPLE_CHOICE:
                raise ValueError(f"item {item.item_id} is not multiple choice")
            frame_parts = (seed, "frame", item.item_id) if shared_frame else (
                seed, "frame", item.item_id, judge_id
            )
            position = derive_rng(*frame_parts).random()
            if condition is Condition.SINGLE_FRAME:
                image_url = frame_reference(_source_uri(item), position)
                frame_key = f"{position:.6f}"
            elif condition is Condition.BLIND:
                image_url = black_image_data_uri(*blind_size)
                frame_key = "blind"
            else:
                image_url = _source_uri(item)
                frame_key = "full"
            text = f"{item.full_prompt()}\n{EVAL_PROMPT}"
            key = f"verdict:{item.item_id}:{judge_id}:{condition.value}:{frame_key}"
            requests.append((key, [user_message(text, image_url)]))
            metas.append(item)

        def _complete(keyed, _client=client, _judge=judge_id):
            try:
                return _client.complete(*keyed)
            except JudgeUnavailable as exc:
                logger.warning("judge %s unavailable: %s", _judge, exc)
                return f"<judge unavailable: {exc}>"

        if len(requests) <= 1 or client.spec.max_in_flight <= 1:
            responses = [_complete(keyed) for keyed in requests]
        else:
            with ThreadPoolExecutor(max_workers=client.spec.max_in_flight) as pool:
                responses = list(pool.map(_complete, requests))
        for item, response in zip(metas, responses):
            letter = extract_letter(response, len(item.options))
            verdicts.append(
                JudgeVerdict(
                    item_id=item.item_id,
                    judge_id=judge_id,
                    condition=condition,
                    raw_response=response,
                    chosen_letter=letter,
                    correct=letter == item.answer,
                )
            )
    return verdicts


def majority_filter(
    items: list[QAItem], verdicts: list[JudgeVerdict]
) -> tuple[list[QAItem], list[FilterDecision]]:
    """Drop items that 2 of 3 judges answered correctly from one frame.

    An item without exactly three single-frame verdicts cannot be voted on;
    it is left out of both the kept list and the decisions, with a warning.
    """
    votes: dict[str, list[JudgeVerdict]] = defaultdict(list)
    for verdict in verdicts:
        if verdict.condition is Condition.SINGLE_FRAME:
            votes[verdict.item_id].append(verdict)
    incomplete = [
        i.item_id for i in items if len(votes.get(i.item_id, [])) != REQUIRED_JUDGES
    ]
    if incomplete:
        logger.warning(
            "%d items lack exactly %d single-frame verdicts and were skipped "
            "(e.g. %s)", len(incomplete), REQUIRED_JUDGES, incomplete[:3],
        )
    skipped = set(incomplete)
    kept = []
    decisions = []
    for item in items:
        if item.item_id in skipped:
            continue
        item_verdicts = tuple(votes[item.item_id])
        correct_votes = sum(v.correct for v in item_verdicts)
        filtered = correct_votes >= MAJORITY_THRESHOLD
        decisions.append(FilterDecision(item.item_id, item_verdicts, filtered))
        if not filtered:
            kept.append(item)
    return kept, decisions


def rebalance_options(
    items: list[QAItem], *, seed: int, balance_gap: int = 1
) -> list[QAItem]:
    """Re-deal correct options across positions, near-uniformly per group.

    Items are grouped by (dimension, option count); within each group the
    correct answer's position is assigned from an exact multiset of slots
    (n // k or n // k + 1 occurrences per position), so position counts
    can never differ by more than one. Question text, option texts, and
    answer texts are untouched — only order and letter change.
    """
    if balance_gap < 1:
        raise ValueError("balance_gap below 1 is unsatisfiable when n % k != 0")
    groups: dict[tuple[str, int], list[QAItem]] = defaultdict(list)
    passthrough = []
    for item in items:
        if item.format is QAFormat.MULTIPLE_CHOICE:
            groups[(item.dimension.value, len(item.options))].append(item)
        else:
            passthrough.append(item)

    out = list(passthrough)
    for (dim, k), group in sorted(groups.items()):
        group = sorted(group, key=lambda i: i.item_id)
        n = len(group)
        slots = [position for position in range(k) for _ in range(n // k)]
        remainder_positions = list(range(k))
        rng = derive_rng(seed, "rebalance", dim, k)
        rng.shuffle(remainder_positions)
        slots.extend(remainder_positions[: n % k])
        rng.shuffle(slots)
        for item, target in zip(group, slots):
            current = item.correct_index
            others = [i for i in range(k) if i != current]
            order = []
            fill = iter(others)
            for position in range(k):
                order.append(current if position == target else next(fill))
            out.append(with_option_order(item, order))
    return sorted(out, key=lambda i: i.item_id)


def compute_diagnostics(
    items: list[QAItem],
    single_verdicts: list[JudgeVerdict],
    blind_verdicts: list[JudgeVerdict],
) -> DiagnosticsReport:
    """Pool verdicts over (item, judge) pairs and compare against chance."""
    ids = {i.item_id for i in items}
    for name, verdicts in (("single-frame", single_verdicts), ("blind", blind_verdicts)):
        covered = {v.item_id for v in verdicts}
        missing = ids - covered
        if missing:
            raise IncompleteVerdicts(
                f"{len(missing)} items have no {name} verdicts "
                f"(e.g. {sorted(missing)[:3]})"
            )
    by_dim: dict[str, list[QAItem]] = defaultdict(list)
    for item in items:
        by_dim[item.dimension.value].append(item)

    def _accuracy(verdicts: list[JudgeVerdict], id_subset: set[str]) -> float:
        relevant = [v for v in verdicts if v.item_id in id_subset]
        if not relevant:
            return 0.0
        return sum(v.correct for v in relevant) / len(relevant)

    def _chance(subset: list[QAItem]) -> float:
        mc = [i for i in subset if i.format is QAFormat.MULTIPLE_CHOICE]
        if not mc:
            return 0.0
        return sum(1 / len(i.options) for i in mc) / len(mc)

    per_dimension = {}
    for dim in sorted(by_dim):
        dim_ids = {i.item_id for i in by_dim[dim]}
        per_dimension[dim] = {
            "acc_single_frame": _accuracy(single_verdicts, dim_ids),
            "acc_blind": _accuracy(blind_verdicts, dim_ids),
            "acc_random": _chance(by_dim[dim]),
            "count": len(by_dim[dim]),
        }
    return DiagnosticsReport(
        acc_s=_accuracy(single_verdicts, ids),
        acc_b=_accuracy(blind_verdicts, ids),
        acc_r=_chance(items),
        per_dimension=per_dimension,
    )


@dataclass(frozen=True)
class AuditReport:
    n_input: int
    n_removed: int
    n_kept: int
    diagnostics: DiagnosticsReport
    decisions: tuple[FilterDecision, ...]

    def to_dict(self) -> dict:
        return {
            "n_input": self.n_input,
            "n_removed": self.n_removed,
            "n_kept": self.n_kept,
            "diagnostics": self.diagnostics.to_dict(),
            "decisions": [d.to_dict() for d in self.decisions],
        }


def run_audit(
    items: list[QAItem],
    clients: list[ChatJudgeClient],
    *,
    seed: int,
    shared_frame: bool = True,
    blind_size: tuple[int, int] = (336, 336),
    balance_gap: int = 1,
) -> tuple[list[QAItem], AuditReport]:
    """Full audit: probe, majority-filter, blind-probe, re-deal options.

    Returns the debiased benchmark (sorted by item_id) and the report.
    Diagnostics are computed over the kept items only — they describe the
    benchmark being shipped, not the rejects.
    """
    if len(clients) != REQUIRED_JUDGES:
        raise ValueError(f"audit requires exactly {REQUIRED_JUDGES} judges, got {len(clients)}")
    mc_items = [i for i in items if i.format is QAFormat.MULTIPLE_CHOICE]
    if len(mc_items) != len(items):
        raise ValueError("audit operates on multiple-choice items only")

    single = probe_items(
        mc_items, clients, seed=seed, condition=Condition.SINGLE_FRAME,
        shared_frame=shared_frame, blind_size=blind_size,
    )
    kept, decisions = majority_filter(mc_items, single)
    blind = probe_items(
        kept, clients, seed=seed, condition=Condition.BLIND,
        shared_frame=shared_frame, blind_size=blind_size,
    )
    rebalanced = rebalance_options(kept, seed=seed, balance_gap=balance_gap)
    diagnostics = compute_diagnostics(rebalanced, single, blind)
    report = AuditReport(
        n_input=len(mc_items),
        n_removed=sum(d.filtered for d in decisions),
        n_kept=len(rebalanced),
        diagnostics=diagnostics,
        decisions=tuple(decisions),
    )
    return rebalanced, report
