"""Question/answer item assembly from labeled candidates.

A ``QAItem`` is one benchmark entry: an instruction plus question stem (the
``question`` field, which never embeds the options), an option list with a
correct letter for multiple choice, the canonical answer text, and an
optional edit manifest describing how to prepare the video. ``full_prompt``
renders the lettered option block at consumption time, so option order can
be rebalanced later without rewriting question text.

Assembly is deterministic: template choice, option sampling, and option
order all come from an RNG derived from (seed, dimension, candidate_key).
"""

from __future__ import annotations

import json
import logging
import string
from collections import Counter
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

from . import templates
from .editplan import EditManifest, manifest_from_dict, manifest_to_dict
from .seeding import derive_rng, short_id
from .taskgen import Dimension, LabeledCandidate

logger = logging.getLogger(__name__)


class QAFormat(str, Enum):
    MULTIPLE_CHOICE = "multiple_choice"
    OPEN_ENDED = "open_ended"


class InsufficientDistractors(Exception):
    """The candidate's pool cannot fill the required option count."""


class FormatMismatch(Exception):
    """Options supplied for an open-ended item, or missing for choice."""


# How many options each dimension presents in multiple-choice form.
EXPECTED_OPTION_COUNTS = {
    Dimension.LOCATION: 3,
    Dimension.DURATION: 3,
    Dimension.DYNAMIC: 4,
    Dimension.ORDER: 4,
    Dimension.REASONING: 4,
}

DURATION_PHRASES = {
    "short": "a short portion of the video",
    "medium": "a moderate portion of the video",
    "long": "a large portion of the video",
}

LOCATION_PHRASES = {
    "start": "at the beginning of the video",
    "middle": "in the middle of the video",
    "end": "at the end of the video",
}


@dataclass(frozen=True)
class Provenance:
    """Where an item came from, enough to regenerate or trace it."""

    seed: int
    clip_id: str
    video_uri: str
    candidate_key: str
    template_index: int
    instruction_index: int
    parent_item_id: str | None = None


@dataclass(frozen=True)
class OptionSet:
    """Validated multiple-choice options with the correct one marked."""

    options: tuple[str, ...]
    correct_index: int

    def __post_init__(self):
        if not 2 <= len(self.options) <= len(string.ascii_uppercase):
            raise ValueError(f"need 2..26 options, got {len(self.options)}")
        if len(set(self.options)) != len(self.options):
            raise ValueError(f"options must be distinct: {self.options}")
        if not 0 <= self.correct_index < len(self.options):
            raise ValueError(
                f"correct_index {self.correct_index} out of range for "
                f"{len(self.options)} options"
            )


@dataclass(frozen=True)
class QAItem:
    """One benchmark item. ``question`` never contains the option block."""

    item_id: str
    dimension: Dimension
    format: QAFormat
    question: str
    options: tuple[str, ...]
    answer: str  # letter for multiple choice, canonical text otherwise
    answer_text: str
    clip_id: str
    edit: EditManifest | None
    provenance: Provenance

    def full_prompt(self) -> str:
        """Question plus the lettered option block shown to a model."""
        if self.format is not QAFormat.MULTIPLE_CHOICE:
            return self.question
        lines = [self.question]
        for letter, option in zip(string.ascii_uppercase, self.options):
            lines.append(f"{letter}. {option}")
        return "\n".join(lines)

    @property
    def correct_index(self) -> int:
        if self.format is not QAFormat.MULTIPLE_CHOICE:
            raise FormatMismatch("open-ended items have no option index")
        return string.ascii_uppercase.index(self.answer)


def _option_text(dimension: Dimension, value: str) -> str:
    if dimension is Dimension.DURATION:
        return DURATION_PHRASES[value]
    if dimension is Dimension.LOCATION:
        return LOCATION_PHRASES[value]
    return value


def render_question(
    candidate: LabeledCandidate, pool: templates.TemplatePool, rng_seed: int
) -> str:
    """Render one question for a candidate, template drawn uniformly by seed.

    Placeholders come from the candidate's context; a template that needs a
    key the context lacks raises ``UnresolvedPlaceholder``. The same
    (candidate, pool, seed) always yields the same string.
    """
    rng = derive_rng(rng_seed, "template", pool.name, candidate.candidate_key)
    return pool.render(rng.randrange(len(pool)), candidate.context)


def build_options(candidate: LabeledCandidate, rng) -> OptionSet:
    """Sample and shuffle the option texts for one candidate."""
    required = EXPECTED_OPTION_COUNTS[candidate.dimension]
    pool = [p for p in dict.fromkeys(candidate.distractor_pool) if p != candidate.answer]
    needed = required - 1
    if len(pool) < needed:
        raise InsufficientDistractors(
            f"{candidate.candidate_key}: {len(pool)} distractors available, "
            f"{needed} needed"
        )
    distractors = pool if len(pool) == needed else rng.sample(pool, needed)
    texts = [_option_text(candidate.dimension, v) for v in [candidate.answer, *distractors]]
    rng.shuffle(texts)
    correct = texts.index(_option_text(candidate.dimension, candidate.answer))
    return OptionSet(tuple(texts), correct)


def assemble_item(
    candidate: LabeledCandidate,
    *,
    fmt: QAFormat,
    question: str,
    option_set: OptionSet | None,
    provenance: Provenance,
    lane: str = "base",
) -> QAItem:
    """Combine the rendered question with options into a finished item."""
    answer_text = _option_text(candidate.dimension, candidate.answer)
    if fmt is QAFormat.MULTIPLE_CHOICE:
        if option_set is None:
            raise FormatMismatch("multiple choice requires an option set")
        expected = EXPECTED_OPTION_COUNTS[candidate.dimension]
        if len(option_set.options) != expected:
            raise FormatMismatch(
                f"{candidate.dimension.value} items take {expected} options, "
                f"got {len(option_set.options)}"
            )
        if option_set.options[option_set.correct_index] != answer_text:
            raise FormatMismatch("correct option text does not match the answer")
        options = option_set.options
        answer = string.ascii_uppercase[option_set.correct_index]
    else:
        if option_set is not None:
            raise FormatMismatch("open-ended items take no options")
        options = ()
        answer = answer_text
    item_id = short_id(
        "item",
        candidate.dimension.value,
        candidate.clip_id,
        candidate.candidate_key,
        fmt.value,
        provenance.template_index,
        lane,
    )
    return QAItem(
        item_id=item_id,
        dimension=candidate.dimension,
        format=fmt,
        question=question,
        options=options,
        answer=answer,
        answer_text=answer_text,
        clip_id=candidate.clip_id,
        edit=candidate.edit,
        provenance=provenance,
    )


def with_option_order(item: QAItem, order: list[int]) -> QAItem:
    """Re-order an item's options; the letter follows the correct text.

    ``order`` lists current option indices in their new positions. Question
    text, answer text, id, and provenance are all preserved.
    """
    if item.format is not QAFormat.MULTIPLE_CHOICE:
        raise FormatMismatch("open-ended items have no options to reorder")
    if sorted(order) != list(range(len(item.options))):
        raise ValueError(f"order must permute 0..{len(item.options) - 1}, got {order}")
    new_options = tuple(item.options[i] for i in order)
    new_correct = order.index(item.correct_index)
    return replace(
        item, options=new_options, answer=string.ascii_uppercase[new_correct]
    )


# ---------------------------------------------------------------------------
# Batch generation
# ---------------------------------------------------------------------------


def generate_items(
    candidates: list[LabeledCandidate],
    *,
    seed: int,
    open_ended_fraction: float = 0.0,
    stats: Counter | None = None,
) -> list[QAItem]:
    """Turn candidates into items, sorted by item_id.

    Each candidate independently draws its format, question template,
    instruction, and option order from its own derived RNG, so inserting or
    removing candidates never disturbs the items built from the others.
    """
    stats = stats if stats is not None else Counter()
    question_pools = {}
    instruction_pools = {}
    items = []
    for candidate in candidates:
        dim = candidate.dimension
        if dim not in question_pools:
            question_pools[dim] = templates.load_pool("question", dim.value)
            instruction_pools[dim] = templates.load_pool("instruction", dim.value)
        rng = derive_rng(seed, "qagen", dim.value, candidate.candidate_key)
        fmt = (
            QAFormat.OPEN_ENDED
            if rng.random() < open_ended_fraction
            else QAFormat.MULTIPLE_CHOICE
        )
        template_index = rng.randrange(len(question_pools[dim]))
        instruction_index = rng.randrange(len(instruction_pools[dim]))
        stem = question_pools[dim].render(template_index, candidate.context)
        instruction = instruction_pools[dim].get(instruction_index)
        question = f"{instruction}\n{stem}"
        option_set = None
        if fmt is QAFormat.MULTIPLE_CHOICE:
            try:
                option_set = build_options(candidate, rng)
            except InsufficientDistractors:
                stats[f"{dim.value}.insufficient_distractors"] += 1
                logger.debug("dropping %s: not enough distractors", candidate.candidate_key)
                continue
        provenance = Provenance(
            seed=seed,
            clip_id=candidate.clip_id,
            video_uri=candidate.video_uri,
            candidate_key=candidate.candidate_key,
            template_index=template_index,
            instruction_index=instruction_index,
        )
        items.append(
            assemble_item(
                candidate,
                fmt=fmt,
                question=question,
                option_set=option_set,
                provenance=provenance,
            )
        )
        stats[f"{dim.value}.items"] += 1
    return sorted(items, key=lambda i: i.item_id)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def item_to_dict(item: QAItem) -> dict:
    return {
        "item_id": item.item_id,
        "dimension": item.dimension.value,
        "format": item.format.value,
        "question": item.question,
        "options": list(item.options),
        "answer": item.answer,
        "answer_text": item.answer_text,
        "clip_id": item.clip_id,
        "edit": manifest_to_dict(item.edit) if item.edit is not None else None,
        "provenance": {
            "seed": item.provenance.seed,
            "clip_id": item.provenance.clip_id,
            "video_uri": item.provenance.video_uri,
            "candidate_key": item.provenance.candidate_key,
            "template_index": item.provenance.template_index,
            "instruction_index": item.provenance.instruction_index,
            "parent_item_id": item.provenance.parent_item_id,
        },
    }


def item_from_dict(data: dict) -> QAItem:
    prov = data["provenance"]
    return QAItem(
        item_id=data["item_id"],
        dimension=Dimension(data["dimension"]),
        format=QAFormat(data["format"]),
        question=data["question"],
        options=tuple(data["options"]),
        answer=data["answer"],
        answer_text=data["answer_text"],
        clip_id=data["clip_id"],
        edit=manifest_from_dict(data["edit"]) if data["edit"] is not None else None,
        provenance=Provenance(
            seed=prov["seed"],
            clip_id=prov["clip_id"],
            video_uri=prov["video_uri"],
            candidate_key=prov["candidate_key"],
            template_index=prov["template_index"],
            instruction_index=prov["instruction_index"],
            parent_item_id=prov.get("parent_item_id"),
        ),
    )


def write_items(path: str | Path, items: list[QAItem]) -> None:
    ordered = sorted(items, key=lambda i: i.item_id)
    lines = [json.dumps(item_to_dict(i), sort_keys=True) for i in ordered]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_items(path: str | Path) -> list[QAItem]:
    items = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            items.append(item_from_dict(json.loads(line)))
    return items
