"""Self-supervised temporal task augmentation for instruction data.

Instruction-tuning conversations about videos are augmented with auxiliary
tasks that force a model to look at more than one moment:

``frame_index``  a randomly chosen frame is duplicated at the front of the
                 video and the model must state its original position.
``assigned_qa``  a second video is spliced before or after the original and
                 the model must answer the original question about the
                 right one.

A gate first classifies each conversation: samples whose text already
exercises temporal understanding are left untouched (augmenting them could
invalidate their answers — reversing or splicing changes what "before" or
"how long" means). Samples arriving with ``temporal_flag`` already set skip
the gate, so the stage can run fully offline.

Task assignment is per-sample and seeded: with ratios (f, a), a sample
draws u ~ U[0,1) from its own derived RNG and gets frame_index if u < f,
assigned_qa if u < f + a, and no augmentation otherwise.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

from . import templates
from .editplan import ConcatOp, EditManifest, PrependFrameOp, manifest_from_dict, manifest_to_dict
from .judge import ChatJudgeClient, UnparseableVerdict
from .seeding import derive_rng, stable_digest
from .templates import TemplatePool

logger = logging.getLogger(__name__)


class TooFewFrames(Exception):
    """The video is too short for frame-position prediction."""


class SelfPartner(Exception):
    """No splice partner other than the sample itself is available."""


class AuxTask(str, Enum):
    FRAME_INDEX = "frame_index"
    ASSIGNED_QA = "assigned_qa"


@dataclass(frozen=True)
class InstructionSample:
    """One instruction-tuning record: a video plus its conversation."""

    sample_id: str
    video_uri: str
    frame_count: int
    conversation: tuple[tuple[str, str], ...]  # (role, text) turns
    temporal_flag: bool | None = None  # None = not yet classified

    def __post_init__(self):
        if not self.conversation:
            raise ValueError(f"{self.sample_id}: conversation is empty")
        for i, (role, _) in enumerate(self.conversation):
            expected = "user" if i % 2 == 0 else "assistant"
            if role != expected:
                raise ValueError(
                    f"{self.sample_id}: turn {i} has role {role!r}; conversations "
                    "must alternate user/assistant starting with user"
                )


@dataclass(frozen=True)
class MtpRatios:
    """Fractions of eligible samples receiving each auxiliary task."""

    frame_index_fraction: float = 0.25
    assigned_qa_fraction: float = 0.5

    def __post_init__(self):
        for name in ("frame_index_fraction", "assigned_qa_fraction"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        total = self.frame_index_fraction + self.assigned_qa_fraction
        if total > 1.0 + 1e-9:
            raise ValueError(f"fractions sum to {total}, must be <= 1")


@dataclass(frozen=True)
class AugmentedSample:
    """An instruction sample after (possible) auxiliary-task augmentation."""

    base: InstructionSample
    aux_task: AuxTask | None = None
    aux_prompt: str | None = None
    aux_answer: str | None = None
    edit: EditManifest | None = None
    partner_id: str | None = None

    def __post_init__(self):
        has_payload = any(
            v is not None for v in (self.aux_prompt, self.aux_answer, self.edit)
        )
        if self.aux_task is None:
            if has_payload or self.partner_id is not None:
                raise ValueError(
                    f"{self.base.sample_id}: unaugmented samples carry no aux fields"
                )
        else:
            if self.aux_prompt is None or self.aux_answer is None or self.edit is None:
                raise ValueError(
                    f"{self.base.sample_id}: {self.aux_task.value} needs prompt, "
                    "answer, and edit"
                )
        if self.aux_task is AuxTask.ASSIGNED_QA:
            if self.partner_id is None or self.partner_id == self.base.sample_id:
                raise ValueError(
                    f"{self.base.sample_id}: assigned_qa needs a distinct partner_id"
                )
        elif self.partner_id is not None:
            raise ValueError(
                f"{self.base.sample_id}: partner_id only applies to assigned_qa"
            )


# ---------------------------------------------------------------------------
# Temporal gate
# ---------------------------------------------------------------------------


def parse_yes_no(text: str) -> bool:
    """Interpret a judge reply as yes/no; anything else is unparseable."""
    lowered = text.strip().lower()
    for token, value in (("yes", True), ("no", False)):
        if lowered.startswith(token):
            return value
    has_yes = "yes" in lowered
    has_no = "no" in lowered
    if has_yes != has_no:
        return has_yes
    raise UnparseableVerdict(f"cannot read yes/no from {text!r}")


def conversation_text(sample: InstructionSample) -> str:
    return "\n".join(f"{role}: {text}" for role, text in sample.conversation)


def gate_temporal(
    samples: list[InstructionSample],
    client: ChatJudgeClient | None,
    *,
    gate_prompt: str | None = None,
    stats: Counter | None = None,
) -> list[InstructionSample]:
    """Fill in ``temporal_flag`` for samples that don't have one yet.

    Pre-set flags are respected untouched. An unparseable gate reply counts
    as temporal (True): when in doubt, leave the sample unaugmented.
    """
    stats = stats if stats is not None else Counter()
    pending = [s for s in samples if s.temporal_flag is None]
    if not pending:
        return list(samples)
    if client is None:
        raise ValueError(
            f"{len(pending)} samples lack a temporal_flag and no gate judge "
            "is configured"
        )
    if gate_prompt is None:
        gate_prompt = templates.load_prompt_text("gate_temporal")

    requests = []
    for sample in pending:
        prompt = templates.render(gate_prompt, {"conversation": conversation_text(sample)})
        key = f"gate:{sample.sample_id}:{stable_digest(prompt)[:16]}"
        requests.append((key, [{"role": "user", "content": prompt}]))
    replies = client.map(requests)

    flags = {}
    for sample, reply in zip(pending, replies):
        try:
            flag = parse_yes_no(reply)
        except UnparseableVerdict:
            logger.warning(
                "gate reply for %s unparseable (%r); treating as temporal",
                sample.sample_id, reply[:80],
            )
            stats["gate.unparseable"] += 1
            flag = True
        stats["gate.temporal" if flag else "gate.atemporal"] += 1
        flags[sample.sample_id] = flag
    return [
        s if s.temporal_flag is not None else replace(s, temporal_flag=flags[s.sample_id])
        for s in samples
    ]


# ---------------------------------------------------------------------------
# Auxiliary task builders
# ---------------------------------------------------------------------------


def build_frame_index_task(
    sample: InstructionSample,
    prompt_pool: TemplatePool,
    rng,
    *,
    index_base: int = 1,
    min_frames: int = 8,
) -> tuple[str, str, EditManifest]:
    """Duplicate a random frame at the front; answer is its original index.

    The manifest stores the 0-based source index; the answer string renders
    it in ``index_base`` (frame numbers are 1-based for humans by default).
    """
    if sample.frame_count < min_frames:
        raise TooFewFrames(
            f"{sample.sample_id}: {sample.frame_count} frames < minimum {min_frames}"
        )
    position = rng.randrange(sample.frame_count)
    prompt_index = rng.randrange(len(prompt_pool))
    prompt = prompt_pool.render(prompt_index, {"frame_count": str(sample.frame_count)})
    edit = EditManifest(sample.video_uri, (PrependFrameOp(position),))
    return prompt, str(position + index_base), edit


def build_assigned_qa_task(
    sample: InstructionSample,
    partner: InstructionSample,
    prompt_pool: TemplatePool,
    rng,
) -> tuple[str, str, EditManifest]:
    """Splice a partner video on and point the question at the original."""
    if partner.sample_id == sample.sample_id:
        raise SelfPartner(f"{sample.sample_id}: partner is the sample itself")
    answer = next(
        (text for role, text in sample.conversation if role == "assistant"), None
    )
    if answer is None or not any(role == "user" for role, _ in sample.conversation):
        raise ValueError(f"{sample.sample_id}: conversation has no user/assistant pair")
    original_first = rng.random() < 0.5
    position = "after" if original_first else "before"
    prompt_index = rng.randrange(len(prompt_pool))
    prompt = prompt_pool.render(
        prompt_index, {"position": "first" if original_first else "second"}
    )
    edit = EditManifest(sample.video_uri, (ConcatOp(partner.video_uri, position),))
    return prompt, answer, edit


class _PartnerCycle:
    """Seeded partner assignment: shuffle the pool, deal, reshuffle when out."""

    def __init__(self, pool: list[str], seed: int):
        self._pool = list(pool)
        self._seed = seed
        self._epoch = 0
        self._queue: list[str] = []

    def next_for(self, sample_id: str) -> str:
        if self._pool == [sample_id] or not self._pool:
            raise SelfPartner(f"{sample_id}: no other sample available as partner")
        while True:
            if not self._queue:
                rng = derive_rng(self._seed, "mtp-partner", self._epoch)
                self._queue = list(self._pool)
                rng.shuffle(self._queue)
                self._epoch += 1
            candidate = self._queue.pop(0)
            if candidate != sample_id:
                return candidate
            if self._queue:
                self._queue.append(candidate)
            # else: queue exhausted on self; loop reshuffles a new epoch


# ---------------------------------------------------------------------------
# Batch application
# ---------------------------------------------------------------------------


def apply_mtp(
    samples: list[InstructionSample],
    ratios: MtpRatios,
    *,
    seed: int,
    judge: ChatJudgeClient | None = None,
    index_base: int = 1,
    min_frames: int = 8,
    stats: Counter | None = None,
) -> list[AugmentedSample]:
    """Assign and build auxiliary tasks for every gated sample.

    Samples still lacking a ``temporal_flag`` are classified first when a
    gate ``judge`` is supplied; without one, unflagged input is an error.
    Input order is preserved; every sample appears exactly once in the
    output, augmented or not. Samples flagged temporal pass through
    untouched. A sample whose task cannot be built (too few frames, no
    usable partner) falls back to no augmentation rather than being
    dropped.
    """
    stats = stats if stats is not None else Counter()
    if judge is not None and any(s.temporal_flag is None for s in samples):
        samples = gate_temporal(samples, judge, stats=stats)
    unset = [s.sample_id for s in samples if s.temporal_flag is None]
    if unset:
        raise ValueError(
            f"{len(unset)} samples still lack a temporal_flag (e.g. {unset[0]!r}); "
            "run the gate first or pass a gate judge"
        )
    frame_pool = templates.load_prompt_pool("mtp_frame_index")
    qa_pool = templates.load_prompt_pool("mtp_assigned_qa")
    eligible_ids = [s.sample_id for s in samples if not s.temporal_flag]
    by_id = {s.sample_id: s for s in samples}
    partners = _PartnerCycle(eligible_ids, seed)

    out = []
    for sample in samples:
        if sample.temporal_flag:
            stats["mtp.flagged_temporal"] += 1
            out.append(AugmentedSample(sample))
            continue
        rng = derive_rng(seed, "mtp-task", sample.sample_id)
        u = rng.random()
        if u < ratios.frame_index_fraction:
            try:
                prompt, answer, edit = build_frame_index_task(
                    sample, frame_pool, rng, index_base=index_base, min_frames=min_frames
                )
            except TooFewFrames:
                stats["mtp.too_few_frames"] += 1
                out.append(AugmentedSample(sample))
                continue
            stats["mtp.frame_index"] += 1
            out.append(
                AugmentedSample(sample, AuxTask.FRAME_INDEX, prompt, answer, edit)
            )
        elif u < ratios.frame_index_fraction + ratios.assigned_qa_fraction:
            try:
                partner = by_id[partners.next_for(sample.sample_id)]
                prompt, answer, edit = build_assigned_qa_task(
                    sample, partner, qa_pool, rng
                )
            except SelfPartner:
                stats["mtp.self_partner"] += 1
                out.append(AugmentedSample(sample))
                continue
            except ValueError:
                stats["mtp.no_qa_pair"] += 1
                out.append(AugmentedSample(sample))
                continue
            stats["mtp.assigned_qa"] += 1
            out.append(
                AugmentedSample(
                    sample, AuxTask.ASSIGNED_QA, prompt, answer, edit, partner.sample_id
                )
            )
        else:
            stats["mtp.unaugmented"] += 1
            out.append(AugmentedSample(sample))
    return out


def compose_messages(aug: AugmentedSample) -> tuple[tuple[str, str], ...]:
    """Final training conversation for an augmented sample.

    frame_index prepends its own question/answer exchange; assigned_qa
    merges its positional instruction into the first user turn.
    """
    conversation = aug.base.conversation
    if aug.aux_task is AuxTask.FRAME_INDEX:
        return (("user", aug.aux_prompt), ("assistant", aug.aux_answer)) + conversation
    if aug.aux_task is AuxTask.ASSIGNED_QA:
        merged = []
        prefixed = False
        for role, text in conversation:
            if role == "user" and not prefixed:
                merged.append((role, f"{aug.aux_prompt}\n{text}"))
                prefixed = True
            else:
                merged.append((role, text))
        return tuple(merged)
    return conversation


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def sample_to_dict(sample: InstructionSample) -> dict:
    return {
        "sample_id": sample.sample_id,
        "video_uri": sample.video_uri,
        "frame_count": sample.frame_count,
        "conversation": [list(turn) for turn in sample.conversation],
        "temporal_flag": sample.temporal_flag,
    }


def sample_from_dict(data: dict) -> InstructionSample:
    return InstructionSample(
        sample_id=data["sample_id"],
        video_uri=data["video_uri"],
        frame_count=int(data["frame_count"]),
        conversation=tuple((t[0], t[1]) for t in data["conversation"]),
        temporal_flag=data.get("temporal_flag"),
    )


def augmented_to_dict(aug: AugmentedSample) -> dict:
    return {
        "sample_id": aug.base.sample_id,
        "video_uri": aug.base.video_uri,
        "frame_count": aug.base.frame_count,
        "temporal_flag": aug.base.temporal_flag,
        "aux_task": aug.aux_task.value if aug.aux_task is not None else None,
        "aux_prompt": aug.aux_prompt,
        "aux_answer": aug.aux_answer,
        "partner_id": aug.partner_id,
        "edit": manifest_to_dict(aug.edit) if aug.edit is not None else None,
        "messages": [list(turn) for turn in compose_messages(aug)],
    }


def augmented_from_dict(data: dict, base: InstructionSample) -> AugmentedSample:
    return AugmentedSample(
        base=base,
        aux_task=AuxTask(data["aux_task"]) if data["aux_task"] else None,
        aux_prompt=data["aux_prompt"],
        aux_answer=data["aux_answer"],
        edit=manifest_from_dict(data["edit"]) if data["edit"] else None,
        partner_id=data["partner_id"],
    )


def load_samples(path: str | Path) -> list[InstructionSample]:
    samples = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            samples.append(sample_from_dict(json.loads(line)))
    return samples


def write_samples(path: str | Path, samples: list[InstructionSample]) -> None:
    lines = [json.dumps(sample_to_dict(s), sort_keys=True) for s in samples]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def write_augmented(path: str | Path, augmented: list[AugmentedSample]) -> None:
    lines = [json.dumps(augmented_to_dict(a), sort_keys=True) for a in augmented]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
