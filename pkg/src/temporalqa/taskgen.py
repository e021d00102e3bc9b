"""Candidate generation for the five temporal question dimensions.

Each generator inspects normalized clips of one annotation kind and emits
``LabeledCandidate`` records: a ground-truth answer, the template context
needed to phrase a question about it, the distractor pool for multiple
choice, and (where the question is about a sub-span) an edit manifest that
crops the video to exactly the evidence window.

Dimensions and their annotation sources:

``dynamic``    bbox_track            which way does the object move
``reasoning``  goal_step             what happens next in a procedure
``duration``   timestamped_caption   how long does an activity last
``location``   timestamped_caption   when in the video does it happen
``order``      action_interval       in what order do three actions occur

Every random draw is made from an RNG derived from (seed, lane, clip_id),
so regenerating with the same seed reproduces identical candidates.
"""

from __future__ import annotations

import itertools
import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum

from .editplan import CropOp, EditManifest
from .ingest import BBoxTrack, Box, NormalizedClip, SourceSchema
from .seeding import derive_rng

logger = logging.getLogger(__name__)

ORDER_JOINER = ", then "


class DegenerateTrack(Exception):
    """A trajectory has too few observations to say anything about motion."""


class Dimension(str, Enum):
    DYNAMIC = "dynamic"
    REASONING = "reasoning"
    DURATION = "duration"
    LOCATION = "location"
    ORDER = "order"


class Direction(str, Enum):
    LEFT = "left"
    RIGHT = "right"
    UP = "up"
    DOWN = "down"


OPPOSITE = {
    Direction.LEFT: Direction.RIGHT,
    Direction.RIGHT: Direction.LEFT,
    Direction.UP: Direction.DOWN,
    Direction.DOWN: Direction.UP,
}


class DurationBucket(str, Enum):
    SHORT = "short"
    MEDIUM = "medium"
    LONG = "long"


class IntervalBucket(str, Enum):
    START = "start"
    MIDDLE = "middle"
    END = "end"


@dataclass(frozen=True)
class LabeledCandidate:
    """One answerable question opportunity found in a clip."""

    dimension: Dimension
    clip_id: str
    video_uri: str
    answer: str
    context: dict = field(compare=False)
    distractor_pool: tuple[str, ...]
    edit: EditManifest | None
    candidate_key: str


# ---------------------------------------------------------------------------
# Dynamic: dominant-direction classification of box trajectories
# ---------------------------------------------------------------------------


def classify_direction(
    track: BBoxTrack,
    *,
    min_displacement: float = 0.15,
    monotonicity_slack: float = 0.1,
) -> Direction | None:
    """Classify a trajectory's dominant motion direction, or None.

    The dominant axis is the one with the larger absolute net displacement
    (ties go to horizontal). Returns None when the net displacement is below
    ``min_displacement`` (in normalized image units) or when more than
    ``monotonicity_slack`` of the per-step moves go against the net
    direction — the motion is then too small or too wobbly to label.

    Image coordinates put the origin top-left, so positive dy means DOWN.
    """
    boxes = track.boxes
    if len(boxes) < 2:
        raise DegenerateTrack(
            f"track {track.object_id!r} has {len(boxes)} box(es); need at least 2"
        )
    dx = boxes[-1].x_center - boxes[0].x_center
    dy = boxes[-1].y_center - boxes[0].y_center
    if abs(dy) > abs(dx):
        values = [b.y_center for b in boxes]
        net = dy
        positive, negative = Direction.DOWN, Direction.UP
    else:
        values = [b.x_center for b in boxes]
        net = dx
        positive, negative = Direction.RIGHT, Direction.LEFT
    if abs(net) < min_displacement:
        return None

    net_sign = 1 if net > 0 else -1
    steps = len(values) - 1
    violations = sum(
        1 for a, b in zip(values, values[1:]) if (b - a) * net_sign < 0
    )
    if violations > monotonicity_slack * steps:
        return None
    return positive if net_sign > 0 else negative


def reverse_track(track: BBoxTrack) -> BBoxTrack:
    """Time-reverse a trajectory, keeping frame indices strictly increasing."""
    lo = track.boxes[0].frame_index
    hi = track.boxes[-1].frame_index
    reversed_boxes = tuple(
        Box(lo + hi - b.frame_index, b.x_center, b.y_center, b.width, b.height)
        for b in reversed(track.boxes)
    )
    return BBoxTrack(track.object_id, track.category, reversed_boxes)


def _monotone_runs(values: list[float]) -> list[tuple[int, int]]:
    """Maximal index spans [a, b] whose consecutive deltas share one sign.

    Zero deltas never break a run; spans whose deltas are all zero are
    dropped. Returned spans index into ``values`` and have b > a.
    """
    signs = [0 if b == a else (1 if b > a else -1) for a, b in zip(values, values[1:])]
    runs: list[tuple[int, int]] = []
    for target in (1, -1):
        start = None
        saw_target = False
        for i, s in enumerate(signs + [-target * 2]):  # sentinel breaks the last run
            if s == 0 or s == target:
                if start is None:
                    start = i
                saw_target = saw_target or s == target
            else:
                if start is not None and saw_target:
                    runs.append((start, i))
                start = None
                saw_target = False
    return sorted(set(runs))


def _best_directional_window(
    track: BBoxTrack, *, min_displacement: float, monotonicity_slack: float
) -> tuple[int, int, Direction] | None:
    """Box-index window with the clearest directional motion, if any.

    The whole track wins when it classifies; otherwise every maximal
    monotone run on either axis is tried, preferring longer frame spans,
    then larger net displacement, then earlier starts.
    """
    whole = classify_direction(
        track, min_displacement=min_displacement, monotonicity_slack=monotonicity_slack
    )
    if whole is not None:
        return 0, len(track.boxes) - 1, whole

    proposals: set[tuple[int, int]] = set()
    for axis_values in ([b.x_center for b in track.boxes], [b.y_center for b in track.boxes]):
        proposals.update(_monotone_runs(axis_values))

    best = None
    for a, b in sorted(proposals):
        sub = BBoxTrack(track.object_id, track.category, track.boxes[a : b + 1])
        direction = classify_direction(
            sub, min_displacement=min_displacement, monotonicity_slack=monotonicity_slack
        )
        if direction is None:
            continue
        if direction in (Direction.LEFT, Direction.RIGHT):
            net = abs(sub.boxes[-1].x_center - sub.boxes[0].x_center)
        else:
            net = abs(sub.boxes[-1].y_center - sub.boxes[0].y_center)
        span = sub.boxes[-1].frame_index - sub.boxes[0].frame_index
        rank = (span, net, -sub.boxes[0].frame_index)
        if best is None or rank > best[0]:
            best = (rank, (a, b, direction))
    return best[1] if best else None


def _crowded_frames(clip: NormalizedClip) -> set[int]:
    """Frames where some category appears on more than two boxes at once."""
    per_frame: Counter[tuple[int, str]] = Counter()
    for track in clip.payload:
        for box in track.boxes:
            per_frame[(box.frame_index, track.category)] += 1
    return {frame for (frame, _cat), n in per_frame.items() if n > 2}


def gen_dynamic(
    clips: list[NormalizedClip],
    *,
    min_displacement: float = 0.15,
    monotonicity_slack: float = 0.1,
    crowd_scope: str = "segment",
    stats: Counter | None = None,
) -> list[LabeledCandidate]:
    """Direction-of-motion candidates from bounding-box trajectories.

    ``crowd_scope`` controls the crowding filter: "segment" drops a
    candidate only if a frame inside its own window shows more than two
    same-category objects; "clip" drops it if any frame of the clip does.
    """
    if crowd_scope not in ("segment", "clip"):
        raise ValueError(f"crowd_scope must be 'segment' or 'clip', got {crowd_scope!r}")
    stats = stats if stats is not None else Counter()
    out = []
    for clip in clips:
        if clip.kind is not SourceSchema.BBOX_TRACK:
            continue
        crowded = _crowded_frames(clip)
        fps = clip.frame_count / clip.duration_s
        for track in clip.payload:
            if len(track.boxes) < 2:
                stats["dynamic.degenerate_track"] += 1
                continue
            window = _best_directional_window(
                track,
                min_displacement=min_displacement,
                monotonicity_slack=monotonicity_slack,
            )
            if window is None:
                stats["dynamic.no_clear_direction"] += 1
                continue
            a, b, direction = window
            f0 = track.boxes[a].frame_index
            f1 = track.boxes[b].frame_index
            if crowd_scope == "clip":
                is_crowded = bool(crowded)
            else:
                is_crowded = any(f0 <= f <= f1 for f in crowded)
            if is_crowded:
                stats["dynamic.crowded"] += 1
                continue
            edit = EditManifest(
                clip.video_uri,
                (CropOp(f0 / fps, (f1 + 1) / fps),),
                source_duration_s=clip.duration_s,
            )
            pool = tuple(d.value for d in Direction if d is not direction)
            out.append(
                LabeledCandidate(
                    dimension=Dimension.DYNAMIC,
                    clip_id=clip.clip_id,
                    video_uri=clip.video_uri,
                    answer=direction.value,
                    context={"object": track.category},
                    distractor_pool=pool,
                    edit=edit,
                    candidate_key=f"{clip.clip_id}:{track.object_id}:{f0}-{f1}",
                )
            )
            stats["dynamic.kept"] += 1
    return _canonical(out)


# ---------------------------------------------------------------------------
# Reasoning: next-step prediction over goal-directed procedures
# ---------------------------------------------------------------------------

MIN_STEPS = 3
MAX_STEPS = 15
MIN_ESSENTIAL_FRACTION = 0.5


def gen_reasoning(
    clips: list[NormalizedClip],
    *,
    seed: int,
    splits_per_sequence: int = 1,
    stats: Counter | None = None,
) -> list[LabeledCandidate]:
    """Next-step candidates: show steps [0, k), ask for step k.

    Sequences shorter than 3 steps are dropped, longer ones truncated to
    their first 15 steps, and sequences where fewer than half the retained
    steps are essential are dropped. The split point k is sampled uniformly
    from [2, n-1] per sequence.
    """
    stats = stats if stats is not None else Counter()
    out = []
    for clip in clips:
        if clip.kind is not SourceSchema.GOAL_STEP:
            continue
        steps = clip.payload.steps
        if len(steps) < MIN_STEPS:
            stats["reasoning.too_few_steps"] += 1
            continue
        steps = steps[:MAX_STEPS]
        essential = sum(1 for s in steps if s.is_essential)
        if essential / len(steps) < MIN_ESSENTIAL_FRACTION:
            stats["reasoning.low_essential_fraction"] += 1
            continue
        rng = derive_rng(seed, "reasoning", clip.clip_id)
        possible = range(2, len(steps))
        ks = sorted(rng.sample(possible, min(splits_per_sequence, len(possible))))
        for k in ks:
            answer = steps[k].description
            pool = tuple(
                dict.fromkeys(
                    s.description for s in steps if s.description != answer
                )
            )
            edit = EditManifest(
                clip.video_uri,
                (CropOp(steps[0].start_s, steps[k - 1].end_s),),
                source_duration_s=clip.duration_s,
            )
            out.append(
                LabeledCandidate(
                    dimension=Dimension.REASONING,
                    clip_id=clip.clip_id,
                    video_uri=clip.video_uri,
                    answer=answer,
                    context={"goal": clip.payload.goal_description},
                    distractor_pool=pool,
                    edit=edit,
                    candidate_key=f"{clip.clip_id}:k{k}",
                )
            )
            stats["reasoning.kept"] += 1
    return _canonical(out)


# ---------------------------------------------------------------------------
# Duration: bucketed fraction of the video an activity occupies
# ---------------------------------------------------------------------------


def duration_bucket(start_s: float, end_s: float, video_duration_s: float) -> DurationBucket:
    """Bucket an activity by the fraction of the video it spans (thirds)."""
    ratio = (end_s - start_s) / video_duration_s
    if ratio < 1 / 3:
        return DurationBucket.SHORT
    if ratio < 2 / 3:
        return DurationBucket.MEDIUM
    return DurationBucket.LONG


def gen_duration(
    clips: list[NormalizedClip], *, stats: Counter | None = None
) -> list[LabeledCandidate]:
    """How-long candidates from timestamped activity captions."""
    stats = stats if stats is not None else Counter()
    out = []
    for clip in clips:
        if clip.kind is not SourceSchema.TIMESTAMPED_CAPTION:
            continue
        for idx, event in enumerate(clip.payload):
            bucket = duration_bucket(event.start_s, event.end_s, event.video_duration_s)
            pool = tuple(b.value for b in DurationBucket if b is not bucket)
            out.append(
                LabeledCandidate(
                    dimension=Dimension.DURATION,
                    clip_id=clip.clip_id,
                    video_uri=clip.video_uri,
                    answer=bucket.value,
                    context={"activity": event.description},
                    distractor_pool=pool,
                    edit=None,
                    candidate_key=f"{clip.clip_id}:e{idx}",
                )
            )
            stats["duration.kept"] += 1
    return _canonical(out)


# ---------------------------------------------------------------------------
# Location: which third of the video contains an activity
# ---------------------------------------------------------------------------

_INTERVAL_BUCKETS = (IntervalBucket.START, IntervalBucket.MIDDLE, IntervalBucket.END)


def interval_of(t: float, video_duration_s: float) -> IntervalBucket:
    """Which third of the video a timestamp falls into."""
    if t < video_duration_s / 3:
        return IntervalBucket.START
    if t < 2 * video_duration_s / 3:
        return IntervalBucket.MIDDLE
    return IntervalBucket.END


def gen_location(
    clips: list[NormalizedClip], *, stats: Counter | None = None
) -> list[LabeledCandidate]:
    """When-does-it-happen candidates; only events contained in one third.

    Events whose start and end fall into different thirds have no single
    correct answer and are dropped.
    """
    stats = stats if stats is not None else Counter()
    out = []
    for clip in clips:
        if clip.kind is not SourceSchema.TIMESTAMPED_CAPTION:
            continue
        for idx, event in enumerate(clip.payload):
            start_bucket = interval_of(event.start_s, event.video_duration_s)
            end_bucket = interval_of(event.end_s, event.video_duration_s)
            if start_bucket is not end_bucket:
                stats["location.spans_intervals"] += 1
                continue
            pool = tuple(b.value for b in _INTERVAL_BUCKETS if b is not start_bucket)
            out.append(
                LabeledCandidate(
                    dimension=Dimension.LOCATION,
                    clip_id=clip.clip_id,
                    video_uri=clip.video_uri,
                    answer=start_bucket.value,
                    context={"activity": event.description},
                    distractor_pool=pool,
                    edit=None,
                    candidate_key=f"{clip.clip_id}:e{idx}",
                )
            )
            stats["location.kept"] += 1
    return _canonical(out)


# ---------------------------------------------------------------------------
# Order: chronological ordering of three non-overlapping actions
# ---------------------------------------------------------------------------


def gen_order(
    clips: list[NormalizedClip],
    *,
    min_action_s: float = 1.0,
    stats: Counter | None = None,
) -> list[LabeledCandidate]:
    """Order-of-actions candidates over windows of three distinct actions.

    Actions are sorted by start time and chained greedily so that no two
    chosen intervals overlap; every window of three consecutive chain
    entries with three distinct labels (repeated actions carry no ordering
    signal) and all durations >= ``min_action_s`` yields one candidate.
    """
    stats = stats if stats is not None else Counter()
    out = []
    for clip in clips:
        if clip.kind is not SourceSchema.ACTION_INTERVAL:
            continue
        ordered = sorted(clip.payload, key=lambda a: (a.start_s, a.end_s))
        chain = []
        for action in ordered:
            if not chain or action.start_s >= chain[-1].end_s:
                chain.append(action)
            else:
                stats["order.overlapping"] += 1
        for i in range(len(chain) - 2):
            window = chain[i : i + 3]
            labels = [a.action_label for a in window]
            if len(set(labels)) < 3:
                stats["order.repeated_action"] += 1
                continue
            if any(a.end_s - a.start_s < min_action_s for a in window):
                stats["order.too_brief"] += 1
                continue
            answer = ORDER_JOINER.join(labels)
            pool = tuple(
                ORDER_JOINER.join(p)
                for p in itertools.permutations(labels)
                if list(p) != labels
            )
            edit = EditManifest(
                clip.video_uri,
                (CropOp(window[0].start_s, window[2].end_s),),
                source_duration_s=clip.duration_s,
            )
            out.append(
                LabeledCandidate(
                    dimension=Dimension.ORDER,
                    clip_id=clip.clip_id,
                    video_uri=clip.video_uri,
                    answer=answer,
                    context={"actions": ", ".join(sorted(labels))},
                    distractor_pool=pool,
                    edit=edit,
                    candidate_key=f"{clip.clip_id}:w{i}",
                )
            )
            stats["order.kept"] += 1
    return _canonical(out)


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------


def _canonical(candidates: list[LabeledCandidate]) -> list[LabeledCandidate]:
    return sorted(candidates, key=lambda c: (c.clip_id, c.candidate_key, c.dimension))


def generate_all(
    clips: list[NormalizedClip],
    *,
    seed: int,
    min_displacement: float = 0.15,
    monotonicity_slack: float = 0.1,
    crowd_scope: str = "segment",
    splits_per_sequence: int = 1,
    min_action_s: float = 1.0,
    stats: Counter | None = None,
) -> dict[Dimension, list[LabeledCandidate]]:
    """Run every generator that has matching clips; keyed by dimension."""
    stats = stats if stats is not None else Counter()
    return {
        Dimension.DYNAMIC: gen_dynamic(
            clips,
            min_displacement=min_displacement,
            monotonicity_slack=monotonicity_slack,
            crowd_scope=crowd_scope,
            stats=stats,
        ),
        Dimension.REASONING: gen_reasoning(
            clips, seed=seed, splits_per_sequence=splits_per_sequence, stats=stats
        ),
        Dimension.DURATION: gen_duration(clips, stats=stats),
        Dimension.LOCATION: gen_location(clips, stats=stats),
        Dimension.ORDER: gen_order(clips, min_action_s=min_action_s, stats=stats),
    }
