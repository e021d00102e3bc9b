"""Parsers that normalize heterogeneous annotation corpora into clip records.

Four source schemas are supported. Files are JSON Lines (one record per
line) or a single JSON array of records:

``bbox_track``          per-frame bounding-box trajectories of tracked objects
``goal_step``           goal-directed step sequences with essential flags
``timestamped_caption`` described events with start/end timestamps
``action_interval``     labelled action intervals

Exact field names for each schema are documented in the README. Parsing is
deterministic: identical bytes yield an identical clip list, in input order.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Union

logger = logging.getLogger(__name__)


class SchemaViolation(Exception):
    """A source record does not conform to its declared schema."""

    def __init__(self, message: str, record_index: int | None = None):
        if record_index is not None:
            message = f"record {record_index}: {message}"
        super().__init__(message)
        self.record_index = record_index


class TemporalInconsistency(SchemaViolation):
    """An interval's start does not precede its end."""


class EmptyCorpus(Exception):
    """The corpus file contains no records."""


class SourceSchema(str, Enum):
    BBOX_TRACK = "bbox_track"
    GOAL_STEP = "goal_step"
    TIMESTAMPED_CAPTION = "timestamped_caption"
    ACTION_INTERVAL = "action_interval"


# ---------------------------------------------------------------------------
# Normalized types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Box:
    """One bounding-box observation, center/size normalized to [0, 1].

    Image coordinates: origin top-left, y grows downward.
    """

    frame_index: int
    x_center: float
    y_center: float
    width: float
    height: float


@dataclass(frozen=True)
class BBoxTrack:
    object_id: str
    category: str
    boxes: tuple[Box, ...]


@dataclass(frozen=True)
class Step:
    description: str
    start_s: float
    end_s: float
    is_essential: bool


@dataclass(frozen=True)
class StepSequence:
    goal_description: str
    steps: tuple[Step, ...]


@dataclass(frozen=True)
class TemporalEvent:
    description: str
    start_s: float
    end_s: float
    video_duration_s: float


@dataclass(frozen=True)
class ActionInterval:
    action_label: str
    start_s: float
    end_s: float


Payload = Union[
    tuple[BBoxTrack, ...],
    StepSequence,
    tuple[TemporalEvent, ...],
    tuple[ActionInterval, ...],
]


@dataclass(frozen=True)
class NormalizedClip:
    """A video reference plus the dimension-specific annotation payload."""

    clip_id: str
    video_uri: str
    duration_s: float
    frame_count: int
    kind: SourceSchema
    payload: Payload = field(compare=False)


# ---------------------------------------------------------------------------
# Record field helpers
# ---------------------------------------------------------------------------


def _need(record: dict, key: str, index: int):
    if key not in record:
        raise SchemaViolation(f"missing field '{key}'", index)
    return record[key]


def _as_float(value, key: str, index: int) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaViolation(f"field '{key}' must be a number, got {value!r}", index)
    return float(value)


def _as_int(value, key: str, index: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaViolation(f"field '{key}' must be an integer, got {value!r}", index)
    return value


def _as_str(value, key: str, index: int) -> str:
    if not isinstance(value, str) or not value:
        raise SchemaViolation(f"field '{key}' must be a non-empty string, got {value!r}", index)
    return value


def _interval(record: dict, index: int, what: str) -> tuple[float, float]:
    start = _as_float(_need(record, "start_s", index), "start_s", index)
    end = _as_float(_need(record, "end_s", index), "end_s", index)
    if start >= end:
        raise TemporalInconsistency(
            f"{what}: start_s ({start}) must be strictly before end_s ({end})", index
        )
    return start, end


# ---------------------------------------------------------------------------
# Per-schema payload builders
# ---------------------------------------------------------------------------


def _build_bbox_payload(record: dict, index: int) -> tuple[BBoxTrack, ...]:
    width = record.get("frame_width")
    height = record.get("frame_height")
    has_dims = width is not None and height is not None
    if has_dims:
        width = _as_float(width, "frame_width", index)
        height = _as_float(height, "frame_height", index)

    tracks = _need(record, "tracks", index)
    if not isinstance(tracks, list) or not tracks:
        raise SchemaViolation("'tracks' must be a non-empty list", index)

    built = []
    for t_i, raw in enumerate(tracks):
        object_id = _as_str(_need(raw, "object_id", index), "object_id", index)
        category = _as_str(_need(raw, "category", index), "category", index)
        raw_boxes = _need(raw, "boxes", index)
        if not isinstance(raw_boxes, list) or not raw_boxes:
            raise SchemaViolation(f"tracks[{t_i}].boxes must be a non-empty list", index)
        boxes = []
        for b_i, entry in enumerate(raw_boxes):
            if not isinstance(entry, (list, tuple)) or len(entry) != 5:
                raise SchemaViolation(
                    f"tracks[{t_i}].boxes[{b_i}] must be [frame, x, y, w, h]", index
                )
            frame = _as_int(entry[0], "frame_index", index)
            coords = [_as_float(v, "box coordinate", index) for v in entry[1:]]
            # Pixel-coordinate boxes require declared frame dimensions.
            if has_dims:
                coords = [coords[0] / width, coords[1] / height, coords[2] / width, coords[3] / height]
            elif any(v > 1.0 for v in coords):
                raise SchemaViolation(
                    f"tracks[{t_i}].boxes[{b_i}]: coordinates exceed 1.0 but the record "
                    "declares no frame_width/frame_height to normalize by",
                    index,
                )
            boxes.append(Box(frame, *coords))
        built.append(BBoxTrack(object_id, category, tuple(boxes)))
    return tuple(built)


def _build_goal_step_payload(record: dict, index: int) -> StepSequence:
    goal = _as_str(_need(record, "goal", index), "goal", index)
    raw_steps = _need(record, "steps", index)
    if not isinstance(raw_steps, list) or not raw_steps:
        raise SchemaViolation("'steps' must be a non-empty list", index)
    steps = []
    for raw in raw_steps:
        desc = _as_str(_need(raw, "description", index), "description", index)
        start, end = _interval(raw, index, f"step '{desc}'")
        essential = raw.get("essential", False)
        if not isinstance(essential, bool):
            raise SchemaViolation("'essential' must be a boolean", index)
        steps.append(Step(desc, start, end, essential))
    return StepSequence(goal, tuple(steps))


def _build_event_payload(record: dict, index: int, duration_s: float) -> tuple[TemporalEvent, ...]:
    raw_events = _need(record, "events", index)
    if not isinstance(raw_events, list) or not raw_events:
        raise SchemaViolation("'events' must be a non-empty list", index)
    events = []
    for raw in raw_events:
        desc = _as_str(_need(raw, "description", index), "description", index)
        start, end = _interval(raw, index, f"event '{desc}'")
        if start < 0 or end > duration_s:
            raise SchemaViolation(
                f"event '{desc}': interval [{start}, {end}] outside video [0, {duration_s}]",
                index,
            )
        events.append(TemporalEvent(desc, start, end, duration_s))
    return tuple(events)


def _build_action_payload(record: dict, index: int) -> tuple[ActionInterval, ...]:
    raw_actions = _need(record, "actions", index)
    if not isinstance(raw_actions, list) or not raw_actions:
        raise SchemaViolation("'actions' must be a non-empty list", index)
    actions = []
    for raw in raw_actions:
        label = _as_str(_need(raw, "label", index), "label", index)
        start, end = _interval(raw, index, f"action '{label}'")
        actions.append(ActionInterval(label, start, end))
    return tuple(actions)


# ---------------------------------------------------------------------------
# Public API
# ---------------------------------------------------------------------------


def parse_corpus(schema_id: SourceSchema | str, path: str | Path) -> list[NormalizedClip]:
    """Parse one corpus file into normalized clips (stable input order).

    Raises SchemaViolation / TemporalInconsistency with the offending record
    index, or EmptyCorpus if the file holds no records. Every returned clip
    passes ``validate_clip``.
    """
    schema = SourceSchema(schema_id)
    records = _read_records(Path(path))
    if not records:
        raise EmptyCorpus(f"no records in {path}")

    clips: list[NormalizedClip] = []
    seen_ids: set[str] = set()
    for index, record in enumerate(records):
        if not isinstance(record, dict):
            raise SchemaViolation("record must be a JSON object", index)
        clip_id = _as_str(_need(record, "clip_id", index), "clip_id", index)
        if clip_id in seen_ids:
            raise SchemaViolation(f"duplicate clip_id '{clip_id}'", index)
        seen_ids.add(clip_id)
        video_uri = _as_str(_need(record, "video_uri", index), "video_uri", index)
        duration_s = _as_float(_need(record, "duration_s", index), "duration_s", index)
        frame_count = _as_int(_need(record, "frame_count", index), "frame_count", index)
        if duration_s <= 0:
            raise SchemaViolation(f"duration_s must be > 0, got {duration_s}", index)
        if frame_count <= 0:
            raise SchemaViolation(f"frame_count must be > 0, got {frame_count}", index)

        if schema is SourceSchema.BBOX_TRACK:
            payload: Payload = _build_bbox_payload(record, index)
        elif schema is SourceSchema.GOAL_STEP:
            payload = _build_goal_step_payload(record, index)
        elif schema is SourceSchema.TIMESTAMPED_CAPTION:
            payload = _build_event_payload(record, index, duration_s)
        else:
            payload = _build_action_payload(record, index)

        clip = NormalizedClip(clip_id, video_uri, duration_s, frame_count, schema, payload)
        violations = validate_clip(clip)
        if violations:
            raise SchemaViolation("; ".join(violations), index)
        clips.append(clip)
    return clips


def _read_records(path: Path) -> list:
    text = path.read_text(encoding="utf-8")
    stripped = text.lstrip()
    if stripped.startswith("["):
        data = json.loads(text)
        if not isinstance(data, list):
            raise SchemaViolation("top-level JSON document must be an array")
        return data
    records = []
    for line_no, line in enumerate(text.splitlines()):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"invalid JSON: {exc}", line_no) from exc
    return records


def validate_clip(clip: NormalizedClip) -> list[str]:
    """Return all invariant violations for a clip; empty list means valid.

    Total function: never raises. Each violation names the field and rule.
    """
    out: list[str] = []
    if not clip.clip_id:
        out.append("clip_id: must be non-empty")
    if clip.duration_s <= 0:
        out.append(f"duration_s: must be > 0, got {clip.duration_s}")
    if clip.frame_count <= 0:
        out.append(f"frame_count: must be > 0, got {clip.frame_count}")

    if clip.kind is SourceSchema.BBOX_TRACK:
        if not isinstance(clip.payload, tuple) or not all(
            isinstance(t, BBoxTrack) for t in clip.payload
        ):
            return out + ["payload: kind bbox_track requires a tuple of BBoxTrack"]
        if not clip.payload:
            out.append("payload: must contain at least one track")
        for t_i, track in enumerate(clip.payload):
            prefix = f"tracks[{t_i}]"
            if not track.boxes:
                out.append(f"{prefix}.boxes: must be non-empty")
                continue
            prev = -1
            for b_i, box in enumerate(track.boxes):
                where = f"{prefix}.boxes[{b_i}]"
                if box.frame_index < 0:
                    out.append(f"{where}.frame_index: must be >= 0, got {box.frame_index}")
                if box.frame_index <= prev:
                    out.append(
                        f"{where}.frame_index: must be strictly increasing "
                        f"({box.frame_index} after {prev})"
                    )
                prev = box.frame_index
                if box.frame_index >= clip.frame_count:
                    out.append(
                        f"{where}.frame_index: exceeds clip frame_count {clip.frame_count}"
                    )
                for name in ("x_center", "y_center"):
                    v = getattr(box, name)
                    if not 0.0 <= v <= 1.0:
                        out.append(f"{where}.{name}: expected value in [0, 1], got {v}")
                for name in ("width", "height"):
                    v = getattr(box, name)
                    if not 0.0 < v <= 1.0:
                        out.append(f"{where}.{name}: expected value in (0, 1], got {v}")
    elif clip.kind is SourceSchema.GOAL_STEP:
        if not isinstance(clip.payload, StepSequence):
            return out + ["payload: kind goal_step requires a StepSequence"]
        steps = clip.payload.steps
        if not steps:
            out.append("steps: must be non-empty")
        for s_i, step in enumerate(steps):
            if step.start_s >= step.end_s:
                out.append(
                    f"steps[{s_i}]: start_s ({step.start_s}) must be before end_s ({step.end_s})"
                )
            if s_i > 0 and step.start_s < steps[s_i - 1].end_s:
                out.append(
                    f"steps[{s_i}]: overlaps steps[{s_i - 1}] "
                    f"(starts {step.start_s} before previous end {steps[s_i - 1].end_s})"
                )
    elif clip.kind is SourceSchema.TIMESTAMPED_CAPTION:
        if not isinstance(clip.payload, tuple) or not all(
            isinstance(e, TemporalEvent) for e in clip.payload
        ):
            return out + ["payload: kind timestamped_caption requires a tuple of TemporalEvent"]
        for e_i, event in enumerate(clip.payload):
            if not 0 <= event.start_s < event.end_s <= event.video_duration_s:
                out.append(
                    f"events[{e_i}]: requires 0 <= start_s < end_s <= video_duration_s, "
                    f"got [{event.start_s}, {event.end_s}] in {event.video_duration_s}"
                )
            if event.video_duration_s != clip.duration_s:
                out.append(
                    f"events[{e_i}].video_duration_s: {event.video_duration_s} "
                    f"does not match clip duration_s {clip.duration_s}"
                )
    elif clip.kind is SourceSchema.ACTION_INTERVAL:
        if not isinstance(clip.payload, tuple) or not all(
            isinstance(a, ActionInterval) for a in clip.payload
        ):
            return out + ["payload: kind action_interval requires a tuple of ActionInterval"]
        for a_i, action in enumerate(clip.payload):
            if action.start_s >= action.end_s:
                out.append(
                    f"actions[{a_i}]: start_s ({action.start_s}) must be before "
                    f"end_s ({action.end_s})"
                )
    return out


# ---------------------------------------------------------------------------
# Clip (de)serialization for stage files
# ---------------------------------------------------------------------------


def clip_to_dict(clip: NormalizedClip) -> dict:
    if clip.kind is SourceSchema.BBOX_TRACK:
        payload = [
            {
                "object_id": t.object_id,
                "category": t.category,
                "boxes": [[b.frame_index, b.x_center, b.y_center, b.width, b.height] for b in t.boxes],
            }
            for t in clip.payload
        ]
    elif clip.kind is SourceSchema.GOAL_STEP:
        payload = {
            "goal": clip.payload.goal_description,
            "steps": [
                {
                    "description": s.description,
                    "start_s": s.start_s,
                    "end_s": s.end_s,
                    "essential": s.is_essential,
                }
                for s in clip.payload.steps
            ],
        }
    elif clip.kind is SourceSchema.TIMESTAMPED_CAPTION:
        payload = [
            {"description": e.description, "start_s": e.start_s, "end_s": e.end_s}
            for e in clip.payload
        ]
    else:
        payload = [
            {"label": a.action_label, "start_s": a.start_s, "end_s": a.end_s}
            for a in clip.payload
        ]
    return {
        "clip_id": clip.clip_id,
        "video_uri": clip.video_uri,
        "duration_s": clip.duration_s,
        "frame_count": clip.frame_count,
        "kind": clip.kind.value,
        "payload": payload,
    }


def clip_from_dict(data: dict) -> NormalizedClip:
    kind = SourceSchema(data["kind"])
    raw = data["payload"]
    if kind is SourceSchema.BBOX_TRACK:
        payload: Payload = tuple(
            BBoxTrack(
                t["object_id"],
                t["category"],
                tuple(Box(int(b[0]), *map(float, b[1:])) for b in t["boxes"]),
            )
            for t in raw
        )
    elif kind is SourceSchema.GOAL_STEP:
        payload = StepSequence(
            raw["goal"],
            tuple(
                Step(s["description"], float(s["start_s"]), float(s["end_s"]), bool(s["essential"]))
                for s in raw["steps"]
            ),
        )
    elif kind is SourceSchema.TIMESTAMPED_CAPTION:
        payload = tuple(
            TemporalEvent(
                e["description"], float(e["start_s"]), float(e["end_s"]), float(data["duration_s"])
            )
            for e in raw
        )
    else:
        payload = tuple(
            ActionInterval(a["label"], float(a["start_s"]), float(a["end_s"])) for a in raw
        )
    return NormalizedClip(
        data["clip_id"], data["video_uri"], float(data["duration_s"]), int(data["frame_count"]),
        kind, payload,
    )


def write_clips(path: str | Path, clips: list[NormalizedClip]) -> None:
    lines = [json.dumps(clip_to_dict(c), sort_keys=True) for c in clips]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_clips(path: str | Path) -> list[NormalizedClip]:
    clips = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            clips.append(clip_from_dict(json.loads(line)))
    return clips
