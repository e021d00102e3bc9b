"""Declarative video-edit manifests.

No pixels are touched in-process. A manifest records the operations a clip
needs (crop, reverse, concat, frame extraction/prepending); ``replay``
resolves it to an explicit frame sequence for verification, and
``render_plan`` emits transcoder command plans for offline execution.

All frame indices stored in manifests are 0-based indices into the *source*
video. Any 1-based presentation happens at answer-rendering time, never here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Union

_EPS = 1e-6


class ManifestInvalid(Exception):
    """The edit manifest violates an operation precondition."""


class UnsupportedOperation(Exception):
    """The render target cannot express one of the manifest's operations."""


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CropOp:
    """Keep only the [start_s, end_s) span of the current timeline."""

    start_s: float
    end_s: float

    op = "crop"


@dataclass(frozen=True)
class ReverseOp:
    """Play the current timeline backwards."""

    op = "reverse"


@dataclass(frozen=True)
class ConcatOp:
    """Splice another whole video before or after the current timeline."""

    other_uri: str
    position: str  # "before" | "after"

    op = "concat"


@dataclass(frozen=True)
class ExtractFrameOp:
    """Reduce the output to the single source frame at ``index``."""

    index: int

    op = "extract_frame"


@dataclass(frozen=True)
class PrependFrameOp:
    """Insert a still copy of source frame ``index`` ahead of the timeline."""

    index: int

    op = "prepend_frame"


EditOp = Union[CropOp, ReverseOp, ConcatOp, ExtractFrameOp, PrependFrameOp]


@dataclass(frozen=True)
class EditManifest:
    """An ordered edit recipe for one source video."""

    source_uri: str
    operations: tuple[EditOp, ...] = ()
    source_duration_s: float | None = None

    def __post_init__(self):
        reverse_count = 0
        for op in self.operations:
            if isinstance(op, CropOp):
                if op.start_s < 0:
                    raise ManifestInvalid(f"crop start_s must be >= 0, got {op.start_s}")
                if op.start_s >= op.end_s:
                    raise ManifestInvalid(
                        f"crop start_s ({op.start_s}) must be before end_s ({op.end_s})"
                    )
                if (
                    self.source_duration_s is not None
                    and op.end_s > self.source_duration_s + _EPS
                ):
                    raise ManifestInvalid(
                        f"crop end_s ({op.end_s}) exceeds source duration "
                        f"({self.source_duration_s})"
                    )
            elif isinstance(op, ReverseOp):
                reverse_count += 1
            elif isinstance(op, ConcatOp):
                if op.position not in ("before", "after"):
                    raise ManifestInvalid(
                        f"concat position must be 'before' or 'after', got {op.position!r}"
                    )
            elif isinstance(op, (ExtractFrameOp, PrependFrameOp)):
                if op.index < 0:
                    raise ManifestInvalid(f"{op.op} index must be >= 0, got {op.index}")
            else:
                raise ManifestInvalid(f"unknown operation {op!r}")
        if reverse_count > 1:
            raise ManifestInvalid("at most one reverse operation is allowed")

    def with_op(self, op: EditOp) -> "EditManifest":
        return EditManifest(self.source_uri, self.operations + (op,), self.source_duration_s)


@dataclass(frozen=True)
class VideoMeta:
    uri: str
    frame_count: int
    duration_s: float

    @property
    def fps(self) -> float:
        return self.frame_count / self.duration_s


# ---------------------------------------------------------------------------
# Replay: manifest -> explicit frame sequence
# ---------------------------------------------------------------------------


def replay(manifest: EditManifest, metas: dict[str, VideoMeta]) -> list[tuple[str, int]]:
    """Resolve the manifest to a list of (uri, source_frame_index) pairs.

    ``metas`` must cover the source video and every concat partner. Frame
    timing uses a uniform fps of frame_count / duration_s per video.
    """
    if manifest.source_uri not in metas:
        raise ManifestInvalid(f"no metadata for source video {manifest.source_uri!r}")
    source = metas[manifest.source_uri]
    frames = [(source.uri, i) for i in range(source.frame_count)]

    for op in manifest.operations:
        if isinstance(op, CropOp):
            # Crop applies to the source timeline; frames spliced in from
            # other videos are kept whole, in place.
            fps = source.fps
            frames = [
                (uri, i)
                for uri, i in frames
                if uri != source.uri or op.start_s - _EPS <= i / fps < op.end_s - _EPS
            ]
        elif isinstance(op, ReverseOp):
            frames = frames[::-1]
        elif isinstance(op, ConcatOp):
            if op.other_uri not in metas:
                raise ManifestInvalid(f"no metadata for concat partner {op.other_uri!r}")
            other = metas[op.other_uri]
            other_frames = [(other.uri, i) for i in range(other.frame_count)]
            frames = other_frames + frames if op.position == "before" else frames + other_frames
        elif isinstance(op, ExtractFrameOp):
            if op.index >= source.frame_count:
                raise ManifestInvalid(
                    f"extract_frame index {op.index} exceeds source frame count "
                    f"{source.frame_count}"
                )
            frames = [(source.uri, op.index)]
        elif isinstance(op, PrependFrameOp):
            if op.index >= source.frame_count:
                raise ManifestInvalid(
                    f"prepend_frame index {op.index} exceeds source frame count "
                    f"{source.frame_count}"
                )
            frames = [(source.uri, op.index)] + frames
    return frames


# ---------------------------------------------------------------------------
# Render: manifest -> transcoder command plan
# ---------------------------------------------------------------------------


def render_plan(manifest: EditManifest, output_path: str) -> list[list[str]]:
    """Emit ffmpeg command argv lists that realize the manifest offline.

    The plan is textual only; nothing is executed. Multi-step recipes write
    intermediates next to the output with .stepN suffixes.
    """
    steps: list[list[str]] = []
    current = manifest.source_uri
    stem, dot, ext = output_path.rpartition(".")
    if not dot:
        stem, ext = output_path, "mp4"

    def intermediate(n: int) -> str:
        return f"{stem}.step{n}.{ext}"

    ops = manifest.operations
    for n, op in enumerate(ops):
        target = output_path if n == len(ops) - 1 else intermediate(n)
        if isinstance(op, CropOp):
            steps.append(
                ["ffmpeg", "-y", "-i", current, "-ss", f"{op.start_s:.3f}",
                 "-to", f"{op.end_s:.3f}", "-c", "copy", target]
            )
        elif isinstance(op, ReverseOp):
            steps.append(["ffmpeg", "-y", "-i", current, "-vf", "reverse", "-af", "areverse", target])
        elif isinstance(op, ConcatOp):
            first, second = (op.other_uri, current) if op.position == "before" else (current, op.other_uri)
            steps.append(
                ["ffmpeg", "-y", "-i", first, "-i", second, "-filter_complex",
                 "[0:v][1:v]concat=n=2:v=1[outv]", "-map", "[outv]", target]
            )
        elif isinstance(op, ExtractFrameOp):
            steps.append(
                ["ffmpeg", "-y", "-i", manifest.source_uri, "-vf",
                 f"select=eq(n\\,{op.index})", "-frames:v", "1", target]
            )
        elif isinstance(op, PrependFrameOp):
            raise UnsupportedOperation(
                "prepend_frame has no single-command transcoder equivalent; "
                "replay the manifest to frames instead"
            )
        else:  # pragma: no cover - constructor already rejects unknown ops
            raise UnsupportedOperation(f"cannot render {op!r}")
        current = target
    if not ops:
        steps.append(["ffmpeg", "-y", "-i", current, "-c", "copy", output_path])
    return steps


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def manifest_to_dict(manifest: EditManifest) -> dict:
    ops = []
    for op in manifest.operations:
        if isinstance(op, CropOp):
            ops.append({"op": "crop", "start_s": op.start_s, "end_s": op.end_s})
        elif isinstance(op, ReverseOp):
            ops.append({"op": "reverse"})
        elif isinstance(op, ConcatOp):
            ops.append({"op": "concat", "other_uri": op.other_uri, "position": op.position})
        elif isinstance(op, ExtractFrameOp):
            ops.append({"op": "extract_frame", "index": op.index})
        elif isinstance(op, PrependFrameOp):
            ops.append({"op": "prepend_frame", "index": op.index})
    out = {"source_uri": manifest.source_uri, "operations": ops}
    if manifest.source_duration_s is not None:
        out["source_duration_s"] = manifest.source_duration_s
    return out


def manifest_from_dict(data: dict) -> EditManifest:
    ops: list[EditOp] = []
    for raw in data.get("operations", []):
        kind = raw.get("op")
        if kind == "crop":
            ops.append(CropOp(float(raw["start_s"]), float(raw["end_s"])))
        elif kind == "reverse":
            ops.append(ReverseOp())
        elif kind == "concat":
            ops.append(ConcatOp(raw["other_uri"], raw["position"]))
        elif kind == "extract_frame":
            ops.append(ExtractFrameOp(int(raw["index"])))
        elif kind == "prepend_frame":
            ops.append(PrependFrameOp(int(raw["index"])))
        else:
            raise ManifestInvalid(f"unknown operation kind {kind!r}")
    duration = data.get("source_duration_s")
    return EditManifest(
        data["source_uri"], tuple(ops), float(duration) if duration is not None else None
    )


def dump_manifest(manifest: EditManifest) -> str:
    return json.dumps(manifest_to_dict(manifest), sort_keys=True)


def load_manifest(text_or_path: str | Path) -> EditManifest:
    text = str(text_or_path)
    if not text.lstrip().startswith("{"):
        text = Path(text_or_path).read_text(encoding="utf-8")
    return manifest_from_dict(json.loads(text))
