"""Pipeline configuration: YAML loading, validation, and content hashing.

Unknown keys are rejected (typos must fail loudly, not silently fall back
to defaults). The config hash covers every setting that can change outputs
— everything except ``output_dir``, so a run directory can be relocated
without invalidating its manifest.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .ingest import SourceSchema
from .judge import JudgeSpec
from .mtp import MtpRatios


class ConfigInvalid(Exception):
    """The configuration is malformed or missing required settings."""


@dataclass(frozen=True)
class SourceSpec:
    schema: SourceSchema
    path: str


@dataclass(frozen=True)
class GenerationSettings:
    min_displacement: float = 0.15
    monotonicity_slack: float = 0.1
    crowd_scope: str = "segment"
    splits_per_sequence: int = 1
    min_action_s: float = 1.0
    open_ended_fraction: float = 0.0


@dataclass(frozen=True)
class DebiasSettings:
    longtail_cap: float = 3.0
    reversal_fraction: float = 0.5
    balance_gap: int = 1


@dataclass(frozen=True)
class MtpSettings:
    samples: str = ""
    frame_index_fraction: float = 0.25
    assigned_qa_fraction: float = 0.5
    index_base: int = 1
    min_frames: int = 8
    gate: JudgeSpec | None = None

    @property
    def ratios(self) -> MtpRatios:
        return MtpRatios(self.frame_index_fraction, self.assigned_qa_fraction)


@dataclass(frozen=True)
class AuditSettings:
    shared_frame: bool = True
    blind_width: int = 336
    blind_height: int = 336
    balance_gap: int = 1


@dataclass(frozen=True)
class PipelineConfig:
    seed: int
    output_dir: str
    sources: tuple[SourceSpec, ...] = ()
    generation: GenerationSettings = field(default_factory=GenerationSettings)
    debias: DebiasSettings = field(default_factory=DebiasSettings)
    mtp: MtpSettings = field(default_factory=MtpSettings)
    judges: tuple[JudgeSpec, ...] = ()
    audit: AuditSettings = field(default_factory=AuditSettings)
    predictions: str | None = None


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigInvalid(f"{where}: expected a mapping, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigInvalid(f"{where}: unknown keys {sorted(unknown)} (known: {sorted(known)})")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"{where}: {exc}") from exc


def config_from_dict(data: dict) -> PipelineConfig:
    if not isinstance(data, dict):
        raise ConfigInvalid("config root must be a mapping")
    known = {
        "seed", "output_dir", "sources", "generation", "debias", "mtp",
        "judges", "audit", "predictions",
    }
    unknown = set(data) - known
    if unknown:
        raise ConfigInvalid(f"unknown top-level keys {sorted(unknown)}")
    for required in ("seed", "output_dir"):
        if required not in data:
            raise ConfigInvalid(f"missing required key '{required}'")
    if not isinstance(data["seed"], int) or isinstance(data["seed"], bool):
        raise ConfigInvalid(f"seed must be an integer, got {data['seed']!r}")

    sources = []
    for i, raw in enumerate(data.get("sources", []) or []):
        if not isinstance(raw, dict) or set(raw) != {"schema", "path"}:
            raise ConfigInvalid(f"sources[{i}]: needs exactly 'schema' and 'path'")
        try:
            schema = SourceSchema(raw["schema"])
        except ValueError as exc:
            raise ConfigInvalid(
                f"sources[{i}]: unknown schema {raw['schema']!r} "
                f"(one of {[s.value for s in SourceSchema]})"
            ) from exc
        sources.append(SourceSpec(schema, str(raw["path"])))

    mtp_raw = dict(data.get("mtp", {}) or {})
    gate_raw = mtp_raw.pop("gate", None)
    if gate_raw is not None:
        mtp_raw["gate"] = _build(JudgeSpec, gate_raw, "mtp.gate")
    mtp_settings = _build(MtpSettings, mtp_raw, "mtp")
    try:
        mtp_settings.ratios  # validate fraction ranges eagerly
    except ValueError as exc:
        raise ConfigInvalid(f"mtp: {exc}") from exc

    judges = tuple(
        _build(JudgeSpec, raw, f"judges[{i}]")
        for i, raw in enumerate(data.get("judges", []) or [])
    )
    seen = set()
    for judge in judges:
        if judge.judge_id in seen:
            raise ConfigInvalid(f"duplicate judge_id {judge.judge_id!r}")
        seen.add(judge.judge_id)

    generation = _build(GenerationSettings, data.get("generation", {}) or {}, "generation")
    if generation.crowd_scope not in ("segment", "clip"):
        raise ConfigInvalid(
            f"generation.crowd_scope must be 'segment' or 'clip', "
            f"got {generation.crowd_scope!r}"
        )
    if not 0.0 <= generation.open_ended_fraction <= 1.0:
        raise ConfigInvalid("generation.open_ended_fraction must be in [0, 1]")

    return PipelineConfig(
        seed=data["seed"],
        output_dir=str(data["output_dir"]),
        sources=tuple(sources),
        generation=generation,
        debias=_build(DebiasSettings, data.get("debias", {}) or {}, "debias"),
        mtp=mtp_settings,
        judges=judges,
        audit=_build(AuditSettings, data.get("audit", {}) or {}, "audit"),
        predictions=data.get("predictions"),
    )


def load_config(path: str | Path) -> PipelineConfig:
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigInvalid(f"{path}: invalid YAML: {exc}") from exc
    if data is None:
        raise ConfigInvalid(f"{path}: empty config")
    return config_from_dict(data)


def config_hash(config: PipelineConfig) -> str:
    """Stable digest of every output-affecting setting.

    ``output_dir`` is where outputs land, not what they contain, and
    ``predictions`` is an external input whose *content* is hashed by the
    evaluate stage; both stay out so moving a run directory or scoring a
    new predictions file does not invalidate the built dataset.
    """
    data = asdict(config)
    data.pop("output_dir")
    data.pop("predictions")
    canonical = json.dumps(data, sort_keys=True, default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def validate_for_stage(config: PipelineConfig, stage: str) -> None:
    """Check the settings a stage needs before it starts doing work."""
    if stage in ("ingest", "generate") and not config.sources:
        raise ConfigInvalid(f"stage '{stage}' needs at least one entry in sources")
    if stage == "mtp" and not config.mtp.samples:
        raise ConfigInvalid("stage 'mtp' needs mtp.samples (instruction data path)")
    if stage == "audit" and len(config.judges) != 3:
        raise ConfigInvalid(
            f"stage 'audit' needs exactly 3 judges, got {len(config.judges)}"
        )
