"""Stage orchestration with content-addressed skip/resume.

Each stage reads files produced by earlier stages (or external inputs),
writes its outputs atomically, and records SHA-256 hashes of both sides in
``manifest.json``. Rerunning is then safe and cheap:

- a stage whose config, inputs, and outputs all hash-match its manifest
  entry is skipped;
- a stage whose dependencies are missing, were edited by hand, or were
  built under a different config fails fast with ``MissingDependency``
  instead of silently mixing generations.

Outputs contain no timestamps, so a rerun from the same seed and inputs is
byte-identical. Judge response caches live under ``caches/`` and are
deliberately untracked: they are an optimization, not an output.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from collections import Counter
from pathlib import Path

from . import debias as debias_mod
from . import evalharness, mtp, qagen, taskgen
from .audit import run_audit
from .config import PipelineConfig, config_hash, validate_for_stage
from .ingest import clip_to_dict, load_clips, parse_corpus
from .judge import ChatJudgeClient, ResponseCache
from .qagen import item_to_dict, load_items

logger = logging.getLogger(__name__)

STAGE_ORDER = ("ingest", "generate", "debias", "mtp", "audit", "evaluate")

MANIFEST_NAME = "manifest.json"
CACHE_DIR = "caches"

STAGE_OUTPUTS = {
    "ingest": ("clips.jsonl",),
    "generate": ("items.jsonl", "gen_report.json"),
    "debias": ("debiased.jsonl", "debias_report.json"),
    "mtp": ("mtp.jsonl", "mtp_report.json"),
    "audit": ("benchmark.jsonl", "audit_report.json"),
    "evaluate": ("score_report.json", "score_report.txt"),
}

STAGE_INTERNAL_DEPS = {
    "ingest": (),
    "generate": ("clips.jsonl",),
    "debias": ("items.jsonl",),
    "mtp": (),
    "audit": ("debiased.jsonl",),
    "evaluate": ("benchmark.jsonl",),
}


class MissingDependency(Exception):
    """A stage's input is absent, hand-edited, or from a different config."""


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _jsonl(records: list[dict]) -> str:
    lines = [json.dumps(r, sort_keys=True) for r in records]
    return "\n".join(lines) + ("\n" if lines else "")


def _json(data) -> str:
    return json.dumps(data, sort_keys=True, indent=2) + "\n"


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------


def load_manifest(out_dir: Path) -> dict:
    path = out_dir / MANIFEST_NAME
    if not path.exists():
        return {"config_hash": None, "stages": {}}
    return json.loads(path.read_text(encoding="utf-8"))


def save_manifest(out_dir: Path, manifest: dict) -> None:
    _atomic_write_text(out_dir / MANIFEST_NAME, _json(manifest))


def _external_inputs(config: PipelineConfig, stage: str) -> list[str]:
    if stage == "ingest":
        return [s.path for s in config.sources]
    if stage == "mtp":
        return [config.mtp.samples] if config.mtp.samples else []
    if stage == "evaluate" and config.predictions:
        return [config.predictions]
    return []


def _current_input_hashes(config: PipelineConfig, stage: str, out_dir: Path) -> dict:
    hashes = {}
    for raw in _external_inputs(config, stage):
        path = Path(raw)
        if not path.exists():
            raise MissingDependency(f"stage '{stage}': input file {raw} does not exist")
        hashes[raw] = sha256_file(path)
    for name in STAGE_INTERNAL_DEPS[stage]:
        path = out_dir / name
        if not path.exists():
            raise MissingDependency(
                f"stage '{stage}': needs {name}, which has not been produced; "
                "run the earlier stages first"
            )
        hashes[name] = sha256_file(path)
    return hashes


def _producer_of(name: str) -> str:
    for stage, outputs in STAGE_OUTPUTS.items():
        if name in outputs:
            return stage
    raise KeyError(name)


def _check_internal_deps(manifest: dict, stage: str, input_hashes: dict) -> None:
    for name in STAGE_INTERNAL_DEPS[stage]:
        producer = _producer_of(name)
        recorded = manifest["stages"].get(producer, {}).get("outputs", {}).get(name)
        if recorded is None:
            raise MissingDependency(
                f"stage '{stage}': {name} exists but is not recorded in the run "
                f"manifest; rerun stage '{producer}'"
            )
        if recorded != input_hashes[name]:
            raise MissingDependency(
                f"stage '{stage}': {name} does not match the manifest "
                f"(expected {recorded[:12]}, found {input_hashes[name][:12]}); "
                f"it was modified outside the pipeline — rerun stage '{producer}'"
            )


def _can_skip(
    manifest: dict, stage: str, cfg_hash: str, input_hashes: dict, out_dir: Path
) -> bool:
    if manifest.get("config_hash") != cfg_hash:
        return False
    entry = manifest["stages"].get(stage)
    if not entry:
        return False
    if entry.get("inputs") != input_hashes:
        return False
    for name, recorded in entry.get("outputs", {}).items():
        path = out_dir / name
        if not path.exists() or sha256_file(path) != recorded:
            return False
    return True


# ---------------------------------------------------------------------------
# Stage bodies: each writes its outputs and returns a counts mapping
# ---------------------------------------------------------------------------


def _stage_ingest(config: PipelineConfig, out_dir: Path) -> dict:
    clips = []
    seen: dict[str, str] = {}
    counts: Counter = Counter()
    for source in config.sources:
        parsed = parse_corpus(source.schema, source.path)
        for clip in parsed:
            if clip.clip_id in seen:
                raise MissingDependency(
                    f"clip_id {clip.clip_id!r} appears in both {seen[clip.clip_id]} "
                    f"and {source.path}"
                )
            seen[clip.clip_id] = source.path
        clips.extend(parsed)
        counts[source.schema.value] += len(parsed)
    clips.sort(key=lambda c: c.clip_id)
    _atomic_write_text(out_dir / "clips.jsonl", _jsonl([clip_to_dict(c) for c in clips]))
    counts["total"] = len(clips)
    return dict(counts)


def _stage_generate(config: PipelineConfig, out_dir: Path) -> dict:
    clips = load_clips(out_dir / "clips.jsonl")
    stats: Counter = Counter()
    gen = config.generation
    by_dimension = taskgen.generate_all(
        clips,
        seed=config.seed,
        min_displacement=gen.min_displacement,
        monotonicity_slack=gen.monotonicity_slack,
        crowd_scope=gen.crowd_scope,
        splits_per_sequence=gen.splits_per_sequence,
        min_action_s=gen.min_action_s,
        stats=stats,
    )
    candidates = [c for dim in taskgen.Dimension for c in by_dimension[dim]]
    items = qagen.generate_items(
        candidates,
        seed=config.seed,
        open_ended_fraction=gen.open_ended_fraction,
        stats=stats,
    )
    _atomic_write_text(out_dir / "items.jsonl", _jsonl([item_to_dict(i) for i in items]))
    per_dimension = Counter(i.dimension.value for i in items)
    report = {
        "stats": dict(sorted(stats.items())),
        "per_dimension": dict(sorted(per_dimension.items())),
        "total_items": len(items),
    }
    _atomic_write_text(out_dir / "gen_report.json", _json(report))
    return {"total_items": len(items), **per_dimension}


def _stage_debias(config: PipelineConfig, out_dir: Path) -> dict:
    items = load_items(out_dir / "items.jsonl")
    debiased, reports = debias_mod.debias_items(
        items,
        seed=config.seed,
        longtail_cap=config.debias.longtail_cap,
        reversal_fraction=config.debias.reversal_fraction,
        balance_gap=config.debias.balance_gap,
    )
    debiased = sorted(debiased, key=lambda i: i.item_id)
    _atomic_write_text(
        out_dir / "debiased.jsonl", _jsonl([item_to_dict(i) for i in debiased])
    )
    per_dimension = Counter(i.dimension.value for i in debiased)
    report = {
        "passes": [r.to_dict() for r in reports],
        "per_dimension": dict(sorted(per_dimension.items())),
        "total_items": len(debiased),
    }
    _atomic_write_text(out_dir / "debias_report.json", _json(report))
    return {"total_items": len(debiased), **per_dimension}


def _stage_mtp(config: PipelineConfig, out_dir: Path) -> dict:
    samples = mtp.load_samples(config.mtp.samples)
    stats: Counter = Counter()
    needs_gate = any(s.temporal_flag is None for s in samples)
    if needs_gate:
        if config.mtp.gate is None:
            raise MissingDependency(
                "instruction samples lack temporal flags and no mtp.gate judge "
                "is configured"
            )
        cache = ResponseCache(out_dir / CACHE_DIR / "gate_cache.jsonl")
        with cache, ChatJudgeClient(config.mtp.gate, cache) as client:
            samples = mtp.gate_temporal(samples, client, stats=stats)
    augmented = mtp.apply_mtp(
        samples,
        config.mtp.ratios,
        seed=config.seed,
        index_base=config.mtp.index_base,
        min_frames=config.mtp.min_frames,
        stats=stats,
    )
    _atomic_write_text(
        out_dir / "mtp.jsonl", _jsonl([mtp.augmented_to_dict(a) for a in augmented])
    )
    report = {"stats": dict(sorted(stats.items())), "total_samples": len(augmented)}
    _atomic_write_text(out_dir / "mtp_report.json", _json(report))
    return {"total_samples": len(augmented), **{k: v for k, v in sorted(stats.items())}}


def _stage_audit(config: PipelineConfig, out_dir: Path) -> dict:
    items = load_items(out_dir / "debiased.jsonl")
    mc_items = [i for i in items if i.format is qagen.QAFormat.MULTIPLE_CHOICE]
    skipped_open = len(items) - len(mc_items)
    if skipped_open:
        logger.warning("audit: leaving %d open-ended items out of the probe", skipped_open)
    cache = ResponseCache(out_dir / CACHE_DIR / "verdict_cache.jsonl")
    clients = [ChatJudgeClient(spec, cache) for spec in config.judges]
    try:
        benchmark, report = run_audit(
            mc_items,
            clients,
            seed=config.seed,
            shared_frame=config.audit.shared_frame,
            blind_size=(config.audit.blind_width, config.audit.blind_height),
            balance_gap=config.audit.balance_gap,
        )
    finally:
        for client in clients:
            client.close()
        cache.close()
    _atomic_write_text(
        out_dir / "benchmark.jsonl", _jsonl([item_to_dict(i) for i in benchmark])
    )
    payload = report.to_dict()
    payload["open_ended_excluded"] = skipped_open
    _atomic_write_text(out_dir / "audit_report.json", _json(payload))
    return {
        "n_input": report.n_input,
        "n_removed": report.n_removed,
        "n_kept": report.n_kept,
    }


def _stage_evaluate(config: PipelineConfig, out_dir: Path) -> dict:
    items = load_items(out_dir / "benchmark.jsonl")
    if config.predictions:
        predictions = evalharness.load_predictions(config.predictions)
        baseline = False
    else:
        predictions = evalharness.uniform_random_predictions(items, config.seed)
        baseline = True
    report = evalharness.score(items, predictions)
    payload = report.to_dict()
    payload["random_baseline"] = baseline
    _atomic_write_text(out_dir / "score_report.json", _json(payload))
    _atomic_write_text(out_dir / "score_report.txt", report.to_text() + "\n")
    return {"total_items": report.total_items, "random_baseline": baseline}


_STAGE_BODIES = {
    "ingest": _stage_ingest,
    "generate": _stage_generate,
    "debias": _stage_debias,
    "mtp": _stage_mtp,
    "audit": _stage_audit,
    "evaluate": _stage_evaluate,
}


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


def run_stage(config: PipelineConfig, stage: str, *, force: bool = False) -> bool:
    """Execute (or skip) one stage. Returns True if work was done."""
    if stage not in STAGE_ORDER:
        raise ValueError(f"unknown stage {stage!r}; stages are {STAGE_ORDER}")
    validate_for_stage(config, stage)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg_hash = config_hash(config)
    manifest = load_manifest(out_dir)

    input_hashes = _current_input_hashes(config, stage, out_dir)
    if not force and _can_skip(manifest, stage, cfg_hash, input_hashes, out_dir):
        logger.info("stage %s: up to date, skipping", stage)
        return False

    if manifest.get("config_hash") not in (None, cfg_hash):
        logger.info("config changed; invalidating previous stage records")
        manifest = {"config_hash": cfg_hash, "stages": {}}
    manifest["config_hash"] = cfg_hash
    _check_internal_deps(manifest, stage, input_hashes)

    logger.info("stage %s: running", stage)
    counts = _STAGE_BODIES[stage](config, out_dir)
    outputs = {
        name: sha256_file(out_dir / name)
        for name in STAGE_OUTPUTS[stage]
        if (out_dir / name).exists()
    }
    manifest["stages"][stage] = {
        "inputs": input_hashes,
        "outputs": outputs,
        "counts": counts,
    }
    save_manifest(out_dir, manifest)
    logger.info("stage %s: done (%s)", stage, counts)
    return True


def run_pipeline(
    config: PipelineConfig, stages: list[str] | None = None, *, force: bool = False
) -> dict:
    """Run the requested stages in pipeline order; returns the manifest."""
    selected = list(STAGE_ORDER) if stages is None else [
        s for s in STAGE_ORDER if s in set(stages)
    ]
    if stages is not None:
        unknown = set(stages) - set(STAGE_ORDER)
        if unknown:
            raise ValueError(f"unknown stages {sorted(unknown)}; stages are {STAGE_ORDER}")
    for stage in selected:
        run_stage(config, stage, force=force)
    return load_manifest(Path(config.output_dir))
