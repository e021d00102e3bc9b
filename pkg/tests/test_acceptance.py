"""Acceptance checks for the whole pipeline.

Each test pins one analytic target or system-level property at its stated
tolerance, against an independently-coded oracle where one exists, so
``pytest -v tests/test_acceptance.py`` prints one pass/fail line per check:

1. a uniform-random predictor on an equal-count benchmark reproduces the
   analytic chance accuracies (LO 33.3, DU 33.3, DY 25.0, OR 25.0, RE 25.0,
   AVG 28.3, each within 1.0 point at 10,000 items per dimension);
2. the majority-vote filter matches the exhaustive 8-case truth table;
3. the direction classifier agrees with a brute-force dominant-axis oracle
   on 10,000 synthetic trajectories, with reversal antisymmetry;
4. the candidate filtering rules (step count, essential fraction,
   truncation, third-straddling, duplicate labels) hold on randomized
   fixtures with zero violations;
5. auxiliary-task assignment hits its 25%/50% ratios within 3-sigma
   binomial bounds, never touches flagged samples, and every frame-index
   answer matches its edit manifest exactly;
6. answer-value and correct-letter-position distributions are balanced to
   a max-min gap of at most 1 on a 5,000-item fixture;
7. two pipeline runs with one seed are byte-identical with identical
   manifest hashes, and a different seed changes the outputs;
8. the audit removes planted single-frame-answerable items (>= 95%) while
   keeping clean items (<= 5% removed), leaving Acc_s and Acc_b below Acc_r.
"""

import itertools
import random
import time
from collections import Counter
from pathlib import Path

import pytest

from temporalqa.audit import (
    Condition,
    JudgeVerdict,
    majority_filter,
    rebalance_options,
    run_audit,
)
from temporalqa.config import config_from_dict
from temporalqa.debias import ANSWER_SPACES, balance_answers
from temporalqa.editplan import PrependFrameOp
from temporalqa.evalharness import score, uniform_random_predictions
from temporalqa.judge import ChatJudgeClient, JudgeSpec, ResponseCache, slugify
from temporalqa.mtp import AuxTask, MtpRatios, apply_mtp
from temporalqa.qagen import DURATION_PHRASES, LOCATION_PHRASES, generate_items
from temporalqa.runner import STAGE_ORDER, STAGE_OUTPUTS, load_manifest, run_pipeline
from temporalqa.taskgen import (
    OPPOSITE,
    Dimension,
    Direction,
    LabeledCandidate,
    classify_direction,
    gen_location,
    gen_order,
    gen_reasoning,
    reverse_track,
)

from synth import (
    LETTERS,
    actions_clip,
    dynamic_item,
    events_clip,
    mc_item,
    order_answer,
    order_pool,
    sample,
    steps_clip,
    track,
)

REPO = Path(__file__).resolve().parents[1]

DIRECTIONS = tuple(d.value for d in Direction)
BUCKETS = ("short", "medium", "long")
THIRDS = ("start", "middle", "end")


# ---------------------------------------------------------------------------
# 1. Random-baseline accuracy table
# ---------------------------------------------------------------------------


def _benchmark_candidates(per_dimension: int) -> list[LabeledCandidate]:
    """Synthetic candidates, ``per_dimension`` of each kind."""

    def cand(dim, i, answer, pool, context):
        return LabeledCandidate(
            dimension=dim,
            clip_id=f"clip-{dim.value}-{i:05d}",
            video_uri=f"video://clip-{dim.value}-{i:05d}",
            answer=answer,
            context=context,
            distractor_pool=tuple(pool),
            edit=None,
            candidate_key=f"clip-{dim.value}-{i:05d}:c0",
        )

    out = []
    for i in range(per_dimension):
        direction = DIRECTIONS[i % 4]
        out.append(
            cand(
                Dimension.DYNAMIC, i, direction,
                [d for d in DIRECTIONS if d != direction], {"object": "person"},
            )
        )
        steps = [f"step {i:05d}{suffix}" for suffix in "wxyz"]
        out.append(
            cand(
                Dimension.REASONING, i, steps[0], steps[1:],
                {"goal": "assemble the unit"},
            )
        )
        bucket = BUCKETS[i % 3]
        out.append(
            cand(
                Dimension.DURATION, i, bucket,
                [b for b in BUCKETS if b != bucket], {"activity": f"activity {i}"},
            )
        )
        third = THIRDS[i % 3]
        out.append(
            cand(
                Dimension.LOCATION, i, third,
                [t for t in THIRDS if t != third], {"activity": f"activity {i}"},
            )
        )
        labels = [f"a{i:05d}", f"b{i:05d}", f"c{i:05d}"]
        out.append(
            cand(
                Dimension.ORDER, i, order_answer(labels), order_pool(labels),
                {"actions": ", ".join(sorted(labels))},
            )
        )
    return out


def test_acceptance_1_random_baseline_accuracy_table():
    started = time.monotonic()
    per_dimension = 10_000
    items = generate_items(_benchmark_candidates(per_dimension), seed=20240)
    items = rebalance_options(items, seed=20240)
    report = score(items, uniform_random_predictions(items, seed=20240))

    targets = {
        "location": 100 / 3,
        "duration": 100 / 3,
        "dynamic": 25.0,
        "order": 25.0,
        "reasoning": 25.0,
    }
    for dim, target in targets.items():
        stats = report.per_dimension[dim]
        assert stats["count"] == per_dimension
        assert stats["accuracy_pct"] == pytest.approx(target, abs=1.0), dim
    assert report.average_pct == pytest.approx((100 / 3 * 2 + 25.0 * 3) / 5, abs=1.0)
    # the analytic chance average is exact: (2/3 + 3/4) / 5 of 100 = 1700/60
    assert report.random_average_pct == pytest.approx(100 * 17 / 60, abs=1e-9)
    assert report.unparsed_count == 0
    assert time.monotonic() - started < 60.0


# ---------------------------------------------------------------------------
# 2. Majority vote vs the exhaustive truth table
# ---------------------------------------------------------------------------


def test_acceptance_2_majority_vote_truth_table():
    started = time.monotonic()
    patterns = list(itertools.product((True, False), repeat=3))
    items = [mc_item(f"case-{i}", clip_id=f"clip-{i}") for i in range(len(patterns))]
    verdicts = [
        JudgeVerdict(
            item_id=item.item_id,
            judge_id=f"judge-{j}",
            condition=Condition.SINGLE_FRAME,
            raw_response="A" if vote else "B",
            chosen_letter="A" if vote else "B",
            correct=vote,
        )
        for item, votes in zip(items, patterns)
        for j, vote in enumerate(votes)
    ]
    kept, decisions = majority_filter(items, verdicts)

    oracle_removed = {
        item.item_id for item, votes in zip(items, patterns) if sum(votes) >= 2
    }
    assert {i.item_id for i in kept} == {
        i.item_id for i in items
    } - oracle_removed
    assert len(decisions) == len(patterns)
    for decision, votes in zip(decisions, patterns):
        assert decision.filtered == (sum(votes) >= 2)
    assert time.monotonic() - started < 1.0


# ---------------------------------------------------------------------------
# 3. Direction classifier vs a brute-force oracle
# ---------------------------------------------------------------------------


def _oracle_direction(positions, min_displacement, slack):
    """Independent restatement: dominant endpoint axis, then wobble count."""
    xs = [p[0] for p in positions]
    ys = [p[1] for p in positions]
    if abs(ys[-1] - ys[0]) > abs(xs[-1] - xs[0]):
        series, labels = ys, ("down", "up")  # image y grows downward
    else:
        series, labels = xs, ("right", "left")
    net = series[-1] - series[0]
    if abs(net) < min_displacement:
        return None
    forward = 1 if net > 0 else -1
    wobbles = sum(
        1
        for j in range(len(series) - 1)
        if (series[j + 1] - series[j]) * forward < 0
    )
    if wobbles > slack * (len(series) - 1):
        return None
    return labels[0] if forward > 0 else labels[1]


def _random_trajectory(rng):
    """Monotone, jittered, zig-zag, or sub-threshold trajectory."""
    family = rng.randrange(4)
    n = rng.randint(5, 40)
    main_axis = rng.randrange(2)
    sign = rng.choice((-1, 1))
    total = rng.uniform(0.2, 0.6) if family != 3 else rng.uniform(0.0, 0.14)
    step = total / (n - 1)
    start_main = 0.2 if sign > 0 else 0.8
    start_cross = rng.uniform(0.3, 0.7)
    main, cross = start_main, start_cross
    positions = []
    for i in range(n):
        positions.append((main, cross) if main_axis == 0 else (cross, main))
        if family == 2:  # zig-zag: overshoot then fall back
            delta = step * 2.2 if i % 2 == 0 else -step * 1.2
        elif family == 1:  # jittered: mostly forward, occasional dips
            delta = step + rng.uniform(-step * 1.5, step * 0.5)
        else:  # clean monotone (possibly sub-threshold)
            delta = step * rng.uniform(0.8, 1.2)
        main += sign * delta
        cross += rng.uniform(-0.002, 0.002)
    return positions


def test_acceptance_3_direction_classifier_matches_oracle():
    rng = random.Random(20240814)
    decided = 0
    for case in range(10_000):
        positions = _random_trajectory(rng)
        subject = track(positions, object_id=f"obj-{case}")
        got = classify_direction(subject)
        want = _oracle_direction(positions, 0.15, 0.1)
        assert (got.value if got else None) == want, f"case {case}: {positions[:4]}..."
        if got is not None:
            decided += 1
            flipped = classify_direction(reverse_track(subject))
            assert flipped is OPPOSITE[got], f"case {case} reversal"
    assert decided >= 2_000  # the suite exercises both decided and undecided


# ---------------------------------------------------------------------------
# 4. Candidate filtering rules on randomized fixtures
# ---------------------------------------------------------------------------


def test_acceptance_4_candidate_filtering_rules():
    rng = random.Random(4)

    # next-step sequences: length >= 3, >= 50% essential, truncation to 15
    produced = dropped = long_sequences = 0
    for f in range(150):
        n = rng.randint(0, 25)
        bias = rng.choice((0.2, 0.4, 0.5, 0.6, 0.8))
        flags = [rng.random() < bias for _ in range(n)]
        clip = steps_clip(
            [f"step {i:02d} of {f}" for i in range(n)],
            clip_id=f"rsn-{f}",
            essential=flags,
        )
        candidates = gen_reasoning([clip], seed=11, splits_per_sequence=3)
        retained = min(n, 15)
        expect = n >= 3 and sum(flags[:retained]) / max(retained, 1) >= 0.5
        assert bool(candidates) == expect, f"sequence fixture {f}"
        produced += bool(candidates)
        dropped += not candidates
        long_sequences += n > 15
        for candidate in candidates:
            k = int(candidate.candidate_key.rsplit(":k", 1)[1])
            assert 2 <= k <= 14, "split index must stay inside the first 15 steps"
            assert candidate.answer == f"step {k:02d} of {f}"
    assert produced >= 30 and dropped >= 30 and long_sequences >= 30

    # events: dropped exactly when start and end fall in different thirds
    straddling = contained = 0
    for f in range(150):
        duration = rng.uniform(9.0, 60.0)
        spans = []
        for _ in range(rng.randint(1, 6)):
            start = rng.uniform(0.0, duration * 0.95)
            end = min(start + rng.uniform(0.05, duration - start), duration)
            if rng.random() < 0.25:  # land exactly on a third boundary
                boundary = duration / 3 if start < duration / 3 else 2 * duration / 3
                if boundary > start:
                    end = boundary
            spans.append((start, end))
        clip = events_clip(spans, clip_id=f"evt-{f}", duration_s=duration)

        def third(t):
            return 0 if t < duration / 3 else (1 if t < 2 * duration / 3 else 2)

        expected_keys = {
            f"evt-{f}:e{j}" for j, (s, e) in enumerate(spans) if third(s) == third(e)
        }
        candidates = gen_location([clip])
        assert {c.candidate_key for c in candidates} == expected_keys, f"event fixture {f}"
        for c in candidates:
            j = int(c.candidate_key.rsplit(":e", 1)[1])
            assert c.answer == THIRDS[third(spans[j][0])]
        straddling += len(spans) - len(expected_keys)
        contained += len(expected_keys)
    assert straddling >= 100 and contained >= 100

    # action windows: rejected exactly when a label repeats
    distinct_windows = duplicate_windows = 0
    for f in range(150):
        labels = [f"act-{f}-{j}" for j in range(3)]
        if rng.random() < 0.5:
            i, j = rng.sample(range(3), 2)
            labels[i] = labels[j]
        t = rng.uniform(0.0, 2.0)
        intervals = []
        for label in labels:
            length = rng.uniform(1.2, 5.0)
            intervals.append((label, t, t + length))
            t += length + rng.uniform(0.1, 2.0)
        candidates = gen_order([actions_clip(intervals, clip_id=f"ord-{f}")])
        expect = len(set(labels)) == 3
        assert len(candidates) == (1 if expect else 0), f"action fixture {f}"
        if candidates:
            distinct_windows += 1
            assert candidates[0].answer == order_answer(labels)
        else:
            duplicate_windows += 1
    assert distinct_windows >= 40 and duplicate_windows >= 40


# ---------------------------------------------------------------------------
# 5. Auxiliary-task ratios and frame-index answers
# ---------------------------------------------------------------------------


def test_acceptance_5_mtp_ratios_flag_gate_and_answers():
    rng = random.Random(5)
    eligible = [
        sample(f"s{i:05d}", frame_count=rng.randrange(8, 64), temporal_flag=False)
        for i in range(10_000)
    ]
    flagged = [sample(f"t{i:04d}", temporal_flag=True) for i in range(1_000)]
    augmented = apply_mtp(
        eligible + flagged, MtpRatios(0.25, 0.5), seed=52, index_base=1, min_frames=8
    )
    assert [a.base.sample_id for a in augmented] == [
        s.sample_id for s in eligible + flagged
    ]

    by_task = Counter(
        a.aux_task for a in augmented if a.base.sample_id.startswith("s")
    )
    frame_index_fraction = by_task[AuxTask.FRAME_INDEX] / len(eligible)
    assigned_qa_fraction = by_task[AuxTask.ASSIGNED_QA] / len(eligible)
    assert abs(frame_index_fraction - 0.25) <= 0.013  # 3 sigma at n=10,000
    assert abs(assigned_qa_fraction - 0.50) <= 0.015

    assert all(
        a.aux_task is None for a in augmented if a.base.sample_id.startswith("t")
    ), "flagged samples must never be augmented"

    checked = 0
    for a in augmented:
        if a.aux_task is AuxTask.FRAME_INDEX:
            prepends = [
                op for op in a.edit.operations if isinstance(op, PrependFrameOp)
            ]
            assert len(prepends) == 1
            assert int(a.aux_answer) == prepends[0].index + 1  # 1-based positions
            assert 0 <= prepends[0].index < a.base.frame_count
            checked += 1
        elif a.aux_task is AuxTask.ASSIGNED_QA:
            assert a.partner_id and a.partner_id != a.base.sample_id
    assert checked == by_task[AuxTask.FRAME_INDEX]


# ---------------------------------------------------------------------------
# 6. Answer-value and letter-position balance
# ---------------------------------------------------------------------------


def test_acceptance_6_answer_and_letter_balance():
    rng = random.Random(6)
    duration_phrases = tuple(DURATION_PHRASES[b] for b in BUCKETS)
    location_phrases = tuple(LOCATION_PHRASES[t] for t in THIRDS)
    items = []
    for i in range(1_000):
        items.append(
            dynamic_item(
                f"dy-{i:04d}",
                answer=rng.choices(DIRECTIONS, weights=(4, 2, 2, 1))[0],
                clip_id=f"clip-dy-{i}",
            )
        )
        items.append(
            mc_item(
                f"du-{i:04d}",
                dimension=Dimension.DURATION,
                options=duration_phrases,
                correct=rng.choices((0, 1, 2), weights=(5, 2, 1))[0],
                question="How long does it go on?",
                clip_id=f"clip-du-{i}",
            )
        )
        items.append(
            mc_item(
                f"lo-{i:04d}",
                dimension=Dimension.LOCATION,
                options=location_phrases,
                correct=rng.choices((0, 1, 2), weights=(1, 3, 4))[0],
                question="When does it happen?",
                clip_id=f"clip-lo-{i}",
            )
        )
        items.append(
            mc_item(
                f"re-{i:04d}",
                dimension=Dimension.REASONING,
                options=tuple(f"step {i:04d}{s}" for s in "wxyz"),
                correct=rng.randrange(4),
                question="What happens next?",
                clip_id=f"clip-re-{i}",
            )
        )
        labels = (f"x{i:04d}", f"y{i:04d}", f"z{i:04d}")
        items.append(
            mc_item(
                f"or-{i:04d}",
                dimension=Dimension.ORDER,
                options=(order_answer(labels), *order_pool(labels)[:3]),
                correct=0,  # every correct answer starts out on letter A
                question="Which order is right?",
                clip_id=f"clip-or-{i}",
            )
        )
    assert len(items) == 5_000

    balanced, _reports = balance_answers(items, seed=6)
    final = rebalance_options(balanced, seed=6)

    by_dimension = {}
    for item in final:
        by_dimension.setdefault(item.dimension, []).append(item)
    for dim, space in ANSWER_SPACES.items():
        counts = Counter(i.answer_text for i in by_dimension[dim])
        assert set(counts) <= set(space)
        assert max(counts.values()) - min(counts.values()) <= 1, dim
    for dim, group in by_dimension.items():
        positions = Counter(LETTERS.index(i.answer) for i in group)
        assert len(positions) == len(group[0].options)
        assert max(positions.values()) - min(positions.values()) <= 1, dim


# ---------------------------------------------------------------------------
# 7. End-to-end determinism on the shipped fixture corpus
# ---------------------------------------------------------------------------


def _fixture_config(out_dir: Path, seed: int):
    return config_from_dict(
        {
            "seed": seed,
            "output_dir": str(out_dir),
            "sources": [
                {"schema": "bbox_track", "path": str(REPO / "fixtures/bbox_tracks.jsonl")},
                {"schema": "goal_step", "path": str(REPO / "fixtures/goal_steps.jsonl")},
                {"schema": "timestamped_caption", "path": str(REPO / "fixtures/events.jsonl")},
                {"schema": "action_interval", "path": str(REPO / "fixtures/actions.jsonl")},
            ],
            "mtp": {
                "samples": str(REPO / "fixtures/instruction_samples.jsonl"),
                "gate": {"judge_id": "gate", "url": "stub://gate-keywords"},
            },
            "judges": [
                {"judge_id": "judge-a", "url": "stub://shortcut?fallback=A"},
                {"judge_id": "judge-b", "url": "stub://shortcut?fallback=B"},
                {"judge_id": "judge-c", "url": "stub://shortcut?fallback=none"},
            ],
        }
    )


def test_acceptance_7_pipeline_determinism(tmp_path):
    started = time.monotonic()
    config_a = _fixture_config(tmp_path / "a", seed=42)
    config_b = _fixture_config(tmp_path / "b", seed=42)
    config_c = _fixture_config(tmp_path / "c", seed=43)
    run_pipeline(config_a)
    run_pipeline(config_b)
    run_pipeline(config_c)

    outputs = [name for stage in STAGE_ORDER for name in STAGE_OUTPUTS[stage]]
    for name in outputs:
        same = (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        assert same, f"{name} differs between identical-seed runs"
    manifest_a = load_manifest(tmp_path / "a")
    manifest_b = load_manifest(tmp_path / "b")
    assert manifest_a == manifest_b  # config hash and every recorded file hash

    manifest_c = load_manifest(tmp_path / "c")
    assert manifest_c["config_hash"] != manifest_a["config_hash"]
    items_differ = (tmp_path / "a" / "items.jsonl").read_bytes() != (
        tmp_path / "c" / "items.jsonl"
    ).read_bytes()
    assert items_differ, "a different seed must change the generated items"
    assert time.monotonic() - started < 120.0


# ---------------------------------------------------------------------------
# 8. Audit directionality on planted vs clean items
# ---------------------------------------------------------------------------


def test_acceptance_8_audit_removes_planted_shortcut_items(tmp_path):
    options = ("spin left", "spin right", "hold still", "walk away")
    planted = [
        mc_item(
            f"planted-{i:03d}",
            options=options,
            correct=i % 4,
            clip_id=f"pclip-{i}",
            video_uri=f"video://planted/{slugify(options[i % 4])}",
        )
        for i in range(100)
    ]
    clean = [
        mc_item(
            f"clean-{i:03d}",
            options=options,
            correct=i % 4,
            clip_id=f"cclip-{i}",
            video_uri=f"video://clean/clip-{i:03d}",
        )
        for i in range(100)
    ]
    caches = [ResponseCache(tmp_path / f"cache-{j}.jsonl") for j in "abc"]
    clients = [
        ChatJudgeClient(JudgeSpec(judge_id="judge-a", url="stub://shortcut?fallback=A"), caches[0]),
        ChatJudgeClient(JudgeSpec(judge_id="judge-b", url="stub://shortcut?fallback=B"), caches[1]),
        ChatJudgeClient(JudgeSpec(judge_id="judge-c", url="stub://shortcut?fallback=none"), caches[2]),
    ]
    try:
        benchmark, report = run_audit(planted + clean, clients, seed=8)
    finally:
        for client in clients:
            client.close()
        for cache in caches:
            cache.close()

    removed = {d.item_id for d in report.decisions if d.filtered}
    planted_removed = sum(1 for i in planted if i.item_id in removed)
    clean_removed = sum(1 for i in clean if i.item_id in removed)
    assert planted_removed >= 95  # the leak is deterministic: all 100 go
    assert clean_removed <= 5
    assert {i.item_id for i in benchmark} == {
        i.item_id for i in clean if i.item_id not in removed
    }

    diagnostics = report.diagnostics
    assert diagnostics.acc_r == pytest.approx(0.25)
    assert diagnostics.acc_s < diagnostics.acc_r
    assert diagnostics.acc_b < diagnostics.acc_r
