#!/usr/bin/env python3
"""Regenerate the static fixture corpora under fixtures/.

The fixtures are checked in; this script exists so they can be audited and
regenerated deterministically (fixed seed) rather than being opaque blobs.
Running it twice produces byte-identical files.

Usage:
    python3 scripts/gen_fixtures.py [--out fixtures]
"""

from __future__ import annotations

import argparse
import json
import random
from pathlib import Path

SEED = 20260814

CATEGORIES = ["person", "dog", "car", "ball", "bicycle", "cat", "bird", "truck"]

GOALS = [
    "make a cup of coffee",
    "assemble a bookshelf",
    "change a bicycle tire",
    "bake banana bread",
    "set up a tent",
    "replace a laptop battery",
    "plant a tomato seedling",
    "paint a wooden fence",
    "wrap a gift box",
    "install a ceiling light",
]

STEP_VERBS = [
    "gather", "inspect", "clean", "position", "attach", "tighten", "measure",
    "cut", "mix", "pour", "fold", "press", "remove", "align", "test",
]

STEP_OBJECTS = [
    "the required tools", "the main part", "the work surface", "the first panel",
    "the fasteners", "the cover", "the base", "the edges", "the mixture",
    "the contents", "the corners", "the joints", "the old component",
    "the replacement", "the final assembly",
]

ACTIVITIES = [
    "a man rides a bicycle",
    "two children play catch",
    "a woman waters the plants",
    "a dog chases a ball",
    "a chef chops onions",
    "a barista steams milk",
    "a runner stretches by the track",
    "a painter mixes colors",
    "a cat climbs the bookshelf",
    "a worker stacks boxes",
    "a couple sets the table",
    "a boy flies a kite",
]

ACTIONS = [
    "opening the door",
    "pouring water",
    "tying shoelaces",
    "folding a shirt",
    "cutting vegetables",
    "washing hands",
    "stirring the pot",
    "closing the window",
    "picking up the phone",
    "turning on the lamp",
    "sweeping the floor",
    "zipping the bag",
]

STATIC_QA = [
    ("What color is the car parked outside?", "The car is blue."),
    ("How many people are in the room?", "There are three people."),
    ("What is written on the sign?", "The sign says 'Open'."),
    ("What kind of animal is on the couch?", "It is a tabby cat."),
    ("Is the window open or closed in the last shot?", "The window is closed."),
    ("What is the man wearing?", "He wears a gray jacket."),
    ("Where is the laptop?", "The laptop is on the desk."),
    ("What brand is the cereal box?", "The label is not readable."),
]

TEMPORAL_QA = [
    ("What happens after the man opens the door?", "After opening it, he steps outside."),
    ("Does the dog sit down before or after the ball is thrown?", "The dog sits down before the throw."),
    ("How long does the woman stir the soup?", "She stirs it for most of the clip."),
    ("In which direction does the cyclist turn at the corner?", "The cyclist turns left."),
    ("What is the order of the drinks being poured?", "Water first, then juice, then milk."),
    ("What does the child do next after waving?", "The child then runs to the swing."),
    ("Which event happens first, the handshake or the hug?", "The handshake happens first."),
]


def _write_jsonl(path: Path, records: list[dict]) -> None:
    lines = [json.dumps(r, sort_keys=True) for r in records]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {path} ({len(records)} records)")


def _drift_positions(rng, n, net, jitter, backward_steps=0):
    """n positions with the given net displacement; optionally a few dips."""
    weights = [rng.uniform(0.5, 1.5) for _ in range(n - 1)]
    scale = net / sum(weights)
    deltas = [w * scale for w in weights]
    for index in rng.sample(range(n - 1), backward_steps):
        deltas[index] = -abs(deltas[index]) * 0.3
    # Re-scale the forward deltas so the net displacement is preserved.
    forward_sum = sum(d for d in deltas if d > 0)
    deficit = net - sum(deltas)
    deltas = [d + (deficit * d / forward_sum if d > 0 else 0.0) for d in deltas]
    start = 0.5 - net / 2 + rng.uniform(-0.05, 0.05)
    positions = [start]
    for d in deltas:
        positions.append(positions[-1] + d)
    return [min(0.95, max(0.05, p + rng.uniform(-jitter, jitter))) for p in positions]


def _track(rng, object_id, category, kind, frame_count):
    n = rng.randint(10, 18)
    frames = sorted(rng.sample(range(frame_count), n))
    axis = rng.choice(["x", "y"])
    sign = rng.choice([1, -1])
    if kind == "clean":
        moving = _drift_positions(rng, n, sign * rng.uniform(0.3, 0.6), 0.0)
    elif kind == "jittered":
        moving = _drift_positions(rng, n, sign * rng.uniform(0.3, 0.5), 0.01,
                                  backward_steps=1)
    elif kind == "subthreshold":
        moving = _drift_positions(rng, n, sign * rng.uniform(0.02, 0.08), 0.005)
    elif kind == "zigzag":
        half = n // 2
        leg = rng.uniform(0.3, 0.45)
        first = _drift_positions(rng, half + 1, sign * leg, 0.0)
        second = _drift_positions(rng, n - half, -sign * leg, 0.0)
        moving = first + [first[-1] + (p - second[0]) for p in second[1:]]
        moving = [min(0.95, max(0.05, p)) for p in moving]
    else:  # static
        base = rng.uniform(0.2, 0.8)
        moving = [base + rng.uniform(-0.01, 0.01) for _ in range(n)]
    fixed = [rng.uniform(0.3, 0.7) + rng.uniform(-0.01, 0.01) for _ in range(n)]
    width = round(rng.uniform(0.05, 0.15), 4)
    height = round(rng.uniform(0.05, 0.15), 4)
    boxes = []
    for i, frame in enumerate(frames):
        x = moving[i] if axis == "x" else fixed[i]
        y = fixed[i] if axis == "x" else moving[i]
        boxes.append([frame, round(x, 4), round(y, 4), width, height])
    return {"object_id": object_id, "category": category, "boxes": boxes}


def gen_bbox(rng):
    records = []
    kinds = ["clean", "clean", "clean", "jittered", "zigzag", "subthreshold"]
    for i in range(30):
        clip_id = f"dyn-{i:03d}"
        fps = rng.choice([8, 10, 12])
        frame_count = rng.randint(80, 240)
        record = {
            "clip_id": clip_id,
            "video_uri": f"video://fixtures/{clip_id}",
            "duration_s": round(frame_count / fps, 4),
            "frame_count": frame_count,
            "tracks": [],
        }
        n_tracks = rng.randint(1, 3)
        for t in range(n_tracks):
            kind = rng.choice(kinds)
            category = rng.choice(CATEGORIES)
            record["tracks"].append(
                _track(rng, f"obj-{t}", category, kind, frame_count)
            )
        if i % 7 == 3:  # crowd the clip: three more of one category
            category = record["tracks"][0]["category"]
            for extra in range(3):
                record["tracks"].append(
                    _track(rng, f"crowd-{extra}", category, "static", frame_count)
                )
        if i == 5:  # pixel-coordinate variant to exercise normalization
            width_px, height_px = 1280, 720
            record["frame_width"] = width_px
            record["frame_height"] = height_px
            for track in record["tracks"]:
                track["boxes"] = [
                    [f, round(x * width_px, 1), round(y * height_px, 1),
                     round(w * width_px, 1), round(h * height_px, 1)]
                    for f, x, y, w, h in track["boxes"]
                ]
        records.append(record)
    return records


def gen_goal_steps(rng):
    records = []
    for i in range(25):
        clip_id = f"rsn-{i:03d}"
        if i % 9 == 7:
            n_steps = 2  # below the minimum; dropped by the generator
        elif i % 6 == 5:
            n_steps = rng.randint(16, 20)  # gets truncated
        else:
            n_steps = rng.randint(3, 12)
        essential_fraction = 0.3 if i % 8 == 6 else rng.uniform(0.55, 1.0)
        t = round(rng.uniform(0.0, 4.0), 2)
        steps = []
        used = set()
        for _ in range(n_steps):
            while True:
                description = f"{rng.choice(STEP_VERBS)} {rng.choice(STEP_OBJECTS)}"
                if description not in used:
                    used.add(description)
                    break
            start = t
            t = round(t + rng.uniform(2.0, 10.0), 2)
            steps.append(
                {
                    "description": description,
                    "start_s": start,
                    "end_s": t,
                    "essential": rng.random() < essential_fraction,
                }
            )
            t = round(t + rng.uniform(0.0, 3.0), 2)
        duration = round(t + rng.uniform(1.0, 10.0), 2)
        records.append(
            {
                "clip_id": clip_id,
                "video_uri": f"video://fixtures/{clip_id}",
                "duration_s": duration,
                "frame_count": int(duration * 10),
                "goal": GOALS[i % len(GOALS)],
                "steps": steps,
            }
        )
    return records


def gen_events(rng):
    records = []
    for i in range(40):
        clip_id = f"evt-{i:03d}"
        duration = round(rng.uniform(30.0, 120.0), 2)
        events = []
        for _ in range(rng.randint(1, 3)):
            ratio = rng.choice([rng.uniform(0.05, 0.3), rng.uniform(0.35, 0.6),
                                rng.uniform(0.7, 0.9)])
            length = ratio * duration
            start = rng.uniform(0.0, duration - length)
            events.append(
                {
                    "description": rng.choice(ACTIVITIES),
                    "start_s": round(start, 2),
                    "end_s": round(start + length, 2),
                }
            )
        # One short event parked inside a single third, for coverage of the
        # when-does-it-happen generator.
        third = rng.randrange(3)
        center = (third + 0.5) * duration / 3
        half = rng.uniform(0.02, 0.08) * duration
        events.append(
            {
                "description": rng.choice(ACTIVITIES),
                "start_s": round(center - half, 2),
                "end_s": round(center + half, 2),
            }
        )
        records.append(
            {
                "clip_id": clip_id,
                "video_uri": f"video://fixtures/{clip_id}",
                "duration_s": duration,
                "frame_count": int(duration * 8),
                "events": events,
            }
        )
    return records


def gen_actions(rng):
    records = []
    for i in range(25):
        clip_id = f"ord-{i:03d}"
        n_actions = rng.randint(3, 7)
        labels = rng.sample(ACTIONS, min(n_actions, len(ACTIONS)))
        if i % 6 == 4 and len(labels) >= 2:
            labels[1] = labels[0]  # duplicated action; its windows are skipped
        t = round(rng.uniform(0.0, 5.0), 2)
        actions = []
        for j, label in enumerate(labels):
            start = t
            if i % 10 == 8 and j == 1:
                length = 0.5  # too brief to order reliably
            else:
                length = rng.uniform(2.0, 8.0)
            t = round(t + length, 2)
            actions.append({"label": label, "start_s": start, "end_s": t})
            if i % 5 == 2 and j == 0:
                t = round(t - 1.0, 2)  # force an overlap with the next action
            else:
                t = round(t + rng.uniform(0.5, 3.0), 2)
        duration = round(t + rng.uniform(1.0, 8.0), 2)
        records.append(
            {
                "clip_id": clip_id,
                "video_uri": f"video://fixtures/{clip_id}",
                "duration_s": duration,
                "frame_count": int(duration * 10),
                "actions": actions,
            }
        )
    return records


def gen_instruction_samples(rng):
    records = []
    for i in range(60):
        sample_id = f"ins-{i:03d}"
        temporal = i % 3 == 0
        bank = TEMPORAL_QA if temporal else STATIC_QA
        conversation = []
        for _ in range(rng.randint(1, 2)):
            question, answer = rng.choice(bank)
            conversation.append(["user", question])
            conversation.append(["assistant", answer])
        frame_count = rng.choice([4, 6]) if i % 11 == 9 else rng.randint(24, 400)
        records.append(
            {
                "sample_id": sample_id,
                "video_uri": f"video://fixtures/{sample_id}",
                "frame_count": frame_count,
                "conversation": conversation,
                "temporal_flag": None,
            }
        )
    return records


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="fixtures", help="output directory")
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(SEED)
    _write_jsonl(out / "bbox_tracks.jsonl", gen_bbox(rng))
    _write_jsonl(out / "goal_steps.jsonl", gen_goal_steps(rng))
    _write_jsonl(out / "events.jsonl", gen_events(rng))
    _write_jsonl(out / "actions.jsonl", gen_actions(rng))
    _write_jsonl(out / "instruction_samples.jsonl", gen_instruction_samples(rng))


if __name__ == "__main__":
    main()
