"""Scoring: letter extraction, per-dimension accuracy, report layout."""

from dataclasses import replace

import pytest

from temporalqa.evalharness import (
    PredictionRecord,
    ScoreReport,
    UnknownItemId,
    extract_letter,
    load_predictions,
    score,
    uniform_random_predictions,
    write_predictions,
)
from temporalqa.qagen import QAFormat
from temporalqa.taskgen import Dimension

from synth import mc_item


def items_for(dimension, n, options=("w", "x", "y", "z"), correct=0):
    return [
        mc_item(
            f"{dimension.value}-{i:04d}",
            dimension=dimension,
            options=options,
            correct=correct,
            question="Q?",
        )
        for i in range(n)
    ]


def predict(items, letter):
    return [PredictionRecord(i.item_id, letter) for i in items]


# ---------------------------------------------------------------------------
# extract_letter
# ---------------------------------------------------------------------------


def test_extract_letter_bare_and_dotted():
    assert extract_letter("B", 4) == "B"
    assert extract_letter("b.", 4) == "B"
    assert extract_letter("  C) next", 4) == "C"


def test_extract_letter_parenthesized_and_prose():
    assert extract_letter("(c) because the object rises", 4) == "C"
    assert extract_letter("The answer is D", 4) == "D"
    assert extract_letter("b looks right to me", 4) == "B"


def test_extract_letter_first_standalone_wins():
    assert extract_letter("A, though B is close", 4) == "A"


def test_extract_letter_skips_letters_inside_words():
    assert extract_letter("Answer: B", 4) == "B"  # "Answer" itself never matches
    assert extract_letter("A1 and B2 are labels; pick C", 4) == "C"


def test_extract_letter_out_of_range_is_unparsed():
    assert extract_letter("E", 4) is None
    assert extract_letter("D", 3) is None
    assert extract_letter("I cannot tell from this frame.", 4) is None


def test_extract_letter_no_letter_at_all():
    assert extract_letter("42", 4) is None
    assert extract_letter("", 4) is None


# ---------------------------------------------------------------------------
# score
# ---------------------------------------------------------------------------


def test_score_all_correct():
    items = items_for(Dimension.DYNAMIC, 10, correct=1)
    report = score(items, predict(items, "B"))
    assert report.average_pct == 100.0
    assert report.item_weighted_pct == 100.0
    assert report.unparsed_count == 0
    assert report.per_dimension["dynamic"]["accuracy_pct"] == 100.0
    assert report.per_dimension["dynamic"]["random_pct"] == 25.0


def test_score_missing_predictions_count_as_wrong_and_unparsed():
    items = items_for(Dimension.DYNAMIC, 4, correct=0)
    report = score(items, predict(items[:2], "A"))
    assert report.item_weighted_pct == 50.0
    assert report.unparsed_count == 2


def test_score_unparseable_reply_counts_as_wrong():
    items = items_for(Dimension.DYNAMIC, 2, correct=0)
    report = score(items, [
        PredictionRecord(items[0].item_id, "A"),
        PredictionRecord(items[1].item_id, "no idea"),
    ])
    assert report.item_weighted_pct == 50.0
    assert report.unparsed_count == 1


def test_score_rejects_unknown_item_ids():
    items = items_for(Dimension.DYNAMIC, 1)
    with pytest.raises(UnknownItemId):
        score(items, [PredictionRecord("ghost", "A")])


def test_score_average_is_unweighted_across_dimensions():
    # 10 location items all correct, 30 dynamic items all wrong:
    # dimension average = 50, item-weighted = 25.
    location = items_for(Dimension.LOCATION, 10, options=("x", "y", "z"), correct=0)
    dynamic = items_for(Dimension.DYNAMIC, 30, correct=0)
    report = score(location + dynamic, predict(location, "A") + predict(dynamic, "B"))
    assert report.average_pct == 50.0
    assert report.item_weighted_pct == 25.0
    assert report.random_average_pct == pytest.approx((100 / 3 + 25.0) / 2)


def test_score_open_ended_matches_normalized_text():
    base = items_for(Dimension.REASONING, 3, correct=0)
    items = [
        replace(i, format=QAFormat.OPEN_ENDED, options=(), answer="w")
        for i in base
    ]
    predictions = [
        PredictionRecord(items[0].item_id, "  W "),
        PredictionRecord(items[1].item_id, "x"),
        PredictionRecord(items[2].item_id, ""),
    ]
    report = score(items, predictions)
    assert report.item_weighted_pct == pytest.approx(100 / 3)
    assert report.unparsed_count == 1  # the empty reply
    assert report.per_dimension["reasoning"]["random_pct"] == 0.0


def test_score_empty_benchmark():
    report = score([], [])
    assert report.average_pct == 0.0
    assert report.total_items == 0


def test_random_predictions_track_option_chance():
    items = items_for(Dimension.DYNAMIC, 4000, correct=2)
    report = score(items, uniform_random_predictions(items, seed=3))
    assert report.per_dimension["dynamic"]["accuracy_pct"] == pytest.approx(25.0, abs=2.0)


def test_random_predictions_are_seeded_per_item():
    items = items_for(Dimension.DYNAMIC, 50)
    first = uniform_random_predictions(items, seed=3)
    assert first == uniform_random_predictions(items, seed=3)
    assert first != uniform_random_predictions(items, seed=4)
    subset = uniform_random_predictions(items[10:20], seed=3)
    assert subset == first[10:20]


# ---------------------------------------------------------------------------
# Report text
# ---------------------------------------------------------------------------


def test_report_table_layout():
    location = items_for(Dimension.LOCATION, 3, options=("x", "y", "z"), correct=0)
    dynamic = items_for(Dimension.DYNAMIC, 4, correct=0)
    report = score(location + dynamic, predict(location, "A") + predict(dynamic, "A"))
    text = report.to_text()
    header, random_row, scored_row, footer = text.splitlines()
    assert header.split() == ["LO", "DU", "DY", "OR", "RE", "AVG"]
    assert random_row.split() == ["random", "33.3", "-", "25.0", "-", "-", "29.2"]
    assert scored_row.split() == ["scored", "100.0", "-", "100.0", "-", "-", "100.0"]
    assert footer == "items: 7  unparsed: 0"


def test_report_table_full_row_order():
    batches = [
        items_for(Dimension.LOCATION, 2, options=("x", "y", "z")),
        items_for(Dimension.DURATION, 2, options=("x", "y", "z")),
        items_for(Dimension.DYNAMIC, 2),
        items_for(Dimension.ORDER, 2),
        items_for(Dimension.REASONING, 2),
    ]
    items = [i for batch in batches for i in batch]
    report = score(items, predict(items, "A"))
    random_row = report.to_text().splitlines()[1].split()
    assert random_row == ["random", "33.3", "33.3", "25.0", "25.0", "25.0", "28.3"]


# ---------------------------------------------------------------------------
# Prediction files
# ---------------------------------------------------------------------------


def test_predictions_file_round_trip(tmp_path):
    records = [PredictionRecord("i1", "A"), PredictionRecord("i2", "no idea")]
    path = tmp_path / "preds.jsonl"
    write_predictions(path, records)
    assert load_predictions(path) == records


def test_load_predictions_validates_keys(tmp_path):
    path = tmp_path / "preds.jsonl"
    path.write_text('{"item_id": "i1"}\n', encoding="utf-8")
    with pytest.raises(ValueError):
        load_predictions(path)
