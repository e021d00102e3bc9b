"""Template rendering and the shipped template/prompt assets."""

import pytest

from temporalqa import templates
from temporalqa.taskgen import Dimension


def test_render_replaces_placeholders():
    out = templates.render("When does {activity} occur?", {"activity": "diving"})
    assert out == "When does diving occur?"


def test_render_missing_key_names_the_placeholder():
    with pytest.raises(templates.UnresolvedPlaceholder) as exc_info:
        templates.render("Finish {goal} now", {"activity": "diving"})
    assert "goal" in str(exc_info.value)


def test_render_leaves_no_braces_behind():
    out = templates.render("{a} and {b}", {"a": "x", "b": "y"})
    assert "{" not in out and "}" not in out


def test_placeholders_lists_names():
    assert templates.placeholders("{a} then {b} then {a}") == {"a", "b"}


def test_pool_render_and_length():
    pool = templates.TemplatePool("p", ("Hi {name}", "Bye {name}"))
    assert len(pool) == 2
    assert pool.render(1, {"name": "Ada"}) == "Bye Ada"


def test_pool_index_out_of_range():
    pool = templates.TemplatePool("p", ("only one",))
    with pytest.raises(IndexError):
        pool.get(1)


@pytest.mark.parametrize("kind", ["question", "instruction"])
@pytest.mark.parametrize("dimension", [d.value for d in Dimension])
def test_every_shipped_pool_has_ten_templates(kind, dimension):
    pool = templates.load_pool(kind, dimension)
    assert len(pool) == 10


@pytest.mark.parametrize(
    ("dimension", "placeholder"),
    [
        ("dynamic", "object"),
        ("reasoning", "goal"),
        ("duration", "activity"),
        ("location", "activity"),
        ("order", "actions"),
    ],
)
def test_question_templates_use_only_known_placeholders(dimension, placeholder):
    pool = templates.load_pool("question", dimension)
    for i in range(len(pool)):
        assert templates.placeholders(pool.get(i)) <= {placeholder}


@pytest.mark.parametrize("name", ["mtp_frame_index", "mtp_assigned_qa"])
def test_prompt_pools_have_ten_entries(name):
    assert len(templates.load_prompt_pool(name)) == 10


def test_frame_index_prompts_allow_only_frame_count():
    pool = templates.load_prompt_pool("mtp_frame_index")
    for i in range(len(pool)):
        assert templates.placeholders(pool.get(i)) <= {"frame_count"}


def test_assigned_qa_prompts_take_a_position():
    pool = templates.load_prompt_pool("mtp_assigned_qa")
    for i in range(len(pool)):
        assert templates.placeholders(pool.get(i)) == {"position"}


def test_gate_prompt_embeds_the_conversation():
    text = templates.load_prompt_text("gate_temporal")
    assert templates.placeholders(text) == {"conversation"}
    rendered = templates.render(text, {"conversation": "user: hello"})
    # the conversation sits after the marker the classifier stubs scan for,
    # followed by the yes/no question
    assert "Conversation:\nuser: hello" in rendered
    assert rendered.rstrip().endswith("Answer yes or no.")


def test_comment_and_blank_lines_are_not_templates():
    pool = templates.TemplatePool("p", templates._parse_lines("# note\n\nreal {x}\n"))
    assert len(pool) == 1
    assert pool.get(0) == "real {x}"
