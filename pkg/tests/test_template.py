import itertools

import pytest
from hypothesis import given
from hypothesis import strategies as st

from dagsearch.errors import DuplicateTag, MissingTag, OutOfOrder, PrefixNotPaused, UnclosedTag
from dagsearch.plan import parse_plan
from dagsearch.template import TAGS, check_format, inject_result, segment_output

BLOCKS = {tag: f"<{tag}>{tag[0]}</{tag}>" for tag in TAGS}
MINIMAL = "<think>r</think><search>G</search><result>R</result><answer>a</answer>"


def test_minimal_instance():
    seg = segment_output(MINIMAL)
    assert [s.body for s in seg.spans().values()] == ["r", "G", "R", "a"]
    assert seg.think.start == 0 and seg.answer.end == len(MINIMAL)
    assert MINIMAL[seg.search.body_start:seg.search.body_end] == "G"


def test_coke_trace(coke_trace):
    seg = segment_output(coke_trace)
    assert seg.complete
    plan = parse_plan(seg.search.body)
    assert plan.ids == ["A", "B", "C"]
    assert check_format(coke_trace) == 1


@pytest.mark.parametrize(
    "text, exc",
    [
        ("<search>G</search><think>r</think>", OutOfOrder),
        ("<think>r</think><think>s</think><search>G</search>", DuplicateTag),
        ("<think>r</think>", MissingTag),
        ("<think>r<search>G</search>", UnclosedTag),
        ("<think>r</think><search>G", UnclosedTag),
        ("</think><search>G</search>", MissingTag),
    ],
)
def test_segment_errors(text, exc):
    with pytest.raises(exc):
        segment_output(text)


def test_check_format_cases():
    assert check_format(MINIMAL) == 1
    assert check_format(MINIMAL.replace("<result>R</result>", "")) == 0
    assert check_format(MINIMAL + "<answer>b</answer>") == 0
    assert check_format("") == 0


def test_whitespace_and_stray_text_tolerated(caplog):
    spaced = "\n  " + "\n\n".join(BLOCKS[t] for t in TAGS) + "\n"
    assert check_format(spaced) == 1
    stray = BLOCKS["think"] + " chatter " + "".join(BLOCKS[t] for t in TAGS[1:])
    assert check_format(stray) == 1
    assert "stray text" in caplog.text


def test_tags_are_case_sensitive():
    assert check_format(MINIMAL.replace("<answer>", "<Answer>")) == 0


def test_exhaustive_order_deletion_duplication():
    cases = {}
    for perm in itertools.permutations(TAGS):
        cases["perm:" + ",".join(perm)] = "".join(BLOCKS[t] for t in perm)
    for tag in TAGS:
        cases[f"del:{tag}"] = "".join(BLOCKS[t] for t in TAGS if t != tag)
        cases[f"dup:{tag}"] = "".join(BLOCKS[t] * (2 if t == tag else 1) for t in TAGS)
    scores = {name: check_format(text) for name, text in cases.items()}
    assert len(scores) == 32
    assert [n for n, s in scores.items() if s == 1] == ["perm:think,search,result,answer"]


@given(st.text(alphabet="<>/thinksearchresultanswer \n", max_size=80))
def test_check_format_never_raises(text):
    score = check_format(text)
    assert score in (0, 1)
    if score:
        seg = segment_output(text)
        spans = list(seg.spans().values())
        assert all(a.end <= b.start for a, b in zip(spans, spans[1:]))


class TestInject:
    def test_result_span_equals_block(self):
        prefix = "<think>r</think><search>A: x (News)</search>"
        block = "Node A (news) Search results:\n\nResult 1:"
        seg = segment_output(inject_result(prefix, block))
        assert seg.result.body == block
        assert seg.answer is None

    def test_wrong_pause_point(self):
        with pytest.raises(PrefixNotPaused):
            inject_result(MINIMAL, "x")

    def test_empty_block_with_trailing_newline(self):
        out = inject_result("<think>r</think><search>G</search>\n", "")
        assert out.endswith("<result></result>\n")
        assert segment_output(out).result.body == ""

    @given(st.text(alphabet=st.characters(blacklist_characters="<>"), max_size=60))
    def test_always_segment_consistent(self, block):
        seg = segment_output(inject_result("<think>r</think>\n<search>G</search>", block))
        assert seg.think and seg.search and seg.result.body == block
