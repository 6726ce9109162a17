import logging

import pytest

from adlex.chat import CleanPolicy, clean_utterance, parse_chat, participant_utterances
from adlex.errors import EmptyDocument, MalformedTier, UnbalancedBracket
from conftest import FIXTURES

CHAT_FILES = sorted((FIXTURES / "chat").glob("*.cha"))


def test_fixture_suite_is_large_enough():
    assert len(CHAT_FILES) >= 20


@pytest.mark.parametrize("path", CHAT_FILES, ids=lambda p: p.stem)
def test_fixture_tokens_match_expected(path):
    doc = parse_chat(path.read_text(encoding="utf-8"))
    got = [" ".join(clean_utterance(u)) for u in participant_utterances(doc, "PAR")]
    assert got == path.with_suffix(".expected").read_text(encoding="utf-8").splitlines()


def test_headers_tiers_and_dependents():
    text = "@UTF8\n@Begin\n@Participants:\tPAR Participant\n*PAR:\thello .\n%mor:\tco|hello .\n*INV:\tok .\n@End\n"
    doc = parse_chat(text)
    assert ("@Participants", "PAR Participant") in doc.headers
    assert [t.speaker for t in doc.tiers] == ["PAR", "INV"]
    assert doc.tiers[0].dependent_tiers == (("mor", "co|hello ."),)
    assert doc.header_lines()[2] == "@Participants:\tPAR Participant"


def test_continuation_joins_lines():
    doc = parse_chat("*PAR:\tthe boy\n\tis here .\n")
    assert doc.tiers[0].raw_text == "the boy is here ."


def test_bom_is_ignored():
    assert parse_chat("﻿*PAR:\thi .\n").tiers[0].speaker == "PAR"


@pytest.mark.parametrize("text", ["*PA:\thello .\n", "*par:\thello .\n", "*PAR hello .\n"])
def test_malformed_main_tier(text):
    with pytest.raises(MalformedTier):
        parse_chat(text)


def test_dependent_before_main_tier():
    with pytest.raises(MalformedTier):
        parse_chat("%mor:\tx\n*PAR:\thi .\n")


def test_document_without_tiers():
    with pytest.raises(EmptyDocument):
        parse_chat("@UTF8\n@Begin\n@End\n")


def test_unknown_line_warns(caplog):
    with caplog.at_level(logging.WARNING):
        doc = parse_chat("*PAR:\thi .\ngarbage line\n")
    assert len(doc.tiers) == 1
    assert "unrecognised" in caplog.text


@pytest.mark.parametrize("raw", ["the [// boy .", "the ] boy .", "a [x [2]] b ."])
def test_unbalanced_brackets(raw):
    with pytest.raises(UnbalancedBracket):
        clean_utterance(raw)


def test_worked_example_retrace_and_filler():
    assert clean_utterance("&uh the [//] the stool .") == ["the", "stool", "."]


def test_worked_example_repeat_and_replacement():
    assert clean_utterance("he [x 3] fell [: fell down] .") == ["he", "fell", "."]


def test_unknown_code_is_dropped_with_warning(caplog):
    with caplog.at_level(logging.WARNING):
        assert clean_utterance("the boy [zzz] .") == ["the", "boy", "."]
    assert "unknown CHAT code" in caplog.text


def test_policy_keeps_retracings_and_fillers():
    policy = CleanPolicy(drop_retracings=False, drop_fillers=False)
    assert clean_utterance("&uh the girl [//] boy .", policy) == ["uh", "the", "girl", "boy", "."]


def test_policy_expands_repeat_count_when_repetitions_kept():
    policy = CleanPolicy(drop_repetition_marks=False)
    assert clean_utterance("no [x 3] .", policy) == ["no", "no", "no", "."]
    assert clean_utterance("the [/] the boy .", policy) == ["the", "the", "boy", "."]


def test_policy_case_terminators_and_unintelligible():
    policy = CleanPolicy(lowercase=False, keep_terminators=False, drop_unintelligible=False)
    assert clean_utterance("The xxx Boy +...", policy) == ["The", "xxx", "Boy"]


def test_nonverbal_is_dropped_even_when_fillers_kept():
    assert clean_utterance("&=laughs &+fr the &*INV:yes boy .", CleanPolicy(drop_fillers=False)) == ["the", "boy", "."]


def test_empty_utterance_after_cleaning():
    assert clean_utterance("&uh (.) xxx") == []
