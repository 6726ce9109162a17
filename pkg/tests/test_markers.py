import numpy as np
import pytest

from adlex.corpus import Dataset, Transcript
from adlex.errors import NoFeatures, UnknownBackend
from adlex.markers import (LEXICON, TaggedToken, correlate_columns, correlate_markers, feature_matrix,
                           load_tag_sidecar, pos_tag)


@pytest.mark.parametrize("tok, tag", [("the", "DT"), ("watching", "VBG"), ("forgot", "VBD"), ("oh", "UH"),
                                      ("she", "PRP"), ("probably", "RB"), ("quickly", "RB"), ("jumped", "VBD"),
                                      ("cookie", "NN"), ("something", "NN"), ("she's", "PRP"), ("can't", "MD"),
                                      ("didn't", "VBD"), ("there", "EX"), (".", ".")])
def test_lexicon_tagger(tok, tag):
    assert pos_tag([tok])[0].tag == tag


def test_every_lexicon_tag_is_ptb():
    for word, tag in LEXICON.items():
        TaggedToken(word, tag)


def test_tagged_token_validation():
    with pytest.raises(ValueError):
        TaggedToken("x", "NOUN")
    with pytest.raises(ValueError):
        TaggedToken("", "NN")


def test_backends(tmp_path):
    assert pos_tag(["a"], "external", [("a", "DT")]) == [TaggedToken("a", "DT")]
    with pytest.raises(UnknownBackend):
        pos_tag(["a"], "spacy")
    with pytest.raises(UnknownBackend):
        pos_tag(["a"], "external")
    p = tmp_path / "tags.jsonl"
    p.write_text('{"id": "x", "tags": [["the", "DT"], ["boy", "NN"]]}\n')
    assert load_tag_sidecar(p) == {"x": [("the", "DT"), ("boy", "NN")]}


def _ds(control, dementia):
    ts = [Transcript(f"c{i}", tuple(t.split()), 0, None) for i, t in enumerate(control)]
    ts += [Transcript(f"d{i}", tuple(t.split()), 1, None) for i, t in enumerate(dementia)]
    return Dataset(tuple(ts))


def test_feature_matrix_example():
    fm = feature_matrix(_ds(["the the boy ."], []), "unigram", 1)
    assert fm.features == ("boy", "the")
    np.testing.assert_allclose(fm.matrix, [[1 / 3, 2 / 3]])


def test_feature_matrix_excludes_empty_rows():
    fm = feature_matrix(_ds(["the boy", "the girl", "xyz"], []), "unigram", 2)
    assert fm.features == ("the",) and fm.excluded == ("c2",)
    with pytest.raises(NoFeatures):
        feature_matrix(_ds(["a"], ["b"]), "unigram", 5)


def test_pos_rows_sum_to_one(synthetic39):
    fm = feature_matrix(synthetic39, "pos", 5)
    np.testing.assert_allclose(fm.matrix.sum(axis=1), 1.0, atol=1e-9)


def test_external_tags_drive_pos_features():
    ds = _ds(["a b", "a b"], ["a b", "a b"])
    tags = {t.id: [("a", "DT"), ("b", "NN" if t.label == 0 else "VB")] for t in ds}
    fm = feature_matrix(ds, "pos", 1, tags)
    assert fm.features == ("DT", "NN", "VB")


def test_dementia_only_feature_is_dementia_direction():
    ds = _ds(["the boy ."] * 4 + ["the girl ."] * 4, ["oh the boy ."] * 4 + ["oh the girl ."] * 4)
    res = {m.feature: m for m in correlate_columns(feature_matrix(ds, "unigram", 1), "unigram")}
    assert res["oh"].r > 0 and res["oh"].direction == "dementia"
    assert res["the"].direction == "control"


def test_label_flip_negates_r(synthetic39):
    flipped = Dataset(tuple(Transcript(t.id, t.tokens, 1 - t.label, None) for t in synthetic39))
    a = {m.feature: m for m in correlate_columns(feature_matrix(synthetic39, "pos", 5), "pos")}
    b = {m.feature: m for m in correlate_columns(feature_matrix(flipped, "pos", 5), "pos")}
    for f in a:
        assert b[f].r == pytest.approx(-a[f].r, abs=1e-15)
        assert a[f].direction != b[f].direction or a[f].r == 0


def test_results_sorted_by_magnitude_then_name(synthetic39):
    res = correlate_markers(synthetic39, "unigram")
    keys = [(-m.magnitude, m.feature) for m in res]
    assert keys == sorted(keys)
    assert all(m.p_adjusted < 0.05 for m in res)
