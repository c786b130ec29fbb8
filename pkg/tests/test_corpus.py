import json

from hypothesis import given, settings, strategies as st

from factline.corpus import (
    RawReport,
    ReportSections,
    read_reports,
    read_sentences,
    render_sections,
    report_sentences,
    section_report,
    split_sentences,
    write_sentences,
)
from factline.text import collapse_ws


def texts(sentences):
    return [s.text for s in sentences]


def test_findings_and_impression_headings():
    s = section_report(RawReport("r1", "FINDINGS: Lungs clear. IMPRESSION: No acute process."))
    assert s.findings == "Lungs clear."
    assert s.impression == "No acute process."
    assert s.other_blocks == []


def test_unheaded_report_becomes_one_block():
    s = section_report(RawReport("r1", "Patient is short of breath."))
    assert s.other_blocks == [(None, "Patient is short of breath.")]
    assert s.findings is None and s.impression is None


def test_alternate_heading_maps_to_impression():
    assert section_report(RawReport("r1", "CONCLUSION: Stable.")).impression == "Stable."


def test_headings_are_case_insensitive_and_nonfactual_blocks_excluded():
    raw = RawReport("r1", "Indication: cough. comparison: none. Findings: Small effusion. Summary: Effusion.")
    s = section_report(raw)
    assert s.findings == "Small effusion."
    assert s.impression == "Effusion."
    assert [h for h, _ in s.other_blocks] == ["indication", "comparison"]
    assert [kind for kind, _ in s.factual_blocks()] == ["findings", "impression"]


def test_empty_report_gives_empty_sections():
    assert section_report(RawReport("r1", "")) == ReportSections()


def test_report_id_must_be_nonempty():
    import pytest

    with pytest.raises(ValueError):
        RawReport("", "text")


def test_split_two_sentences():
    assert texts(split_sentences("Lungs clear. No effusion.")) == ["Lungs clear.", "No effusion."]


def test_enumeration_without_space_stays_one_sentence():
    text = "2.Atelectasis of the left lower lobe 3.Stable left lower lobe laceration."
    assert texts(split_sentences(text)) == [text]


def test_empty_text_has_no_sentences():
    assert split_sentences("") == []


def test_abbreviation_guard():
    assert len(split_sentences("Discussed with Dr. Smith. Stable.")) == 2
    assert len(split_sentences("Compared to no. 3 film. Stable.")) == 2
    assert len(split_sentences("Effusion, e.g. small. Stable.")) == 2


def test_sentence_indices_are_positions():
    out = split_sentences("A is seen. B is seen! C?", "r9", "findings")
    assert [(s.report_id, s.section_kind, s.index) for s in out] == [
        ("r9", "findings", 0), ("r9", "findings", 1), ("r9", "findings", 2)]


def test_report_sentences_reads_factual_blocks_in_order():
    raw = RawReport("r1", "HISTORY: cough. FINDINGS: No effusion. Heart normal. IMPRESSION: Normal.")
    out = report_sentences(raw)
    assert [(s.section_kind, s.text) for s in out] == [
        ("findings", "No effusion."), ("findings", "Heart normal."), ("impression", "Normal.")]


def test_jsonl_round_trip(tmp_path):
    src = tmp_path / "reports.jsonl"
    src.write_text(json.dumps({"report_id": "a", "text": "FINDINGS: No effusion. Heart normal."}) + "\n\n")
    sentences = [s for r in read_reports(src) for s in report_sentences(r)]
    out = tmp_path / "sentences.jsonl"
    assert write_sentences(sentences, out) == 2
    assert read_sentences(out) == sentences
    row = json.loads(out.read_text().splitlines()[0])
    assert set(row) == {"report_id", "section", "index", "text"}


_words = st.text(alphabet="abcdefgh XYZ.!?,\n\t0123", max_size=120)


@given(_words)
def test_split_preserves_text_and_never_yields_empty(text):
    out = texts(split_sentences(text))
    assert all(s.strip() for s in out)
    assert collapse_ws(" ".join(out)) == collapse_ws(text)


@given(_words)
def test_split_is_deterministic(text):
    assert split_sentences(text) == split_sentences(text)


_body = st.text(alphabet="abcdefgh .,", min_size=1, max_size=40).map(str.strip).filter(bool)


@settings(max_examples=200)
@given(st.lists(st.tuples(st.sampled_from(["FINDINGS", "IMPRESSION", "INDICATION", "HISTORY"]), _body),
                max_size=4), st.one_of(st.none(), _body))
def test_sectioning_is_idempotent(blocks, lead):
    text = "\n".join(([lead] if lead else []) + [f"{h}: {b}" for h, b in blocks])
    first = section_report(RawReport("r", text))
    assert section_report(RawReport("r", render_sections(first))) == first
