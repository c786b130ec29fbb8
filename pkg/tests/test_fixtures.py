from factline.annotation import LabelAssignment, gold_vector
from factline.corpus import RawReport, report_sentences
from factline.fixtures import generate_fixtures, load_fixture_dir


def test_same_seed_same_corpus(corpus):
    again = generate_fixtures(0)
    assert again.facts == corpus.facts and again.nli == corpus.nli and again.reports == corpus.reports
    assert generate_fixtures(1).facts != corpus.facts


def test_bookkeeping(corpus):
    book = corpus.bookkeeping()
    assert book["facts"] == {"train": 676, "val": 112, "test": 112}
    assert book["reports"] == 450 and book["report_sentences"] == 2006
    assert book["template_reports"] == 200 and book["extraction_pairs"] == 800
    assert book["hard_triplets"] == 2460 and book["er_sentences"] == 30
    assert book["nli"]["test"] == {"entailment": 318, "neutral": 112, "contradiction": 294}


def test_fact_splits_are_disjoint(corpus):
    splits = [set(corpus.split_facts(s)) for s in ("train", "val", "test")]
    assert not (splits[0] & splits[1]) and not (splits[0] & splits[2]) and not (splits[1] & splits[2])


def test_report_sentences_match_the_splitter(corpus):
    for rec in corpus.reports[:50]:
        got = [s.text for s in report_sentences(RawReport(rec["report_id"], rec["text"]))]
        assert got == rec["sentences"]


def test_labeled_sentences_are_valid_vectors(corpus):
    for rec in corpus.template_reports[:20]:
        vec = gold_vector(LabelAssignment(**lab) for lab in rec["labels"])
        assert vec.as_array().shape == (108,)


def test_paraphrases_stay_within_a_group(corpus):
    for text, group in list(corpus.paraphrases.items())[:200]:
        assert text not in group
        assert corpus.paraphrase_kind[text] in ("observation", "anatomy")


def test_written_directory_round_trips(corpus, tmp_path):
    corpus.write(tmp_path)
    back = load_fixture_dir(tmp_path)
    assert back["summary"] == corpus.bookkeeping()
    assert len(back["facts"]) == len(corpus.facts)
    assert len(back["nli_train"]) == len(corpus.nli["train"])
    assert [(r["anchor"], r["positive"], r["negative"]) for r in back["hard_triplets"]] == corpus.hard_triplets
