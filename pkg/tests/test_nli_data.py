import json
import logging
from itertools import islice

import httpx
import pytest
from hypothesis import given, strategies as st

from factline.cache import ReplyCache
from factline.llm import LLMClient
from factline.nli_data import (
    LABELS,
    NLIPair,
    assemble_nli_dataset,
    derive_ec_pools,
    generate_llm_nli,
    label_counts,
    read_nli,
    read_nli_jsonl_adapter,
    sample_quadruples,
    write_nli,
)


def pair(i, label="entailment", src="s"):
    return NLIPair(f"premise {i}", f"hypothesis {i}", label, src)


def test_pair_validation():
    with pytest.raises(ValueError):
        NLIPair(" ", "h", "entailment")
    with pytest.raises(ValueError):
        NLIPair("p", "h", "maybe")
    assert pair(0, "contradiction").label_index == 2


def test_shared_duplicate_is_dropped_once():
    a = [pair(0), pair(1)]
    b = [pair(1), pair(2, "neutral")]
    data, summary = assemble_nli_dataset([a, b])
    assert len(data) == 3 and summary.total == 3
    assert summary.counts == {"entailment": 2, "neutral": 1, "contradiction": 0}


def test_empty_sources():
    data, summary = assemble_nli_dataset([])
    assert data == [] and summary.total == 0


def test_conflicting_labels_are_kept_and_flagged(caplog):
    with caplog.at_level(logging.WARNING):
        data, summary = assemble_nli_dataset([[pair(0, "entailment")], [pair(0, "contradiction")]])
    assert len(data) == 2
    assert summary.conflicts == [("premise 0", "hypothesis 0")]
    assert "conflicting" in caplog.text


def test_fixture_summary_matches_generator_bookkeeping(corpus):
    for split, pairs in corpus.nli.items():
        data, summary = assemble_nli_dataset([pairs])
        assert len(data) == len(pairs)
        assert summary.counts == corpus.bookkeeping()["nli"][split]


def test_pool_partition():
    data = [pair(i, label) for label in LABELS for i in range(10)]
    ent, con = derive_ec_pools(data)
    assert len(ent) == 10 and len(con) == 10
    assert all(p.label == "entailment" for p in ent) and all(p.label == "contradiction" for p in con)
    assert derive_ec_pools([pair(i, "neutral") for i in range(4)]) == ([], [])


def test_quadruple_stream_is_seeded():
    ent, con = [pair(i) for i in range(5)], [pair(i, "contradiction") for i in range(7)]
    first = list(islice(sample_quadruples(ent, con, 3), 50))
    assert list(islice(sample_quadruples(ent, con, 3), 50)) == first
    assert all(e.label == "entailment" and c.label == "contradiction" for e, c in first)
    with pytest.raises(ValueError):
        next(sample_quadruples([], con))


_pairs = st.lists(st.builds(NLIPair, st.sampled_from(["a", "b", "c"]), st.sampled_from(["x", "y"]),
                            st.sampled_from(LABELS), st.sampled_from(["s1", "s2"])), max_size=20)


@given(st.lists(_pairs, max_size=3))
def test_pools_keep_every_non_neutral_pair_once(streams):
    data, _ = assemble_nli_dataset(streams)
    ent, con = derive_ec_pools(data)
    unique = {(p.premise, p.hypothesis, p.label) for s in streams for p in s if p.label != "neutral"}
    kept = [(p.premise, p.hypothesis, p.label) for p in ent + con]
    assert sorted(kept) == sorted(unique)


def test_store_round_trip(tmp_path, corpus):
    pairs = corpus.nli["val"]
    data, summary = assemble_nli_dataset([pairs])
    write_nli(data, tmp_path / "nli.jsonl", summary)
    back, back_summary = read_nli(tmp_path / "nli.jsonl")
    assert back == data and back_summary == summary
    saved = json.loads((tmp_path / "nli.jsonl.summary.json").read_text())
    assert saved["counts"] == summary.counts
    row = json.loads((tmp_path / "nli.jsonl").read_text().splitlines()[0])
    assert set(row) == {"premise", "hypothesis", "label", "source"}


def test_external_adapter(tmp_path):
    path = tmp_path / "ext.jsonl"
    rows = [{"sentence1": "p", "sentence2": "h", "gold_label": "Entailment"},
            {"sentence1": "p", "sentence2": "h2", "gold_label": "-"}]
    path.write_text("\n".join(map(json.dumps, rows)) + "\n")
    assert read_nli_jsonl_adapter(path, source="mednli") == [NLIPair("p", "h", "entailment", "mednli")]


class _Counter:
    def __init__(self, reply):
        self.reply, self.calls = reply, 0

    def __call__(self, request):
        self.calls += 1
        content = json.loads(request.content)["messages"][-1]["content"]
        return httpx.Response(200, json={"choices": [{"message": {"content": self.reply(content)}}]})


def _client(handler, cache=None):
    return LLMClient("http://llm.test", cache=cache, transport=httpx.MockTransport(handler), backoff=0)


ECN = json.dumps({"entailment": ["effusion present"], "neutral": ["small effusion"],
                  "contradiction": ["no effusion", "lungs clear"]})


def test_premise_to_ecn_yields_every_label(tmp_path):
    handler = _Counter(lambda text: ECN if "effusion" in text else "nonsense")
    report = generate_llm_nli("premise_to_ecn", ["pleural effusion", "edema"], _client(handler, ReplyCache(tmp_path)))
    assert label_counts(report.pairs) == {"entailment": 1, "neutral": 1, "contradiction": 2}
    assert report.dropped == 1 and handler.calls == 2
    assert all(p.premise == "pleural effusion" and p.source == "llm:premise_to_ecn" for p in report.pairs)
    cold = _Counter(lambda text: "unused")
    again = generate_llm_nli("premise_to_ecn", ["pleural effusion", "edema"], _client(cold, ReplyCache(tmp_path)))
    assert cold.calls == 0 and again.pairs == report.pairs


def test_other_generation_templates():
    contra = generate_llm_nli("premise_to_contradictions", ["edema"],
                              _client(_Counter(lambda t: '["no edema", ""]')))
    assert contra.pairs == [NLIPair("edema", "no edema", "contradiction", "llm:premise_to_contradictions")]
    similar = generate_llm_nli("example_to_similar", ["x"], _client(_Counter(
        lambda t: '[{"premise": "a", "hypothesis": "b", "label": "Neutral"}, {"premise": "a"}]')))
    assert similar.pairs == [] and similar.dropped == 1
    with pytest.raises(ValueError):
        generate_llm_nli("unknown", ["x"], _client(_Counter(lambda t: "[]")))
