import json
import re
import threading
import time
from collections import Counter

import httpx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from factline.cache import ReplyCache, cache_key
from factline.corpus import Sentence
from factline.extraction import (
    ExtractionPair,
    LLMExtractor,
    RuleBasedExtractor,
    StudentConfig,
    StudentExtractor,
    build_distillation_subset,
    extract_facts,
    rank_by_inverse_token_frequency,
    read_facts,
    train_student_extractor,
    write_facts,
)
from factline.extraction.student import EMPTY, FACT_SEP, parse_target, target_tokens
from factline.llm import LLMClient, LLMError, parse_json_reply
from factline.text import tokenize

rule = RuleBasedExtractor()


# -- rule-based extractor

def test_shared_location_is_distributed():
    assert rule.extract("Opacity and density in the right lobe") == [
        "opacity in the right lobe", "density in the right lobe"]


def test_negation_is_distributed_and_spelling_fixed():
    assert rule.extract("NO chf, focal inifiltrate, or gross effusionis identified") == [
        "no CHF identified", "no focal infiltrate identified", "no gross effusion identified"]


def test_empty_sentence_has_no_facts():
    assert rule.extract("") == []
    assert extract_facts("", rule) == []


def test_sentence_without_split_point_is_one_fact():
    assert rule.extract("Heart size is normal.") == ["heart size is normal"]


def test_extract_facts_keeps_source_and_kind():
    s = Sentence("r1", "findings", 0, "No effusion or pneumothorax.")
    facts = extract_facts(s, rule)
    assert [f.text for f in facts] == ["no effusion", "no pneumothorax"]
    assert all(f.source_sentence == s and f.extractor_kind == "rule_based" for f in facts)


def test_fact_store_round_trip(tmp_path):
    facts = extract_facts(Sentence("r1", "findings", 2, "No effusion or pneumothorax."), rule)
    path = tmp_path / "facts.jsonl"
    assert write_facts(facts, path) == 2
    assert read_facts(path) == [{"sentence_id": "r1/findings/2", "fact": "no effusion", "extractor": "rule_based"},
                                {"sentence_id": "r1/findings/2", "fact": "no pneumothorax", "extractor": "rule_based"}]


_sentence_text = st.lists(
    st.sampled_from(["no", "effusion", "opacity", "and", "or", ",", "in", "the", "left", "lung", ".", "Stable",
                     "pneumothorax", "seen", "!", "?", "edema"]), max_size=14).map(" ".join)


@settings(max_examples=300)
@given(_sentence_text)
def test_rule_facts_have_no_terminators_or_duplicates(text):
    facts = rule.extract(text)
    assert len(facts) == len(set(facts))
    for f in facts:
        assert f and not re.search(r"[.!?]\s", f) and not f.endswith((".", "!", "?"))
    assert rule.extract(text) == facts


# -- difficulty ranking and subset selection

def test_inverse_frequency_example():
    ranked = rank_by_inverse_token_frequency(["a", "a c", "a b"])
    assert [s for s, _ in ranked] == ["a b", "a c", "a"]
    assert [round(v, 3) for _, v in ranked] == [1.333, 1.333, 0.333]


def test_inverse_frequency_single_and_ties():
    assert rank_by_inverse_token_frequency(["x y"]) == [("x y", 2.0)]
    assert [s for s, _ in rank_by_inverse_token_frequency(["b", "a", "b", "a"])] == ["a", "a", "b", "b"]
    assert rank_by_inverse_token_frequency([]) == []


def _oracle_scores(texts):
    freq = Counter(t for s in texts for t in tokenize(s))
    return {s: sum(1 / freq[t] for t in tokenize(s)) for s in texts}


def test_subset_takes_hardest_per_cluster():
    texts = ["alpha one", "alpha two two", "alpha three", "beta four", "beta five five five", "beta six"]
    emb = np.array([[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [10.0, 10.0], [10.1, 10.0], [10.0, 10.1]])
    scores = _oracle_scores(texts)
    expected = set()
    for group in (texts[:3], texts[3:]):
        expected |= set(sorted(group, key=lambda s: (-scores[s], s))[:2])
    assert set(build_distillation_subset(texts, emb, 2, 4, seed=0)) == expected


def test_subset_whole_corpus_and_single_cluster():
    texts = ["a b", "a c", "a", "d"]
    emb = np.eye(4)
    assert sorted(build_distillation_subset(texts, emb, 2, 10)) == sorted(texts)
    ranked = [s for s, _ in rank_by_inverse_token_frequency(texts)]
    assert build_distillation_subset(texts, emb, 1, 2) == ranked[:2]


def test_subset_rejects_too_many_clusters():
    with pytest.raises(ValueError):
        build_distillation_subset(["a", "b"], np.eye(2), 3, 1)


@settings(max_examples=40, deadline=None)
@given(st.integers(4, 40), st.integers(1, 6), st.integers(1, 50), st.integers(0, 3))
def test_subset_size_and_cluster_quota(n, k, budget, seed):
    from factline.sampling import cluster_sentences

    k = min(k, n)
    rng = np.random.default_rng(seed)
    texts = [f"s{i} " + " ".join(f"w{j}" for j in rng.integers(0, 8, size=3)) for i in range(n)]
    emb = rng.normal(size=(n, 3))
    picked = build_distillation_subset(texts, emb, k, budget, seed)
    assert len(picked) == min(budget, n) == len(set(picked))
    if budget < n:
        labels = cluster_sentences(emb, k, seed)
        idx = {t: i for i, t in enumerate(texts)}
        counts = Counter(int(labels[idx[t]]) for t in picked)
        for c in set(labels.tolist()):
            if (labels == c).sum() >= -(-budget // k):
                assert counts[c] >= budget // k


# -- student extractor

def test_target_serialization():
    assert target_tokens([]) == [EMPTY]
    assert target_tokens(["no effusion", "no edema"]) == ["no", "effusion", FACT_SEP, "no", "edema"]
    assert parse_target([EMPTY]) == []
    assert parse_target(target_tokens(["no effusion", "no edema"])) == ["no effusion", "no edema"]


def test_empty_training_set_is_an_error():
    with pytest.raises(ValueError):
        train_student_extractor([])


def test_untrained_student_is_a_usage_error():
    with pytest.raises(RuntimeError):
        StudentExtractor().extract("No effusion.")


@pytest.fixture(scope="module")
def student(corpus):
    pairs = [ExtractionPair(p["sentence"], p["facts"]) for p in corpus.extraction_pairs]
    start = time.time()
    model = train_student_extractor(pairs[:500], StudentConfig())
    return model, pairs, time.time() - start


def test_student_generalizes_to_held_out_pairs(student):
    model, pairs, seconds = student
    held_out = pairs[500:]
    assert len(held_out) >= 100
    pred = model.extract_many([p.sentence_text for p in held_out])
    accuracy = sum(p == q.fact_list for p, q in zip(pred, held_out)) / len(held_out)
    assert accuracy >= 0.90
    assert seconds < 240


def test_student_reproduces_training_pairs(student):
    model, pairs, _ = student
    seen = pairs[:50]
    pred = model.extract_many([p.sentence_text for p in seen])
    assert sum(p == q.fact_list for p, q in zip(pred, seen)) >= 48


def test_student_checkpoint_reloads_identically(student, tmp_path):
    model, pairs, _ = student
    model.save(tmp_path / "student.pt")
    again = StudentExtractor.load(tmp_path / "student.pt")
    texts = [p.sentence_text for p in pairs[:40]]
    assert again.extract_many(texts) == model.extract_many(texts)


# -- LLM extractor

class Recorder:
    """Fake chat endpoint that answers from a function and counts requests."""

    def __init__(self, reply):
        self.reply, self.calls, self.lock = reply, 0, threading.Lock()
        self.in_flight = self.peak = 0

    def __call__(self, request):
        with self.lock:
            self.calls += 1
            self.in_flight += 1
            self.peak = max(self.peak, self.in_flight)
        try:
            body = json.loads(request.content)
            assert body["temperature"] == 0
            result = self.reply(body["messages"][-1]["content"])
            if isinstance(result, httpx.Response):
                return result
            return httpx.Response(200, json={"choices": [{"message": {"content": result}}]})
        finally:
            time.sleep(0.01)
            with self.lock:
                self.in_flight -= 1


def client_for(recorder, cache=None, **kw):
    return LLMClient("http://llm.test/v1/chat", "k", cache=cache, transport=httpx.MockTransport(recorder),
                     backoff=0.0, **kw)


def test_llm_extractor_parses_json_array():
    rec = Recorder(lambda text: '["No effusion.", "no edema", "no effusion"]')
    assert LLMExtractor(client_for(rec)).extract("No effusion or edema.") == ["no effusion", "no edema"]


def test_llm_reply_in_code_fence_is_repaired():
    assert parse_json_reply('```json\n["a"]\n```') == ["a"]
    with pytest.raises(LLMError):
        parse_json_reply("not json")


def test_unparsable_reply_marks_sentence_unextracted():
    rec = Recorder(lambda text: "sorry" if "bad" in text else '["x"]')
    facts, failed = LLMExtractor(client_for(rec)).extract_many(["good one", "bad one", ""])
    assert facts == [["x"], None, []]
    assert failed == [1]


def test_warm_cache_makes_no_network_calls(tmp_path):
    texts = [f"sentence {i}" for i in range(6)]
    rec = Recorder(lambda text: json.dumps([text]))
    cache = ReplyCache(tmp_path / "cache")
    LLMExtractor(client_for(rec, cache)).extract_many(texts)
    assert rec.calls == 6
    cold = Recorder(lambda text: httpx.Response(500))
    warm = client_for(cold, ReplyCache(tmp_path / "cache"))
    facts, failed = LLMExtractor(warm).extract_many(texts)
    assert cold.calls == 0 and warm.network_calls == 0 and failed == []
    assert facts == [[t] for t in texts]


def test_retryable_errors_are_retried_then_surface():
    state = {"n": 0}

    def flaky(text):
        state["n"] += 1
        return httpx.Response(503) if state["n"] < 3 else '["ok"]'

    assert LLMExtractor(client_for(Recorder(flaky), retries=3)).extract("x") == ["ok"]
    with pytest.raises(LLMError) as err:
        LLMExtractor(client_for(Recorder(lambda t: httpx.Response(503)), retries=1)).extract("x")
    assert err.value.retryable


def test_client_errors_are_not_retried():
    rec = Recorder(lambda t: httpx.Response(401, text="denied"))
    with pytest.raises(LLMError) as err:
        client_for(rec, retries=3).complete("fact_extraction", "x")
    assert rec.calls == 1 and not err.value.retryable


def test_in_flight_requests_are_bounded():
    rec = Recorder(lambda text: '["a"]')
    LLMExtractor(client_for(rec, max_in_flight=2)).extract_many([f"t{i}" for i in range(12)])
    assert rec.calls == 12 and rec.peak <= 2


def test_missing_endpoint_is_not_retryable(monkeypatch):
    monkeypatch.delenv("FACTLINE_LLM_URL", raising=False)
    with pytest.raises(LLMError) as err:
        LLMClient(url=None).complete("fact_extraction", "x")
    assert not err.value.retryable


def test_cache_key_covers_every_part():
    base = cache_key("extract", "fact_extraction", "m", "text")
    assert len({base, cache_key("annotate", "fact_extraction", "m", "text"),
                cache_key("extract", "other", "m", "text"), cache_key("extract", "fact_extraction", "m2", "text"),
                cache_key("extract", "fact_extraction", "m", "text2")}) == 5
