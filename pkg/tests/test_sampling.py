import logging
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from factline.sampling import (
    AuxSignals,
    MissingSignalError,
    RuleConfig,
    Triplet,
    cluster_sentences,
    generate_hard_triplets,
    jaccard,
    levsim,
    read_triplets,
    sample_triplets,
    validate_triplet,
    write_triplets,
)


def dp_levsim(x, y):
    """Memoised recursive edit distance, written independently of the library."""

    @lru_cache(maxsize=None)
    def d(i, j):
        if i == 0 or j == 0:
            return i + j
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (x[i - 1] != y[j - 1]))

    return 1.0 if not x and not y else 1 - d(len(x), len(y)) / max(len(x), len(y))


def test_levsim_examples():
    assert levsim("abc", "abc") == 1.0
    assert levsim("kitten", "sitting") == pytest.approx(1 - 3 / 7)
    assert levsim("", "abc") == 0.0
    assert levsim("", "") == 1.0


_short = st.text(alphabet="abcde ", max_size=20)


@settings(max_examples=300)
@given(_short, _short)
def test_levsim_matches_dp_and_is_symmetric(x, y):
    v = levsim(x, y)
    assert v == pytest.approx(dp_levsim(x, y), abs=1e-12)
    assert v == levsim(y, x) and 0.0 <= v <= 1.0


def test_jaccard_examples():
    assert jaccard({"x"}, {"x"}) == 1
    assert jaccard({"a", "b"}, {"b", "c"}) == pytest.approx(1 / 3)
    assert jaccard(set(), set()) == 1
    assert jaccard({"a"}, set()) == 0


def test_singleton_clusters_when_k_equals_n():
    X = np.random.default_rng(0).normal(size=(7, 4))
    assert sorted(cluster_sentences(X, 7, 0).tolist()) == list(range(7))


def test_two_blobs_are_separated():
    rng = np.random.default_rng(1)
    X = np.vstack([rng.normal(0, 0.1, size=(20, 3)), rng.normal(5, 0.1, size=(20, 3))])
    labels = cluster_sentences(X, 2, seed=4)
    centroids = np.stack([X[labels == c].mean(0) for c in (0, 1)])
    nearest = np.argmin(((X[:, None] - centroids[None]) ** 2).sum(-1), axis=1)
    assert np.array_equal(nearest, labels)
    assert len(set(labels[:20])) == 1 and len(set(labels[20:])) == 1 and labels[0] != labels[20]


def test_clustering_is_seeded_and_checked():
    X = np.random.default_rng(2).normal(size=(30, 5))
    assert np.array_equal(cluster_sentences(X, 4, 9), cluster_sentences(X, 4, 9))
    with pytest.raises(ValueError):
        cluster_sentences(X, 31)


def _aux(**signals):
    aux = AuxSignals()
    for name, table in signals.items():
        setattr(aux, name, table)
    return aux


def test_rule2_all_clauses_hold():
    a, p, n = "left effusion", "left effusions", "cardiomegaly"
    aux = _aux(health={a: "abnormal", p: "abnormal", n: "abnormal"}, clusters={a: 0, p: 0, n: 1},
               embeddings={a: np.array([1.0, 0.0]), p: np.array([0.9, 0.1]), n: np.array([0.0, 1.0])})
    # cos(a,p)=0.994 > 0 + 0.1 and levsim(a,p)=13/14 > levsim(a,n) + 0.1
    assert dp_levsim(a, p) > dp_levsim(a, n) + 0.1
    assert validate_triplet(Triplet(a, p, n, 2), aux, RuleConfig()) == (True, "ok")
    aux.clusters[n] = 0
    assert validate_triplet(Triplet(a, p, n, 2), aux, RuleConfig()) == (False, "positive-negative share a cluster")


def test_rule4_label_overlap_is_rejected():
    a, p, n = "effusion left", "left effusion", "left lung"
    aux = _aux(cig_labels={a: frozenset({"obs:effusion", "anat:left"}), p: frozenset({"obs:effusion"}),
                           n: frozenset({"anat:left"})},
               embeddings={a: np.array([1.0, 0.0]), p: np.array([1.0, 0.1]), n: np.array([0.0, 1.0])})
    assert validate_triplet(Triplet(a, p, n, 4), aux, RuleConfig()) == (False, "anchor-negative label overlap")


def test_rule1_veto():
    a, p, n = "no effusion", "pleural effusion absent", "no effusions"
    aux = _aux(paraphrases={a: [p]},
               embeddings={a: np.array([1.0, 0.0]), p: np.array([0.0, 1.0]), n: np.array([1.0, 0.05])})
    # cos(a,p)=0 < cos(a,n)~1 and lev(a,p) > lev(a,n)=1: both signals prefer the negative
    ok, reason = validate_triplet(Triplet(a, p, n, 1), aux, RuleConfig())
    assert not ok and reason.startswith("veto")
    aux.embeddings[p] = np.array([1.0, 0.0])  # embedding now prefers the positive
    assert validate_triplet(Triplet(a, p, n, 1), aux, RuleConfig())[0]


def test_missing_signal_names_itself():
    with pytest.raises(MissingSignalError) as err:
        validate_triplet(Triplet("a", "b", "c", 2), AuxSignals(), RuleConfig())
    assert err.value.signal == "health"


def test_degenerate_triplet_is_rejected():
    assert validate_triplet(Triplet("a", "a", "b", 6), AuxSignals(), RuleConfig()) == (False, "texts not distinct")


def test_negative_margins_are_rejected():
    with pytest.raises(ValueError):
        RuleConfig(margin_cos=-0.1)


@pytest.fixture(scope="module")
def split(corpus):
    from factline.pipeline import fixture_split

    s = fixture_split(corpus, "train", 60, 0)
    s.aux.hard_triplets = list(corpus.hard_triplets)
    return s


@pytest.mark.parametrize("rule", [1, 2, 3, 4, 5, 6])
def test_sampled_triplets_pass_the_validator(split, rule):
    cfg = RuleConfig()
    out = sample_triplets(rule, split.texts, split.aux, cfg, 200, seed=5)
    assert len(out) == 200
    assert len({(t.anchor, t.positive, t.negative) for t in out}) == 200
    for t in out:
        assert t.rule_id == rule
        assert validate_triplet(t, split.aux, cfg) == (True, "ok"), t


def test_rule1_sub_kinds(split):
    kinds = {t.sub_kind for t in sample_triplets(1, split.texts, split.aux, RuleConfig(), 300, 0)}
    assert kinds <= {"observation", "anatomy"} and "observation" in kinds


@pytest.mark.parametrize("rule", [1, 3, 5])
def test_sampling_is_seed_deterministic(split, rule):
    first = sample_triplets(rule, split.texts, split.aux, RuleConfig(), 50, seed=3)
    assert sample_triplets(rule, split.texts, split.aux, RuleConfig(), 50, seed=3) == first
    assert sample_triplets(rule, split.texts, split.aux, RuleConfig(), 50, seed=4) != first


def test_zero_requested_and_unknown_rule(split):
    assert sample_triplets(2, split.texts, split.aux, RuleConfig(), 0) == []
    with pytest.raises(ValueError):
        sample_triplets(7, split.texts, split.aux, RuleConfig(), 5)


def test_rule6_needs_a_source():
    with pytest.raises(ValueError):
        sample_triplets(6, [], AuxSignals(), RuleConfig(), 5)


def test_rule6_exhaustion_warns(caplog):
    hard = [(f"a{i}", f"p{i}", f"n{i}") for i in range(10)]
    with caplog.at_level(logging.WARNING):
        out = sample_triplets(6, [], _aux(hard_triplets=hard), RuleConfig(), 50)
    assert len(out) == 10 and "only 10" in caplog.text


def test_exhausted_corpus_returns_short_list(caplog):
    a, p, n = "a effusion", "b effusion", "c edema"
    aux = _aux(paraphrases={a: [p]}, embeddings={t: np.eye(3)[i] for i, t in enumerate((a, p, n))})
    with caplog.at_level(logging.WARNING):
        out = sample_triplets(1, [a, p, n], aux, RuleConfig(), 5)
    assert out == [Triplet(a, p, n, 1, "observation")]
    assert "exhausted" in caplog.text


def test_triplet_store_round_trip(tmp_path, split):
    ts = sample_triplets(1, split.texts, split.aux, RuleConfig(), 20, 0)
    write_triplets(ts, tmp_path / "t.jsonl")
    assert read_triplets(tmp_path / "t.jsonl") == ts


def test_aux_bundle_round_trip(tmp_path, split):
    split.aux.save(tmp_path / "aux")
    back = AuxSignals.load(tmp_path / "aux")
    assert back.clusters == split.aux.clusters and back.fact_sets == split.aux.fact_sets
    assert back.paraphrases == split.aux.paraphrases and back.hard_triplets == split.aux.hard_triplets
    some = split.texts[0]
    assert np.allclose(back.embeddings[some], split.aux.embeddings[some], atol=1e-6)


class _FakeClient:
    def __init__(self, replies):
        self.replies = replies

    def complete_many(self, template_id, texts, operation_id="chat"):
        assert template_id == "hard_triplets"
        return [self.replies[t] for t in texts]


def test_generated_hard_triplets_skip_unusable_replies():
    client = _FakeClient({
        "no effusion": '[{"positive": "effusion absent", "negative": "small effusion"}]',
        "edema": "garbage",
        "opacity": '{"anchor": "opacity", "positive": "", "negative": "x"}',
    })
    assert generate_hard_triplets(client, ["no effusion", "edema", "opacity"]) == [
        ("no effusion", "effusion absent", "small effusion")]
