import math
import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from factline.annotation import GoldLabelVector, LabelAssignment, gold_vector
from factline.evaluation import (
    label_contradicts,
    label_entails,
    labels_to_template_report,
    metric_entcont_auc,
    nli_classification_eval,
    nli_similarity_eval,
    recovered_vector,
    recovery_eval,
    report_jaccard_eval,
    sentence_ranking_eval,
    threshold_candidates,
    triplet_accuracy,
    tune_threshold,
    write_curves_svg,
)
from factline.nli_data import LABELS, NLIPair
from factline.sampling import Triplet

N_OBS, N_ANAT = 70, 38


def vec(obs=None, anat=()):
    o = np.full(N_OBS, -1)
    for i, v in (obs or {}).items():
        o[i] = v
    a = np.zeros(N_ANAT)
    a[list(anat)] = 1
    return GoldLabelVector(o, a)


# -- label relations

def test_entailment_examples():
    anything = vec({0: 1, 3: 0}, [2])
    assert label_entails(anything, vec())
    assert label_entails(anything, anything)
    assert not label_entails(vec({0: 1}), vec({0: 0}))
    assert not label_entails(vec({0: 1}), vec({0: 1}, [5]))


def test_contradiction_examples():
    assert label_contradicts(vec({4: 1}), vec({4: 0}))
    assert not label_contradicts(vec({4: 1}), vec({4: 1}))
    assert not label_contradicts(vec({4: 1}, [1]), vec({4: 1}, [2]))
    assert not label_contradicts(vec({4: 1}), vec({4: -1}))


_vectors = st.builds(
    lambda o, a: vec(dict(enumerate(o)), [i for i, b in enumerate(a) if b]),
    st.lists(st.sampled_from([-1, 0, 1]), min_size=3, max_size=3),
    st.lists(st.booleans(), min_size=3, max_size=3),
)


@given(_vectors, _vectors, _vectors)
def test_relation_laws(x, y, z):
    assert label_entails(x, x) and not label_contradicts(x, x)
    assert label_contradicts(x, y) == label_contradicts(y, x)
    if label_entails(x, y) and label_entails(y, z):
        assert label_entails(x, z)


# -- brute-force oracles for ranking

def _entails(x, y):
    return all(y.observations[i] == -1 or x.observations[i] == y.observations[i] for i in range(N_OBS)) and all(
        x.anatomy[i] == 1 for i in range(N_ANAT) if y.anatomy[i] == 1)


def _contradicts(x, y):
    return any({int(x.observations[i]), int(y.observations[i])} == {0, 1} for i in range(N_OBS))


def _pairwise_auc(pos, neg):
    wins = sum(Fraction(1) if p > n else Fraction(1, 2) if p == n else Fraction(0) for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def _oracle_ranking(M, labels, ks):
    n = len(labels)
    aucs, a_k, c_k = [], {k: [] for k in ks}, {k: [] for k in ks}
    for q in range(n):
        others = [j for j in range(n) if j != q]
        # position = number of candidates that beat j (higher score, or equal score and lower index)
        pos_of = {j: sum(M[q][i] > M[q][j] or (M[q][i] == M[q][j] and i < j) for i in others) for j in others}
        order = sorted(others, key=pos_of.get)
        rel = [_entails(labels[q], labels[j]) or _entails(labels[j], labels[q]) for j in order]
        con = [_contradicts(labels[q], labels[j]) for j in order]
        pos = [M[q][j] for j, r in zip(order, rel) if r]
        neg = [M[q][j] for j, r in zip(order, rel) if not r]
        if pos and neg:
            aucs.append(_pairwise_auc(pos, neg))
        for k in ks:
            kk = min(k, len(order))
            a_k[k].append(sum(Fraction(sum(rel[:i]), i) for i in range(1, kk + 1)) / kk)
            c_k[k].append(Fraction(sum(con[:kk])))
    mean = lambda xs: float(sum(xs, Fraction(0)) / len(xs)) if xs else float("nan")  # noqa: E731
    return mean(aucs), {k: mean(v) for k, v in a_k.items()}, {k: mean(v) for k, v in c_k.items()}


_label_sets = st.lists(_vectors, min_size=2, max_size=10)


@settings(max_examples=60, deadline=None)
@given(_label_sets, st.randoms(use_true_random=False))
def test_ranking_matches_brute_force(labels, rnd):
    n = len(labels)
    M = np.array([[rnd.randint(0, 4) for _ in range(n)] for _ in range(n)], dtype=float)
    ks = (1, 3, 20)
    got = sentence_ranking_eval(M, [str(i) for i in range(n)], labels, ks)
    auc, a_k, c_k = _oracle_ranking(M.tolist(), labels, ks)
    assert (math.isnan(got.auc) and math.isnan(auc)) or got.auc == auc
    assert got.a_at_k == a_k and got.c_at_k == c_k
    assert got.c_at_k[1] <= got.c_at_k[3] <= got.c_at_k[20]
    # a strictly monotone transform of the similarities keeps every rank-based number
    again = sentence_ranking_eval(M ** 3 + 10, [str(i) for i in range(n)], labels, ks)
    assert again.a_at_k == got.a_at_k and again.c_at_k == got.c_at_k


def test_ten_sentence_fixture_values():
    rng = random.Random(7)
    labels = [vec({0: rng.choice([-1, 0, 1]), 1: rng.choice([-1, 0, 1])}, [rng.randrange(3)]) for _ in range(10)]
    M = [[rng.random() for _ in range(10)] for _ in range(10)]
    got = sentence_ranking_eval(lambda i, j: M[i][j], [str(i) for i in range(10)], labels, (2, 5))
    auc, a_k, c_k = _oracle_ranking(M, labels, (2, 5))
    assert (got.auc, got.a_at_k, got.c_at_k) == (auc, a_k, c_k)


def test_perfect_and_constant_rankings():
    labels = [vec({0: 1}), vec({0: 1}), vec({0: 0}), vec({0: 0})]
    same = [[1.0 if labels[i] == labels[j] else 0.0 for j in range(4)] for i in range(4)]
    assert sentence_ranking_eval(np.array(same), list("abcd"), labels, (1,)).auc == 1.0
    flat = sentence_ranking_eval(np.ones((4, 4)), list("abcd"), labels, (1,))
    assert flat.auc == 0.5
    with pytest.raises(ValueError):
        sentence_ranking_eval(np.ones((1, 1)), ["a"], labels[:1])


def _oracle_jaccard(M, bags, k):
    n = len(bags)
    per_query = []
    for q in range(n):
        order = sorted((j for j in range(n) if j != q), key=lambda j: (-M[q][j], j))[:k]
        per_query.append(sum(Fraction(len(bags[q] & bags[j]), len(bags[q] | bags[j]) or 1)
                             if bags[q] | bags[j] else Fraction(1) for j in order) / len(order))
    return float(sum(per_query) / n)


def test_report_jaccard():
    bags = [{"effusion", "edema"}, {"effusion"}, {"cardiomegaly"}, {"edema", "cardiomegaly"}, set()]
    M = np.array([[0, 3, 1, 2, 0], [3, 0, 1, 1, 2], [1, 1, 0, 3, 0], [2, 1, 3, 0, 1], [0, 2, 0, 1, 0]], float)
    out = report_jaccard_eval(M, list("abcde"), bags, (2, 4))
    assert out[2] == _oracle_jaccard(M.tolist(), bags, 2)
    assert out[4] == _oracle_jaccard(M.tolist(), bags, 4)
    assert report_jaccard_eval(M, list("abcde"), [{"x"}] * 5, (1, 4)) == {1: 1.0, 4: 1.0}


def test_triplet_accuracy():
    class Enc:
        def encode(self, texts):
            return np.array([{"a": [1, 0], "p": [0.8, 0.6], "n": [0, 1]}[t] for t in texts], float)

    assert triplet_accuracy(Enc(), [Triplet("a", "p", "n", 1), Triplet("a", "n", "p", 1)]) == 0.5


# -- NLI as similarity

def test_macro_accuracy_arithmetic():
    ent = [(0.9, "entailment")] * 19 + [(0.1, "entailment")] * 981
    con = [(0.9, "contradiction")] * 2 + [(0.1, "contradiction")] * 998
    r = nli_similarity_eval(ent + con, 0.5)
    assert (r.a_E, r.a_C) == pytest.approx((1.9, 99.8))
    assert r.a_EC == pytest.approx(50.85)


def test_threshold_below_every_similarity():
    r = nli_similarity_eval([(0.3, "entailment"), (0.4, "contradiction")], -5)
    assert (r.a_E, r.a_C, r.a_EC) == (100, 0, 50)
    with pytest.raises(ValueError):
        nli_similarity_eval([(0.3, "entailment")], math.inf)


def test_tune_threshold_examples():
    r = tune_threshold([(0.9, "entailment"), (0.1, "contradiction")])
    assert r.bt == pytest.approx(0.5) and r.a_EC == 100
    assert tune_threshold([(0.4, "entailment"), (0.4, "contradiction")]).a_EC == 50
    with pytest.raises(ValueError):
        tune_threshold([(0.4, "entailment")])


@settings(max_examples=200)
@given(st.lists(st.tuples(st.integers(-10, 10).map(lambda v: v / 10), st.sampled_from(["entailment", "contradiction"])),
                min_size=2, max_size=12).filter(lambda ps: len({lab for _, lab in ps}) == 2))
def test_tune_threshold_matches_grid_search(pairs):
    def a_ec(bt):
        ent = [s for s, lab in pairs if lab == "entailment"]
        con = [s for s, lab in pairs if lab == "contradiction"]
        return Fraction(sum(s >= bt for s in ent), len(ent)) + Fraction(sum(s < bt for s in con), len(con))

    # every partition is reached by a grid of width 0.05 over [-1.1, 1.1]
    grid = [i / 20 - 1.1 + 0.025 for i in range(45)]
    best = max(a_ec(t) for t in grid)
    got = tune_threshold(pairs)
    assert got.a_EC == pytest.approx(float(best) * 50)
    lower = [c for c in threshold_candidates(s for s, _ in pairs) if c < got.bt]
    assert all(a_ec(c) < best for c in lower)


class _StubNLI:
    """Encoder stand-in whose NLI head reads the label off a lookup."""

    def __init__(self, answers):
        self.answers, self.index = answers, {}

    def encode(self, texts):
        for t in texts:
            self.index.setdefault(t, len(self.index))
        return np.array([[self.index[t]] for t in texts], float)

    def nli_logits(self, P, H):
        lookup = {v: k for k, v in self.index.items()}
        return np.array([self.answers(lookup[int(p[0])], lookup[int(h[0])]) for p, h in zip(P, H)])


def test_nli_classification_accuracy():
    pairs = [NLIPair(f"p{i}", f"h{i}", LABELS[i % 3]) for i in range(30)]
    truth = {(p.premise, p.hypothesis): p.label_index for p in pairs}
    perfect = _StubNLI(lambda p, h: np.eye(3)[truth[(p, h)]])
    assert nli_classification_eval(perfect, pairs) == 100.0
    rng = np.random.default_rng(0)
    many = [NLIPair(f"p{i}", f"h{i}", LABELS[i % 3]) for i in range(3000)]
    noisy = _StubNLI(lambda p, h: rng.normal(size=3))
    assert nli_classification_eval(noisy, many) == pytest.approx(100 / 3, abs=2.5)
    with pytest.raises(ValueError):
        nli_classification_eval(perfect, [])


def test_metric_entcont_auc():
    scores = {"e1": 0.9, "e2": 0.7, "e3": 0.4, "e4": 0.4, "c1": 0.5, "c2": 0.4, "c3": 0.1, "c4": 0.8}
    pairs = [NLIPair("x", k, "entailment" if k[0] == "e" else "contradiction") for k in scores]
    scorer = lambda refs, cand: scores[cand]  # noqa: E731
    pos = [v for k, v in scores.items() if k[0] == "e"]
    neg = [v for k, v in scores.items() if k[0] == "c"]
    # 9 wins and 2 ties out of 16
    assert metric_entcont_auc(scorer, pairs) == float(_pairwise_auc(pos, neg)) == pytest.approx(10 / 16)
    assert metric_entcont_auc(lambda r, c: 1.0, pairs) == 0.5
    assert metric_entcont_auc(lambda r, c: scores[c] if c[0] == "e" else -1, pairs) == 1.0


# -- template recovery

def test_template_sentences():
    assert labels_to_template_report([LabelAssignment("pleural effusion", True, "right lung")]) == \
        "pleural effusion in right lung."
    assert labels_to_template_report([LabelAssignment("pleural effusion", False, "right lung")]) == \
        "no pleural effusion in right lung."
    assert labels_to_template_report([LabelAssignment("atelectasis", False),
                                      LabelAssignment("pleural effusion", True)]) == \
        "no atelectasis. pleural effusion."
    assert labels_to_template_report([]) == ""
    with pytest.raises(ValueError):
        labels_to_template_report([LabelAssignment("unicorn", True)])


def test_rule_annotator_recovers_fixture_labels(corpus):
    assert len(corpus.template_reports) >= 100
    for rec in corpus.template_reports:
        expected = gold_vector(LabelAssignment(**lab) for lab in rec["labels"])
        assert recovered_vector(rec["text"]) == expected, rec["text"]


def test_recovery_table(tmp_path, hash_encoder):
    from factline.extraction import RuleBasedExtractor
    from factline.metrics import get_scorer

    scorer = get_scorer("cxrfescore", extractor=RuleBasedExtractor(), encoder=hash_encoder)
    reports = ["No pleural effusion. Mild cardiomegaly.", "Stable opacity in the right lung."]
    table = recovery_eval(lambda r: r, reports, {"cxrfescore": scorer})
    assert table.means["cxrfescore"] == pytest.approx(1.0, abs=1e-6) and table.failures == 0
    assert recovery_eval(lambda r: r, [], {"cxrfescore": scorer}).rows == []

    def flaky(report):
        if "opacity" in report:
            raise RuntimeError("boom")
        return ["no pleural effusion", "mild cardiomegaly"]

    table = recovery_eval(flaky, reports, {"cxrfescore": scorer})
    assert table.failures == 1 and table.rows[1]["failure"] == "RuntimeError: boom"
    assert table.means["cxrfescore"] == pytest.approx(1.0, abs=1e-6)
    table.write_csv(tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "report,cxrfescore,failure"


def test_curves_svg(tmp_path):
    write_curves_svg(tmp_path / "c.svg", {"T": [(1, 0.5), (5, 0.7)], "T+NLI": [(1, 0.4), (5, 0.9)]}, "a@k")
    text = (tmp_path / "c.svg").read_text()
    assert text.startswith("<svg") and text.count("<polyline") == 2
