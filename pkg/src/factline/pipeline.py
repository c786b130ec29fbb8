"""Command implementations, run manifests and the fixture-scale training experiment.

Each command reads only the inputs it is given, writes new files under the
output directory and finishes by writing ``<command>.manifest.json``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
import torch

from factline import __version__
from factline.annotation import (
    GoldLabelVector,
    LabelAssignment,
    LLMAnnotator,
    RuleAnnotator,
    gold_vector,
    read_annotations,
    write_annotations,
)
from factline.cache import ReplyCache
from factline.config import Config
from factline.corpus import read_reports, read_sentences, report_sentences, write_sentences
from factline.encoder import EncoderConfig, FactEncoder
from factline.encoder.cache import write_embedding_cache
from factline.evaluation import (
    NLI_SIM_COLUMNS,
    RANKING_COLUMNS,
    nli_classification_eval,
    nli_pair_similarities,
    nli_row,
    nli_similarity_eval,
    ranking_row,
    recovered_vector,
    recovery_eval,
    report_jaccard_eval,
    rule_label_method,
    sentence_ranking_eval,
    triplet_accuracy,
    tune_threshold,
    write_csv,
    write_curves_svg,
)
from factline.extraction import (
    LLMExtractor,
    RuleBasedExtractor,
    StudentExtractor,
    extract_facts,
    read_pairs,
    train_student_extractor,
    write_facts,
)
from factline.fixtures import FixtureCorpus, generate_fixtures
from factline.metrics import get_scorer, read_score_pairs, score_pairs, write_scores
from factline.nli_data import NLIPair, read_nli
from factline.sampling import (
    RuleConfig,
    Triplet,
    build_aux_signals,
    build_fact_sets,
    read_triplets,
    sample_triplets,
    write_triplets,
)
from factline.training import ERExample, TrainConfig, labeled_fact, train

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING_INPUT = 3
EXIT_CONFIG = 4
EXIT_RUNTIME = 5

COMMANDS = ("ingest", "extract", "annotate", "sample", "train", "encode", "score", "eval", "recover", "fixtures")


class MissingInputError(FileNotFoundError):
    pass


# ------------------------------------------------------------------ manifests

def content_hash(path: str | Path) -> str:
    """SHA-256 of a file, or of the sorted (relative path, file hash) listing of a directory."""
    p = Path(path)
    h = hashlib.sha256()
    if p.is_dir():
        for child in sorted(q for q in p.rglob("*") if q.is_file()):
            h.update(str(child.relative_to(p)).encode() + b"\0" + content_hash(child).encode() + b"\n")
        return h.hexdigest()
    with open(p, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def atomic_write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class RunManifest:
    command: str
    config: dict
    inputs: dict[str, str]
    seed: int
    version: str = __version__
    outputs: list[str] = field(default_factory=list)
    started_at: float = 0.0
    finished_at: float = 0.0

    @property
    def wall_clock(self) -> float:
        return self.finished_at - self.started_at

    def to_json(self) -> str:
        obj = dataclasses.asdict(self)
        obj["wall_clock"] = self.wall_clock
        return json.dumps(obj, indent=2, sort_keys=True) + "\n"

    def write(self, directory: str | Path) -> Path:
        path = Path(directory) / f"{self.command}.manifest.json"
        atomic_write_text(path, self.to_json())
        return path


@dataclass
class RunContext:
    cfg: Config
    out: Path
    seed: int
    cache_dir: Optional[str] = None
    jobs: int = 1
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)

    def need(self, path: Optional[str | Path], what: str) -> Path:
        if path is None:
            raise MissingInputError(f"missing required input: {what}")
        p = Path(path)
        if not p.exists():
            raise MissingInputError(f"{what} not found: {p}")
        self.inputs[str(p)] = content_hash(p)
        return p

    def maybe(self, path: Optional[str | Path], what: str) -> Optional[Path]:
        return None if path is None else self.need(path, what)

    def output(self, name: str) -> Path:
        p = self.out / name
        self.outputs.append(str(p))
        return p

    def llm_client(self):
        from factline.llm import LLMClient

        s = self.cfg.llm
        cache = ReplyCache(self.cache_dir) if self.cache_dir else None
        return LLMClient(model=s.model, cache=cache, max_in_flight=max(s.max_in_flight, self.jobs),
                         retries=s.retries, backoff=s.backoff, timeout=s.timeout)


def run_command(name: str, cfg: Config, args: dict, out: str | Path, seed: Optional[int] = None,
                cache_dir: Optional[str] = None, jobs: int = 1) -> RunManifest:
    """Run one command; raises MissingInputError, ConfigError or a runtime error on failure."""
    if name not in COMMANDS:
        raise KeyError(f"unknown command {name!r}")
    seed = cfg.run.seed if seed is None else seed
    cfg = cfg.with_seed(seed)
    cache_dir = cache_dir or cfg.run.cache_dir or os.environ.get("FACTLINE_CACHE") or None
    jobs = max(1, jobs or cfg.run.jobs)
    out = Path(out)
    ctx = RunContext(cfg, out, seed, cache_dir, jobs)
    started = time.time()
    torch.set_num_threads(jobs)
    handler = _HANDLERS[name]
    # inputs are validated inside the handler before the output directory is touched
    handler(ctx, args)
    manifest = RunManifest(name, cfg.snapshot(), dict(sorted(ctx.inputs.items())), seed,
                           outputs=ctx.outputs, started_at=started, finished_at=time.time())
    manifest.write(out)
    return manifest


# ------------------------------------------------------------------ readers

def _jsonl(path: Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def read_texts(path: Path, split: Optional[str] = None) -> list[str]:
    """Texts from JSONL (key ``fact`` or ``text``) or a plain file with one text per line."""
    if path.suffix == ".jsonl":
        rows = _jsonl(path)
        if split is not None:
            rows = [r for r in rows if r.get("split") == split]
        texts = [r.get("fact", r.get("text", "")) for r in rows]
    else:
        texts = path.read_text(encoding="utf-8").splitlines()
    return list(dict.fromkeys(t.strip() for t in texts if t.strip()))


def read_paraphrases(path: Path) -> tuple[dict[str, list[str]], dict[str, str]]:
    groups, kinds = {}, {}
    for r in _jsonl(path):
        groups[r["text"]] = list(r["paraphrases"])
        kinds[r["text"]] = r.get("kind", "observation")
    return groups, kinds


def read_er(path: Path) -> list[ERExample]:
    return [ERExample(list(r["tokens"]), [tuple(e) for e in r["entities"]], [tuple(x) for x in r.get("relations", [])])
            for r in _jsonl(path)]


def read_labeled_sentences(path: Path) -> tuple[list[str], list[GoldLabelVector]]:
    rows = _jsonl(path)
    return [r["text"] for r in rows], [GoldLabelVector.from_record(r) for r in rows]


# ------------------------------------------------------------------ commands

def cmd_fixtures(ctx: RunContext, args: dict) -> None:
    corpus = generate_fixtures(ctx.seed)
    ctx.out.mkdir(parents=True, exist_ok=True)
    corpus.write(ctx.out)
    for p in sorted(ctx.out.iterdir()):
        if p.is_file() and not p.name.endswith(".manifest.json"):
            ctx.outputs.append(str(p))


def cmd_ingest(ctx: RunContext, args: dict) -> None:
    path = ctx.need(args.get("reports"), "reports JSONL (--reports)")
    sentences = [s for raw in read_reports(path) for s in report_sentences(raw)]
    ctx.out.mkdir(parents=True, exist_ok=True)
    n = write_sentences(sentences, ctx.output("sentences.jsonl"))
    logger.info("ingest: %d sentences", n)


def _extractor(ctx: RunContext, args: dict):
    kind = args.get("extractor") or ctx.cfg.extraction.extractor
    if kind == "rule_based":
        return RuleBasedExtractor()
    if kind == "student":
        model = ctx.maybe(args.get("student_model"), "student checkpoint (--student-model)")
        if model is not None:
            return StudentExtractor.load(model)
        pairs_path = ctx.need(args.get("train_pairs"), "student checkpoint or training pairs (--train-pairs)")
        student_cfg = dataclasses.replace(ctx.cfg.student, seed=ctx.seed)
        student = train_student_extractor(read_pairs(pairs_path), student_cfg)
        ctx.out.mkdir(parents=True, exist_ok=True)
        student.save(ctx.output("student.pt"))
        return student
    if kind == "llm":
        return LLMExtractor(ctx.llm_client())
    raise ValueError(f"unknown extractor {kind!r}")


def cmd_extract(ctx: RunContext, args: dict) -> None:
    if args.get("sentences"):
        sentences = read_sentences(ctx.need(args["sentences"], "sentences JSONL"))
    else:
        reports = ctx.need(args.get("reports"), "sentences (--sentences) or reports (--reports)")
        sentences = [s for raw in read_reports(reports) for s in report_sentences(raw)]
    extractor = _extractor(ctx, args)
    facts, failed = [], []
    if isinstance(extractor, LLMExtractor):
        from factline.extraction import Fact
        from factline.extraction.rules import finalize_facts

        per, failed_idx = extractor.extract_many([s.text for s in sentences])
        for s, fs in zip(sentences, per):
            if fs is not None:
                facts += [Fact(t, s, extractor.kind) for t in finalize_facts(fs)]
        failed = [sentences[i] for i in failed_idx]
    else:
        for s in sentences:
            facts += extract_facts(s, extractor)
    ctx.out.mkdir(parents=True, exist_ok=True)
    write_facts(facts, ctx.output("facts.jsonl"))
    if failed:
        write_sentences(failed, ctx.output("unextracted.jsonl"))
    logger.info("extract: %d facts from %d sentences (%d unextracted)", len(facts), len(sentences), len(failed))


def _annotator(ctx: RunContext, args: dict):
    kind = args.get("annotator") or ctx.cfg.annotation.annotator
    return RuleAnnotator() if kind == "rule" else LLMAnnotator(ctx.llm_client())


def cmd_annotate(ctx: RunContext, args: dict) -> None:
    facts = read_texts(ctx.need(args.get("facts"), "facts (--facts)"))
    annotator = _annotator(ctx, args)
    rows = [(f, *annotator.annotate(f)) for f in facts]
    ctx.out.mkdir(parents=True, exist_ok=True)
    write_annotations(rows, ctx.output("annotations.jsonl"))
    logger.info("annotate: %d facts", len(rows))


def cmd_sample(ctx: RunContext, args: dict) -> None:
    s = ctx.cfg.sampling
    facts = read_texts(ctx.need(args.get("facts"), "facts (--facts)"), args.get("split"))
    if not facts:
        raise MissingInputError("the facts file holds no facts")
    annotations = ctx.maybe(args.get("annotations"), "annotations")
    para_path = ctx.maybe(args.get("paraphrases"), "paraphrases")
    hard_path = ctx.maybe(args.get("hard_triplets"), "hard triplets")
    if 6 in s.rules and hard_path is None:
        raise MissingInputError("rule 6 is configured but no hard-triplet file was given (--hard-triplets)")
    rule_annotator = RuleAnnotator()
    known = read_annotations(annotations) if annotations else {}
    metadata = {f: (known[f][0] if f in known else rule_annotator.metadata(f)) for f in facts}
    paraphrases, kinds = read_paraphrases(para_path) if para_path else ({}, {})
    hard = [(t.anchor, t.positive, t.negative) for t in read_triplets(hard_path)] if hard_path else None
    fact_sets = build_fact_sets(facts, metadata, paraphrases)
    corpus = list(dict.fromkeys(facts + [p for f in facts for p in paraphrases.get(f, ())]))
    k = min(s.k_clusters, len(corpus))
    aux = build_aux_signals(corpus, k, ctx.seed, paraphrases={f: paraphrases[f] for f in facts if f in paraphrases},
                            paraphrase_kind=kinds, fact_sets=fact_sets, hard_triplets=hard)
    rule_cfg = dataclasses.replace(s.rule_config(ctx.seed), k_clusters=k)
    triplets: list[Triplet] = []
    for rule in s.rules:
        got = sample_triplets(rule, corpus, aux, rule_cfg, s.triplets_per_rule, ctx.seed)
        logger.info("sample: rule %d gave %d triplets", rule, len(got))
        triplets += got
    ctx.out.mkdir(parents=True, exist_ok=True)
    write_triplets(triplets, ctx.output("triplets.jsonl"))
    aux.save(ctx.output("aux"))


def _training_inputs(ctx: RunContext, args: dict, active: Sequence[str]) -> dict:
    """Resolve every dataset an active task needs before any work starts."""
    need = {
        "T": ("triplets", "triplet dataset (--triplets)"),
        "NLI": ("nli", "NLI dataset (--nli)"),
        "EC": ("nli", "NLI dataset (--nli)"),
        "C": ("annotations", "fact annotations (--annotations)"),
        "SD": ("sentences", "sentences for decoding (--sentences)"),
        "ER": ("er", "entity/relation examples (--er)"),
    }
    return {key: ctx.need(args.get(key), what) for key, what in (need[t] for t in active)}


def load_training_datasets(paths: dict) -> tuple[dict, list[str]]:
    datasets, texts = {}, []
    if "triplets" in paths:
        datasets["T"] = read_triplets(paths["triplets"])
        texts += [x for t in datasets["T"] for x in (t.anchor, t.positive, t.negative)]
    if "nli" in paths:
        pairs, _ = read_nli(paths["nli"])
        datasets["NLI"] = pairs
        texts += [x for p in pairs for x in (p.premise, p.hypothesis)]
    if "annotations" in paths:
        ann = read_annotations(paths["annotations"])
        datasets["C"] = [labeled_fact(f, *v) for f, v in ann.items()]
        texts += list(ann)
    if "sentences" in paths:
        datasets["SD"] = read_texts(paths["sentences"])
        texts += datasets["SD"]
    if "er" in paths:
        datasets["ER"] = read_er(paths["er"])
        texts += [" ".join(e.tokens) for e in datasets["ER"]]
    return datasets, texts


def cmd_train(ctx: RunContext, args: dict) -> None:
    tcfg = dataclasses.replace(ctx.cfg.training, seed=ctx.seed)
    paths = _training_inputs(ctx, args, tcfg.active_tasks)
    init = ctx.maybe(args.get("init"), "initial checkpoint")
    datasets, texts = load_training_datasets(paths)
    if init is not None:
        encoder = FactEncoder.load(init)
    else:
        encoder = FactEncoder.create(texts, dataclasses.replace(ctx.cfg.encoder), seed=ctx.seed)
    result = train(tcfg, datasets, encoder)
    ctx.out.mkdir(parents=True, exist_ok=True)
    result.write_history(ctx.output("history.csv"))
    write_curves_svg(ctx.output("loss_curves.svg"),
                     {t: list(enumerate(v, 1)) for t, v in result.curves.items()}, title="mean loss per epoch")
    final = ctx.output("encoder.pt")
    tmp = final.with_name(".encoder.pt.partial")
    encoder.save(tmp)
    os.replace(tmp, final)


def _load_encoder(ctx: RunContext, args: dict, fallback_texts: Iterable[str] = ()) -> FactEncoder:
    ckpt = ctx.maybe(args.get("checkpoint"), "encoder checkpoint")
    if ckpt is not None:
        return FactEncoder.load(ckpt)
    logger.warning("no --checkpoint given; using an untrained encoder with a vocabulary from the inputs")
    return FactEncoder.create(list(fallback_texts), dataclasses.replace(ctx.cfg.encoder), seed=ctx.seed)


def cmd_encode(ctx: RunContext, args: dict) -> None:
    ckpt = ctx.need(args.get("checkpoint"), "encoder checkpoint (--checkpoint)")
    texts = read_texts(ctx.need(args.get("texts"), "texts (--texts)"))
    encoder = FactEncoder.load(ckpt)
    ctx.out.mkdir(parents=True, exist_ok=True)
    path = ctx.output("embeddings.bin")
    write_embedding_cache(path, texts, encoder.encode(texts))
    ctx.outputs.append(str(path) + ".index.jsonl")


def _scorers(ctx: RunContext, names: Sequence[str], corpus_refs: Sequence[Sequence[str]], texts: Iterable[str],
             args: dict) -> dict:
    ev = ctx.cfg.evaluation
    out = {}
    for name in names:
        if name == "bleu":
            out[name] = get_scorer("bleu", max_n=ev.bleu_max_n)
        elif name == "cider_d":
            out[name] = get_scorer("cider_d", corpus=corpus_refs, sigma=ev.cider_sigma)
        elif name == "cxrfescore":
            out[name] = get_scorer("cxrfescore", extractor=RuleBasedExtractor(),
                                   encoder=_load_encoder(ctx, args, texts))
        else:
            out[name] = get_scorer(name)
    return out


def cmd_score(ctx: RunContext, args: dict) -> None:
    pairs = read_score_pairs(ctx.need(args.get("pairs"), "score pairs (--pairs)"))
    metrics = args.get("metric") or ["cxrfescore"]
    metrics = [metrics] if isinstance(metrics, str) else list(metrics)
    refs = [p["ref"] if isinstance(p["ref"], list) else [p["ref"]] for p in pairs]
    texts = [t for p, r in zip(pairs, refs) for t in [*r, p["cand"]]]
    scorers = _scorers(ctx, metrics, refs, _fact_texts(texts), args)
    ctx.out.mkdir(parents=True, exist_ok=True)
    write_scores(score_pairs(pairs, scorers), ctx.output("scores.csv"))


def _fact_texts(reports: Iterable[str]) -> list[str]:
    from factline.metrics import report_facts

    ex = RuleBasedExtractor()
    return [f for r in reports for f in report_facts(r, ex)]


def cmd_eval(ctx: RunContext, args: dict) -> None:
    ev = ctx.cfg.evaluation
    ckpt = ctx.need(args.get("checkpoint"), "encoder checkpoint (--checkpoint)")
    triplets = ctx.maybe(args.get("triplets"), "evaluation triplets")
    nli_val = ctx.maybe(args.get("nli_val"), "NLI threshold-tuning pairs")
    nli_test = ctx.maybe(args.get("nli_test"), "NLI evaluation pairs")
    labeled = ctx.maybe(args.get("labeled_sentences"), "labeled sentences")
    reports = ctx.maybe(args.get("reports"), "reports with tag bags")
    if not any((triplets, nli_test, labeled, reports)):
        raise MissingInputError("eval needs at least one of --triplets, --nli-test, --labeled-sentences, --reports")
    if nli_val is not None and nli_test is None:
        raise MissingInputError("--nli-val needs --nli-test")
    encoder = FactEncoder.load(ckpt)
    ctx.out.mkdir(parents=True, exist_ok=True)
    if triplets is not None:
        ts = read_triplets(triplets)
        rows = [[rule, sum(t.rule_id == rule for t in ts), triplet_accuracy(encoder, [t for t in ts if t.rule_id == rule])]
                for rule in sorted({t.rule_id for t in ts})]
        rows.append(["all", len(ts), triplet_accuracy(encoder, ts)])
        write_csv(ctx.output("triplet_accuracy.csv"), ("rule", "n", "accuracy"), rows)
    if nli_test is not None:
        test, _ = read_nli(nli_test)
        ec_test = [p for p in test if p.label != "neutral"]
        if nli_val is not None:
            val, _ = read_nli(nli_val)
            bt = tune_threshold(nli_pair_similarities(encoder, [p for p in val if p.label != "neutral"])).bt
        else:
            bt = tune_threshold(nli_pair_similarities(encoder, ec_test)).bt
        res = nli_similarity_eval(nli_pair_similarities(encoder, ec_test), bt)
        write_csv(ctx.output("nli_similarity.csv"), ("model", *NLI_SIM_COLUMNS), [nli_row("encoder", res)])
        write_csv(ctx.output("nli_classification.csv"), ("model", "accuracy"),
                  [["encoder", nli_classification_eval(encoder, test)]])
    if labeled is not None:
        sentences, labels = read_labeled_sentences(labeled)
        E = encoder.encode(sentences)
        sims = E @ E.T
        ks = tuple(sorted(set(ev.ks) | {1, 5, 10, 20}))
        res = sentence_ranking_eval(sims, sentences, labels, ks)
        write_csv(ctx.output("ranking.csv"), ("model", *RANKING_COLUMNS[:1],
                                              *[f"a@{k}" for k in ev.ks], *[f"c@{k}" for k in ev.ks]),
                  [ranking_row("encoder", res, ev.ks)])
        write_curves_svg(ctx.output("ranking_curves.svg"),
                         {"a@k": [(k, res.a_at_k[k]) for k in ks]}, title="mean average accuracy vs k")
    if reports is not None:
        rows = _jsonl(reports)
        texts = [r["text"] for r in rows]
        bags = [r.get("tags", []) for r in rows]
        facts_per = [[f for f in _fact_texts([t])] for t in texts]
        from factline.metrics import score_fact_lists

        n = len(texts)
        sims = np.zeros((n, n))
        for i in range(n):
            for j in range(i, n):
                sims[i, j] = sims[j, i] = score_fact_lists(facts_per[i], facts_per[j], encoder).score
        res = report_jaccard_eval(sims, texts, bags, ev.jaccard_ks)
        write_csv(ctx.output("jaccard.csv"), ("metric", *[f"j@{k}" for k in ev.jaccard_ks]),
                  [["cxrfescore", *[res[k] for k in ev.jaccard_ks]]])


def identity_method(report: str) -> str:
    return report


def fact_method(report: str) -> list[str]:
    from factline.metrics import report_facts

    return report_facts(report, RuleBasedExtractor())


RECOVERY_METHODS: dict[str, Callable[[str], object]] = {
    "rule": rule_label_method,
    "identity": identity_method,
    "facts": fact_method,
}


def cmd_recover(ctx: RunContext, args: dict) -> None:
    rows = _jsonl(ctx.need(args.get("reports"), "reports (--reports)"))
    method_name = args.get("method") or "rule"
    if method_name not in RECOVERY_METHODS:
        raise ValueError(f"unknown recovery method {method_name!r}")
    texts = [r["text"] for r in rows]
    names = args.get("metric") or ["bleu", "rouge_l", "cider_d", "cxrfescore"]
    scorers = _scorers(ctx, names, [[t] for t in texts] or [[""]], _fact_texts(texts), args)
    table = recovery_eval(RECOVERY_METHODS[method_name], texts, scorers)
    ctx.out.mkdir(parents=True, exist_ok=True)
    table.write_csv(ctx.output("recovery.csv"))
    if rows and all("labels" in r for r in rows):
        hits = []
        for r in rows:
            gold = gold_vector([LabelAssignment(a["observation"], bool(a["present"]), a.get("location"))
                                for a in r["labels"]])
            hits.append([r.get("report_id", ""), int(recovered_vector(r["text"]) == gold)])
        write_csv(ctx.output("round_trip.csv"), ("report_id", "exact_match"), hits)


_HANDLERS: dict[str, Callable[[RunContext, dict], None]] = {
    "ingest": cmd_ingest,
    "extract": cmd_extract,
    "annotate": cmd_annotate,
    "sample": cmd_sample,
    "train": cmd_train,
    "encode": cmd_encode,
    "score": cmd_score,
    "eval": cmd_eval,
    "recover": cmd_recover,
    "fixtures": cmd_fixtures,
}


# ---------------------------------------------------- fixture-scale training

# Settings for the fixture-scale multitask experiment. The schedule shape is
# the default one; the learning rate and batch count are raised because the
# encoder starts from random weights, and the EC/NLI weights are lowered
# because at full weight the polarity signal crowds out finding identity.
TOY_TRAINING = TrainConfig(
    lr_max=1e-3, lr_min=1e-5, cycle_epochs=8, batches_per_epoch=500, epochs=8, batch_size=32,
    active_tasks=("T", "C", "EC", "NLI"), task_weights={"T": 4.0, "C": 1.0, "EC": 0.5, "NLI": 0.5},
)
TOY_TRAIN_TRIPLETS = {1: 4000, 3: 4000}
TOY_TEST_TRIPLETS = 500


@dataclass
class ToySplit:
    texts: list[str]
    aux: object


def fixture_split(corpus: FixtureCorpus, split: str, k_clusters: int, seed: int) -> ToySplit:
    """Sampling signals restricted to one split's facts and their paraphrases."""
    annotator = RuleAnnotator()
    facts = corpus.split_facts(split)
    para = {f: corpus.paraphrases[f] for f in facts}
    meta = {f: annotator.metadata(f) for f in facts}
    texts = list(dict.fromkeys(facts + [p for f in facts for p in para[f]]))
    aux = build_aux_signals(texts, k_clusters, seed, paraphrases=para,
                            fact_sets=build_fact_sets(facts, meta, para))
    return ToySplit(texts, aux)


@dataclass
class ToyReport:
    untrained: dict[str, float]
    trained: dict[str, float]
    per_epoch: list[dict]
    seconds: float


def identity_entailment_rate(encoder: FactEncoder, texts: Sequence[str]) -> float:
    """Share of (x, x) pairs the NLI head labels as entailment."""
    E = torch.as_tensor(encoder.encode(texts), dtype=torch.float32)
    with torch.no_grad():
        pred = encoder.net.nli_logits(E, E).argmax(dim=-1)
    return float((pred == 0).double().mean())


def toy_metrics(encoder: FactEncoder, tests: dict[int, list[Triplet]], nli_val: Sequence[NLIPair],
                nli_test: Sequence[NLIPair], identity_texts: Sequence[str] = ()) -> dict[str, float]:
    out = {f"rule{r}": triplet_accuracy(encoder, ts) for r, ts in tests.items()}
    if identity_texts:
        out["nli_identity"] = identity_entailment_rate(encoder, identity_texts)
    val = [p for p in nli_val if p.label != "neutral"]
    test = [p for p in nli_test if p.label != "neutral"]
    bt = tune_threshold(nli_pair_similarities(encoder, val)).bt
    res = nli_similarity_eval(nli_pair_similarities(encoder, test), bt)
    out.update(a_EC=res.a_EC, a_E=res.a_E, a_C=res.a_C, bt=res.bt)
    return out


def toy_training_run(seed: int = 0, cfg: TrainConfig = TOY_TRAINING,
                     train_triplets: Optional[dict[int, int]] = None, per_epoch: bool = False) -> ToyReport:
    """Multitask training on the fixture train split, evaluated on held-out facts and NLI pairs.

    Triplet accuracy is measured on rule 1 and rule 3 triplets sampled from
    the test split; the NLI threshold is tuned on the val split and applied
    to the test split.
    """
    started = time.time()
    corpus = generate_fixtures(seed)
    rc = RuleConfig(seed=seed)
    train_split = fixture_split(corpus, "train", 60, seed)
    test_split = fixture_split(corpus, "test", 15, seed)
    triplets = []
    for rule, n in (train_triplets or TOY_TRAIN_TRIPLETS).items():
        triplets += sample_triplets(rule, train_split.texts, train_split.aux, rc, n, seed)
    tests = {r: sample_triplets(r, test_split.texts, test_split.aux, rc, TOY_TEST_TRIPLETS, seed + 1) for r in (1, 3)}
    annotator = RuleAnnotator()
    labeled = [labeled_fact(t, *annotator.annotate(t)) for t in train_split.texts]
    nli = corpus.nli["train"]
    vocab_texts = train_split.texts + [x for p in nli for x in (p.premise, p.hypothesis)]
    encoder = FactEncoder.create(vocab_texts, EncoderConfig(), seed=seed)
    held_out = corpus.split_facts("test")
    evaluate = lambda e: toy_metrics(e, tests, corpus.nli["val"], corpus.nli["test"], held_out)
    untrained = evaluate(encoder)
    logger.info("untrained: %s", untrained)
    cfg = dataclasses.replace(cfg, seed=seed)
    result = train(cfg, {"T": triplets, "C": labeled, "NLI": nli}, encoder,
                   validate=(lambda e, ep: evaluate(e)) if per_epoch else None)
    trained = evaluate(encoder)
    logger.info("trained: %s", trained)
    return ToyReport(untrained, trained, result.validation, time.time() - started)
