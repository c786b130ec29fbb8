import csv
import json
import logging
import os
from pathlib import Path

import pytest

from factline.cache import ReplyCache, cache_key
from factline.cli import main
from factline.pipeline import (
    EXIT_CONFIG,
    EXIT_MISSING_INPUT,
    EXIT_OK,
    EXIT_RUNTIME,
    EXIT_USAGE,
    content_hash,
)


def _listing(directory):
    return {p.name: p.read_bytes() for p in sorted(Path(directory).iterdir())
            if p.is_file() and not p.name.endswith(".manifest.json")}


@pytest.fixture(scope="module")
def fx(tmp_path_factory):
    out = tmp_path_factory.mktemp("fx")
    assert main(["fixtures", "--seed", "7", "--out", str(out)]) == EXIT_OK
    return out


def test_fixtures_are_byte_identical_per_seed(fx, tmp_path):
    assert main(["fixtures", "--seed", "7", "--out", str(tmp_path)]) == EXIT_OK
    assert _listing(tmp_path) == _listing(fx)
    assert {"reports.jsonl", "nli_train.jsonl", "hard_triplets.jsonl", "summary.json"} <= set(_listing(fx))


def test_manifest_records_the_run(fx):
    manifest = json.loads((fx / "fixtures.manifest.json").read_text())
    assert manifest["command"] == "fixtures" and manifest["seed"] == 7
    assert manifest["config"]["training"]["seed"] == 7
    assert manifest["config"]["sampling"]["margin_cos"] == 0.1
    assert str(fx / "reports.jsonl") in manifest["outputs"]
    assert manifest["wall_clock"] >= 0 and manifest["version"]


def test_ingest_and_extract_do_not_touch_inputs(fx, tmp_path):
    reports = fx / "reports.jsonl"
    before = content_hash(reports)
    assert main(["ingest", "--reports", str(reports), "--out", str(tmp_path / "in")]) == EXIT_OK
    assert main(["extract", "--sentences", str(tmp_path / "in" / "sentences.jsonl"),
                 "--out", str(tmp_path / "ex")]) == EXIT_OK
    assert content_hash(reports) == before
    manifest = json.loads((tmp_path / "ex" / "extract.manifest.json").read_text())
    assert list(manifest["inputs"].values()) == [content_hash(tmp_path / "in" / "sentences.jsonl")]
    facts = [json.loads(line) for line in (tmp_path / "ex" / "facts.jsonl").read_text().splitlines()]
    assert facts and set(facts[0]) == {"sentence_id", "fact", "extractor"}


def test_annotate_writes_one_row_per_fact(tmp_path):
    facts = tmp_path / "facts.txt"
    facts.write_text("no pleural effusion\nmild cardiomegaly\nno pleural effusion\n")
    assert main(["annotate", "--facts", str(facts), "--out", str(tmp_path)]) == EXIT_OK
    assert len((tmp_path / "annotations.jsonl").read_text().splitlines()) == 2


def test_score_identity_pairs(tmp_path):
    pairs = tmp_path / "pairs.jsonl"
    texts = ["No pleural effusion. Mild cardiomegaly.", "Stable opacity in the right lung.", "Lungs are clear."]
    pairs.write_text("".join(json.dumps({"ref": t, "cand": t}) + "\n" for t in texts))
    assert main(["score", "--metric", "cxrfescore", "--metric", "bleu", "--pairs", str(pairs),
                 "--out", str(tmp_path)]) == EXIT_OK
    with open(tmp_path / "scores.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 6
    assert all(abs(float(r["score"]) - 1.0) <= 1e-6 for r in rows)


def test_train_without_triplets_is_a_missing_input(tmp_path):
    assert main(["train", "--out", str(tmp_path / "tr")]) == EXIT_MISSING_INPUT
    assert not (tmp_path / "tr" / "encoder.pt").exists()
    assert not list(tmp_path.glob("tr/*.pt*"))


def test_sample_rule6_without_hard_triplets(fx, tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[sampling]\nrules = 6\n")
    assert main(["sample", "--config", str(cfg), "--facts", str(fx / "facts.jsonl"),
                 "--out", str(tmp_path)]) == EXIT_MISSING_INPUT


def test_exit_codes_are_distinct(tmp_path, fx):
    with pytest.raises(SystemExit) as err:
        main(["frobnicate"])
    assert err.value.code == EXIT_USAGE
    bad = tmp_path / "bad.ini"
    bad.write_text("[training]\nlr_max = fast\n")
    assert main(["fixtures", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["fixtures", "--config", str(tmp_path / "absent.ini"), "--out", str(tmp_path)]) == EXIT_CONFIG
    broken = tmp_path / "broken.pt"
    broken.write_bytes(b"not a checkpoint")
    assert main(["encode", "--checkpoint", str(broken), "--texts", str(fx / "facts.jsonl"),
                 "--out", str(tmp_path)]) == EXIT_RUNTIME
    assert len({EXIT_USAGE, EXIT_MISSING_INPUT, EXIT_CONFIG, EXIT_RUNTIME}) == 4


def test_sample_train_encode_round(fx, tmp_path):
    cfg = tmp_path / "fast.ini"
    cfg.write_text("[sampling]\nrules = 1, 2\ntriplets_per_rule = 40\nk_clusters = 20\n"
                   "[training]\nbatches_per_epoch = 3\nepochs = 1\nbatch_size = 8\n")
    common = ["--config", str(cfg), "--seed", "1"]
    assert main(["sample", *common, "--facts", str(fx / "facts.jsonl"), "--split", "train",
                 "--paraphrases", str(fx / "paraphrases.jsonl"), "--out", str(tmp_path / "sm")]) == EXIT_OK
    triplets = (tmp_path / "sm" / "triplets.jsonl").read_text().splitlines()
    assert len(triplets) == 80
    assert main(["train", *common, "--triplets", str(tmp_path / "sm" / "triplets.jsonl"),
                 "--out", str(tmp_path / "tr")]) == EXIT_OK
    history = (tmp_path / "tr" / "history.csv").read_text().splitlines()
    assert history[0] == "step,task,loss,lr" and len(history) == 4
    assert main(["encode", "--checkpoint", str(tmp_path / "tr" / "encoder.pt"), "--texts",
                 str(fx / "facts.jsonl"), "--out", str(tmp_path / "enc")]) == EXIT_OK
    assert (tmp_path / "enc" / "embeddings.bin").stat().st_size > 0


def test_recover_identity_and_round_trip(fx, tmp_path):
    reports = fx / "template_reports.jsonl"
    assert main(["recover", "--reports", str(reports), "--method", "identity", "--metric", "cxrfescore",
                 "--out", str(tmp_path)]) == EXIT_OK
    rows = list(csv.reader(open(tmp_path / "recovery.csv")))
    assert rows[-1][0] == "mean" and abs(float(rows[-1][1]) - 1.0) <= 1e-6
    hits = list(csv.DictReader(open(tmp_path / "round_trip.csv")))
    assert len(hits) == 200 and all(h["exact_match"] == "1" for h in hits)


# -- reply cache

def test_cache_round_trip_and_miss(tmp_path):
    cache = ReplyCache(tmp_path)
    blob = os.urandom(1 << 20)
    key = cache_key("op", "tpl", "model", "input")
    assert cache.get(key) is None and key not in cache
    cache.put(key, blob)
    assert cache.get(key) == blob
    cache.put(key, b"other")
    assert ReplyCache(tmp_path).get(key) == blob
    assert cache.get_entry(key).created_at > 0


def test_truncated_entry_is_a_miss_with_warning(tmp_path, caplog):
    cache = ReplyCache(tmp_path)
    key = cache_key("op", "tpl", "model", "x")
    cache.put(key, b"a reply that will be cut short")
    entry = next(tmp_path.rglob("*.entry"))
    entry.write_bytes(entry.read_bytes()[:-5])
    with caplog.at_level(logging.WARNING):
        assert cache.get(key) is None
    assert "corrupted" in caplog.text
    entry.write_bytes(b"garbage without header")
    assert cache.get(key) is None
