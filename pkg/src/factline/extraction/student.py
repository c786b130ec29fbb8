"""Small sequence-to-sequence student trained on teacher fact lists.

A Transformer encoder-decoder with a copy gate: at every step the output
distribution mixes the generator softmax with the attention over source
tokens, which lets a small model reproduce sentence fragments it has only
seen a few times. Targets are the teacher's facts joined with `` ; ``;
an empty fact list is the literal token ``NONE``.
"""

from __future__ import annotations

import logging
import math
import random
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from factline.extraction.rules import finalize_facts
from factline.text import detokenize, tokenize
from factline.vocab import BOS, EOS, Vocab

logger = logging.getLogger(__name__)

FACT_SEP = ";"
EMPTY = "NONE"
FORMAT = "factline-student-extractor"


@dataclass
class ExtractionPair:
    sentence_text: str
    fact_list: list[str]


@dataclass
class StudentConfig:
    d_model: int = 128
    heads: int = 4
    layers: int = 2
    ff_dim: int = 256
    dropout: float = 0.1
    max_len: int = 64
    epochs: int = 40
    batch_size: int = 32
    lr: float = 1e-3
    warmup_steps: int = 50
    seed: int = 0


def target_tokens(facts: Sequence[str]) -> list[str]:
    if not facts:
        return [EMPTY]
    out: list[str] = []
    for i, fact in enumerate(facts):
        if i:
            out.append(FACT_SEP)
        out.extend(tokenize(fact))
    return out


def parse_target(tokens: Sequence[str]) -> list[str]:
    if list(tokens) == [EMPTY]:
        return []
    facts, current = [], []
    for tok in tokens:
        if tok == FACT_SEP:
            facts.append(current)
            current = []
        elif tok != EMPTY:
            current.append(tok)
    facts.append(current)
    return finalize_facts(detokenize(f) for f in facts if f)


class PointerSeq2Seq(nn.Module):
    def __init__(self, vocab_size: int, cfg: StudentConfig):
        super().__init__()
        d = cfg.d_model
        self.d = d
        self.emb = nn.Embedding(vocab_size, d, padding_idx=0)
        self.pos = nn.Embedding(cfg.max_len + 2, d)
        enc_layer = nn.TransformerEncoderLayer(d, cfg.heads, cfg.ff_dim, cfg.dropout, batch_first=True)
        dec_layer = nn.TransformerDecoderLayer(d, cfg.heads, cfg.ff_dim, cfg.dropout, batch_first=True)
        self.encoder = nn.TransformerEncoder(enc_layer, cfg.layers, enable_nested_tensor=False)
        self.decoder = nn.TransformerDecoder(dec_layer, cfg.layers)
        self.generator = nn.Linear(d, vocab_size)
        self.copy_q = nn.Linear(d, d)
        self.copy_k = nn.Linear(d, d)
        self.gate = nn.Linear(2 * d, 1)

    def _embed(self, ids: torch.Tensor) -> torch.Tensor:
        positions = torch.arange(ids.size(1), device=ids.device)
        return self.emb(ids) * math.sqrt(self.d) + self.pos(positions)

    def encode(self, src: torch.Tensor):
        src_pad = src.eq(0)
        return self.encoder(self._embed(src), src_key_padding_mask=src_pad), src_pad

    def output_probs(self, memory, src, src_pad, tgt_in):
        T = tgt_in.size(1)
        causal = torch.triu(torch.ones(T, T, dtype=torch.bool, device=src.device), diagonal=1)
        h = self.decoder(self._embed(tgt_in), memory, tgt_mask=causal,
                         tgt_key_padding_mask=tgt_in.eq(0), memory_key_padding_mask=src_pad)
        gen = F.softmax(self.generator(h), dim=-1)
        scores = self.copy_q(h) @ self.copy_k(memory).transpose(1, 2) / math.sqrt(self.d)
        scores = scores.masked_fill(src_pad.unsqueeze(1), float("-inf"))
        attn = F.softmax(scores, dim=-1)
        context = attn @ memory
        p_gen = torch.sigmoid(self.gate(torch.cat([h, context], dim=-1)))
        copy = torch.zeros_like(gen).scatter_add_(2, src.unsqueeze(1).expand(-1, T, -1), attn)
        return p_gen * gen + (1 - p_gen) * copy


class StudentExtractor:
    kind = "student"

    def __init__(self, model: PointerSeq2Seq | None = None, vocab: Vocab | None = None,
                 cfg: StudentConfig | None = None):
        self.model, self.vocab, self.cfg = model, vocab, cfg or StudentConfig()
        if self.model is not None:
            self.model.eval()

    @property
    def trained(self) -> bool:
        return self.model is not None

    def _require(self):
        if not self.trained:
            raise RuntimeError("student extractor has not been trained or loaded")

    def _src_ids(self, texts: Sequence[str]) -> torch.Tensor:
        rows = [self.vocab.encode(tokenize(t)[: self.cfg.max_len]) or [1] for t in texts]
        width = max(len(r) for r in rows)
        return torch.tensor([r + [0] * (width - len(r)) for r in rows], dtype=torch.long)

    @torch.no_grad()
    def decode_tokens(self, texts: Sequence[str]) -> list[list[str]]:
        self._require()
        src = self._src_ids(texts)
        memory, src_pad = self.model.encode(src)
        bos, eos = self.vocab.id(BOS), self.vocab.id(EOS)
        out = torch.full((len(texts), 1), bos, dtype=torch.long)
        done = torch.zeros(len(texts), dtype=torch.bool)
        for _ in range(self.cfg.max_len):
            probs = self.model.output_probs(memory, src, src_pad, out)[:, -1]
            nxt = probs.argmax(-1)
            nxt = torch.where(done, torch.zeros_like(nxt), nxt)
            out = torch.cat([out, nxt.unsqueeze(1)], dim=1)
            done |= nxt.eq(eos)
            if bool(done.all()):
                break
        results = []
        for row in out[:, 1:].tolist():
            toks = []
            for i in row:
                if i in (eos, 0):
                    break
                toks.append(self.vocab.itos[i])
            results.append(toks)
        return results

    def extract_many(self, texts: Sequence[str], batch_size: int = 64) -> list[list[str]]:
        self._require()
        results: list[list[str]] = [[] for _ in texts]
        todo = [i for i, t in enumerate(texts) if t.strip()]
        for start in range(0, len(todo), batch_size):
            idx = todo[start:start + batch_size]
            for i, toks in zip(idx, self.decode_tokens([texts[i] for i in idx])):
                results[i] = parse_target(toks)
        return results

    def extract(self, text: str) -> list[str]:
        return self.extract_many([text])[0]

    def save(self, path: str | Path) -> None:
        self._require()
        torch.save({"format": FORMAT, "version": 1, "config": asdict(self.cfg),
                    "vocab": self.vocab.itos, "state_dict": self.model.state_dict()}, path)

    @classmethod
    def load(cls, path: str | Path) -> "StudentExtractor":
        blob = torch.load(path, map_location="cpu", weights_only=True)
        if blob.get("format") != FORMAT:
            raise ValueError(f"{path} is not a student extractor checkpoint")
        cfg = StudentConfig(**blob["config"])
        vocab = Vocab(blob["vocab"])
        model = PointerSeq2Seq(len(vocab), cfg)
        model.load_state_dict(blob["state_dict"])
        return cls(model, vocab, cfg)


def train_student_extractor(pairs: Sequence[ExtractionPair], cfg: StudentConfig | None = None) -> StudentExtractor:
    cfg = cfg or StudentConfig()
    if not pairs:
        raise ValueError("cannot train a student extractor on an empty training set")
    torch.manual_seed(cfg.seed)
    rng = random.Random(cfg.seed)
    src_tokens = [tokenize(p.sentence_text)[: cfg.max_len] for p in pairs]
    tgt_tokens = [target_tokens(p.fact_list)[: cfg.max_len - 1] for p in pairs]
    seen = {t for toks in src_tokens + tgt_tokens for t in toks} - {FACT_SEP, EMPTY}
    vocab = Vocab.build([], extra=[FACT_SEP, EMPTY] + sorted(seen))
    model = PointerSeq2Seq(len(vocab), cfg)
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=0.01)
    sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda s: min(1.0, (s + 1) / max(1, cfg.warmup_steps)))
    bos, eos = vocab.id(BOS), vocab.id(EOS)
    order = list(range(len(pairs)))
    for epoch in range(cfg.epochs):
        model.train()
        rng.shuffle(order)
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            src_rows = [vocab.encode(src_tokens[i]) or [1] for i in batch]
            tgt_rows = [[bos] + vocab.encode(tgt_tokens[i]) + [eos] for i in batch]
            sw = max(map(len, src_rows))
            tw = max(map(len, tgt_rows))
            src = torch.tensor([r + [0] * (sw - len(r)) for r in src_rows])
            tgt = torch.tensor([r + [0] * (tw - len(r)) for r in tgt_rows])
            memory, src_pad = model.encode(src)
            probs = model.output_probs(memory, src, src_pad, tgt[:, :-1])
            gold = tgt[:, 1:]
            logp = torch.log(probs.gather(2, gold.unsqueeze(2)).squeeze(2) + 1e-12)
            mask = gold.ne(0)
            loss = -(logp * mask).sum() / mask.sum()
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), 1.0)
            opt.step()
            sched.step()
            total += loss.item() * len(batch)
        logger.debug("student epoch %d loss %.4f", epoch, total / len(pairs))
    return StudentExtractor(model, vocab, cfg)
