"""Fact encoder network and its task heads."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Protocol, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from factline.text import tokenize
from factline.vocab import BOS, CLS, EOS, Vocab

logger = logging.getLogger(__name__)

FORMAT = "factline-encoder"
EMBED_DIM = 128
DECODER_DIM = 256
NLI_LABELS = ("entailment", "neutral", "contradiction")
ENTITY_TYPES = ("anatomy", "observation_present", "observation_absent", "observation_uncertain")
RELATION_TYPES = ("located_at", "modify", "suggestive_of")


class EmbeddingBackend(Protocol):
    """Anything that maps texts to unit-norm rows; the toy encoder is one implementation."""

    def encode(self, texts: Sequence[str]) -> np.ndarray: ...


@dataclass
class EncoderConfig:
    vocab_size: int = 0
    d_model: int = 128
    layers: int = 2
    heads: int = 4
    ff_dim: int = 256
    dropout: float = 0.1
    proj_dim: int = EMBED_DIM
    decoder_dim: int = DECODER_DIM
    decoder_heads: int = 1
    decoder_layers: int = 1
    max_len: int = 48
    n_category: int = 5
    n_health: int = 4
    n_comparison: int = 15
    n_observations: int = 74
    n_anatomy: int = 38
    n_nli: int = 3
    entity_types: tuple = ENTITY_TYPES
    relation_types: tuple = RELATION_TYPES
    span_max_width: int = 8
    width_dim: int = 25

    def __post_init__(self):
        self.entity_types = tuple(self.entity_types)
        self.relation_types = tuple(self.relation_types)
        if self.proj_dim != EMBED_DIM:
            raise ValueError("projection dimension must be 128")
        if (self.decoder_dim, self.decoder_heads, self.decoder_layers) != (DECODER_DIM, 1, 1):
            raise ValueError("sentence decoder must be 256-wide with one head and one layer")

    @property
    def head_sizes(self) -> dict[str, int]:
        return {"category": self.n_category, "health": self.n_health, "comparison": self.n_comparison,
                "observations": self.n_observations, "anatomy": self.n_anatomy}


MULTI_LABEL_HEADS = frozenset({"observations", "anatomy"})


@dataclass
class EntityGraph:
    entities: list[tuple[tuple[int, int], str]] = field(default_factory=list)
    relations: list[tuple[int, int, str]] = field(default_factory=list)


class EncoderNet(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.d_model
        self.tok = nn.Embedding(cfg.vocab_size, d, padding_idx=0)
        self.pos = nn.Embedding(cfg.max_len, d)
        layer = nn.TransformerEncoderLayer(d, cfg.heads, cfg.ff_dim, cfg.dropout, batch_first=True)
        self.encoder = nn.TransformerEncoder(layer, cfg.layers, enable_nested_tensor=False)
        self.norm = nn.LayerNorm(d)
        self.proj = nn.Linear(d, cfg.proj_dim)
        self.heads = nn.ModuleDict({k: nn.Linear(cfg.proj_dim, n) for k, n in cfg.head_sizes.items()})
        self.nli = nn.Linear(3 * cfg.proj_dim, cfg.n_nli)
        # sentence decoder
        h = cfg.decoder_dim
        self.sd_memory = nn.Linear(cfg.proj_dim, h)
        self.sd_tok = nn.Embedding(cfg.vocab_size, h, padding_idx=0)
        self.sd_pos = nn.Embedding(cfg.max_len + 1, h)
        dec = nn.TransformerDecoderLayer(h, cfg.decoder_heads, h, cfg.dropout, batch_first=True)
        self.sd_decoder = nn.TransformerDecoder(dec, cfg.decoder_layers)
        self.sd_out = nn.Linear(h, cfg.vocab_size)
        # span / relation extraction
        self.width = nn.Embedding(cfg.span_max_width + 1, cfg.width_dim)
        span_dim = d + cfg.width_dim
        self.span_cls = nn.Linear(span_dim + d, len(cfg.entity_types) + 1)
        self.rel_cls = nn.Linear(2 * span_dim + d, len(cfg.relation_types))

    def states(self, ids: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        pad = ids.eq(0)
        pos = torch.arange(ids.size(1), device=ids.device)
        x = self.tok(ids) * math.sqrt(self.cfg.d_model) + self.pos(pos)
        return self.norm(self.encoder(x, src_key_padding_mask=pad)), pad

    def embed(self, ids: torch.Tensor) -> torch.Tensor:
        h, _ = self.states(ids)
        return F.normalize(self.proj(h[:, 0]), dim=-1)

    def classify(self, emb: torch.Tensor, head_id: str) -> torch.Tensor:
        if head_id not in self.heads:
            raise KeyError(f"unknown head {head_id!r}; expected one of {sorted(self.heads)}")
        return self.heads[head_id](emb)

    def nli_logits(self, p: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        if p.shape[-1] != self.cfg.proj_dim or h.shape[-1] != self.cfg.proj_dim:
            raise ValueError(f"NLI head expects {self.cfg.proj_dim}-D embeddings")
        return self.nli(torch.cat([p, h, p * h], dim=-1))

    def decoder_logits(self, emb: torch.Tensor, tgt_in: torch.Tensor) -> torch.Tensor:
        T = tgt_in.size(1)
        memory = self.sd_memory(emb).unsqueeze(1)
        pos = torch.arange(T, device=tgt_in.device)
        x = self.sd_tok(tgt_in) + self.sd_pos(pos)
        causal = torch.triu(torch.ones(T, T, dtype=torch.bool, device=tgt_in.device), diagonal=1)
        return self.sd_out(self.sd_decoder(x, memory, tgt_mask=causal, tgt_key_padding_mask=tgt_in.eq(0)))

    def span_repr(self, h: torch.Tensor, start: int, end: int) -> torch.Tensor:
        """Max-pooled token states (1-based positions after [CLS]) plus a width embedding."""
        pooled = h[start + 1:end + 1].max(dim=0).values
        width = self.width(torch.tensor(min(end - start, self.cfg.span_max_width)))
        return torch.cat([pooled, width])

    def span_logits(self, h: torch.Tensor, spans: Sequence[tuple[int, int]]) -> torch.Tensor:
        reps = torch.stack([torch.cat([self.span_repr(h, s, e), h[0]]) for s, e in spans])
        return self.span_cls(reps)

    def relation_logits(self, h: torch.Tensor, pairs: Sequence[tuple[tuple[int, int], tuple[int, int]]]) -> torch.Tensor:
        rows = []
        for (s1, e1), (s2, e2) in pairs:
            lo, hi = min(e1, e2), max(s1, s2)
            ctx = h[lo + 1:hi + 1].max(dim=0).values if hi > lo else torch.zeros_like(h[0])
            rows.append(torch.cat([self.span_repr(h, s1, e1), self.span_repr(h, s2, e2), ctx]))
        return self.rel_cls(torch.stack(rows))


class FactEncoder:
    """Tokenizer + network. Inference results are memoised per text until :meth:`invalidate`."""

    def __init__(self, net: EncoderNet, vocab: Vocab):
        self.net, self.vocab, self.cfg = net, vocab, net.cfg
        self._memo: dict[str, np.ndarray] = {}
        self.net.eval()

    @classmethod
    def create(cls, texts: Sequence[str], cfg: Optional[EncoderConfig] = None, seed: int = 0,
               min_freq: int = 1) -> "FactEncoder":
        vocab = Vocab.build(texts, min_freq=min_freq)
        cfg = cfg or EncoderConfig()
        cfg.vocab_size = len(vocab)
        torch.manual_seed(seed)
        return cls(EncoderNet(cfg), vocab)

    def invalidate(self) -> None:
        self._memo.clear()

    # -- tokenization
    def tokens(self, text: str) -> list[str]:
        toks = tokenize(text)
        if len(toks) > self.cfg.max_len - 1:
            logger.warning("truncating %d-token text to %d tokens", len(toks), self.cfg.max_len - 1)
            toks = toks[: self.cfg.max_len - 1]
        return toks

    def ids(self, texts: Sequence[str]) -> torch.Tensor:
        cls_id = self.vocab.id(CLS)
        rows = [[cls_id] + self.vocab.encode(self.tokens(t)) for t in texts]
        width = max(len(r) for r in rows)
        return torch.tensor([r + [0] * (width - len(r)) for r in rows], dtype=torch.long)

    def embed_tensor(self, texts: Sequence[str]) -> torch.Tensor:
        """Differentiable embeddings in the network's current mode."""
        return self.net.embed(self.ids(texts))

    # -- inference
    @torch.no_grad()
    def encode(self, texts: Sequence[str], batch_size: int = 256) -> np.ndarray:
        todo = sorted({t for t in texts if t not in self._memo}, key=lambda t: (len(self.tokens(t)), t))
        if todo:
            was_training = self.net.training
            self.net.eval()
            # group by token length so no row is ever padded
            groups: dict[int, list[str]] = {}
            for t in todo:
                groups.setdefault(len(self.tokens(t)), []).append(t)
            for group in groups.values():
                for start in range(0, len(group), batch_size):
                    chunk = group[start:start + batch_size]
                    out = self.net.embed(self.ids(chunk)).double().numpy()
                    out /= np.linalg.norm(out, axis=1, keepdims=True)
                    for t, v in zip(chunk, out):
                        v.setflags(write=False)
                        self._memo[t] = v
            self.net.train(was_training)
        if not texts:
            return np.zeros((0, self.cfg.proj_dim))
        return np.stack([self._memo[t] for t in texts])

    @torch.no_grad()
    def classify(self, emb, head_id: str) -> np.ndarray:
        return self.net.classify(torch.as_tensor(np.ascontiguousarray(emb), dtype=torch.float32), head_id).double().numpy()

    @torch.no_grad()
    def nli_logits(self, premise_emb, hyp_emb) -> np.ndarray:
        p = torch.as_tensor(np.ascontiguousarray(premise_emb), dtype=torch.float32)
        h = torch.as_tensor(np.ascontiguousarray(hyp_emb), dtype=torch.float32)
        return self.net.nli_logits(p, h).double().numpy()

    @torch.no_grad()
    def decode_sentence(self, embedding, max_len: int = 32) -> list[str]:
        self.net.eval()
        emb = torch.as_tensor(np.ascontiguousarray(embedding), dtype=torch.float32).reshape(1, -1)
        bos, eos = self.vocab.id(BOS), self.vocab.id(EOS)
        seq = [bos]
        limit = min(max_len, self.cfg.max_len)
        for _ in range(limit):
            logits = self.net.decoder_logits(emb, torch.tensor([seq]))[0, -1]
            nxt = int(logits.argmax())
            if nxt == eos:
                break
            seq.append(nxt)
        return self.vocab.decode(seq[1:])

    @torch.no_grad()
    def extract_graph(self, tokens: Sequence[str], span_max_width: Optional[int] = None, threshold: float = 0.5,
                      rel_threshold: float = 0.5) -> EntityGraph:
        self.net.eval()
        tokens = list(tokens)[: self.cfg.max_len - 1]
        graph = EntityGraph()
        if not tokens:
            return graph
        w = min(span_max_width or self.cfg.span_max_width, self.cfg.span_max_width)
        ids = torch.tensor([[self.vocab.id(CLS)] + self.vocab.encode(tokens)])
        h = self.net.states(ids)[0][0]
        spans = [(s, e) for s in range(len(tokens)) for e in range(s + 1, min(s + w, len(tokens)) + 1)]
        probs = F.softmax(self.net.span_logits(h, spans), dim=-1)
        best_p, best_c = probs[:, 1:].max(dim=-1)
        candidates = sorted(((float(p), spans[i], int(c)) for i, (p, c) in enumerate(zip(best_p, best_c))
                             if float(p) >= threshold), key=lambda x: (-x[0], x[1]))
        taken: list[tuple[int, int]] = []
        for _, (s, e), c in candidates:
            if any(s < te and ts < e for ts, te in taken):
                continue
            taken.append((s, e))
            graph.entities.append(((s, e), self.cfg.entity_types[c]))
        graph.entities.sort()
        pairs = [(i, j) for i in range(len(graph.entities)) for j in range(len(graph.entities)) if i != j]
        if pairs:
            rel = torch.sigmoid(self.net.relation_logits(
                h, [(graph.entities[i][0], graph.entities[j][0]) for i, j in pairs]))
            for (i, j), row in zip(pairs, rel):
                for r, p in enumerate(row):
                    if float(p) >= rel_threshold:
                        graph.relations.append((i, j, self.cfg.relation_types[r]))
        return graph

    # -- persistence
    def save(self, path: str | Path) -> None:
        torch.save({"format": FORMAT, "version": 1, "config": asdict(self.cfg), "vocab": self.vocab.itos,
                    "state_dict": self.net.state_dict()}, path)

    @classmethod
    def load(cls, path: str | Path) -> "FactEncoder":
        blob = torch.load(path, map_location="cpu", weights_only=True)
        if blob.get("format") != FORMAT:
            raise ValueError(f"{path} is not a fact encoder checkpoint")
        net = EncoderNet(EncoderConfig(**blob["config"]))
        net.load_state_dict(blob["state_dict"])
        return cls(net, Vocab(blob["vocab"]))
