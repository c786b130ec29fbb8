"""Interleaved multitask training with one optimizer step per accumulation window."""

from __future__ import annotations

import csv
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import torch

from factline.encoder.model import FactEncoder
from factline.nli_data import NLIPair, derive_ec_pools
from factline.sampling import Triplet
from factline.text import tokenize
from factline.training.losses import (
    TASKS,
    ec_quadruplet_loss,
    entity_relation_loss,
    nli_loss,
    sentence_decoding_loss,
    task_loss,
    triplet_bce_loss,
)
from factline.training.schedule import default_window, interleave_tasks, lr_schedule
from factline.vocab import BOS, CLS, EOS

logger = logging.getLogger(__name__)


class MissingDatasetError(ValueError):
    pass


@dataclass
class LabeledFact:
    text: str
    category: int
    health: int
    comparison: int
    observations: Sequence[int]
    anatomy: Sequence[int]


@dataclass
class ERExample:
    tokens: list[str]
    entities: list[tuple[int, int, str]]
    relations: list[tuple[int, int, str]] = field(default_factory=list)


@dataclass
class TrainConfig:
    lr_max: float = 8e-5
    lr_min: float = 1e-6
    cycle_epochs: int = 8
    batches_per_epoch: int = 100
    epochs: int = 8
    batch_size: int = 32
    task_weights: Optional[dict[str, float]] = None
    window: Optional[int] = None
    require_every_task_per_step: bool = True
    active_tasks: tuple[str, ...] = ("T",)
    weight_decay: float = 0.01
    er_negative_ratio: int = 4
    grad_clip: float = 1.0
    head_lr_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.active_tasks = tuple(self.active_tasks)
        if not self.lr_min < self.lr_max:
            raise ValueError("lr_min must be below lr_max")
        unknown = set(self.active_tasks) - set(TASKS)
        if unknown:
            raise ValueError(f"unknown tasks {sorted(unknown)}")
        if "T" not in self.active_tasks:
            raise ValueError("the triplet task T must always be active")
        if self.task_weights is not None and set(self.task_weights) != set(self.active_tasks):
            raise ValueError("task_weights must name exactly the active tasks")
        if self.head_lr_scale <= 0:
            raise ValueError("head_lr_scale must be positive")

    @property
    def weights(self) -> dict[str, float]:
        return dict(self.task_weights) if self.task_weights else {t: 1.0 for t in self.active_tasks}

    @property
    def accumulation_window(self) -> int:
        return self.window if self.window is not None else default_window(self.weights)

    @property
    def steps_per_epoch(self) -> int:
        return max(1, -(-self.batches_per_epoch // self.accumulation_window))

    def lr_at(self, step: int) -> float:
        return lr_schedule(step, self.lr_max, self.lr_min, self.cycle_epochs * self.steps_per_epoch)


@dataclass
class HistoryRow:
    step: int
    task: str
    loss: float
    lr: float


@dataclass
class TrainResult:
    encoder: FactEncoder
    history: list[HistoryRow]
    curves: dict[str, list[float]]
    grad_counts: dict[str, int]
    steps: int
    validation: list[dict] = field(default_factory=list)

    def write_history(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "task", "loss", "lr"])
            for r in self.history:
                w.writerow([r.step, r.task, f"{r.loss:.8f}", f"{r.lr:.8e}"])


class _Batches:
    """Reshuffling minibatch iterator over one task's dataset."""

    def __init__(self, items: Sequence, batch_size: int, seed: int):
        self.items, self.size = list(items), min(batch_size, len(items))
        self.rng = random.Random(seed)
        self.order: list[int] = []

    def next(self) -> list:
        if len(self.order) < self.size:
            fresh = list(range(len(self.items)))
            self.rng.shuffle(fresh)
            self.order += fresh
        idx, self.order = self.order[: self.size], self.order[self.size:]
        return [self.items[i] for i in idx]


def _required(task: str, datasets: Mapping) -> None:
    data = datasets.get(task)
    if task == "EC":
        if data is None and datasets.get("NLI"):
            data = derive_ec_pools(datasets["NLI"])
        if data is None or not data[0] or not data[1]:
            raise MissingDatasetError("EC needs non-empty entailment and contradiction pools")
        return
    if not data:
        raise MissingDatasetError(f"no dataset for active task {task}")


class _TaskRunner:
    def __init__(self, encoder: FactEncoder, cfg: TrainConfig, datasets: Mapping):
        self.enc, self.cfg = encoder, cfg
        self.rng = random.Random(f"{cfg.seed}:er")
        self.batches = {}
        for i, task in enumerate(cfg.active_tasks):
            if task == "EC":
                ent, con = datasets.get("EC") or derive_ec_pools(datasets["NLI"])
                self.batches["EC"] = (_Batches(ent, cfg.batch_size, cfg.seed * 101 + 11),
                                      _Batches(con, cfg.batch_size, cfg.seed * 101 + 12))
            else:
                self.batches[task] = _Batches(datasets[task], cfg.batch_size, cfg.seed * 101 + i)

    def loss(self, task: str) -> torch.Tensor:
        return getattr(self, f"_loss_{task}")()

    def _loss_T(self):
        batch: list[Triplet] = self.batches["T"].next()
        k = len(batch)
        e = self.enc.embed_tensor([t.anchor for t in batch] + [t.positive for t in batch] + [t.negative for t in batch])
        return triplet_bce_loss(e[:k], e[k:2 * k], e[2 * k:])

    def _loss_EC(self):
        ent_b, con_b = self.batches["EC"]
        ent, con = ent_b.next(), con_b.next()
        k = min(len(ent), len(con))
        ent, con = ent[:k], con[:k]
        e = self.enc.embed_tensor([p.premise for p in ent] + [p.hypothesis for p in ent]
                                  + [p.premise for p in con] + [p.hypothesis for p in con])
        return ec_quadruplet_loss(e[:k], e[k:2 * k], e[2 * k:3 * k], e[3 * k:])

    def _loss_NLI(self):
        batch: list[NLIPair] = self.batches["NLI"].next()
        k = len(batch)
        e = self.enc.embed_tensor([p.premise for p in batch] + [p.hypothesis for p in batch])
        labels = torch.tensor([p.label_index for p in batch])
        return nli_loss(self.enc.net.nli_logits(e[:k], e[k:]), labels)

    def _loss_C(self):
        batch: list[LabeledFact] = self.batches["C"].next()
        e = self.enc.embed_tensor([f.text for f in batch])
        outputs = {h: self.enc.net.classify(e, h) for h in ("category", "health", "comparison", "observations", "anatomy")}
        targets = {
            "category": torch.tensor([f.category for f in batch]),
            "health": torch.tensor([f.health for f in batch]),
            "comparison": torch.tensor([f.comparison for f in batch]),
            "observations": torch.tensor([list(f.observations) for f in batch], dtype=torch.float32),
            "anatomy": torch.tensor([list(f.anatomy) for f in batch], dtype=torch.float32),
        }
        return task_loss("C", outputs, targets)

    def _loss_SD(self):
        batch: list[str] = self.batches["SD"].next()
        e = self.enc.embed_tensor(batch)
        bos, eos, limit = self.enc.vocab.id(BOS), self.enc.vocab.id(EOS), self.enc.cfg.max_len
        rows = [[bos] + self.enc.vocab.encode(tokenize(t)[: limit - 1]) + [eos] for t in batch]
        width = max(map(len, rows))
        tgt = torch.tensor([r + [0] * (width - len(r)) for r in rows])
        return sentence_decoding_loss(self.enc.net.decoder_logits(e, tgt[:, :-1]), tgt[:, 1:])

    def _loss_ER(self):
        batch: list[ERExample] = self.batches["ER"].next()
        net, vocab, cfg = self.enc.net, self.enc.vocab, self.enc.cfg
        types = {t: i + 1 for i, t in enumerate(cfg.entity_types)}
        rels = {t: i for i, t in enumerate(cfg.relation_types)}
        span_logits, span_labels, rel_logits, rel_targets = [], [], [], []
        for ex in batch:
            toks = ex.tokens[: cfg.max_len - 1]
            h = net.states(torch.tensor([[vocab.id(CLS)] + vocab.encode(toks)]))[0][0]
            gold = {(s, e): types[t] for s, e, t in ex.entities if e <= len(toks)}
            pool = [(s, e) for s in range(len(toks)) for e in range(s + 1, min(s + cfg.span_max_width, len(toks)) + 1)
                    if (s, e) not in gold]
            negs = self.rng.sample(pool, min(len(pool), self.cfg.er_negative_ratio * max(1, len(gold))))
            spans = list(gold) + negs
            span_logits.append(net.span_logits(h, spans))
            span_labels += [gold.get(s, 0) for s in spans]
            ents = [(s, e) for s, e, _ in ex.entities]
            targets: dict[tuple[int, int], list[float]] = {}
            for i, j, r in ex.relations:
                targets.setdefault((i, j), [0.0] * len(rels))[rels[r]] = 1.0
            others = [(i, j) for i in range(len(ents)) for j in range(len(ents)) if i != j and (i, j) not in targets]
            pairs = list(targets) + self.rng.sample(others, min(len(others), self.cfg.er_negative_ratio * max(1, len(targets))))
            if pairs:
                rel_logits.append(net.relation_logits(h, [(ents[i], ents[j]) for i, j in pairs]))
                rel_targets += [targets.get(p, [0.0] * len(rels)) for p in pairs]
        rl = torch.cat(rel_logits) if rel_logits else None
        rt = torch.tensor(rel_targets) if rel_targets else None
        return entity_relation_loss(torch.cat(span_logits), torch.tensor(span_labels), rl, rt)


_BODY = ("tok.", "pos.", "encoder.", "norm.", "proj.")


def _param_groups(net: torch.nn.Module, head_scale: float) -> list[dict]:
    """Shared text encoder at the scheduled rate; randomly initialised task heads at ``head_scale`` times it."""
    body, heads = [], []
    for name, param in net.named_parameters():
        (body if name.startswith(_BODY) else heads).append(param)
    return [{"params": body, "scale": 1.0}, {"params": heads, "scale": head_scale}]


def train(cfg: TrainConfig, datasets: Mapping, encoder: FactEncoder,
          validate: Optional[Callable[[FactEncoder, int], dict]] = None) -> TrainResult:
    """Run ``cfg.epochs`` epochs of interleaved multitask training in place on ``encoder``.

    ``datasets`` maps task ids to: T -> triplets, C -> LabeledFact, SD -> texts,
    NLI -> NLIPair, EC -> (entailment pool, contradiction pool) or derived from NLI,
    ER -> ERExample.
    """
    for task in cfg.active_tasks:
        _required(task, datasets)
    torch.manual_seed(cfg.seed)
    runner = _TaskRunner(encoder, cfg, datasets)
    window = cfg.accumulation_window
    stream = interleave_tasks(cfg.weights, window, cfg.seed)
    opt = torch.optim.AdamW(_param_groups(encoder.net, cfg.head_lr_scale), lr=cfg.lr_max,
                            weight_decay=cfg.weight_decay)
    history: list[HistoryRow] = []
    curves: dict[str, list[float]] = {t: [] for t in cfg.active_tasks}
    grad_counts = {t: 0 for t in cfg.active_tasks}
    validation = []
    step = 0
    encoder.invalidate()
    for epoch in range(cfg.epochs):
        encoder.net.train()
        sums = {t: 0.0 for t in cfg.active_tasks}
        counts = {t: 0 for t in cfg.active_tasks}
        for _ in range(cfg.steps_per_epoch):
            lr = cfg.lr_at(step)
            for group in opt.param_groups:
                group["lr"] = lr * group["scale"]
            opt.zero_grad()
            seen = set()
            for _ in range(window):
                task = next(stream)
                loss = runner.loss(task)
                (loss / window).backward()
                value = float(loss.detach())
                history.append(HistoryRow(step, task, value, lr))
                sums[task] += value
                counts[task] += 1
                seen.add(task)
            if cfg.require_every_task_per_step and seen != set(cfg.active_tasks):
                raise RuntimeError(f"optimizer step {step} missed tasks {set(cfg.active_tasks) - seen}")
            for t in seen:
                grad_counts[t] += 1
            if cfg.grad_clip:
                torch.nn.utils.clip_grad_norm_(encoder.net.parameters(), cfg.grad_clip)
            opt.step()
            step += 1
        for t in cfg.active_tasks:
            curves[t].append(sums[t] / counts[t] if counts[t] else float("nan"))
        encoder.net.eval()
        encoder.invalidate()
        logger.info("epoch %d: %s", epoch + 1, ", ".join(f"{t}={curves[t][-1]:.4f}" for t in cfg.active_tasks))
        if validate is not None:
            validation.append({"epoch": epoch + 1, **validate(encoder, epoch + 1)})
    encoder.net.eval()
    encoder.invalidate()
    return TrainResult(encoder, history, curves, grad_counts, step, validation)


def labeled_fact(text: str, metadata, observations, anatomy) -> LabeledFact:
    return LabeledFact(text, metadata.category_index, metadata.health_index, metadata.comparison_index,
                       list(observations.bits), list(anatomy.bits))


__all__ = ["ERExample", "HistoryRow", "LabeledFact", "MissingDatasetError", "TrainConfig", "TrainResult",
           "labeled_fact", "train"]
