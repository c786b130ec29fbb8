"""Task losses. All functions are dtype-agnostic so gradients can be checked in float64."""

from __future__ import annotations

import torch
import torch.nn.functional as F

TASKS = ("T", "C", "SD", "NLI", "EC", "ER")


def _check_pair(x: torch.Tensor, y: torch.Tensor, what: str) -> None:
    if x.shape != y.shape:
        raise ValueError(f"{what}: shape mismatch {tuple(x.shape)} vs {tuple(y.shape)}")


def triplet_bce_loss(a: torch.Tensor, p: torch.Tensor, n: torch.Tensor) -> torch.Tensor:
    """Mean of log(1 + exp(-(<a,p> - <a,n>))): BCE with the similarity gap as logit and target 1."""
    _check_pair(a, p, "triplet")
    _check_pair(a, n, "triplet")
    delta = (a * p).sum(-1) - (a * n).sum(-1)
    return F.softplus(-delta).mean()


def ec_quadruplet_loss(ent_premise: torch.Tensor, ent_hyp: torch.Tensor, con_premise: torch.Tensor,
                       con_hyp: torch.Tensor) -> torch.Tensor:
    for x in (ent_hyp, con_premise, con_hyp):
        _check_pair(ent_premise, x, "quadruplet")
    logit = (ent_premise * ent_hyp).sum(-1) - (con_premise * con_hyp).sum(-1)
    return F.softplus(-logit).mean()


def classification_loss(logits: torch.Tensor, targets: torch.Tensor, multi_label: bool) -> torch.Tensor:
    if multi_label:
        _check_pair(logits, targets, "multi-label head")
        return F.binary_cross_entropy_with_logits(logits, targets.to(logits.dtype))
    if logits.dim() != 2 or targets.shape != logits.shape[:1]:
        raise ValueError(f"single-label head: logits {tuple(logits.shape)} vs targets {tuple(targets.shape)}")
    return F.cross_entropy(logits, targets)


def nli_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    if logits.dim() != 2 or logits.shape[1] != 3 or labels.shape != logits.shape[:1]:
        raise ValueError(f"NLI: logits {tuple(logits.shape)} vs labels {tuple(labels.shape)}")
    return F.cross_entropy(logits, labels)


def sentence_decoding_loss(logits: torch.Tensor, targets: torch.Tensor, pad_id: int = 0) -> torch.Tensor:
    """Teacher-forced token cross-entropy; ``logits`` is (B, T, V) and ``targets`` (B, T)."""
    if logits.dim() != 3 or targets.shape != logits.shape[:2]:
        raise ValueError(f"SD: logits {tuple(logits.shape)} vs targets {tuple(targets.shape)}")
    return F.cross_entropy(logits.reshape(-1, logits.size(-1)), targets.reshape(-1), ignore_index=pad_id)


def entity_relation_loss(span_logits: torch.Tensor, span_labels: torch.Tensor,
                         rel_logits: torch.Tensor | None = None, rel_targets: torch.Tensor | None = None) -> torch.Tensor:
    """Span cross-entropy (class 0 = not an entity) plus relation binary cross-entropy."""
    if span_logits.dim() != 2 or span_labels.shape != span_logits.shape[:1]:
        raise ValueError(f"ER spans: logits {tuple(span_logits.shape)} vs labels {tuple(span_labels.shape)}")
    loss = F.cross_entropy(span_logits, span_labels)
    if rel_logits is not None and rel_logits.numel():
        _check_pair(rel_logits, rel_targets, "ER relations")
        loss = loss + F.binary_cross_entropy_with_logits(rel_logits, rel_targets.to(rel_logits.dtype))
    return loss


def task_loss(task_id: str, outputs, targets) -> torch.Tensor:
    """Dispatch for the head-based tasks.

    C takes ``outputs``/``targets`` as dicts keyed by head name (with
    multi-label heads named ``observations`` and ``anatomy``) and averages
    the per-head losses; ER takes (span_logits, rel_logits) and
    (span_labels, rel_targets) tuples.
    """
    if task_id == "C":
        from factline.encoder.model import MULTI_LABEL_HEADS

        if set(outputs) != set(targets):
            raise ValueError("C: heads in outputs and targets differ")
        losses = [classification_loss(outputs[h], targets[h], h in MULTI_LABEL_HEADS) for h in sorted(outputs)]
        return torch.stack(losses).mean()
    if task_id == "SD":
        return sentence_decoding_loss(outputs, targets)
    if task_id == "NLI":
        return nli_loss(outputs, targets)
    if task_id == "ER":
        (span_logits, rel_logits), (span_labels, rel_targets) = outputs, targets
        return entity_relation_loss(span_logits, span_labels, rel_logits, rel_targets)
    raise ValueError(f"task_loss handles C, SD, NLI and ER; got {task_id!r}")
