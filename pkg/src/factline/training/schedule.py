from __future__ import annotations

import math
import random
from typing import Iterator, Mapping


def lr_schedule(global_step: int, lr_max: float, lr_min: float, cycle_steps: int) -> float:
    """Log-space sawtooth: lr_max at the start of every cycle, decaying geometrically toward lr_min."""
    if not 0 < lr_min < lr_max:
        raise ValueError("need 0 < lr_min < lr_max")
    if cycle_steps <= 0:
        raise ValueError("cycle_steps must be positive")
    f = (global_step % cycle_steps) / cycle_steps
    return lr_max * (lr_min / lr_max) ** f


def default_window(task_weights: Mapping[str, float]) -> int:
    total = sum(task_weights.values())
    return max(len(task_weights), math.ceil(total / min(task_weights.values()) - 1e-9))


def interleave_tasks(task_weights: Mapping[str, float], window: int, seed: int = 0) -> Iterator[str]:
    """Endless task stream in windows of ``window`` draws.

    Every window holds each task once; the spare slots are drawn with
    probabilities proportional to ``window * p_t - 1`` so the long-run share
    of task t is exactly p_t. That requires ``window * min(p) >= 1``.
    """
    tasks = list(task_weights)
    if not tasks:
        raise ValueError("no active tasks")
    if any(w <= 0 for w in task_weights.values()):
        raise ValueError("task weights must be positive")
    if window < len(tasks):
        raise ValueError(f"window {window} is smaller than the number of tasks ({len(tasks)})")
    total = sum(task_weights.values())
    p = [task_weights[t] / total for t in tasks]
    if window * min(p) < 1 - 1e-9:
        raise ValueError(f"window {window} too small to honour weights; need at least {default_window(task_weights)}")
    extra = [max(0.0, window * pt - 1) for pt in p]
    rng = random.Random(seed)
    spare = window - len(tasks)
    while True:
        block = list(tasks)
        if spare:
            block += rng.choices(tasks, weights=extra, k=spare)
        rng.shuffle(block)
        yield from block
