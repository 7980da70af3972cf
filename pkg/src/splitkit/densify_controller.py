"""Densification control: who splits, when, and under what budget.

Between densify events the controller accumulates a running mean of each
primitive's positional-gradient norm. At an event it combines that signal
with per-primitive edge scores to rank candidates, except during the
warm-up steps where the gradient threshold is suspended and ranking uses
edge scores alone. Selection never exceeds the remaining budget headroom
or the per-step growth cap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Scene2, Scene3
from .las_split import las_split_batch, las_split_batch_2d
from .schedule import DensifyConfig, is_densify_step, is_warmup_step


class DensifyStats:
    """Per-primitive selection signals for one stretch between densify events.

    grad_norm is the running mean of the accumulated positional-gradient
    norms (zero until anything is accumulated); edge_score holds the last
    sampled structural importance in [0, 1].
    """

    def __init__(self, count: int):
        self._grad_sum = np.zeros(count, dtype=np.float64)
        self._accum_count = 0
        self.edge_score = np.zeros(count, dtype=np.float64)

    def __len__(self):
        return len(self._grad_sum)

    @property
    def grad_norm(self) -> np.ndarray:
        if self._accum_count == 0:
            return np.zeros_like(self._grad_sum)
        return self._grad_sum / self._accum_count

    def reset(self, count: int | None = None):
        """Clear the accumulator (and resize, e.g. after the scene grew)."""
        if count is None:
            count = len(self._grad_sum)
        self._grad_sum = np.zeros(count, dtype=np.float64)
        self._accum_count = 0
        self.edge_score = np.zeros(count, dtype=np.float64)


def accumulate_grads(stats: DensifyStats, step_grad_norms) -> DensifyStats:
    """Fold one iteration's per-primitive gradient norms into the running mean."""
    norms = np.asarray(step_grad_norms, dtype=np.float64)
    if norms.shape != stats._grad_sum.shape:
        raise ValueError(
            f"gradient norms length {norms.shape} does not match stats length "
            f"{stats._grad_sum.shape}")
    stats._grad_sum += norms
    stats._accum_count += 1
    return stats


def _eligible_mask(stats: DensifyStats, cfg: DensifyConfig, step: int) -> np.ndarray:
    if is_warmup_step(cfg, step):
        return np.ones(len(stats), dtype=bool)
    return stats.grad_norm > cfg.grad_threshold


def _combined_score(stats: DensifyStats, cfg: DensifyConfig, step: int) -> np.ndarray:
    if is_warmup_step(cfg, step) or cfg.policy == "edge":
        return stats.edge_score
    if cfg.policy == "grad":
        return stats.grad_norm
    return stats.edge_score * stats.grad_norm


def select_candidates(stats: DensifyStats, cfg: DensifyConfig, step: int,
                      headroom: int) -> np.ndarray:
    """Boolean mask of the primitives to split at this densify step.

    Eligible primitives (all of them during warm-up, otherwise those whose
    mean gradient norm exceeds the threshold) are ranked by combined score,
    descending with ties resolved toward lower indices, and the top
    min(#eligible, headroom, ceil(growth_cap * count)) are selected.
    """
    if headroom < 0:
        raise ValueError("headroom must be non-negative")
    count = len(stats)
    mask = np.zeros(count, dtype=bool)
    if headroom == 0 or count == 0:
        return mask
    eligible = np.flatnonzero(_eligible_mask(stats, cfg, step))
    if eligible.size == 0:
        return mask
    # tiny slack keeps exact products like 0.05 * 60 from ceiling to 4
    cap = math.ceil(cfg.growth_cap * count - 1e-9)
    take = min(eligible.size, headroom, max(cap, 0))
    if take <= 0:
        return mask
    scores = _combined_score(stats, cfg, step)[eligible]
    order = np.argsort(-scores, kind="stable")
    mask[eligible[order[:take]]] = True
    return mask


@dataclass(frozen=True)
class DensifyEvent:
    """Log record of one densify step."""

    step: int
    eligible: int
    split: int
    count_after: int

    def as_csv_row(self) -> str:
        return f"{self.step},{self.eligible},{self.split},{self.count_after}"


EVENT_CSV_HEADER = "step,eligible,split,count_after"


def densify_step(scene, stats: DensifyStats, cfg: DensifyConfig,
                 step: int) -> DensifyEvent:
    """Run one densify event on a 2D or 3D scene, mutating it in place.

    Selects candidates, long-axis-splits them, resets the gradient
    accumulator to the grown count, and returns the event record.
    """
    if not is_densify_step(cfg, step):
        raise ValueError(f"step {step} is not a densify step for this timetable")
    if len(stats) != scene.count:
        raise ValueError("stats length does not match scene count")
    headroom = scene.capacity - scene.count
    eligible = int(_eligible_mask(stats, cfg, step).sum())
    mask = select_candidates(stats, cfg, step, headroom)
    if isinstance(scene, Scene2):
        las_split_batch_2d(scene, mask, cfg.split_constants)
    elif isinstance(scene, Scene3):
        las_split_batch(scene, mask, cfg.split_constants)
    else:
        raise TypeError(f"unsupported scene type {type(scene).__name__}")
    stats.reset(scene.count)
    return DensifyEvent(step=step, eligible=eligible, split=int(mask.sum()),
                        count_after=scene.count)
