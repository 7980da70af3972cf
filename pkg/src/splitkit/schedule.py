"""Learning-rate schedules and the densification timetable.

Two exponential schedules drive training: the scale rate starts high
(rapid expansion) and decays by a factor of 10, and the positional rate
follows the same exponential shape. Densification happens on a fixed
interval inside a fixed window, with the first few steps forming a
warm-up during which gradient-threshold masking is suspended.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .las_split import SplitConstants

SCALE_LR_INIT = 0.020
SCALE_LR_FINAL = 0.002
POSITION_LR_INIT = 0.000128
POSITION_LR_FINAL = 0.0000128
DEFAULT_TOTAL_ITERS = 30_000

DENSIFY_INTERVAL = 500
DENSIFY_WINDOW_START = 500
DENSIFY_WINDOW_END = 15_000
WARMUP_STEPS = 3
DEFAULT_GRAD_THRESHOLD = 0.0002
DEFAULT_GROWTH_CAP = 0.05


@dataclass(frozen=True)
class ExpSchedule:
    """Exponential decay from lr_init at step_start to lr_final at step_end.

    lr(step) = lr_init * decay_gamma ** t with t the normalized position in
    [step_start, step_end], clamped at both ends so the schedule is total.
    lr_final must equal lr_init * decay_gamma.
    """

    lr_init: float
    lr_final: float
    decay_gamma: float
    step_start: int
    step_end: int

    def __post_init__(self):
        if self.lr_init <= 0.0 or self.lr_final <= 0.0:
            raise ValueError("learning rates must be positive")
        if not 0.0 < self.decay_gamma <= 1.0:
            raise ValueError("decay_gamma must be in (0, 1]")
        if self.step_start >= self.step_end:
            raise ValueError("step_start must precede step_end")
        if abs(self.lr_final - self.lr_init * self.decay_gamma) > 1e-9 * self.lr_init:
            raise ValueError("lr_final must equal lr_init * decay_gamma")

    @classmethod
    def from_endpoints(cls, lr_init, lr_final, step_start, step_end):
        """Build a schedule whose gamma is implied by the two endpoints."""
        if lr_init <= 0.0 or lr_final <= 0.0:
            raise ValueError("learning rates must be positive")
        return cls(lr_init, lr_final, lr_final / lr_init, step_start, step_end)


def lr_at(s: ExpSchedule, step: int) -> float:
    """Learning rate at a step; constant before step_start and after step_end."""
    t = (step - s.step_start) / (s.step_end - s.step_start)
    t = min(max(t, 0.0), 1.0)
    return s.lr_init * s.decay_gamma ** t


def default_schedules(total_iters: int = DEFAULT_TOTAL_ITERS):
    """The (scale, position) schedule pair, both spanning [0, total_iters]."""
    scale = ExpSchedule.from_endpoints(SCALE_LR_INIT, SCALE_LR_FINAL, 0, total_iters)
    position = ExpSchedule.from_endpoints(POSITION_LR_INIT, POSITION_LR_FINAL,
                                          0, total_iters)
    return scale, position


@dataclass
class DensifyConfig:
    """Everything the densification controller needs at one step.

    The default timetable performs exactly
    ``(window_end - window_start) // interval + 1 = 30`` densify steps, the
    first ``warmup_steps`` of which ignore the gradient threshold.
    ``budget`` caps the total primitive count; ``growth_cap`` limits one
    step's splits to ``ceil(growth_cap * count)``.
    """

    budget: int
    interval: int = DENSIFY_INTERVAL
    window_start: int = DENSIFY_WINDOW_START
    window_end: int = DENSIFY_WINDOW_END
    warmup_steps: int = WARMUP_STEPS
    grad_threshold: float = DEFAULT_GRAD_THRESHOLD
    growth_cap: float = DEFAULT_GROWTH_CAP
    policy: str = "product"  # product | edge | grad
    split_constants: SplitConstants = field(default_factory=SplitConstants)

    def __post_init__(self):
        if self.interval <= 0:
            raise ValueError("interval must be positive")
        if self.window_start > self.window_end:
            raise ValueError("window_start must not exceed window_end")
        if self.budget <= 0:
            raise ValueError("budget must be positive")
        if self.grad_threshold < 0.0:
            raise ValueError("grad_threshold must be non-negative")
        if self.policy not in ("product", "edge", "grad"):
            raise ValueError(f"unknown selection policy {self.policy!r}")

    @property
    def num_densify_steps(self) -> int:
        return (self.window_end - self.window_start) // self.interval + 1


def is_densify_step(cfg: DensifyConfig, step: int) -> bool:
    """True on the fixed interval inside [window_start, window_end]."""
    return (cfg.window_start <= step <= cfg.window_end
            and (step - cfg.window_start) % cfg.interval == 0)


def is_warmup_step(cfg: DensifyConfig, step: int) -> bool:
    """True on the first ``warmup_steps`` densify steps."""
    return (is_densify_step(cfg, step)
            and (step - cfg.window_start) // cfg.interval < cfg.warmup_steps)
