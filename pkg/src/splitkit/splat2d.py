"""Differentiable 2D Gaussian-splat image fitter.

This is the desk-scale harness that exercises the schedulers, the edge
pipeline, the densification controller, and the long-axis split end to
end. Rendering uses normalized weighted-sum blending: per pixel, each
splat contributes sigmoid(opacity) * exp(-0.5 * mahalanobis^2), a small
constant background weight keeps the denominator positive, and the color
is the weight-normalized mix. The blend is order-free and smooth, which
keeps the analytic gradients short.

Internals run in float64 regardless of the scene's storage dtype; the
per-pixel quadratic form is evaluated as one (N, 6) x (6, P) matrix
product over the monomial basis [x^2, xy, y^2, x, y, 1], and the backward
pass reduces through the same basis, so the per-iteration cost is a few
GEMMs plus one exp.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage

from .core import Scene2, sigmoid
from .densify_controller import DensifyEvent, DensifyStats, accumulate_grads, densify_step
from .edge_pipeline import importance_pipeline, sample_scores, to_grayscale
from .schedule import (DEFAULT_TOTAL_ITERS, DensifyConfig, ExpSchedule,
                       default_schedules, is_densify_step, lr_at)

BACKGROUND_WEIGHT = 1e-4
PSNR_CAP_DB = 100.0
PSNR_MSE_FLOOR = 1e-10

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


@dataclass(frozen=True)
class RenderParams:
    """Canvas geometry and splat truncation radius."""

    width: int
    height: int
    background: tuple = (0.0, 0.0, 0.0)
    footprint_cutoff: float = 3.0  # Mahalanobis radius beyond which weight is 0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("render dimensions must be positive")
        if not self.footprint_cutoff > 0.0:
            raise ValueError("footprint_cutoff must be positive")


@dataclass
class SceneGrads:
    """Loss gradients for every parameter group of a 2D scene."""

    positions: np.ndarray
    log_scales: np.ndarray
    thetas: np.ndarray
    opacity_logits: np.ndarray
    colors: np.ndarray


@lru_cache(maxsize=8)
def _pixel_basis(width: int, height: int) -> np.ndarray:
    """Monomial basis rows [x^2, xy, y^2, x, y, 1] per pixel, shape (6, W*H)."""
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    x = xs.ravel()
    y = ys.ravel()
    basis = np.stack([x * x, x * y, y * y, x, y, np.ones_like(x)])
    basis.setflags(write=False)
    return basis


def _quadratic_coeffs(scene):
    """Inverse-covariance entries (a, b, c) per splat, float64.

    Sigma = R(theta) diag(exp(2 ls)) R(theta)^T, so Sigma^-1 has entries
    a = l0 c^2 + l1 s^2, b = (l0 - l1) c s, c = l0 s^2 + l1 c^2 with
    l_k = exp(-2 ls_k).
    """
    ls = scene.log_scales.astype(np.float64)
    theta = scene.thetas.astype(np.float64)
    lam0 = np.exp(-2.0 * ls[:, 0])
    lam1 = np.exp(-2.0 * ls[:, 1])
    cos_t = np.cos(theta)
    sin_t = np.sin(theta)
    a = lam0 * cos_t ** 2 + lam1 * sin_t ** 2
    b = (lam0 - lam1) * cos_t * sin_t
    c = lam0 * sin_t ** 2 + lam1 * cos_t ** 2
    return a, b, c, lam0, lam1, cos_t, sin_t


def _forward(scene: Scene2, p: RenderParams):
    """Shared forward pass; returns the intermediates backward needs."""
    basis = _pixel_basis(p.width, p.height)
    mu = scene.positions.astype(np.float64)
    colors = scene.colors.astype(np.float64)
    opac = sigmoid(scene.opacity_logits.astype(np.float64))
    a, b, c, lam0, lam1, cos_t, sin_t = _quadratic_coeffs(scene)

    mx, my = mu[:, 0], mu[:, 1]
    rows = np.stack([
        a,
        2.0 * b,
        c,
        -2.0 * (a * mx + b * my),
        -2.0 * (b * mx + c * my),
        a * mx * mx + 2.0 * b * mx * my + c * my * my,
    ], axis=1)
    q = rows @ basis                                   # (N, P) squared Mahalanobis
    w = opac[:, None] * np.exp(-0.5 * q)
    w *= q <= p.footprint_cutoff ** 2
    denom = w.sum(axis=0) + BACKGROUND_WEIGHT
    bg = np.asarray(p.background, dtype=np.float64)
    blended = (colors.T @ w + BACKGROUND_WEIGHT * bg[:, None]) / denom
    return {
        "basis": basis, "mu": mu, "colors": colors, "opac": opac,
        "a": a, "b": b, "c": c, "lam0": lam0, "lam1": lam1,
        "cos_t": cos_t, "sin_t": sin_t,
        "w": w, "denom": denom, "blended": blended,
    }


def render(scene: Scene2, p: RenderParams) -> np.ndarray:
    """Render a scene to an (H, W, 3) float64 image in [0, 1]."""
    bg = np.asarray(p.background, dtype=np.float64)
    if scene.count == 0:
        return np.tile(bg, (p.height, p.width, 1))
    blended = _forward(scene, p)["blended"]
    return np.clip(blended.T.reshape(p.height, p.width, 3), 0.0, 1.0)


def loss_l2(rendered, target) -> float:
    """Mean squared error over all pixels and channels."""
    rendered = np.asarray(rendered, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if rendered.shape != target.shape:
        raise ValueError(f"image shapes differ: {rendered.shape} vs {target.shape}")
    diff = rendered - target
    return float(np.mean(diff * diff))


def _loss_and_grads(scene: Scene2, target, p: RenderParams):
    """One forward/backward pass: (loss, rendered image, SceneGrads)."""
    target = np.asarray(target, dtype=np.float64)
    if target.shape != (p.height, p.width, 3):
        raise ValueError("target shape does not match render params")
    n = scene.count
    if n == 0:
        image = render(scene, p)
        zero2 = np.zeros((0, 2))
        grads = SceneGrads(zero2, zero2.copy(), np.zeros(0), np.zeros(0),
                           np.zeros((0, 3)))
        return loss_l2(image, target), image, grads

    f = _forward(scene, p)
    basis, w, denom = f["basis"], f["w"], f["denom"]
    blended = f["blended"]                             # (3, P), pre-clip
    tgt = target.reshape(-1, 3).T                      # (3, P)
    n_terms = tgt.size

    diff = blended - tgt
    loss = float(np.mean(diff * diff))
    # clipping never binds: blended colors are convex mixes of values in [0,1]
    dldc = (2.0 / n_terms) * diff                      # dL/d(blended color)
    scaled = dldc / denom                              # (3, P)

    grad_colors = w @ scaled.T                         # (N, 3)
    per_pixel = (scaled * blended).sum(axis=0)         # (P,)
    grad_w = f["colors"] @ scaled - per_pixel          # (N, P)
    dldq = grad_w * (-0.5 * w)

    opac = f["opac"]
    grad_opac = (1.0 - opac) * (grad_w * w).sum(axis=1)

    m = dldq @ basis.T                                 # (N, 6) raw moments
    mx, my = f["mu"][:, 0], f["mu"][:, 1]
    m0 = m[:, 5]
    sx = m[:, 3] - mx * m0
    sy = m[:, 4] - my * m0
    sxx = m[:, 0] - 2.0 * mx * m[:, 3] + mx * mx * m0
    sxy = m[:, 1] - mx * m[:, 4] - my * m[:, 3] + mx * my * m0
    syy = m[:, 2] - 2.0 * my * m[:, 4] + my * my * m0

    a, b, c = f["a"], f["b"], f["c"]
    grad_mu = np.stack([-2.0 * (a * sx + b * sy),
                        -2.0 * (b * sx + c * sy)], axis=1)

    cos_t, sin_t = f["cos_t"], f["sin_t"]
    cc, ss, cs = cos_t ** 2, sin_t ** 2, cos_t * sin_t
    u00 = cc * sxx + 2.0 * cs * sxy + ss * syy         # sum dldq * u0^2
    u11 = ss * sxx - 2.0 * cs * sxy + cc * syy
    u01 = -cs * sxx + (cc - ss) * sxy + cs * syy       # sum dldq * u0 u1
    lam0, lam1 = f["lam0"], f["lam1"]
    grad_ls = np.stack([-2.0 * lam0 * u00, -2.0 * lam1 * u11], axis=1)
    grad_theta = 2.0 * (lam0 - lam1) * u01

    image = np.clip(blended.T.reshape(p.height, p.width, 3), 0.0, 1.0)
    return loss, image, SceneGrads(grad_mu, grad_ls, grad_theta, grad_opac,
                                   grad_colors)


def backward(scene: Scene2, target, p: RenderParams) -> SceneGrads:
    """Analytic gradients of loss_l2(render(scene), target) per parameter group."""
    return _loss_and_grads(scene, target, p)[2]


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1], capped at 100."""
    return psnr_from_mse(loss_l2(a, b))


def psnr_from_mse(mse: float) -> float:
    if mse < PSNR_MSE_FLOOR:
        return PSNR_CAP_DB
    return 10.0 * math.log10(1.0 / mse)


@lru_cache(maxsize=1)
def _ssim_kernel() -> np.ndarray:
    offsets = np.arange(SSIM_WINDOW, dtype=np.float64) - (SSIM_WINDOW - 1) / 2
    k1 = np.exp(-(offsets ** 2) / (2.0 * SSIM_SIGMA ** 2))
    kernel = np.outer(k1, k1)
    kernel /= kernel.sum()
    kernel.setflags(write=False)
    return kernel


def ssim(a, b) -> float:
    """Single-scale SSIM over valid 11x11 Gaussian windows (sigma 1.5).

    Color images are converted to grayscale first; both images must be at
    least as large as the window.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 3:
        a, b = to_grayscale(a), to_grayscale(b)
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}")

    kernel = _ssim_kernel()
    pad = SSIM_WINDOW // 2
    crop = (slice(pad, -pad), slice(pad, -pad))

    def wmean(img):
        return ndimage.correlate(img, kernel)[crop]

    mu_a, mu_b = wmean(a), wmean(b)
    var_a = wmean(a * a) - mu_a ** 2
    var_b = wmean(b * b) - mu_b ** 2
    cov = wmean(a * b) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(num / den))


def desk_scale_densify_config(total_iters: int, budget: int, **overrides) -> DensifyConfig:
    """Compress the default densify timetable to a shorter run.

    The interval and window scale with total_iters so the step count stays
    at 30 (e.g. total_iters=3000 gives interval 50, window [50, 1500]).
    """
    factor = total_iters / DEFAULT_TOTAL_ITERS
    cfg = {
        "interval": max(1, round(500 * factor)),
        "window_start": round(500 * factor),
        "window_end": round(15_000 * factor),
    }
    cfg.update(overrides)
    return DensifyConfig(budget=budget, **cfg)


@dataclass
class TrainConfig:
    """Everything one training run depends on, seeded and explicit."""

    total_iters: int = 3000
    seed: int = 0
    n_init: int = 64
    budget: int = 256
    densify_enabled: bool = True
    densify: DensifyConfig | None = None       # desk-scaled default when None
    scale_schedule: ExpSchedule | None = None  # default_schedules(total_iters)
    pos_schedule: ExpSchedule | None = None
    color_lr: float = 0.01
    opacity_lr: float = 0.05
    theta_lr: float = 0.005
    importance_sigma: float = 1.0
    footprint_cutoff: float = 3.0
    background: tuple = (0.0, 0.0, 0.0)
    loss: str = "l2"

    def __post_init__(self):
        if self.total_iters <= 0:
            raise ValueError("total_iters must be positive")
        for name in ("color_lr", "opacity_lr", "theta_lr"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.loss != "l2":
            raise ValueError(f"unsupported loss {self.loss!r}")

    def resolved(self):
        """Fill in derived schedule/densify defaults, returning the pieces."""
        scale, position = default_schedules(self.total_iters)
        scale = self.scale_schedule or scale
        position = self.pos_schedule or position
        densify = self.densify or desk_scale_densify_config(self.total_iters,
                                                            self.budget)
        return scale, position, densify


TraceRow = tuple  # (iter, loss, psnr, count, scale_lr, pos_lr)

TRACE_CSV_HEADER = "iter,loss,psnr,count,scale_lr,pos_lr"


@dataclass
class TrainResult:
    scene: Scene2
    trace: list
    events: list
    final_image: np.ndarray
    final_psnr: float


def _init_scene(target, cfg: TrainConfig, capacity: int) -> Scene2:
    """Seeded initialization: uniform positions, isotropic mid-size splats,
    colors taken from the target at each position."""
    h, w = target.shape[:2]
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_init
    pos = np.empty((n, 2))
    pos[:, 0] = rng.uniform(0.0, w - 1.0, n)
    pos[:, 1] = rng.uniform(0.0, h - 1.0, n)
    px = np.clip(np.floor(pos[:, 0] + 0.5).astype(int), 0, w - 1)
    py = np.clip(np.floor(pos[:, 1] + 0.5).astype(int), 0, h - 1)
    colors = target[py, px]
    log_scales = np.full((n, 2), math.log(w / 16.0))
    return Scene2(pos, log_scales, np.zeros(n), np.zeros(n), colors,
                  capacity=capacity)


def train(target, cfg: TrainConfig | None = None) -> TrainResult:
    """Fit splats to a target image with per-group scheduled gradient descent.

    Returns the final scene plus a per-iteration trace and the densify
    event log. Identical config and seed give bit-identical results.
    """
    cfg = cfg if cfg is not None else TrainConfig()
    target = np.asarray(target, dtype=np.float64)
    if target.ndim != 3 or target.shape[2] != 3:
        raise ValueError("target must be an (H, W, 3) image")
    h, w = target.shape[:2]
    scale_sched, pos_sched, densify_cfg = cfg.resolved()
    params = RenderParams(width=w, height=h, background=cfg.background,
                          footprint_cutoff=cfg.footprint_cutoff)

    scene = _init_scene(target, cfg, capacity=densify_cfg.budget)
    importance = importance_pipeline(target, cfg.importance_sigma)
    stats = DensifyStats(scene.count)
    trace: list[TraceRow] = []
    events: list[DensifyEvent] = []
    f32 = np.float32

    for step in range(cfg.total_iters):
        loss, _, grads = _loss_and_grads(scene, target, params)
        scale_lr = lr_at(scale_sched, step)
        pos_lr = lr_at(pos_sched, step)
        trace.append((step, loss, psnr_from_mse(loss), scene.count,
                      scale_lr, pos_lr))

        scene.positions = (scene.positions.astype(np.float64)
                           - pos_lr * grads.positions).astype(f32)
        scene.log_scales = (scene.log_scales.astype(np.float64)
                            - scale_lr * grads.log_scales).astype(f32)
        scene.thetas = (scene.thetas.astype(np.float64)
                        - cfg.theta_lr * grads.thetas).astype(f32)
        scene.opacity_logits = (scene.opacity_logits.astype(np.float64)
                                - cfg.opacity_lr * grads.opacity_logits).astype(f32)
        colors = (scene.colors.astype(np.float64) - cfg.color_lr * grads.colors)
        scene.colors = np.clip(colors, 0.0, 1.0).astype(f32)

        accumulate_grads(stats, np.hypot(grads.positions[:, 0],
                                         grads.positions[:, 1]))

        if cfg.densify_enabled and is_densify_step(densify_cfg, step):
            stats.edge_score = sample_scores(importance, scene.positions)
            events.append(densify_step(scene, stats, densify_cfg, step))

    final_image = render(scene, params)
    return TrainResult(scene=scene, trace=trace, events=events,
                       final_image=final_image,
                       final_psnr=psnr(final_image, target))
