"""Long-axis splitting of Gaussian primitives.

A split replaces one Gaussian by two children displaced in opposite
directions along its longest principal axis. Scale shrinking happens
directly on the log-space storage values (adding ``ln alpha`` on the long
axis and ``ln gamma`` on the others equals multiplying the physical
lengths), while the spatial offset and the opacity reduction go through
the exp / sigmoid activations.

The batch entry point is written column-wise so that every masked parent
is processed independently; it is numerically identical to applying
:func:`las_split_one` per primitive because both run the same vectorized
kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Gaussian2, Gaussian3, Scene2, Scene3, logit, quat_to_rotmat, sigmoid


class BudgetError(RuntimeError):
    """Raised when a split would push a scene past its capacity."""


@dataclass(frozen=True)
class SplitConstants:
    """Shrink/opacity factors applied to both children of a split.

    alpha : long-axis shrink factor, in (0, 1)
    gamma_axis : shrink factor for the remaining axes, in (0, 1]
    beta : physical opacity reduction factor, in (0, 1]
    """

    alpha: float = 0.5
    gamma_axis: float = 0.85
    beta: float = 0.6

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        if not 0.0 < self.gamma_axis <= 1.0:
            raise ValueError("gamma_axis must be in (0, 1]")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError("beta must be in (0, 1]")


def principal_axis(log_scale):
    """Index of the largest log-scale; ties resolve to the lowest index.

    Accepts one vector or a batch (..., d); returns an int or an int array.
    """
    log_scale = np.asarray(log_scale)
    idx = np.argmax(log_scale, axis=-1)
    return int(idx) if idx.ndim == 0 else idx


def axis_displacement(rot, l_idx, s_phys):
    """Displacement of one child: ``s_phys`` times column ``l_idx`` of ``rot``.

    ``rot`` may be a flat (..., 9) row-major rotation matrix or (..., 3, 3);
    the column is gathered at flat offsets (l, l+3, l+6), so the whole
    transform costs three multiplications instead of a full matrix-vector
    product.
    """
    rot = np.asarray(rot)
    flat = rot.reshape(rot.shape[:-2] + (9,)) if rot.shape[-1] == 3 else rot
    l_idx = np.asarray(l_idx)
    offsets = l_idx[..., None] + np.array([0, 3, 6])
    column = np.take_along_axis(flat, offsets, axis=-1)
    return column * np.asarray(s_phys)[..., None]


def _split_common(log_scales, opacity_logits, c: SplitConstants):
    """Shared scale/opacity update for any dimensionality.

    Returns (offset magnitudes, long-axis indices, child log-scales, child
    opacity logits); children of one parent share all of these.
    """
    dtype = log_scales.dtype
    log_alpha = dtype.type(math.log(c.alpha))
    log_gamma = dtype.type(math.log(c.gamma_axis))
    beta = dtype.type(c.beta)

    l_idx = np.argmax(log_scales, axis=-1)
    rows = np.arange(len(log_scales))
    long_ls = log_scales[rows, l_idx]
    offset_mag = np.exp(long_ls) * dtype.type(c.alpha)

    child_ls = log_scales + log_gamma
    child_ls[rows, l_idx] = long_ls + log_alpha

    raw_opac = sigmoid(opacity_logits) * beta
    child_opac = logit(raw_opac).astype(dtype, copy=False)
    return offset_mag, l_idx, child_ls, child_opac


def _split3_columns(positions, log_scales, rotations, opacity_logits, c):
    offset_mag, l_idx, child_ls, child_opac = _split_common(log_scales, opacity_logits, c)
    rot = quat_to_rotmat(rotations)
    disp = axis_displacement(rot, l_idx, offset_mag)
    return positions + disp, positions - disp, child_ls, child_opac


def _split2_columns(positions, log_scales, thetas, opacity_logits, c):
    offset_mag, l_idx, child_ls, child_opac = _split_common(log_scales, opacity_logits, c)
    cos_t, sin_t = np.cos(thetas), np.sin(thetas)
    # columns of [[cos, -sin], [sin, cos]]: col0 = (cos, sin), col1 = (-sin, cos)
    column = np.where((l_idx == 0)[:, None],
                      np.stack([cos_t, sin_t], axis=-1),
                      np.stack([-sin_t, cos_t], axis=-1))
    disp = column * offset_mag[:, None]
    return positions + disp, positions - disp, child_ls, child_opac


def las_split_one(g: Gaussian3, c: SplitConstants = SplitConstants()):
    """Split one 3D Gaussian into its two children.

    The first child sits at the +offset position, the second at -offset;
    rotation and color are inherited unchanged.
    """
    pos_a, pos_b, child_ls, child_opac = _split3_columns(
        g.position[None], g.log_scale[None], g.rotation[None],
        np.asarray([g.opacity_logit]), c)
    dtype = g.position.dtype.type
    mk = lambda p: Gaussian3(p, child_ls[0].copy(), g.rotation.copy(),
                             child_opac[0], g.color.copy(), dtype=dtype)
    return mk(pos_a[0]), mk(pos_b[0])


def las_split_one_2d(g: Gaussian2, c: SplitConstants = SplitConstants()):
    """2D analogue of :func:`las_split_one`."""
    pos_a, pos_b, child_ls, child_opac = _split2_columns(
        g.position[None], g.log_scale[None], np.asarray([g.theta]),
        np.asarray([g.opacity_logit]), c)
    dtype = g.position.dtype.type
    mk = lambda p: Gaussian2(p, child_ls[0].copy(), g.theta, child_opac[0],
                             g.color.copy(), dtype=dtype)
    return mk(pos_a[0]), mk(pos_b[0])


def _check_mask(scene, mask):
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (scene.count,):
        raise ValueError(f"mask length {mask.shape} does not match scene count {scene.count}")
    n_split = int(mask.sum())
    if scene.count + n_split > scene.capacity:
        raise BudgetError(
            f"splitting {n_split} of {scene.count} primitives exceeds "
            f"capacity {scene.capacity}")
    return mask


def las_split_batch(scene: Scene3, mask, c: SplitConstants = SplitConstants()) -> Scene3:
    """Split every masked primitive of a 3D scene in place.

    Masked parents are overwritten by their +offset child; the -offset
    children are appended in ascending parent-index order. Raises
    :class:`BudgetError` if the result would exceed the scene capacity.
    """
    mask = _check_mask(scene, mask)
    if not mask.any():
        return scene
    idx = np.flatnonzero(mask)
    pos_a, pos_b, child_ls, child_opac = _split3_columns(
        scene.positions[idx], scene.log_scales[idx], scene.rotations[idx],
        scene.opacity_logits[idx], c)
    scene.positions[idx] = pos_a
    scene.log_scales[idx] = child_ls
    scene.opacity_logits[idx] = child_opac
    scene._append_columns(
        positions=pos_b, log_scales=child_ls,
        rotations=scene.rotations[idx], opacity_logits=child_opac,
        colors=scene.colors[idx])
    return scene.validate()


def las_split_batch_2d(scene: Scene2, mask, c: SplitConstants = SplitConstants()) -> Scene2:
    """2D analogue of :func:`las_split_batch`."""
    mask = _check_mask(scene, mask)
    if not mask.any():
        return scene
    idx = np.flatnonzero(mask)
    pos_a, pos_b, child_ls, child_opac = _split2_columns(
        scene.positions[idx], scene.log_scales[idx], scene.thetas[idx],
        scene.opacity_logits[idx], c)
    scene.positions[idx] = pos_a
    scene.log_scales[idx] = child_ls
    scene.opacity_logits[idx] = child_opac
    scene._append_columns(
        positions=pos_b, log_scales=child_ls, thetas=scene.thetas[idx],
        opacity_logits=child_opac, colors=scene.colors[idx])
    return scene.validate()
