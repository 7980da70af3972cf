"""Shared primitive types and scalar math helpers.

Gaussians carry raw (storage-space) parameters: log-scales instead of
physical axis lengths and an opacity logit instead of an opacity. Physical
values are recovered through ``exp`` / ``sigmoid`` only where needed.
Storage is float32; every helper here preserves the dtype it is given so
float64 oracles can reuse the same code paths.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def sigmoid(x):
    """Logistic function 1 / (1 + e^-x). Saturates to 0/1 at extreme x."""
    x = np.asarray(x)
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def logit(p):
    """Inverse of :func:`sigmoid`, ln(p / (1 - p)). Requires 0 < p < 1."""
    p = np.asarray(p)
    if not np.all((p > 0.0) & (p < 1.0)):
        raise ValueError("logit requires all values strictly inside (0, 1)")
    return np.log(p / (1.0 - p))


def quat_to_rotmat(q):
    """Convert unit quaternions (w, x, y, z) to rotation matrices.

    Accepts shape (..., 4) and returns (..., 3, 3), row-major. Quaternions
    whose norm strays more than 1e-4 from 1 are renormalized; a zero or
    non-finite quaternion is rejected.
    """
    q = np.asarray(q)
    if q.shape[-1] != 4:
        raise ValueError("quaternion must have 4 components (w, x, y, z)")
    norm = np.sqrt((q * q).sum(axis=-1))
    if not np.all(np.isfinite(norm)) or np.any(norm == 0.0):
        raise ValueError("zero or non-finite quaternion")
    if np.any(np.abs(norm - 1.0) > 1e-4):
        q = q / norm[..., None]
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    rot = np.empty(q.shape[:-1] + (3, 3), dtype=q.dtype)
    rot[..., 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    rot[..., 0, 1] = 2.0 * (x * y - w * z)
    rot[..., 0, 2] = 2.0 * (x * z + w * y)
    rot[..., 1, 0] = 2.0 * (x * y + w * z)
    rot[..., 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    rot[..., 1, 2] = 2.0 * (y * z - w * x)
    rot[..., 2, 0] = 2.0 * (x * z - w * y)
    rot[..., 2, 1] = 2.0 * (y * z + w * x)
    rot[..., 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return rot


def _as_vector(v, n, dtype):
    out = np.asarray(v, dtype=dtype).reshape(n)
    if not np.all(np.isfinite(out)):
        raise ValueError("non-finite component")
    return out


@dataclass(eq=False)
class Gaussian3:
    """One anisotropic 3D Gaussian primitive in storage space.

    position : (3,) world units
    log_scale : (3,) natural log of the physical axis lengths
    rotation : (4,) unit quaternion (w, x, y, z), normalized on construction
    opacity_logit : scalar, opacity in logit space
    color : (3,) RGB in [0, 1]
    """

    position: np.ndarray
    log_scale: np.ndarray
    rotation: np.ndarray
    opacity_logit: float
    color: np.ndarray
    dtype: np.dtype = field(default=np.float32, repr=False)

    def __post_init__(self):
        self.position = _as_vector(self.position, 3, self.dtype)
        self.log_scale = _as_vector(self.log_scale, 3, self.dtype)
        rot = _as_vector(self.rotation, 4, self.dtype)
        norm = float(np.sqrt((rot.astype(np.float64) ** 2).sum()))
        if norm == 0.0:
            raise ValueError("zero quaternion")
        self.rotation = (rot / rot.dtype.type(np.sqrt((rot * rot).sum()))
                         if abs(norm - 1.0) > 1e-6 else rot)
        self.opacity_logit = self.dtype(self.opacity_logit)
        if not np.isfinite(self.opacity_logit):
            raise ValueError("non-finite opacity logit")
        self.color = _as_vector(self.color, 3, self.dtype)


@dataclass(eq=False)
class Gaussian2:
    """2D analogue of :class:`Gaussian3` with a scalar rotation angle."""

    position: np.ndarray
    log_scale: np.ndarray
    theta: float
    opacity_logit: float
    color: np.ndarray
    dtype: np.dtype = field(default=np.float32, repr=False)

    def __post_init__(self):
        self.position = _as_vector(self.position, 2, self.dtype)
        self.log_scale = _as_vector(self.log_scale, 2, self.dtype)
        self.theta = self.dtype(self.theta)
        self.opacity_logit = self.dtype(self.opacity_logit)
        if not (np.isfinite(self.theta) and np.isfinite(self.opacity_logit)):
            raise ValueError("non-finite theta or opacity logit")
        self.color = _as_vector(self.color, 3, self.dtype)


class _ColumnScene:
    """Structure-of-arrays storage shared by the 2D and 3D scenes.

    All attribute arrays always have length ``count``; ``capacity`` is the
    hard budget that growth may never exceed. Bulk operations work on whole
    columns so there is no per-primitive indirection.
    """

    _columns: tuple

    def __init__(self, capacity):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)

    @property
    def count(self) -> int:
        return len(getattr(self, self._columns[0]))

    def validate(self):
        n = self.count
        if n > self.capacity:
            raise ValueError(f"count {n} exceeds capacity {self.capacity}")
        for name in self._columns:
            col = getattr(self, name)
            if len(col) != n:
                raise ValueError(f"column {name} has length {len(col)} != {n}")
        return self

    def _append_columns(self, **cols):
        n_new = self.count + len(next(iter(cols.values())))
        if n_new > self.capacity:
            raise ValueError(f"append would exceed capacity {self.capacity}")
        for name in self._columns:
            old = getattr(self, name)
            setattr(self, name, np.concatenate([old, cols[name].astype(old.dtype)]))


class Scene3(_ColumnScene):
    """Growable column-wise collection of :class:`Gaussian3`."""

    _columns = ("positions", "log_scales", "rotations", "opacity_logits", "colors")

    def __init__(self, positions, log_scales, rotations, opacity_logits, colors,
                 capacity, dtype=np.float32):
        super().__init__(capacity)
        self.positions = np.asarray(positions, dtype=dtype).reshape(-1, 3)
        self.log_scales = np.asarray(log_scales, dtype=dtype).reshape(-1, 3)
        self.rotations = np.asarray(rotations, dtype=dtype).reshape(-1, 4)
        self.opacity_logits = np.asarray(opacity_logits, dtype=dtype).reshape(-1)
        self.colors = np.asarray(colors, dtype=dtype).reshape(-1, 3)
        self.validate()

    @classmethod
    def empty(cls, capacity, dtype=np.float32):
        z = np.zeros((0, 3), dtype=dtype)
        return cls(z, z, np.zeros((0, 4), dtype=dtype), np.zeros(0, dtype=dtype),
                   z, capacity, dtype=dtype)

    @classmethod
    def from_gaussians(cls, gaussians, capacity, dtype=np.float32):
        return cls(
            np.array([g.position for g in gaussians], dtype=dtype).reshape(-1, 3),
            np.array([g.log_scale for g in gaussians], dtype=dtype).reshape(-1, 3),
            np.array([g.rotation for g in gaussians], dtype=dtype).reshape(-1, 4),
            np.array([g.opacity_logit for g in gaussians], dtype=dtype),
            np.array([g.color for g in gaussians], dtype=dtype).reshape(-1, 3),
            capacity, dtype=dtype)

    def gaussian(self, i) -> Gaussian3:
        return Gaussian3(self.positions[i], self.log_scales[i], self.rotations[i],
                         self.opacity_logits[i], self.colors[i],
                         dtype=self.positions.dtype.type)

    def copy(self) -> "Scene3":
        return Scene3(self.positions.copy(), self.log_scales.copy(),
                      self.rotations.copy(), self.opacity_logits.copy(),
                      self.colors.copy(), self.capacity,
                      dtype=self.positions.dtype)


class Scene2(_ColumnScene):
    """Growable column-wise collection of :class:`Gaussian2`."""

    _columns = ("positions", "log_scales", "thetas", "opacity_logits", "colors")

    def __init__(self, positions, log_scales, thetas, opacity_logits, colors,
                 capacity, dtype=np.float32):
        super().__init__(capacity)
        self.positions = np.asarray(positions, dtype=dtype).reshape(-1, 2)
        self.log_scales = np.asarray(log_scales, dtype=dtype).reshape(-1, 2)
        self.thetas = np.asarray(thetas, dtype=dtype).reshape(-1)
        self.opacity_logits = np.asarray(opacity_logits, dtype=dtype).reshape(-1)
        self.colors = np.asarray(colors, dtype=dtype).reshape(-1, 3)
        self.validate()

    @classmethod
    def empty(cls, capacity, dtype=np.float32):
        z2 = np.zeros((0, 2), dtype=dtype)
        z1 = np.zeros(0, dtype=dtype)
        return cls(z2, z2, z1, z1, np.zeros((0, 3), dtype=dtype), capacity,
                   dtype=dtype)

    @classmethod
    def from_gaussians(cls, gaussians, capacity, dtype=np.float32):
        return cls(
            np.array([g.position for g in gaussians], dtype=dtype).reshape(-1, 2),
            np.array([g.log_scale for g in gaussians], dtype=dtype).reshape(-1, 2),
            np.array([g.theta for g in gaussians], dtype=dtype),
            np.array([g.opacity_logit for g in gaussians], dtype=dtype),
            np.array([g.color for g in gaussians], dtype=dtype).reshape(-1, 3),
            capacity, dtype=dtype)

    def gaussian(self, i) -> Gaussian2:
        return Gaussian2(self.positions[i], self.log_scales[i], self.thetas[i],
                         self.opacity_logits[i], self.colors[i],
                         dtype=self.positions.dtype.type)

    def copy(self) -> "Scene2":
        return Scene2(self.positions.copy(), self.log_scales.copy(),
                      self.thetas.copy(), self.opacity_logits.copy(),
                      self.colors.copy(), self.capacity,
                      dtype=self.positions.dtype)
