"""Volume data model and the geometric operations shared by every module.

A :class:`Volume` is an axis-aligned grid: voxel ``(i, j, k)`` sits at the
physical point ``origin + spacing * (i, j, k)`` in millimetres.  Orientation
beyond that is deliberately not modelled; registration normalises it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from scipy.spatial.transform import Rotation

from .errors import DimensionMismatch, EmptyMask, SingularTransform

Triple = Tuple[float, float, float]


def _triple(values, name: str) -> Triple:
    out = tuple(float(v) for v in values)
    if len(out) != 3:
        raise DimensionMismatch(f"{name} must have 3 entries, got {len(out)}")
    return out  # type: ignore[return-value]


@dataclass(frozen=True, eq=False)
class Volume:
    """A 3-D float32 intensity grid with spacing, origin and optional brain mask.

    Arrays are copied on construction and frozen (``writeable=False``), so a
    Volume can be shared between threads without defensive copies.
    """

    data: np.ndarray
    spacing: Triple = (1.0, 1.0, 1.0)
    origin: Triple = (0.0, 0.0, 0.0)
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float32, copy=True)
        if data.ndim != 3:
            raise DimensionMismatch(f"volume data must be 3-D, got shape {data.shape}")
        if min(data.shape) < 1:
            raise DimensionMismatch(f"volume dims must be positive, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("volume intensities must be finite")
        spacing = _triple(self.spacing, "spacing")
        if min(spacing) <= 0:
            raise DimensionMismatch(f"spacing must be strictly positive, got {spacing}")
        origin = _triple(self.origin, "origin")
        mask = None
        if self.mask is not None:
            mask = np.array(self.mask, dtype=bool, copy=True)
            if mask.shape != data.shape:
                raise DimensionMismatch(
                    f"mask shape {mask.shape} does not match data shape {data.shape}"
                )
            mask.setflags(write=False)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "mask", mask)

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)  # type: ignore[return-value]

    def replace(self, **changes) -> "Volume":
        """Return a copy with some fields swapped out (dataclasses.replace semantics)."""
        kwargs = dict(data=self.data, spacing=self.spacing, origin=self.origin, mask=self.mask)
        kwargs.update(changes)
        return Volume(**kwargs)

    def masked_values(self) -> np.ndarray:
        if self.mask is None:
            return self.data.ravel()
        return self.data[self.mask]

    def index_to_world(self) -> np.ndarray:
        """4x4 matrix taking voxel indices to physical millimetres."""
        m = np.diag([*self.spacing, 1.0])
        m[:3, 3] = self.origin
        return m

    def center(self) -> np.ndarray:
        """Physical coordinate of the grid centre."""
        return np.asarray(self.origin) + np.asarray(self.spacing) * (np.asarray(self.dims) - 1) / 2.0

    def __eq__(self, other):
        if not isinstance(other, Volume):
            return NotImplemented
        if self.dims != other.dims or self.spacing != other.spacing or self.origin != other.origin:
            return False
        if (self.mask is None) != (other.mask is None):
            return False
        if self.mask is not None and not np.array_equal(self.mask, other.mask):
            return False
        return bool(np.array_equal(self.data, other.data))

    __hash__ = None  # type: ignore[assignment]


# ---------------------------------------------------------------------------
# affine transforms

N_PARAMS = 12


def rotation_matrix(angles: Sequence[float]) -> np.ndarray:
    """Rotation Rz @ Ry @ Rx for angles (rx, ry, rz) in radians."""
    ax, ay, az = angles
    cx, sx = math.cos(ax), math.sin(ax)
    cy, sy = math.cos(ay), math.sin(ay)
    cz, sz = math.cos(az), math.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def shear_matrix(shears: Sequence[float]) -> np.ndarray:
    """Upper-triangular shear with entries (xy, xz, yz)."""
    sxy, sxz, syz = shears
    return np.array([[1.0, sxy, sxz], [0.0, 1.0, syz], [0.0, 0.0, 1.0]])


def _linear_from_parameters(p: np.ndarray) -> np.ndarray:
    return rotation_matrix(p[3:6]) @ np.diag(np.exp(p[6:9])) @ shear_matrix(p[9:12])


@dataclass(frozen=True, eq=False)
class AffineTransform:
    """Homogeneous 4x4 map from moving physical coordinates to fixed ones.

    ``parameters`` (when known) is the 12-vector
    ``(tx, ty, tz, rx, ry, rz, log sx, log sy, log sz, sh_xy, sh_xz, sh_yz)``
    composed as ``T @ R @ S @ Sh`` about ``center``.
    """

    matrix: np.ndarray
    parameters: Optional[np.ndarray] = None
    center: Triple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64, copy=True)
        if m.shape != (4, 4):
            raise ValueError(f"affine matrix must be 4x4, got {m.shape}")
        if not np.allclose(m[3], [0.0, 0.0, 0.0, 1.0], atol=1e-12):
            raise ValueError(f"affine bottom row must be (0,0,0,1), got {m[3]}")
        m[3] = [0.0, 0.0, 0.0, 1.0]
        if abs(np.linalg.det(m[:3, :3])) <= 1e-9:
            raise SingularTransform("affine matrix is not invertible")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        if self.parameters is not None:
            p = np.array(self.parameters, dtype=np.float64, copy=True).ravel()
            if p.size != N_PARAMS:
                raise ValueError(f"expected {N_PARAMS} parameters, got {p.size}")
            p.setflags(write=False)
            object.__setattr__(self, "parameters", p)
        object.__setattr__(self, "center", _triple(self.center, "center"))

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(np.eye(4), np.zeros(N_PARAMS))

    @classmethod
    def from_parameters(cls, parameters, center=(0.0, 0.0, 0.0)) -> "AffineTransform":
        p = np.asarray(parameters, dtype=np.float64).ravel()
        if p.size != N_PARAMS:
            raise ValueError(f"expected {N_PARAMS} parameters, got {p.size}")
        c = np.asarray(center, dtype=np.float64)
        lin = _linear_from_parameters(p)
        m = np.eye(4)
        m[:3, :3] = lin
        m[:3, 3] = p[:3] + c - lin @ c
        return cls(m, p, tuple(c))

    @classmethod
    def from_matrix(cls, matrix, center=(0.0, 0.0, 0.0)) -> "AffineTransform":
        """Wrap ``matrix`` and recover its 12 parameters about ``center``.

        The linear part is split as rotation @ scale @ unit upper-triangular
        shear by a QR decomposition; reflections cannot be represented.
        """
        m = np.asarray(matrix, dtype=np.float64)
        lin = m[:3, :3]
        q, r = np.linalg.qr(lin)
        signs = np.sign(np.diag(r))
        signs[signs == 0] = 1.0
        q, r = q * signs, signs[:, None] * r
        if np.linalg.det(q) < 0:
            raise SingularTransform("matrix contains a reflection; it has no parameter form")
        scale = np.diag(r)
        shear = r / scale[:, None]
        c = np.asarray(center, dtype=np.float64)
        p = np.zeros(N_PARAMS)
        p[3:6] = Rotation.from_matrix(q).as_euler("xyz")
        p[6:9] = np.log(scale)
        p[9:12] = shear[0, 1], shear[0, 2], shear[1, 2]
        p[:3] = m[:3, 3] - c + lin @ c
        return cls(m, p, tuple(c))

    @classmethod
    def translation(cls, offset) -> "AffineTransform":
        p = np.zeros(N_PARAMS)
        p[:3] = offset
        return cls.from_parameters(p)

    def inverse(self) -> "AffineTransform":
        return AffineTransform(np.linalg.inv(self.matrix))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map an (N, 3) array of physical points."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.matrix[:3, :3].T + self.matrix[:3, 3]

    def __matmul__(self, other: "AffineTransform") -> "AffineTransform":
        """``a @ b`` applies ``b`` first, then ``a``."""
        return AffineTransform(self.matrix @ other.matrix)


def compose(outer: AffineTransform, inner: AffineTransform) -> AffineTransform:
    return outer @ inner


# ---------------------------------------------------------------------------
# resampling and cropping

_ORDERS = {"trilinear": 1, "nearest": 0}


def grid_points(dims, spacing, origin) -> np.ndarray:
    """Physical coordinates of every voxel centre, shape (nx*ny*nz, 3), C order."""
    axes = [origin[a] + spacing[a] * np.arange(dims[a]) for a in range(3)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def world_to_index(v: Volume, points: np.ndarray) -> np.ndarray:
    """Continuous voxel indices for physical points, shape (3, N)."""
    return ((points - np.asarray(v.origin)) / np.asarray(v.spacing)).T


def sample(v: Volume, points: np.ndarray, order: int = 1, data: Optional[np.ndarray] = None) -> np.ndarray:
    """Interpolate ``v`` (or ``data`` on v's grid) at physical points; outside samples read 0."""
    arr = v.data if data is None else data
    return ndimage.map_coordinates(
        arr, world_to_index(v, points), order=order, mode="constant", cval=0.0, prefilter=False
    )


def resample(
    v: Volume,
    t: AffineTransform,
    target_dims=None,
    target_spacing=None,
    interpolation: str = "trilinear",
    target_origin=None,
) -> Volume:
    """Resample ``v`` onto a target grid through the transform ``t``.

    Each output voxel at physical point ``p`` takes the input value at
    ``t^-1(p)``.  Samples outside the input read 0; masks always use
    nearest-neighbour.
    """
    if interpolation not in _ORDERS:
        raise ValueError(f"interpolation must be one of {sorted(_ORDERS)}, got {interpolation!r}")
    dims = tuple(int(n) for n in (v.dims if target_dims is None else target_dims))
    if len(dims) != 3 or min(dims) < 1:
        raise DimensionMismatch(f"target dims must be 3 positive integers, got {dims}")
    spacing = v.spacing if target_spacing is None else _triple(target_spacing, "target_spacing")
    origin = v.origin if target_origin is None else _triple(target_origin, "target_origin")
    try:
        inv = np.linalg.inv(t.matrix)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - guarded by AffineTransform
        raise SingularTransform(str(exc)) from exc

    pts = grid_points(dims, spacing, origin)
    src = pts @ inv[:3, :3].T + inv[:3, 3]
    coords = world_to_index(v, src)
    out = ndimage.map_coordinates(
        v.data, coords, order=_ORDERS[interpolation], mode="constant", cval=0.0, prefilter=False
    ).reshape(dims)
    mask = None
    if v.mask is not None:
        mask = ndimage.map_coordinates(
            v.mask.astype(np.float32), coords, order=0, mode="constant", cval=0.0, prefilter=False
        ).reshape(dims) > 0.5
    return Volume(out, spacing, origin, mask)


def mask_bbox(mask: np.ndarray) -> Tuple[slice, slice, slice]:
    """Tight bounding box of the true voxels as a tuple of slices."""
    if mask is None or not mask.any():
        raise EmptyMask("mask is absent or empty")
    slices = []
    for axis in range(3):
        other = tuple(a for a in range(3) if a != axis)
        hits = np.flatnonzero(mask.any(axis=other))
        slices.append(slice(int(hits[0]), int(hits[-1]) + 1))
    return tuple(slices)  # type: ignore[return-value]


def crop_to_mask_bbox(v: Volume) -> Volume:
    """Crop to the tight axis-aligned box around the mask, keeping physical placement."""
    box = mask_bbox(v.mask)
    start = np.array([s.start for s in box], dtype=np.float64)
    origin = np.asarray(v.origin) + np.asarray(v.spacing) * start
    return Volume(v.data[box], v.spacing, tuple(origin), v.mask[box])


def isotropic_grid(v: Volume, spacing: float = 1.0):
    """(dims, spacing, origin) of a grid at ``spacing`` mm covering v's field of view."""
    extent = np.asarray(v.spacing) * np.asarray(v.dims)
    dims = tuple(max(1, int(round(e / spacing))) for e in extent)
    lo = np.asarray(v.origin) - np.asarray(v.spacing) / 2.0
    origin = lo + spacing / 2.0
    return dims, (spacing, spacing, spacing), tuple(origin)
