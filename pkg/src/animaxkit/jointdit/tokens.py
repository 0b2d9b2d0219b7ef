"""Token layout for joint video-pose sequences and the shared rotary tables.

A per-view token grid concatenates, along the temporal axis, the clean RGB
condition frame, the noisy RGB video frames, the clean pose condition frame
and the noisy pose frames:

    slot 0          cond_rgb
    slots 1..f+1    noisy_rgb      (1+f frames)
    slot f+2        cond_pose
    slots f+3..2f+3 noisy_pose     (1+f frames)

for a total temporal length T = 2f+4. The two halves are spatially aligned,
so positions (i, j, k) and (i + f + 2, j, k) share one rotary rotation: the
table is indexed by ``slot mod (f+2)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..camera import PluckerMap
from ..errors import ValidationError

ROPE_BASE = 10000.0


@dataclass(frozen=True)
class LatentDims:
    """Latent grid dimensions; video latents span 1+f frames (f = F/4 for a
    pixel-space clip of 1+F frames at temporal compression 4)."""

    f: int
    h: int
    w: int
    c: int
    n_views: int = 1

    def __post_init__(self):
        if self.f < 1:
            raise ValidationError("latent temporal length requires f >= 1")
        if self.n_views < 1:
            raise ValidationError("need at least one view")
        if min(self.h, self.w, self.c) < 1:
            raise ValidationError("latent dims must be positive")

    @property
    def temporal(self) -> int:
        """Total temporal slots T = 2f + 4."""
        return 2 * self.f + 4

    @property
    def pixel_frames(self) -> int:
        return 4 * self.f

    @property
    def cond_rgb_slot(self) -> int:
        return 0

    @property
    def cond_pose_slot(self) -> int:
        return self.f + 2

    @property
    def noisy_rgb_slots(self) -> slice:
        return slice(1, self.f + 2)

    @property
    def noisy_pose_slots(self) -> slice:
        return slice(self.f + 3, self.temporal)

    def condition_mask(self) -> np.ndarray:
        """(T,) bool, True at the two clean condition slots."""
        mask = np.zeros(self.temporal, dtype=bool)
        mask[self.cond_rgb_slot] = True
        mask[self.cond_pose_slot] = True
        return mask

    def modality_ids(self) -> np.ndarray:
        """(T,) int, 0 for the RGB half and 1 for the pose half."""
        ids = np.zeros(self.temporal, dtype=np.int64)
        ids[self.f + 2 :] = 1
        return ids

    def pe_indices(self) -> np.ndarray:
        """(T,) rotary temporal index shared across the two halves."""
        return np.arange(self.temporal) % (self.f + 2)


@dataclass(frozen=True)
class TokenGrid:
    values: np.ndarray  # (T, h, w, c)
    dims: LatentDims
    layout: dict = field(init=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        d = self.dims
        if v.shape != (d.temporal, d.h, d.w, d.c):
            raise ValidationError(
                f"token grid shape {v.shape} does not match dims {(d.temporal, d.h, d.w, d.c)}"
            )
        object.__setattr__(self, "values", v)
        object.__setattr__(
            self,
            "layout",
            {
                "cond_rgb": [d.cond_rgb_slot],
                "noisy_rgb": list(range(1, d.f + 2)),
                "cond_pose": [d.cond_pose_slot],
                "noisy_pose": list(range(d.f + 3, d.temporal)),
            },
        )

    def split(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Recover (cond_rgb, noisy_rgb, cond_pose, noisy_pose) copies."""
        d = self.dims
        return (
            self.values[d.cond_rgb_slot : d.cond_rgb_slot + 1].copy(),
            self.values[d.noisy_rgb_slots].copy(),
            self.values[d.cond_pose_slot : d.cond_pose_slot + 1].copy(),
            self.values[d.noisy_pose_slots].copy(),
        )


def build_token_sequence(
    cond_rgb: np.ndarray,
    noisy_rgb: np.ndarray,
    cond_pose: np.ndarray,
    noisy_pose: np.ndarray,
) -> TokenGrid:
    """Concatenate condition and noisy tokens along the temporal axis."""
    cond_rgb = np.asarray(cond_rgb, dtype=np.float64)
    noisy_rgb = np.asarray(noisy_rgb, dtype=np.float64)
    cond_pose = np.asarray(cond_pose, dtype=np.float64)
    noisy_pose = np.asarray(noisy_pose, dtype=np.float64)
    if cond_rgb.ndim != 4 or cond_rgb.shape[0] != 1 or cond_pose.shape != cond_rgb.shape:
        raise ValidationError("condition slices must have temporal length 1")
    if noisy_rgb.shape != noisy_pose.shape or noisy_rgb.shape[1:] != cond_rgb.shape[1:]:
        raise ValidationError("noisy slices must share spatial/channel dims with conditions")
    f = noisy_rgb.shape[0] - 1
    dims = LatentDims(f=f, h=cond_rgb.shape[1], w=cond_rgb.shape[2], c=cond_rgb.shape[3])
    values = np.concatenate([cond_rgb, noisy_rgb, cond_pose, noisy_pose], axis=0)
    return TokenGrid(values=values, dims=dims)


@dataclass(frozen=True)
class MultiViewGrid:
    grids: tuple[TokenGrid, ...]
    rays: tuple[PluckerMap, ...]

    def __post_init__(self):
        grids = tuple(self.grids)
        rays = tuple(self.rays)
        if not grids or len(rays) != len(grids):
            raise ValidationError("one ray map per view is required")
        d0 = grids[0].dims
        for g in grids:
            if (g.dims.f, g.dims.h, g.dims.w, g.dims.c) != (d0.f, d0.h, d0.w, d0.c):
                raise ValidationError("all views must share latent dims")
        for r in rays:
            if r.values.shape[:2] != (d0.h, d0.w):
                raise ValidationError("ray maps must match the latent resolution")
        object.__setattr__(self, "grids", grids)
        object.__setattr__(self, "rays", rays)

    @property
    def n_views(self) -> int:
        return len(self.grids)

    @property
    def dims(self) -> LatentDims:
        d = self.grids[0].dims
        return LatentDims(f=d.f, h=d.h, w=d.w, c=d.c, n_views=len(self.grids))

    def values(self) -> np.ndarray:
        """(N, T, h, w, c) stack."""
        return np.stack([g.values for g in self.grids])

    def ray_values(self) -> np.ndarray:
        """(N, h, w, 6) stack."""
        return np.stack([r.values for r in self.rays])


def inflate_views(values: np.ndarray) -> np.ndarray:
    """(N, T, h, w, c) -> (T, N*h*w, c): the multi-view attention operand."""
    n, t, h, w, c = values.shape
    return np.transpose(values, (1, 0, 2, 3, 4)).reshape(t, n * h * w, c)


def deflate_views(values: np.ndarray, n: int, h: int, w: int) -> np.ndarray:
    """Inverse of :func:`inflate_views`."""
    t, _, c = values.shape
    return np.transpose(values.reshape(t, n, h, w, c), (1, 0, 2, 3, 4))


def _axis_frequencies(pairs: int) -> np.ndarray:
    if pairs == 0:
        return np.zeros(0)
    return ROPE_BASE ** (-np.arange(pairs, dtype=np.float64) / pairs)


@dataclass(frozen=True)
class RopeTable:
    """Per-position rotation angles for a (temporal, height, width) grid.

    Channel pairs are split three ways: one third each (of the pair count)
    for the width and height axes, the remainder for the temporal axis.
    Rotations are norm-preserving by construction.
    """

    temporal: int
    height: int
    width: int
    channels: int
    angles: np.ndarray = field(init=False)  # (temporal, h, w, channels // 2)

    def __post_init__(self):
        if self.channels % 2 != 0:
            raise ValidationError("rotary encoding needs an even channel count")
        pairs = self.channels // 2
        p_spatial = pairs // 3
        p_temporal = pairs - 2 * p_spatial
        fi = _axis_frequencies(p_temporal)
        fj = _axis_frequencies(p_spatial)
        fk = _axis_frequencies(p_spatial)
        i = np.arange(self.temporal, dtype=np.float64)
        j = np.arange(self.width, dtype=np.float64)
        k = np.arange(self.height, dtype=np.float64)
        ang = np.zeros((self.temporal, self.height, self.width, pairs))
        ang[..., :p_temporal] = i[:, None, None, None] * fi
        ang[..., p_temporal : p_temporal + p_spatial] = j[None, None, :, None] * fj
        ang[..., p_temporal + p_spatial :] = k[None, :, None, None] * fk
        object.__setattr__(self, "angles", ang)

    @staticmethod
    def for_dims(dims: LatentDims, channels: int | None = None) -> "RopeTable":
        return RopeTable(
            temporal=dims.f + 2,
            height=dims.h,
            width=dims.w,
            channels=dims.c if channels is None else channels,
        )

    def cos_sin(self, pe_indices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Cos/sin expanded to full channel width for the given slot indices.

        Returns arrays of shape (len(pe_indices), h, w, channels) where each
        angle is repeated for both members of its channel pair.
        """
        ang = self.angles[np.asarray(pe_indices, dtype=np.int64)]
        ang = np.repeat(ang, 2, axis=-1)
        return np.cos(ang), np.sin(ang)


def rotate_pairs(values: np.ndarray) -> np.ndarray:
    """Map each channel pair (a, b) to (-b, a); the 90-degree companion."""
    out = np.empty_like(values)
    out[..., 0::2] = -values[..., 1::2]
    out[..., 1::2] = values[..., 0::2]
    return out


def shared_rope(grid: TokenGrid, table: RopeTable) -> TokenGrid:
    """Apply the rotary rotation to every token, sharing the table between
    the RGB and pose halves (slots i and i + f + 2 rotate identically)."""
    d = grid.dims
    if (table.temporal, table.height, table.width, table.channels) != (
        d.f + 2,
        d.h,
        d.w,
        d.c,
    ):
        raise ValidationError("rope table dims do not match the token grid")
    cos, sin = table.cos_sin(d.pe_indices())
    rotated = grid.values * cos + rotate_pairs(grid.values) * sin
    return TokenGrid(values=rotated, dims=d)
