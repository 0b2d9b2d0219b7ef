"""Colored pose-map images: rendering from projected joints and decoding
back to 2D joint coordinates by color clustering.

A pose map draws each joint as a filled disc in a unique palette color with
parent-child connecting lines underneath in a reserved neutral color.
Decoding assigns non-background pixels to their nearest palette color
(within a distance threshold) and takes the proximity-weighted centroid of
each joint's pixel cluster.

Palette JSON: ``{"line": [r, g, b], "background": [r, g, b],
"joints": [[r, g, b], ...]}``. Images are read/written as RGB8 PNG.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .camera import Camera, project_points
from .errors import ValidationError
from .skeleton import JointPositions3D, Skeleton

MIN_COLOR_SEPARATION = 48.0
DEFAULT_COLOR_THRESHOLD = 40.0
DEFAULT_MIN_PIXELS = 4
DEFAULT_MIN_COVERAGE = 0.5
LINE_COLOR = (128, 128, 128)
BACKGROUND_COLOR = (0, 0, 0)
LINE_HALF_WIDTH = 1.0


@dataclass(frozen=True)
class ColorPalette:
    joints: np.ndarray  # (n, 3) uint8
    line: tuple[int, int, int] = LINE_COLOR
    background: tuple[int, int, int] = BACKGROUND_COLOR

    def __post_init__(self):
        colors = np.asarray(self.joints, dtype=np.uint8)
        if colors.ndim != 2 or colors.shape[1] != 3:
            raise ValidationError("palette joints must have shape (n, 3)")
        object.__setattr__(self, "joints", colors)
        reserved = np.array([self.line, self.background], dtype=np.float64)
        pts = colors.astype(np.float64)
        for i in range(len(pts)):
            d_res = np.linalg.norm(reserved - pts[i], axis=1).min()
            if d_res < MIN_COLOR_SEPARATION:
                raise ValidationError(
                    f"joint color {i} is within {d_res:.1f} of a reserved color"
                )
            if i + 1 < len(pts):
                d = np.linalg.norm(pts[i + 1 :] - pts[i], axis=1).min()
                if d < MIN_COLOR_SEPARATION:
                    raise ValidationError(
                        f"joint colors closer than {MIN_COLOR_SEPARATION} (pair with {i})"
                    )

    @property
    def joint_count(self) -> int:
        return len(self.joints)


def make_palette(joint_count: int, seed: int) -> ColorPalette:
    """Deterministic palette of well-separated joint colors.

    Candidates come from a 6x6x6 lattice (spacing 51 >= the separation
    floor), minus points too close to the reserved line/background colors;
    the seed shuffles the candidate order.
    """
    if joint_count < 1:
        raise ValidationError("joint_count must be at least 1")
    axis = np.array([0, 51, 102, 153, 204, 255], dtype=np.float64)
    grid = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
    reserved = np.array([LINE_COLOR, BACKGROUND_COLOR], dtype=np.float64)
    keep = np.ones(len(grid), dtype=bool)
    for r in reserved:
        keep &= np.linalg.norm(grid - r, axis=1) >= MIN_COLOR_SEPARATION
    candidates = grid[keep]
    if joint_count > len(candidates):
        raise ValidationError(
            f"cannot produce {joint_count} colors at separation "
            f"{MIN_COLOR_SEPARATION} (capacity {len(candidates)})"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(candidates))
    return ColorPalette(joints=candidates[order[:joint_count]].astype(np.uint8))


def palette_to_dict(palette: ColorPalette) -> dict:
    return {
        "line": list(palette.line),
        "background": list(palette.background),
        "joints": palette.joints.tolist(),
    }


def palette_from_dict(data: dict) -> ColorPalette:
    try:
        return ColorPalette(
            joints=np.asarray(data["joints"], dtype=np.uint8),
            line=tuple(int(c) for c in data["line"]),
            background=tuple(int(c) for c in data["background"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed palette JSON: {exc}") from exc


def save_palette(palette: ColorPalette, path: str | Path) -> None:
    Path(path).write_text(json.dumps(palette_to_dict(palette), indent=2), encoding="utf-8")


def load_palette(path: str | Path) -> ColorPalette:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed palette JSON in {path}: {exc}") from exc
    return palette_from_dict(data)


@dataclass(frozen=True)
class PoseMap:
    raster: np.ndarray  # (h, w, 3) uint8
    view_index: int = 0
    frame_index: int = 0

    def __post_init__(self):
        r = np.asarray(self.raster)
        if r.ndim != 3 or r.shape[2] != 3 or r.dtype != np.uint8:
            raise ValidationError("pose map raster must be (h, w, 3) uint8")
        object.__setattr__(self, "raster", r)

    @property
    def height(self) -> int:
        return self.raster.shape[0]

    @property
    def width(self) -> int:
        return self.raster.shape[1]


@dataclass(frozen=True)
class Joints2D:
    coords: np.ndarray  # (n, 2) pixel coordinates
    valid: np.ndarray  # (n,) bool

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=np.float64)
        v = np.asarray(self.valid, dtype=bool)
        if c.ndim != 2 or c.shape[1] != 2 or v.shape != (c.shape[0],):
            raise ValidationError("coords must be (n, 2) with matching validity flags")
        object.__setattr__(self, "coords", c)
        object.__setattr__(self, "valid", v)


def default_marker_radius(image_height: int) -> int:
    return max(2, round(0.012 * image_height))


def _stamp_disc(raster: np.ndarray, u: float, v: float, radius: float, color) -> None:
    h, w = raster.shape[:2]
    x0 = max(0, int(np.floor(u - radius - 1)))
    x1 = min(w, int(np.ceil(u + radius + 1)))
    y0 = max(0, int(np.floor(v - radius - 1)))
    y1 = min(h, int(np.ceil(v + radius + 1)))
    if x0 >= x1 or y0 >= y1:
        return
    xs = np.arange(x0, x1) + 0.5
    ys = np.arange(y0, y1) + 0.5
    mask = (xs[None, :] - u) ** 2 + (ys[:, None] - v) ** 2 <= radius**2
    raster[y0:y1, x0:x1][mask] = color


def _stamp_segment(raster: np.ndarray, a: np.ndarray, b: np.ndarray, half_width: float, color) -> None:
    h, w = raster.shape[:2]
    lo = np.minimum(a, b) - half_width - 1
    hi = np.maximum(a, b) + half_width + 1
    x0, y0 = max(0, int(np.floor(lo[0]))), max(0, int(np.floor(lo[1])))
    x1, y1 = min(w, int(np.ceil(hi[0]))), min(h, int(np.ceil(hi[1])))
    if x0 >= x1 or y0 >= y1:
        return
    xs = np.arange(x0, x1) + 0.5
    ys = np.arange(y0, y1) + 0.5
    px = np.broadcast_to(xs[None, :], (y1 - y0, x1 - x0))
    py = np.broadcast_to(ys[:, None], (y1 - y0, x1 - x0))
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        _stamp_disc(raster, a[0], a[1], half_width, color)
        return
    t = np.clip(((px - a[0]) * ab[0] + (py - a[1]) * ab[1]) / denom, 0.0, 1.0)
    d2 = (px - (a[0] + t * ab[0])) ** 2 + (py - (a[1] + t * ab[1])) ** 2
    raster[y0:y1, x0:x1][d2 <= half_width**2] = color


def render_posemap(
    skeleton: Skeleton,
    positions: JointPositions3D,
    camera: Camera,
    palette: ColorPalette,
    radius: int | None = None,
    view_index: int = 0,
    frame_index: int = 0,
) -> PoseMap:
    """Rasterize one frame: connecting lines first, then depth-sorted markers.

    Joints behind the camera (or flagged invalid) are omitted, along with
    any bone touching them. Markers are drawn far-to-near so nearer joints
    overdraw farther ones.
    """
    if positions.positions.shape[0] != skeleton.joint_count:
        raise ValidationError("positions do not match skeleton joint count")
    if palette.joint_count < skeleton.joint_count:
        raise ValidationError("palette has fewer colors than skeleton joints")
    r = default_marker_radius(camera.height) if radius is None else int(radius)
    raster = np.empty((camera.height, camera.width, 3), dtype=np.uint8)
    raster[:] = palette.background

    uv, depth = project_points(camera, positions.positions)
    drawable = positions.valid & (depth > 0)

    line_color = np.array(palette.line, dtype=np.uint8)
    for i, joint in enumerate(skeleton.joints):
        p = joint.parent
        if p is None or not (drawable[i] and drawable[p]):
            continue
        _stamp_segment(raster, uv[p], uv[i], LINE_HALF_WIDTH, line_color)

    order = sorted(np.nonzero(drawable)[0], key=lambda i: (-depth[i], i))
    for i in order:
        _stamp_disc(raster, uv[i][0], uv[i][1], r, palette.joints[i])
    return PoseMap(raster=raster, view_index=view_index, frame_index=frame_index)


def decode_posemap(
    posemap: PoseMap,
    palette: ColorPalette,
    tau_color: float = DEFAULT_COLOR_THRESHOLD,
    n_min: int = DEFAULT_MIN_PIXELS,
    min_coverage: float = DEFAULT_MIN_COVERAGE,
    marker_radius: int | None = None,
) -> Joints2D:
    """Recover per-joint pixel coordinates from a pose map.

    Pixels within ``tau_color`` of a joint color (and nearer to it than to
    any other palette entry, including the reserved line/background colors)
    form that joint's cluster; the output coordinate is the single-cluster
    k-means centroid with color-proximity weights. Joints whose cluster has
    fewer than ``n_min`` pixels, or covers less than ``min_coverage`` of the
    nominal marker disc (partial occlusion), are flagged invalid.
    """
    n = palette.joint_count
    r = default_marker_radius(posemap.height) if marker_radius is None else int(marker_radius)
    disc_area = np.pi * r * r
    pixels = posemap.raster.astype(np.float64)

    bg = np.asarray(palette.background, dtype=np.float64)
    line = np.asarray(palette.line, dtype=np.float64)
    diff = pixels - bg
    d2_bg = np.einsum("ijk,ijk->ij", diff, diff)
    candidate = d2_bg > tau_color**2
    ys, xs = np.nonzero(candidate)
    coords = np.full((n, 2), np.nan)
    valid = np.zeros(n, dtype=bool)
    if ys.size == 0:
        return Joints2D(coords=coords, valid=valid)

    colors = pixels[ys, xs]
    # distance of each candidate pixel to every palette entry; the two
    # reserved colors compete so line pixels never pollute joint clusters
    targets = np.vstack([palette.joints.astype(np.float64), line[None, :], bg[None, :]])
    d2 = (
        np.einsum("ik,ik->i", colors, colors)[:, None]
        - 2.0 * colors @ targets.T
        + np.einsum("ik,ik->i", targets, targets)[None, :]
    )
    nearest = np.argmin(d2, axis=1)
    nearest_d = np.sqrt(np.maximum(d2[np.arange(len(nearest)), nearest], 0.0))

    centers_x = xs + 0.5
    centers_y = ys + 0.5
    for j in range(n):
        sel = (nearest == j) & (nearest_d <= tau_color)
        count = int(np.count_nonzero(sel))
        if count < max(1, n_min) or count < min_coverage * disc_area:
            continue
        w = 1.0 - nearest_d[sel] / max(tau_color, 1e-9)
        w = np.maximum(w, 1e-3)
        cx = float(np.sum(w * centers_x[sel]) / np.sum(w))
        cy = float(np.sum(w * centers_y[sel]) / np.sum(w))
        if 0.0 <= cx <= posemap.width and 0.0 <= cy <= posemap.height:
            coords[j] = (cx, cy)
            valid[j] = True
    return Joints2D(coords=coords, valid=valid)


def save_posemap(posemap: PoseMap, path: str | Path) -> None:
    Image.fromarray(posemap.raster, mode="RGB").save(str(path), format="PNG")


def load_posemap(path: str | Path, view_index: int = 0, frame_index: int = 0) -> PoseMap:
    with Image.open(str(path)) as img:
        raster = np.asarray(img.convert("RGB"), dtype=np.uint8)
    return PoseMap(raster=raster, view_index=view_index, frame_index=frame_index)
