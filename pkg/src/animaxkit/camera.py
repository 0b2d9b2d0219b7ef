"""Pinhole camera model, canonical orbit rig, and Plucker ray maps.

Conventions (fixed here for reproducibility):
  - World frame is right-handed with +Z up; azimuth is measured in the XY
    plane from +X toward +Y.
  - Extrinsics are world-to-camera: ``x_cam = R @ x_world + t`` with the
    usual CV camera frame (x right, y down, z forward).
  - Pixel coordinates are continuous with pixel (row i, col j) covering
    ``[j, j+1) x [i, i+1)``; its center is ``(j + 0.5, i + 0.5)``.

Camera JSON: ``{"cameras": [{"rotation": [[...3x3...]], "translation":
[x, y, z], "fx": .., "fy": .., "cx": .., "cy": .., "width": ..,
"height": ..}, ...]}``
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ValidationError

DEFAULT_FOV_DEG = 40.0
ORTHONORMAL_TOL = 1e-9


@dataclass(frozen=True)
class Camera:
    rotation: np.ndarray
    translation: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64)
        t = np.array(self.translation, dtype=np.float64)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValidationError("camera rotation must be 3x3 and translation a 3-vector")
        if np.abs(r @ r.T - np.eye(3)).max() > 1e-6:
            raise ValidationError("camera rotation is not orthonormal")
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValidationError("principal point must lie inside the image")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def projection_matrix(self) -> np.ndarray:
        """3x4 matrix mapping homogeneous world points to image coordinates."""
        k = np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])
        return k @ np.hstack([self.rotation, self.translation[:, None]])

    def scaled(self, width: int, height: int) -> "Camera":
        """Same camera with intrinsics rescaled to a new resolution."""
        sx = width / self.width
        sy = height / self.height
        return replace(
            self,
            fx=self.fx * sx,
            fy=self.fy * sy,
            cx=self.cx * sx,
            cy=self.cy * sy,
            width=width,
            height=height,
        )


def project_points(camera: Camera, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Project (n, 3) world points.

    Returns (uv, depth) where depth is the camera-frame z; callers treat
    depth <= 0 as behind-camera (not an error).
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cam = points @ camera.rotation.T + camera.translation
    z = cam[:, 2]
    safe_z = np.where(z == 0.0, 1.0, z)
    u = camera.fx * cam[:, 0] / safe_z + camera.cx
    v = camera.fy * cam[:, 1] / safe_z + camera.cy
    uv = np.stack([u, v], axis=1)
    uv[z == 0.0] = np.nan
    return uv, z


def project(camera: Camera, point: np.ndarray) -> tuple[np.ndarray, float]:
    """Single-point variant of :func:`project_points`."""
    uv, z = project_points(camera, np.asarray(point)[None, :])
    return uv[0], float(z[0])


def look_at(
    position: np.ndarray,
    target: np.ndarray,
    fx: float,
    fy: float,
    cx: float,
    cy: float,
    width: int,
    height: int,
    up: np.ndarray = (0.0, 0.0, 1.0),
) -> Camera:
    """Camera at ``position`` aimed at ``target`` with world +Z (default) up."""
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    norm = np.linalg.norm(forward)
    if norm == 0:
        raise ValidationError("look_at target coincides with camera position")
    z_cam = forward / norm
    right = np.cross(z_cam, np.asarray(up, dtype=np.float64))
    right_norm = np.linalg.norm(right)
    if right_norm < 1e-12:
        # looking straight along up: pick an arbitrary but deterministic right
        right = np.cross(z_cam, np.array([1.0, 0.0, 0.0]))
        right_norm = np.linalg.norm(right)
    x_cam = right / right_norm
    y_cam = np.cross(z_cam, x_cam)
    rotation = np.stack([x_cam, y_cam, z_cam])
    translation = -rotation @ position
    return Camera(rotation, translation, fx, fy, cx, cy, width, height)


def focal_from_fov(fov_deg: float, pixels: int) -> float:
    return 0.5 * pixels / math.tan(math.radians(fov_deg) / 2.0)


def framing_distance(radius: float, fov_deg: float = DEFAULT_FOV_DEG, fill: float = 0.8) -> float:
    """Orbit distance at which a sphere of given radius fills ``fill`` of the frame."""
    return radius / (fill * math.tan(math.radians(fov_deg) / 2.0))


def canonical_rig(
    distance: float,
    resolution: int,
    azimuths_deg: tuple[float, ...] = (0.0, 90.0, 180.0, 270.0),
    elevation_deg: float = 0.0,
    fov_deg: float = DEFAULT_FOV_DEG,
) -> list[Camera]:
    """Orbit cameras aimed at the origin at a fixed elevation.

    Defaults give the 4-view rig (square images, principal point at the
    image center, azimuths 0/90/180/270 at elevation 0). Azimuths are
    overridable, so non-uniform spacings remain expressible.
    """
    if distance <= 0:
        raise ValidationError("rig distance must be positive")
    f = focal_from_fov(fov_deg, resolution)
    c = resolution / 2.0
    el = math.radians(elevation_deg)
    cameras = []
    for az_deg in azimuths_deg:
        az = math.radians(az_deg)
        position = distance * np.array(
            [math.cos(az) * math.cos(el), math.sin(az) * math.cos(el), math.sin(el)]
        )
        cameras.append(
            look_at(position, np.zeros(3), f, f, c, c, resolution, resolution)
        )
    return cameras


@dataclass(frozen=True)
class PluckerMap:
    """Per-pixel rays as (direction, moment) 6-vectors, shape (h, w, 6)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[2] != 6:
            raise ValidationError("plucker map must have shape (h, w, 6)")
        object.__setattr__(self, "values", v)

    @property
    def directions(self) -> np.ndarray:
        return self.values[..., :3]

    @property
    def moments(self) -> np.ndarray:
        return self.values[..., 3:]


def plucker_map(camera: Camera, h_lat: int, w_lat: int) -> PluckerMap:
    """Ray map at a latent resolution, one ray per latent-pixel center.

    Intrinsics are rescaled to (h_lat, w_lat) rather than subsampled, so the
    rays tile the full original field of view. Directions are unit vectors
    in world coordinates and moments are ``origin x direction``.
    """
    if h_lat < 1 or w_lat < 1:
        raise ValidationError("latent resolution must be at least 1x1")
    cam = camera.scaled(w_lat, h_lat)
    js, ks = np.meshgrid(np.arange(w_lat) + 0.5, np.arange(h_lat) + 0.5)
    rays_cam = np.stack(
        [(js - cam.cx) / cam.fx, (ks - cam.cy) / cam.fy, np.ones_like(js)], axis=-1
    )
    d = rays_cam @ cam.rotation  # R^T applied row-wise
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    origin = camera.center()
    m = np.cross(np.broadcast_to(origin, d.shape), d)
    return PluckerMap(np.concatenate([d, m], axis=-1))


# --- JSON interchange ---------------------------------------------------


def camera_to_dict(camera: Camera) -> dict:
    return {
        "rotation": camera.rotation.tolist(),
        "translation": camera.translation.tolist(),
        "fx": camera.fx,
        "fy": camera.fy,
        "cx": camera.cx,
        "cy": camera.cy,
        "width": camera.width,
        "height": camera.height,
    }


def camera_from_dict(data: dict) -> Camera:
    try:
        return Camera(
            rotation=np.asarray(data["rotation"], dtype=np.float64),
            translation=np.asarray(data["translation"], dtype=np.float64),
            fx=float(data["fx"]),
            fy=float(data["fy"]),
            cx=float(data["cx"]),
            cy=float(data["cy"]),
            width=int(data["width"]),
            height=int(data["height"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed camera JSON: {exc}") from exc


def save_cameras(cameras: list[Camera], path: str | Path) -> None:
    data = {"cameras": [camera_to_dict(c) for c in cameras]}
    Path(path).write_text(json.dumps(data, indent=2), encoding="utf-8")


def load_cameras(path: str | Path) -> list[Camera]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        entries = data["cameras"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ValidationError(f"malformed camera JSON in {path}: {exc}") from exc
    return [camera_from_dict(e) for e in entries]
