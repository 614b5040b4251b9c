"""Camera geometry and array geometry.

World-to-camera transforms, pinhole projection, synthetic face bounding
boxes from (optionally jittered) 3D positions, and ground-truth azimuth
computation for a microphone array.

Conventions, used consistently everywhere in this package:
  * world frame: x forward, y left, z up (right-handed)
  * azimuth: degrees in [-180, 180), 0 along the array forward axis,
    counter-clockwise positive when viewed from above
  * extrinsics map world to camera coordinates, p_cam = R @ p + t
  * camera frame: x right, y down, z along the optical axis
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCamera, ConfigError, DegenerateGeometry
from .store import read_key_values


def wrap_degrees(angle):
    """Wrap an angle (scalar or array, degrees) into [-180, 180)."""
    return (np.asarray(angle, dtype=float) + 180.0) % 360.0 - 180.0


def _as_point(p):
    p = np.asarray(p, dtype=float).reshape(3)
    if not np.all(np.isfinite(p)):
        raise ValueError(f"point has non-finite components: {p}")
    return p


@dataclass(frozen=True)
class CameraCalibration:
    """Pinhole camera: rigid world-to-camera extrinsics plus intrinsics."""

    rotation: np.ndarray        # 3x3, world -> camera
    translation: np.ndarray     # 3-vector, meters
    f_u: float                  # focal lengths, pixels
    f_v: float
    c_u: float                  # principal point, pixels
    c_v: float
    width: int                  # image size, pixels
    height: int

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-9 or abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation must be orthonormal with determinant +1")
        if self.f_u <= 0 or self.f_v <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")

    def half_fov_u_deg(self):
        """Horizontal half field of view implied by the principal point."""
        return np.degrees(np.arctan(min(self.c_u, self.width - self.c_u) / self.f_u))


@dataclass(frozen=True)
class FaceSize:
    """Physical face extent used for synthetic bounding boxes (meters)."""

    width_m: float = 0.14
    height_m: float = 0.18

    def __post_init__(self):
        if self.width_m <= 0 or self.height_m <= 0:
            raise ValueError("face dimensions must be positive")


@dataclass(frozen=True)
class BoundingBox:
    """Face detection box: top-left pixel position plus size in pixels."""

    u: float
    v: float
    w: float
    h: float

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError("bounding box width and height must be positive")

    @property
    def center(self):
        return (self.u + 0.5 * self.w, self.v + 0.5 * self.h)


@dataclass(frozen=True)
class MicArray:
    """Microphone positions (array frame, meters) and array pose in the world.

    The array frame shares the azimuth convention of the module: its x axis
    is the forward direction that azimuth 0 refers to.
    """

    positions: np.ndarray                 # (n_mics, 3)
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    yaw_deg: float = 0.0
    speed_of_sound: float = 343.0

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float).reshape(3))
        if len(pos) < 2:
            raise ValueError("need at least two microphones")
        diff = pos[:, None, :] - pos[None, :, :]
        dist = np.linalg.norm(diff, axis=-1)
        np.fill_diagonal(dist, np.inf)
        if dist.min() < 1e-9:
            raise ValueError("two microphones coincide")
        if self.speed_of_sound <= 0:
            raise ValueError("speed of sound must be positive")

    @property
    def n_mics(self):
        return len(self.positions)

    def pairs(self):
        """Unordered mic pairs (l < p) in lexicographic order."""
        n = self.n_mics
        return [(l, p) for l in range(n) for p in range(l + 1, n)]

    def max_pair_distance(self):
        d = self.positions[:, None, :] - self.positions[None, :, :]
        return float(np.linalg.norm(d, axis=-1).max())

    @classmethod
    def square(cls, side=0.1, **kwargs):
        """Four mics at the corners of a horizontal square (default geometry)."""
        s = side / 2.0
        pos = [(s, s, 0.0), (-s, s, 0.0), (-s, -s, 0.0), (s, -s, 0.0)]
        return cls(positions=np.array(pos), **kwargs)


def perturb_location(point, variances, rng):
    """Add independent zero-mean Gaussian noise to a 3D point.

    ``variances`` are the per-axis noise variances in m^2 (the diagonal of
    the spatial noise covariance).  ``rng`` is a seed or a
    numpy.random.Generator; a fixed seed gives bit-reproducible output.
    """
    p = _as_point(point)
    var = np.asarray(variances, dtype=float).reshape(3)
    if np.any(var < 0) or not np.all(np.isfinite(var)):
        raise ValueError("noise variances must be finite and non-negative")
    rng = np.random.default_rng(rng)
    return p + rng.normal(0.0, np.sqrt(var))


def world_to_camera(point, cal):
    """Rigid transform into camera coordinates: R @ p + t."""
    return cal.rotation @ _as_point(point) + cal.translation


def project_point(point_cam, cal):
    """Pinhole projection of a camera-frame point to pixel coordinates.

    Raises BehindCamera when the point is not strictly in front of the
    camera (z <= 0).
    """
    x, y, z = _as_point(point_cam)
    if z <= 0:
        raise BehindCamera(f"point at z={z:.6g} is not in front of the camera")
    return np.array([cal.f_u * x / z + cal.c_u, cal.f_v * y / z + cal.c_v])


def synthesize_bbox(point, cal, face=FaceSize(), variances=(0.0, 0.0, 0.0), rng=None):
    """Simulate a face detection for a 3D head position.

    The position is jittered by ``variances``, moved into camera
    coordinates, and a face-sized rectangle perpendicular to the optical
    axis is projected: top-left corner offset (-W/2, -H/2, 0), bottom-right
    (+W/2, +H/2, 0).  The box is (top_left, bottom_right - top_left).

    Returns None (not visible) when the jittered point lies behind the
    camera or its projection center falls outside the image bounds.  Boxes
    whose corners stick out of the image are kept un-clipped.
    """
    noisy = perturb_location(point, variances, rng)
    p_cam = world_to_camera(noisy, cal)
    if p_cam[2] <= 0:
        return None
    center = project_point(p_cam, cal)
    if not (0 <= center[0] < cal.width and 0 <= center[1] < cal.height):
        return None
    half = np.array([face.width_m / 2.0, face.height_m / 2.0, 0.0])
    top_left = project_point(p_cam - half, cal)
    bottom_right = project_point(p_cam + half, cal)
    size = bottom_right - top_left
    return BoundingBox(u=top_left[0], v=top_left[1], w=size[0], h=size[1])


def doa_from_position(point, array):
    """Ground-truth azimuth of a world point relative to an array, degrees.

    Measured in the horizontal plane from the array's forward (yaw) axis,
    counter-clockwise positive, wrapped to [-180, 180).
    """
    delta = _as_point(point) - array.origin
    if np.hypot(delta[0], delta[1]) <= 1e-6:
        raise DegenerateGeometry("target is on the array's vertical axis")
    azimuth = np.degrees(np.arctan2(delta[1], delta[0])) - array.yaw_deg
    return float(wrap_degrees(azimuth))


# ---------------------------------------------------------------------------
# key = value text files for calibration and array geometry
# ---------------------------------------------------------------------------

def _kv_floats(entries, key, count, path):
    values = [v for k, v in entries if k == key]
    if len(values) != 1:
        raise ConfigError(f"{path}: expected exactly one '{key}' entry")
    parts = values[0].split()
    if len(parts) != count:
        raise ConfigError(f"{path}: '{key}' needs {count} numbers, got {len(parts)}")
    return [float(p) for p in parts]


def save_calibration(cal, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# pinhole camera calibration\n")
        fh.write("rotation = " + " ".join(f"{x:.17g}" for x in cal.rotation.ravel()) + "\n")
        fh.write("translation = " + " ".join(f"{x:.17g}" for x in cal.translation) + "\n")
        for key in ("f_u", "f_v", "c_u", "c_v"):
            fh.write(f"{key} = {getattr(cal, key):.17g}\n")
        fh.write(f"width = {cal.width}\n")
        fh.write(f"height = {cal.height}\n")


def load_calibration(path):
    entries = read_key_values(path)
    try:
        return CameraCalibration(
            rotation=np.array(_kv_floats(entries, "rotation", 9, path)).reshape(3, 3),
            translation=np.array(_kv_floats(entries, "translation", 3, path)),
            f_u=_kv_floats(entries, "f_u", 1, path)[0],
            f_v=_kv_floats(entries, "f_v", 1, path)[0],
            c_u=_kv_floats(entries, "c_u", 1, path)[0],
            c_v=_kv_floats(entries, "c_v", 1, path)[0],
            width=int(_kv_floats(entries, "width", 1, path)[0]),
            height=int(_kv_floats(entries, "height", 1, path)[0]),
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def save_array_geometry(array, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# microphone array geometry (meters)\n")
        fh.write(f"c = {array.speed_of_sound:.17g}\n")
        fh.write("origin = " + " ".join(f"{x:.17g}" for x in array.origin) + "\n")
        fh.write(f"yaw_deg = {array.yaw_deg:.17g}\n")
        for pos in array.positions:
            fh.write("mic = " + " ".join(f"{x:.17g}" for x in pos) + "\n")


def load_array_geometry(path):
    entries = read_key_values(path)
    mics = [v for k, v in entries if k == "mic"]
    if len(mics) < 2:
        raise ConfigError(f"{path}: need at least two 'mic' entries")
    positions = []
    for value in mics:
        parts = value.split()
        if len(parts) != 3:
            raise ConfigError(f"{path}: each 'mic' needs 3 coordinates")
        positions.append([float(p) for p in parts])
    try:
        return MicArray(
            positions=np.array(positions),
            origin=np.array(_kv_floats(entries, "origin", 3, path)),
            yaw_deg=_kv_floats(entries, "yaw_deg", 1, path)[0],
            speed_of_sound=_kv_floats(entries, "c", 1, path)[0],
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
