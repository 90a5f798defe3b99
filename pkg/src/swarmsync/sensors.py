"""Raw sensor readings to SI measurements.

Covers the three onboard sources: IMU scaling, optical-flow ground speed from
sensor height and mount angle, and the closed-form four-anchor UWB solver.
All functions are pure.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

G = 9.81
FLOW_PIXELS = 30
DEFAULT_FOV = math.radians(25.0)

# Tetrahedral layout on the unit cube, arena units.
DEFAULT_ANCHORS = ((0.0, 0.0, 0.0), (1.0, 1.0, 0.0), (0.0, 1.0, 1.0), (1.0, 0.0, 1.0))
SQRT2 = math.sqrt(2.0)


class SensorError(ValueError):
    pass


class NonFinite(SensorError):
    pass


class DegenerateGeometry(SensorError):
    pass


class Inconsistent(SensorError):
    pass


class OutOfRange(SensorError):
    pass


@dataclass(frozen=True)
class ImuRaw:
    accel_unit: tuple[float, float, float]
    gyro_dps: tuple[float, float, float]


@dataclass(frozen=True)
class FlowRaw:
    delta_px_x: float
    delta_px_y: float
    height_m: float
    mount_angle_alpha: float = 0.0
    fov_theta: float = DEFAULT_FOV

    def __post_init__(self):
        if not self.height_m > 0:
            raise DegenerateGeometry("sensor height must be positive")
        if not 0 < self.fov_theta < math.pi:
            raise DegenerateGeometry("field of view must lie in (0, pi)")
        if abs(self.mount_angle_alpha) >= (math.pi - self.fov_theta) / 2:
            raise DegenerateGeometry("mount angle tilts the view cone past the horizon")


@dataclass(frozen=True)
class AnchorLayout:
    positions: tuple = DEFAULT_ANCHORS
    scale: float = 1.0  # meters per arena unit

    def __post_init__(self):
        if not self.scale > 0:
            raise SensorError("anchor scale must be positive")
        pos = np.asarray(self.positions, dtype=float)
        if pos.shape != (4, 3) or not np.allclose(pos, DEFAULT_ANCHORS):
            # the closed form below is specific to this layout
            raise SensorError("only the tetrahedral unit-cube anchor layout is supported")

    def anchors_m(self) -> np.ndarray:
        return np.asarray(self.positions, dtype=float) * self.scale


@dataclass(frozen=True)
class UwbRanges:
    d: tuple[float, float, float, float]


def imu_to_si(raw: ImuRaw) -> tuple[np.ndarray, np.ndarray]:
    """Return (acceleration m/s^2, angular rate rad/s)."""
    accel = np.asarray(raw.accel_unit, dtype=float)
    gyro = np.asarray(raw.gyro_dps, dtype=float)
    if accel.shape != (3,) or gyro.shape != (3,):
        raise SensorError("IMU vectors must have three components")
    if not (np.all(np.isfinite(accel)) and np.all(np.isfinite(gyro))):
        raise NonFinite("IMU reading contains non-finite values")
    return accel * G, np.deg2rad(gyro)


def flow_footprint(height_m: float, alpha: float, fov: float = DEFAULT_FOV) -> float:
    """Ground length imaged across the sensor's pixel row, in meters.

    ``h*cot(beta) - a`` with ``beta = (pi - fov)/2 - alpha`` and the near edge
    offset ``a = h*tan(alpha - fov/2)``.
    """
    beta = (math.pi - fov) / 2 - alpha
    if beta <= 0 or beta >= math.pi / 2:
        raise DegenerateGeometry(f"beta={beta:.4f} rad leaves (0, pi/2)")
    near = height_m * math.tan(alpha - fov / 2)
    return height_m / math.tan(beta) - near


def meters_per_pixel(height_m: float, alpha: float, fov: float = DEFAULT_FOV) -> float:
    return flow_footprint(height_m, alpha, fov) / FLOW_PIXELS


def flow_to_velocity(raw: FlowRaw) -> tuple[float, float]:
    if not (math.isfinite(raw.delta_px_x) and math.isfinite(raw.delta_px_y)):
        raise NonFinite("flow reading contains non-finite values")
    mpp = meters_per_pixel(raw.height_m, raw.mount_angle_alpha, raw.fov_theta)
    return raw.delta_px_x * mpp, raw.delta_px_y * mpp


def uwb_offset_b(d_i: float, d_j: float) -> float:
    """Distance from anchor i to the foot of the perpendicular from the robot.

    Both anchors are sqrt(2) apart; distances are in arena units.
    """
    return (d_i * d_i - d_j * d_j + 2.0) / (2.0 * SQRT2)


def _intercepts(d: np.ndarray) -> dict[str, float]:
    # Pairs through anchor 0 give m = sqrt2*b directly; the opposite pairs use
    # the mirrored line, hence 1 - sqrt2*b.
    d0, d1, d2, d3 = d
    return {
        "01": SQRT2 * uwb_offset_b(d0, d1),
        "02": SQRT2 * uwb_offset_b(d0, d2),
        "03": SQRT2 * uwb_offset_b(d0, d3),
        "23": 1.0 - SQRT2 * uwb_offset_b(d2, d3),
        "13": 1.0 - SQRT2 * uwb_offset_b(d1, d3),
        "12": 1.0 - SQRT2 * uwb_offset_b(d1, d2),
    }


def uwb_estimates(d_arena) -> np.ndarray:
    """Both closed-form estimates of each coordinate, shape (3, 2).

    With m01 = x+y, m23 = y-x, m02 = y+z, m13 = y-z, m03 = x+z, m12 = x-z.
    """
    m = _intercepts(np.asarray(d_arena, dtype=float))
    return np.array([
        [(m["01"] - m["23"]) / 2, (m["03"] + m["12"]) / 2],
        [(m["01"] + m["23"]) / 2, (m["02"] + m["13"]) / 2],
        [(m["02"] - m["13"]) / 2, (m["03"] - m["12"]) / 2],
    ])


def uwb_solve_position(
    ranges: UwbRanges,
    layout: AnchorLayout = AnchorLayout(),
    gate: float = 0.1,
    range_gate: float | None = None,
) -> tuple[np.ndarray, float]:
    """Solve (x, y, z) in meters from four anchor ranges.

    Returns the averaged position and the largest disagreement between the two
    redundant estimates of any coordinate (arena units).  ``gate`` bounds that
    disagreement; ``range_gate`` bounds each range in arena units (defaults to
    the cube diagonal plus 0.5).
    """
    d = np.asarray(ranges.d, dtype=float)
    if d.shape != (4,):
        raise SensorError("expected exactly four ranges")
    if not np.all(np.isfinite(d)):
        raise NonFinite("range reading contains non-finite values")
    if np.any(d < 0):
        raise OutOfRange("negative range")
    d = d / layout.scale
    limit = math.sqrt(3.0) + 0.5 if range_gate is None else range_gate
    if np.any(d > limit):
        raise OutOfRange(f"range beyond gate {limit:.3f} arena units")
    est = uwb_estimates(d)
    residual = float(np.max(np.abs(est[:, 0] - est[:, 1])))
    if residual > gate:
        raise Inconsistent(f"redundant estimates disagree by {residual:.4f}")
    return est.mean(axis=1) * layout.scale, residual


def uwb_position_jacobian(d_m, layout: AnchorLayout = AnchorLayout()) -> np.ndarray:
    """d(position meters)/d(range meters), shape (3, 4); the solver is quadratic in d."""
    d = np.asarray(d_m, dtype=float) / layout.scale
    # each averaged coordinate is sum_k c_k * d_k^2 + const (arena units)
    c = np.array([
        [0.25, -0.25, 0.25, -0.25],   # x
        [0.25, -0.25, -0.25, 0.25],   # y
        [0.25, 0.25, -0.25, -0.25],   # z
    ])
    return c * 2.0 * d[None, :]


def uwb_position_covariance(d_m, sigma_m: float, layout: AnchorLayout = AnchorLayout()) -> np.ndarray:
    J = uwb_position_jacobian(d_m, layout)
    return sigma_m ** 2 * (J @ J.T)


def anchor_distances(point_m, layout: AnchorLayout = AnchorLayout()) -> np.ndarray:
    return np.linalg.norm(layout.anchors_m() - np.asarray(point_m, dtype=float)[None, :], axis=1)
