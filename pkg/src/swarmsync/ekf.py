"""Extended Kalman filter over the planar state (x, y, vx, vy, theta).

Two forecast models are available.  ``corrected`` (default) is first-order
kinematics; ``literal`` uses squared velocity and input terms and exists for
comparison only.  The measurement vector is
(gyro_z, flow_vx, flow_vy, pos_x, pos_y); channels without a fresh reading are
carried with a very large variance and zero innovation, so a step with no
sensor input reduces to the pure forecast.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional

import numpy as np

from .pubsub import BoundedQueue, Broker, make_publisher
from .sensors import (
    AnchorLayout,
    FlowRaw,
    ImuRaw,
    UwbRanges,
    flow_to_velocity,
    imu_to_si,
    meters_per_pixel,
    uwb_position_covariance,
    uwb_solve_position,
)

CORRECTED = "corrected"
LITERAL = "literal"

GYRO, FLOW_X, FLOW_Y, POS_X, POS_Y = range(5)
# state index observed by each measurement channel (gyro is folded onto theta)
_OBSERVED = (4, 2, 3, 0, 1)
H = np.zeros((5, 5))
for _row, _col in enumerate(_OBSERVED):
    H[_row, _col] = 1.0

STATE_TOPIC = 1
IMU_TOPIC = 2
FLOW_TOPIC = 3
UWB_TOPIC = 4

IMU_FMT = "<6d"
FLOW_FMT = "<5d"
UWB_FMT = "<4d"
STATE_FMT = "<5d"


class FilterError(ArithmeticError):
    pass


class NonFinite(FilterError):
    pass


class CovarianceNotPSD(FilterError):
    pass


class SingularInnovation(FilterError):
    pass


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    w = math.remainder(a, 2 * math.pi)
    return math.pi if w == -math.pi else w


@dataclass
class RobotState:
    x: float = 0.0
    y: float = 0.0
    vx: float = 0.0
    vy: float = 0.0
    theta: float = 0.0
    P: np.ndarray = field(default_factory=lambda: np.eye(5))

    @classmethod
    def from_vector(cls, X, P) -> "RobotState":
        X = np.asarray(X, dtype=float)
        return cls(float(X[0]), float(X[1]), float(X[2]), float(X[3]), wrap_angle(float(X[4])),
                   np.array(P, dtype=float))

    def vector(self) -> np.ndarray:
        return np.array([self.x, self.y, self.vx, self.vy, self.theta])

    def copy(self) -> "RobotState":
        return replace(self, P=self.P.copy())

    def pack(self) -> bytes:
        return struct.pack(STATE_FMT, self.x, self.y, self.vx, self.vy, self.theta)


@dataclass(frozen=True)
class ControlInput:
    u_a: float = 0.0
    u_theta: float = 0.0
    delta: float = 0.02

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("step period must be positive")


@dataclass
class Measurement:
    z: np.ndarray = field(default_factory=lambda: np.zeros(5))
    r_diag: np.ndarray = field(default_factory=lambda: np.full(5, 1e6))
    fresh: np.ndarray = field(default_factory=lambda: np.zeros(5, dtype=bool))


@dataclass
class NoiseConfig:
    Q: np.ndarray = field(default_factory=lambda: np.diag([0.0, 0.0, 1.6e-5, 1.6e-5, 4e-8]))
    r_fresh: Mapping[str, float] = field(
        default_factory=lambda: {"gyro": 1e-4, "flow": 1e-3, "uwb": 1e-2}
    )
    r_stale: float = 1e6

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        if Q.shape != (5, 5) or not np.allclose(Q, Q.T):
            raise ValueError("Q must be a symmetric 5x5 matrix")
        if np.linalg.eigvalsh(Q).min() < -1e-12:
            raise ValueError("Q must be positive semi-definite")
        self.Q = Q
        if self.r_stale < 1e3 * max(self.r_fresh.values()):
            raise ValueError("r_stale must dominate every fresh variance by 1e3")

    @classmethod
    def from_sigmas(cls, accel_sigma: float, turn_sigma: float, delta: float, **kw) -> "NoiseConfig":
        """Process noise for white acceleration/turn-rate disturbances over one step."""
        q = [0.0, 0.0, (accel_sigma * delta) ** 2, (accel_sigma * delta) ** 2, (turn_sigma * delta) ** 2]
        return cls(Q=np.diag(q), **kw)


def forecast(X: np.ndarray, u: ControlInput, mode: str = CORRECTED) -> np.ndarray:
    x, y, vx, vy, th = X
    d = u.delta
    if mode == CORRECTED:
        th_n = th + d * u.u_theta
        return np.array([
            x + d * vx,
            y + d * vy,
            vx + d * u.u_a * math.cos(th_n),
            vy + d * u.u_a * math.sin(th_n),
            th_n,
        ])
    if mode == LITERAL:
        turn = d * u.u_theta ** 2 / 2
        thrust = d * u.u_a ** 2 / 2
        return np.array([
            x + d * vx ** 2 / 2,
            y + d * vy ** 2 / 2,
            vx + thrust * math.cos(turn),
            vy + thrust * math.sin(turn),
            th + turn,
        ])
    raise ValueError(f"unknown dynamics mode {mode!r}")


def jacobian_f(state, u: ControlInput, mode: str = CORRECTED) -> np.ndarray:
    X = state.vector() if isinstance(state, RobotState) else np.asarray(state, dtype=float)
    d = u.delta
    F = np.eye(5)
    if mode == CORRECTED:
        th_n = X[4] + d * u.u_theta
        F[0, 2] = d
        F[1, 3] = d
        F[2, 4] = -d * u.u_a * math.sin(th_n)
        F[3, 4] = d * u.u_a * math.cos(th_n)
    elif mode == LITERAL:
        F[0, 2] = d * X[2]
        F[1, 3] = d * X[3]
    else:
        raise ValueError(f"unknown dynamics mode {mode!r}")
    return F


def _check_psd(P: np.ndarray) -> np.ndarray:
    P = (P + P.T) / 2
    w, V = np.linalg.eigh(P)
    if w.min() < -1e-9:
        raise CovarianceNotPSD(f"covariance eigenvalue {w.min():.3e}")
    if w.min() < 0:
        P = (V * np.clip(w, 0, None)) @ V.T
        P = (P + P.T) / 2
    return P


def predict(state: RobotState, u: ControlInput, noise: NoiseConfig, mode: str = CORRECTED) -> RobotState:
    X = state.vector()
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(state.P))):
        raise NonFinite("state contains non-finite values")
    F = jacobian_f(X, u, mode)
    Xn = forecast(X, u, mode)
    Pn = F @ state.P @ F.T + noise.Q
    try:
        Pn = _check_psd(Pn)
    except CovarianceNotPSD:
        # one retry on the symmetrized product before giving up
        Pn = _check_psd(F @ ((state.P + state.P.T) / 2) @ F.T + noise.Q)
    if not np.all(np.isfinite(Xn)):
        raise NonFinite("forecast produced non-finite values")
    return RobotState.from_vector(Xn, Pn)


def measure(state: RobotState, theta_prev: float, delta: float) -> np.ndarray:
    """h(X): gyro as the heading increment over the step, then velocities and position."""
    return np.array([
        wrap_angle(state.theta - theta_prev) / delta,
        state.vx,
        state.vy,
        state.x,
        state.y,
    ])


def correct(
    state: RobotState,
    z: Measurement,
    theta_prev: Optional[float] = None,
    delta: float = 1.0,
    joseph: bool = False,
) -> tuple[RobotState, np.ndarray, np.ndarray]:
    """Measurement update.

    Returns the posterior state plus the innovation vector and the diagonal of
    its covariance (both in the internal, heading-scaled parameterization).
    The gyro channel is rewritten as a direct heading observation
    ``theta_prev + delta*gyro`` with variance ``delta**2 * r`` so that the
    measurement Jacobian stays a selection matrix.
    """
    Xp = state.vector()
    if theta_prev is None:
        theta_prev = state.theta
    hx = measure(state, theta_prev, delta)
    zz = np.array(z.z, dtype=float)
    r = np.array(z.r_diag, dtype=float)
    if np.any(r <= 0):
        raise ValueError("measurement variances must be positive")
    fresh = np.asarray(z.fresh, dtype=bool)
    zz[~fresh] = hx[~fresh]

    innov = zz - hx
    innov[GYRO] = wrap_angle(innov[GYRO] * delta)
    r = r.copy()
    r[GYRO] *= delta ** 2

    P = state.P
    S = H @ P @ H.T + np.diag(r)
    try:
        K = np.linalg.solve(S.T, (P @ H.T).T).T
    except np.linalg.LinAlgError as exc:
        raise SingularInnovation(str(exc)) from exc
    if not np.all(np.isfinite(K)):
        raise SingularInnovation("non-finite gain")
    Xn = Xp + K @ innov
    IKH = np.eye(5) - K @ H
    if joseph:
        Pn = IKH @ P @ IKH.T + K @ np.diag(r) @ K.T
    else:
        Pn = IKH @ P
    Pn = _check_psd(Pn)
    return RobotState.from_vector(Xn, Pn), innov, np.diag(S).copy()


class KalmanNode:
    """Filter task wired into a broker.

    Subscribes to the IMU, flow and UWB topics through capacity-1 overwrite
    inboxes, assembles a measurement from whatever arrived since the last step,
    runs forecast + correction, publishes the posterior on the state topic and
    resets the measurement to all-stale.
    """

    def __init__(
        self,
        broker: Broker,
        state: RobotState,
        noise: NoiseConfig,
        layout: AnchorLayout = AnchorLayout(),
        mode: str = CORRECTED,
        uwb_sigma: Optional[float] = None,
        flow_sigma_px: Optional[float] = None,
        state_topic: int = STATE_TOPIC,
        joseph: bool = False,
    ):
        self.state = state
        self.noise = noise
        self.layout = layout
        self.mode = mode
        self.uwb_sigma = uwb_sigma
        self.flow_sigma_px = flow_sigma_px
        self.joseph = joseph
        self.inboxes = {t: BoundedQueue(1) for t in (IMU_TOPIC, FLOW_TOPIC, UWB_TOPIC)}
        self.arrivals: list[int] = []
        for topic, box in self.inboxes.items():
            broker.subscribe(topic, self.arrivals.append, box)
        self._publish = make_publisher(broker, state_topic, struct.calcsize(STATE_FMT))
        self.last_innovation: Optional[np.ndarray] = None
        self.last_s: Optional[np.ndarray] = None
        self.last_fresh: Optional[np.ndarray] = None
        self.rejected = 0

    def assemble(self) -> Measurement:
        m = Measurement(r_diag=np.full(5, self.noise.r_stale))
        rf = self.noise.r_fresh
        raw = self.inboxes[IMU_TOPIC].get()
        if raw is not None:
            vals = struct.unpack(IMU_FMT, raw)
            _, gyro = imu_to_si(ImuRaw(tuple(vals[:3]), tuple(vals[3:])))
            m.z[GYRO] = gyro[2]
            m.r_diag[GYRO] = rf["gyro"]
            m.fresh[GYRO] = True
        raw = self.inboxes[FLOW_TOPIC].get()
        if raw is not None:
            flow = FlowRaw(*struct.unpack(FLOW_FMT, raw))
            m.z[FLOW_X], m.z[FLOW_Y] = flow_to_velocity(flow)
            var = rf["flow"]
            if self.flow_sigma_px is not None:
                mpp = meters_per_pixel(flow.height_m, flow.mount_angle_alpha, flow.fov_theta)
                var = max((self.flow_sigma_px * mpp) ** 2, 1e-12)
            m.r_diag[FLOW_X] = m.r_diag[FLOW_Y] = var
            m.fresh[FLOW_X] = m.fresh[FLOW_Y] = True
        raw = self.inboxes[UWB_TOPIC].get()
        if raw is not None:
            d = struct.unpack(UWB_FMT, raw)
            try:
                pos, _ = uwb_solve_position(UwbRanges(d), self.layout)
            except ValueError:
                self.rejected += 1
            else:
                m.z[POS_X], m.z[POS_Y] = pos[0], pos[1]
                if self.uwb_sigma is not None:
                    cov = uwb_position_covariance(d, self.uwb_sigma, self.layout)
                    m.r_diag[POS_X] = max(cov[0, 0], 1e-12)
                    m.r_diag[POS_Y] = max(cov[1, 1], 1e-12)
                else:
                    m.r_diag[POS_X] = m.r_diag[POS_Y] = rf["uwb"]
                m.fresh[POS_X] = m.fresh[POS_Y] = True
        return m

    def step(self, u: ControlInput) -> RobotState:
        self.state = kalman_step(self, u)
        return self.state


def kalman_step(node: KalmanNode, u: ControlInput, pending: Optional[Measurement] = None) -> RobotState:
    """One filter cycle: assemble, forecast, correct, publish, reset."""
    z = node.assemble() if pending is None else pending
    prior = node.state
    forecasted = predict(prior, u, node.noise, node.mode)
    post, innov, s = correct(forecasted, z, prior.theta, u.delta, node.joseph)
    node.last_innovation, node.last_s, node.last_fresh = innov, s, np.asarray(z.fresh).copy()
    node.state = post
    node._publish(post.pack())
    node.arrivals.clear()
    return post
