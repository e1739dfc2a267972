"""Agent dynamics models and the disturbance sampler.

All models expose the control-affine structure xdot = drift + g(x) u + w
with g(x) g(x)^T positive definite, so the funnel controller's -g^T
feedback is always well posed.

The omnidirectional robot follows the three-wheel kinematics

    xdot = -f(x, others) + A(theta) (B^T)^-1 R u + w,

with state (px, py, theta), wheel speeds u, rotation A(theta), wheel
geometry matrix B (rows: the three wheel directions and the body-radius
column), wheel radius R, and a soft pairwise repulsion

    f_i = sum_j k * [(p_i - p_j), 0] / (||p_i - p_j|| + eps_c)

that discourages collisions without any safety guarantee. Note the drift
enters with a minus sign for this model; the generic affine model uses
the plain +f convention.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidParameterError


class OmniRobot:
    """Omnidirectional three-wheel robot, state (px, py, theta)."""

    kind = "omnirobot"
    dim = 3
    input_dim = 3
    pos_idx = (0, 1)

    def __init__(self, wheel_radius: float = 0.05, body_radius: float = 0.3,
                 coupling_gain: float = 0.1, coupling_eps: float = 1e-4):
        if wheel_radius <= 0 or body_radius <= 0:
            raise InvalidParameterError("wheel and body radii must be positive")
        self.wheel_radius = wheel_radius
        self.body_radius = body_radius
        self.coupling_gain = coupling_gain
        self.coupling_eps = coupling_eps
        c30, s30 = np.cos(np.pi / 6.0), np.sin(np.pi / 6.0)
        B = np.array([
            [0.0, c30, -c30],
            [-1.0, s30, s30],
            [body_radius, body_radius, body_radius],
        ])
        self._bt_inv_r = np.linalg.inv(B.T) * wheel_radius

    def rotation(self, theta: float) -> np.ndarray:
        c, s = np.cos(theta), np.sin(theta)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])

    def input_matrix(self, x: np.ndarray) -> np.ndarray:
        """g(x) = A(theta) (B^T)^-1 R; invertible, so g g^T is PD."""
        return self.rotation(x[2]) @ self._bt_inv_r

    def coupling(self, x: np.ndarray, others) -> np.ndarray:
        """Repulsive drift f_i; others is an iterable of neighbor positions."""
        f = np.zeros(3)
        if self.coupling_gain == 0.0:
            return f
        p = x[:2]
        for q in others:
            rel = p - q
            f[:2] += self.coupling_gain * rel / (np.linalg.norm(rel) + self.coupling_eps)
        return f

    def derivative(self, x, u, others, w) -> np.ndarray:
        return -self.coupling(x, others) + self.input_matrix(x) @ u + w


class SingleIntegrator:
    """Planar single integrator: xdot = u + w."""

    kind = "single-integrator"
    dim = 2
    input_dim = 2
    pos_idx = (0, 1)

    def input_matrix(self, x: np.ndarray) -> np.ndarray:
        return np.eye(2)

    def derivative(self, x, u, others, w) -> np.ndarray:
        return u + w


class CustomAffine:
    """Generic control-affine model xdot = A x + b + G u + w.

    The drift keeps the plain positive sign; G G^T must be positive
    definite, checked at construction.
    """

    kind = "custom-affine"

    def __init__(self, A, b, G, pos_idx=(0, 1)):
        self.A = np.asarray(A, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.G = np.asarray(G, dtype=float)
        self.dim = self.A.shape[0]
        self.input_dim = self.G.shape[1]
        self.pos_idx = tuple(pos_idx)
        if self.A.shape != (self.dim, self.dim) or self.b.shape != (self.dim,):
            raise InvalidParameterError("inconsistent drift dimensions")
        if self.G.shape[0] != self.dim:
            raise InvalidParameterError("inconsistent input matrix dimensions")
        if np.linalg.eigvalsh(self.G @ self.G.T)[0] <= 0:
            raise InvalidParameterError("G G^T must be positive definite")

    def input_matrix(self, x: np.ndarray) -> np.ndarray:
        return self.G

    def derivative(self, x, u, others, w) -> np.ndarray:
        return self.A @ x + self.b + self.G @ u + w


def make_dynamics(kind: str, params: dict):
    if kind == "omnirobot":
        return OmniRobot(
            wheel_radius=params.get("wheel_radius", 0.05),
            body_radius=params.get("body_radius", 0.3),
            coupling_gain=params.get("coupling_gain", 0.1),
            coupling_eps=params.get("coupling_eps", 1e-4),
        )
    if kind == "single-integrator":
        return SingleIntegrator()
    if kind == "custom-affine":
        return CustomAffine(params["A"], params["b"], params["G"],
                            pos_idx=tuple(params.get("pos_idx", (0, 1))))
    raise InvalidParameterError(f"unknown dynamics kind {kind!r}")


def sample_disturbance(rng: np.random.Generator, w_max: float, shape) -> np.ndarray:
    """One uniform draw in [-w_max, w_max]^shape, held for a whole step."""
    if w_max < 0:
        raise InvalidParameterError("w_max must be nonnegative")
    if w_max == 0.0:
        return np.zeros(shape)
    return rng.uniform(-w_max, w_max, size=shape)
