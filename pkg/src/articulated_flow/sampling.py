"""Generation-time machinery: fixed-step Euler and Heun integrators, the
latent-then-point sampling pipeline, neural-simulator mode and slerp in
shape-code space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nets import FlowModel
from .tensor import NonFiniteError, Tensor, no_tape


@dataclass
class IntegratorConfig:
    method: str = "heun"
    latent_steps: int = 50
    point_steps: int = 100

    def __post_init__(self):
        if self.method not in ("euler", "heun"):
            raise ValueError(f"unknown integrator {self.method!r}")
        if self.latent_steps < 1 or self.point_steps < 1:
            raise ValueError("step counts must be >= 1")


def heun_integrate(field, x0: np.ndarray, n_steps: int) -> np.ndarray:
    """Improved Euler from t=0 to t=1 in n_steps fixed steps.

    field(x, t) -> velocity with x's shape; conditions are closed over.
    """
    h = 1.0 / n_steps
    x = np.array(x0, dtype=np.float64)
    t = 0.0
    for s in range(n_steps):
        k1 = field(x, t)
        k2 = field(x + h * k1, t + h)
        x = x + (h / 2.0) * (k1 + k2)
        t += h
        if not np.all(np.isfinite(x)):
            raise NonFiniteError(f"heun: non-finite state at step {s + 1}")
    return x


def euler_integrate(field, x0: np.ndarray, n_steps: int) -> np.ndarray:
    """Explicit Euler from t=0 to t=1 in n_steps fixed steps."""
    h = 1.0 / n_steps
    x = np.array(x0, dtype=np.float64)
    t = 0.0
    for s in range(n_steps):
        x = x + h * field(x, t)
        t += h
        if not np.all(np.isfinite(x)):
            raise NonFiniteError(f"euler: non-finite state at step {s + 1}")
    return x


def integrate(method: str, field, x0: np.ndarray, n_steps: int) -> np.ndarray:
    if method == "heun":
        return heun_integrate(field, x0, n_steps)
    if method == "euler":
        return euler_integrate(field, x0, n_steps)
    raise ValueError(f"unknown integrator {method!r}")


def _latent_field(model: FlowModel, z_a: Tensor):
    def field(y, t):
        b = y.shape[0]
        with no_tape():
            out = model.latent_velocity(
                Tensor(y), Tensor(np.full((b, 1), t)), z_a)
        return out.data

    return field


def _point_field(model: FlowModel, z_x: Tensor, z_a: Tensor):
    def field(x, t):
        b = x.shape[0]
        with no_tape():
            out = model.point_velocity(
                Tensor(x), Tensor(np.full((b, 1), t)), z_x, z_a)
        return out.data

    return field


def encode_action(model: FlowModel, action: np.ndarray) -> Tensor:
    action = np.atleast_2d(np.asarray(action, dtype=np.float64))
    with no_tape():
        return model.action_encoder(Tensor(action))


def sample_shape_code(model: FlowModel, z_a: Tensor,
                      config: IntegratorConfig, rng: np.random.Generator,
                      batch: int = 1) -> np.ndarray:
    """Latent flow: transport q0 noise to a shape code under the action."""
    y0 = rng.standard_normal((batch, model.code_dim))
    return integrate(config.method, _latent_field(model, z_a), y0,
                     config.latent_steps)


def decode_points(model: FlowModel, z_x: np.ndarray, z_a: Tensor,
                  n_points: int, config: IntegratorConfig,
                  rng: np.random.Generator) -> np.ndarray:
    """Point flow: transport p0 noise to a cloud under (shape code, action)."""
    batch = z_x.shape[0]
    x0 = rng.standard_normal((batch, n_points, model.point_dim))
    out = integrate(config.method, _point_field(model, Tensor(z_x), z_a), x0,
                    config.point_steps)
    return out


def sample(model: FlowModel, action: np.ndarray, n_points: int,
           config: IntegratorConfig, rng: np.random.Generator) -> np.ndarray:
    """Full generation: action -> latent ODE -> point ODE -> (N, d) cloud."""
    z_a = encode_action(model, action)
    z_x = sample_shape_code(model, z_a, config, rng)
    return decode_points(model, z_x, z_a, n_points, config, rng)[0]


def simulate(model: FlowModel, reference: np.ndarray, action: np.ndarray,
             n_points: int, config: IntegratorConfig,
             rng: np.random.Generator) -> np.ndarray:
    """Neural-simulator mode: encode a dataset cloud (bypassing the latent
    flow) and integrate the point flow under the commanded action."""
    reference = np.asarray(reference, dtype=np.float64)
    if reference.ndim != 2 or reference.shape[1] != model.point_dim:
        raise ValueError(
            f"reference cloud must be (N, {model.point_dim}), got {reference.shape}")
    with no_tape():
        z_x = model.shape_encoder(Tensor(reference[None]))
    z_a = encode_action(model, action)
    return decode_points(model, z_x.data, z_a, n_points, config, rng)[0]


def slerp(z0: np.ndarray, z1: np.ndarray, alpha: float) -> np.ndarray:
    """Spherical linear interpolation along the great circle of the two
    normalized directions; magnitudes are carried by the sine weights.

    Falls back to linear interpolation when the angle is below 1e-6.
    """
    z0 = np.asarray(z0, dtype=np.float64)
    z1 = np.asarray(z1, dtype=np.float64)
    n0 = np.linalg.norm(z0)
    n1 = np.linalg.norm(z1)
    if n0 == 0.0 or n1 == 0.0:
        raise ValueError("slerp requires nonzero latent codes")
    cos_phi = np.clip(np.dot(z0 / n0, z1 / n1), -1.0, 1.0)
    phi = np.arccos(cos_phi)
    if phi < 1e-6:
        return (1.0 - alpha) * z0 + alpha * z1
    s = np.sin(phi)
    return (np.sin((1.0 - alpha) * phi) / s) * z0 + (np.sin(alpha * phi) / s) * z1
