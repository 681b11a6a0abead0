"""Joint training of the point flow and the latent flow.

One step: encode the batch, build straight-line flow-matching targets in
point and latent space with independently drawn Beta(2,1) times, regress
both velocity networks, and take one Adam step over the encoders and both
flows. The latent target uses the live shape code (no stop-gradient)
unless configured otherwise. The adversarial variant attaches an
action-regression head behind a gradient reversal in the later part of
training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .nets import FlowModel
from .optim import Adam
from .tensor import NonFiniteError, Tape, Tensor

VARIANTS = ("cond", "uncond", "adv")


@dataclass
class TrainConfig:
    total_steps: int = 20000
    batch_size: int = 8
    lr: float = 1e-3
    lam: float = 1.0                 # latent-loss weight
    variant: str = "cond"
    adv_start_frac: float = 0.5      # adversary activates after this fraction
    grl_max: float = 1.0             # gradient-reversal strength at the end
    seed: int = 0
    stop_gradient_latent_target: bool = False
    log_every: int = 1
    checkpoint_every: int = 5000

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"latent-loss weight must be >= 0, got {self.lam}")
        if not 0.0 <= self.adv_start_frac < 1.0:
            raise ValueError(f"adversary start fraction must be in [0, 1), "
                             f"got {self.adv_start_frac}")
        if self.total_steps <= 0:
            raise ValueError(f"total_steps must be > 0, got {self.total_steps}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")


def sample_time(rng: np.random.Generator, size: int = 1) -> np.ndarray:
    """Beta(2,1) times: density 2t on [0,1], higher mass near t=1."""
    return rng.beta(2.0, 1.0, size=size)


def make_point_target(x0: np.ndarray, x1: np.ndarray,
                      t: np.ndarray) -> tuple:
    """Straight-line interpolant and conditional velocity in point space.

    t broadcasts over trailing axes: pass shape (B, 1, 1) for a batch.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    if x0.shape != x1.shape:
        raise ValueError(f"shape mismatch {x0.shape} vs {x1.shape}")
    x_t = (1.0 - t) * x0 + t * x1
    u_t = x1 - x0
    return x_t, u_t


def make_latent_target(y0: np.ndarray, z_x: Tensor, t: np.ndarray) -> tuple:
    """Interpolant toward the (traced) shape code; velocity z_x - y0.

    Returned tensors keep z_x in the graph so encoder gradients flow
    through the latent objective.
    """
    y0 = np.asarray(y0, dtype=np.float64)
    if y0.shape != z_x.data.shape:
        raise ValueError(f"dim mismatch {y0.shape} vs {z_x.data.shape}")
    y_t = T.add(Tensor((1.0 - t) * y0), T.mul(z_x, Tensor(t)))
    v_t = T.sub(z_x, Tensor(y0))
    return y_t, v_t


def point_loss(u_pred: Tensor, u_t: np.ndarray) -> Tensor:
    """Mean squared error over all batch x point x channel entries."""
    return T.mse(u_pred, Tensor(u_t))


def grl_strength(step: int, config: TrainConfig) -> float:
    """0 before the adversary starts, then a linear ramp to grl_max."""
    start = config.adv_start_frac * config.total_steps
    if step < start or config.total_steps <= start:
        return 0.0
    return config.grl_max * (step - start) / (config.total_steps - start)


@dataclass
class StepResult:
    step: int
    loss: float
    point_loss: float
    latent_loss: float
    adversary_loss: float | None = None

    def record(self) -> dict:
        rec = {"step": self.step, "loss": self.loss,
               "point_loss": self.point_loss, "latent_loss": self.latent_loss}
        if self.adversary_loss is not None:
            rec["adversary_loss"] = self.adversary_loss
        return rec


class Trainer:
    """Owns the model, the optimizers and the training RNG stream."""

    def __init__(self, model: FlowModel, points: np.ndarray,
                 actions: np.ndarray, config: TrainConfig):
        if model.variant != config.variant:
            raise ValueError(
                f"model variant {model.variant!r} != config {config.variant!r}")
        self.model = model
        self.points = np.asarray(points, dtype=np.float64)   # (K, N, d)
        self.actions = np.asarray(actions, dtype=np.float64)  # (K, J)
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        self.optimizer = Adam(model.parameters(), lr=config.lr)
        self.adv_optimizer = Adam(model.adversary.parameters(), lr=config.lr)
        self.step = 0
        self.history: list[dict] = []

    def _adversary_active(self) -> bool:
        return (self.config.variant == "adv"
                and self.step >= self.config.adv_start_frac * self.config.total_steps)

    def train_step(self) -> StepResult:
        cfg = self.config
        b = cfg.batch_size
        n, d = self.points.shape[1], self.points.shape[2]
        code = self.model.code_dim

        idx = self.rng.integers(0, len(self.points), size=b)
        x1 = self.points[idx]
        a = self.actions[idx]
        t_x = sample_time(self.rng, b)
        x0 = self.rng.standard_normal((b, n, d))
        t_z = sample_time(self.rng, b)
        y0 = self.rng.standard_normal((b, code))

        x_t, u_t = make_point_target(x0, x1, t_x.reshape(b, 1, 1))

        self.optimizer.zero_grad()
        self.adv_optimizer.zero_grad()
        adv_loss_val = None
        try:
            with Tape() as tape:
                z_x = self.model.shape_encoder(Tensor(x1))
                z_a = self.model.action_encoder(Tensor(a))

                u_pred = self.model.point_velocity(
                    Tensor(x_t), Tensor(t_x.reshape(b, 1)), z_x, z_a)
                l_point = point_loss(u_pred, u_t)

                z_target = Tensor(z_x.data) if cfg.stop_gradient_latent_target else z_x
                y_t, v_t = make_latent_target(y0, z_target, t_z.reshape(b, 1))
                v_pred = self.model.latent_velocity(
                    y_t, Tensor(t_z.reshape(b, 1)), z_a)
                l_latent = T.mse(v_pred, v_t)

                loss = T.add(l_point, T.scale(l_latent, cfg.lam))

                if self._adversary_active():
                    l_adv = self.adversarial_loss(z_x, a)
                    adv_loss_val = float(l_adv.data)
                    loss = T.add(loss, l_adv)
            tape.backward(loss)
        except NonFiniteError as exc:
            raise NonFiniteError(f"non-finite loss at step {self.step}: {exc}")

        self.optimizer.step()
        if self._adversary_active():
            self.adv_optimizer.step()

        self.step += 1
        result = StepResult(step=self.step, loss=float(loss.data),
                            point_loss=float(l_point.data),
                            latent_loss=float(l_latent.data),
                            adversary_loss=adv_loss_val)
        self.history.append(result.record())
        return result

    def adversarial_loss(self, z_x: Tensor, actions: np.ndarray) -> Tensor:
        """MSE of the head's action prediction; the head sees the shape code
        only through the gradient reversal, so the encoder is pushed to
        *increase* this loss while the head minimizes it."""
        if self.config.variant != "adv":
            raise ValueError("adversarial step requires the 'adv' variant")
        strength = grl_strength(self.step, self.config)
        z_rev = T.gradient_reversal(z_x, strength)
        pred = self.model.adversary(z_rev)
        return T.mse(pred, Tensor(actions))

    def run(self, n_steps: int | None = None, callback=None) -> list[dict]:
        n_steps = self.config.total_steps if n_steps is None else n_steps
        for _ in range(n_steps):
            result = self.train_step()
            if callback is not None:
                callback(result)
        return self.history

    # resume support -----------------------------------------------------

    def training_state(self) -> dict:
        return {
            "step": self.step,
            "rng_state": self.rng.bit_generator.state,
            "optimizer": self.optimizer.state_dict(),
            "adv_optimizer": self.adv_optimizer.state_dict(),
        }

    def load_training_state(self, state: dict) -> None:
        self.step = int(state["step"])
        self.rng.bit_generator.state = state["rng_state"]
        self.optimizer.load_state_dict(state["optimizer"])
        self.adv_optimizer.load_state_dict(state["adv_optimizer"])
