"""Learned components: shape encoder, action encoder, time embedding,
FiLM conditioning and the two velocity networks.

All blocks operate on float64 Tensors from :mod:`.tensor` and expose
``parameters()`` in a deterministic order for the optimizer and for
checkpointing. Construction is a pure function of (sizes, seed).
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Parameter, ShapeError, Tensor


class Linear:
    """Affine map. Weight is (in, out); bias broadcasts over leading axes."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator,
                 name: str, zero_init: bool = False):
        if zero_init:
            w = np.zeros((n_in, n_out))
        else:
            w = rng.standard_normal((n_in, n_out)) / np.sqrt(n_in)
        self.weight = Parameter(w, name=f"{name}.weight")
        self.bias = Parameter(np.zeros(n_out), name=f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, self.weight), self.bias)

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]


class MLP:
    """Linear stack with SiLU between layers (none after the last)."""

    def __init__(self, widths: list[int], rng: np.random.Generator, name: str,
                 zero_init_last: bool = False):
        self.layers = []
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            last = i == len(widths) - 2
            self.layers.append(
                Linear(a, b, rng, f"{name}.layer{i}", zero_init=zero_init_last and last)
            )

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = T.silu(x)
        return x

    def parameters(self) -> list[Parameter]:
        return [p for l in self.layers for p in l.parameters()]


class TimeEmbedding:
    """Sinusoidal features of t with geometric frequencies, one affine to D."""

    def __init__(self, out_dim: int, rng: np.random.Generator,
                 name: str = "time_embed", n_features: int = 32):
        if n_features % 2 != 0:
            raise ValueError("n_features must be even (sin/cos pairs)")
        half = n_features // 2
        # frequencies 1 .. 100, geometric
        freqs = np.geomspace(1.0, 100.0, half)
        self.freqs = Tensor(freqs.reshape(1, half))
        self.proj = Linear(n_features, out_dim, rng, f"{name}.proj")
        self.out_dim = out_dim

    def __call__(self, t: Tensor) -> Tensor:
        """t: (B, 1) -> (B, D)."""
        phase = T.matmul(t, _const_weight(self.freqs))
        feats = T.concat([T.sin(phase), T.cos(phase)], axis=1)
        return self.proj(feats)

    def parameters(self) -> list[Parameter]:
        return self.proj.parameters()


def _const_weight(t: Tensor) -> Tensor:
    # fresh wrapper so gradient accumulation into constants never aliases
    return Tensor(t.data)


class ActionEncoder:
    """Fourier lift of padded joint angles followed by an MLP to dim D.

    The frequency matrix holds `n_freqs` Gaussian frequencies per joint,
    drawn once from the given seed with scale sigma and frozen.
    """

    def __init__(self, n_joints: int, out_dim: int, hidden: int,
                 fourier_seed: int, sigma: float = 1.0, n_freqs: int = 32,
                 name: str = "action_encoder", rng: np.random.Generator | None = None):
        self.n_joints = n_joints
        self.out_dim = out_dim
        self.fourier_seed = int(fourier_seed)
        self.sigma = float(sigma)
        self.n_freqs = n_freqs
        freq_rng = np.random.default_rng(self.fourier_seed)
        self.freqs = freq_rng.standard_normal((n_joints, n_freqs)) * self.sigma
        if rng is None:
            rng = np.random.default_rng(self.fourier_seed + 1)
        self.mlp = MLP([2 * n_joints * n_freqs, hidden, out_dim], rng, f"{name}.mlp")

    def lift(self, a: Tensor) -> Tensor:
        """(B, J) -> (B, 2*J*F) as [sin block, cos block]."""
        if a.data.ndim != 2 or a.data.shape[1] != self.n_joints:
            raise ShapeError(
                f"action encoder expects (B, {self.n_joints}), got {a.data.shape}"
            )
        b = a.data.shape[0]
        per_joint = T.mul(T.reshape(a, (b, self.n_joints, 1)), Tensor(self.freqs))
        phase = T.reshape(per_joint, (b, self.n_joints * self.n_freqs))
        return T.concat([T.sin(phase), T.cos(phase)], axis=1)

    def __call__(self, a: Tensor) -> Tensor:
        return self.mlp(self.lift(a))

    def parameters(self) -> list[Parameter]:
        return self.mlp.parameters()


class ShapeEncoder:
    """Per-point MLP followed by max-pool over the point axis.

    Output is exactly permutation invariant under the fixed reduction
    order of the pooled max.
    """

    def __init__(self, point_dim: int, out_dim: int, hidden: int,
                 rng: np.random.Generator, name: str = "shape_encoder"):
        self.point_dim = point_dim
        self.out_dim = out_dim
        self.mlp = MLP([point_dim, hidden, hidden, out_dim], rng, f"{name}.mlp")

    def __call__(self, x: Tensor) -> Tensor:
        """(B, N, d) -> (B, D)."""
        if x.data.ndim != 3 or x.data.shape[2] != self.point_dim:
            raise ShapeError(
                f"shape encoder expects (B, N, {self.point_dim}), got {x.data.shape}"
            )
        if x.data.shape[1] < 1:
            raise ShapeError("shape encoder: empty point cloud")
        return T.max_pool(self.mlp(x), axis=1)

    def parameters(self) -> list[Parameter]:
        return self.mlp.parameters()


class FiLMLayer:
    """Condition-dependent feature-wise scale and shift.

    The affine map producing (scale, shift) is zero-initialized so a fresh
    layer is the identity; `frozen=True` pins it there (ablation switch).
    """

    def __init__(self, cond_dim: int, hidden: int, rng: np.random.Generator,
                 name: str, frozen: bool = False):
        self.hidden = hidden
        self.affine = Linear(cond_dim, 2 * hidden, rng, f"{name}.affine",
                             zero_init=True)
        self.frozen = frozen

    def __call__(self, h: Tensor, cond: Tensor) -> Tensor:
        """h: (B, ..., H), cond: (B, D); scale/shift broadcast over middle axes."""
        if self.frozen:
            return h
        ss = self.affine(cond)
        b = ss.data.shape[0]
        mid = (1,) * (h.data.ndim - 2)
        raw_scale = T.reshape(_slice_cols(ss, 0, self.hidden), (b, *mid, self.hidden))
        shift = T.reshape(_slice_cols(ss, self.hidden, 2 * self.hidden),
                          (b, *mid, self.hidden))
        one_plus = T.add(raw_scale, Tensor(np.ones(1)))
        return T.add(T.mul(h, one_plus), shift)

    def parameters(self) -> list[Parameter]:
        return self.affine.parameters()


def _slice_cols(x: Tensor, lo: int, hi: int) -> Tensor:
    """Column slice of a 2-D tensor via a constant selector matrix."""
    n = x.data.shape[1]
    sel = np.zeros((n, hi - lo))
    sel[np.arange(lo, hi), np.arange(hi - lo)] = 1.0
    return T.matmul(x, Tensor(sel))


class ConditionedVelocityNet:
    """Shared trunk for both velocity fields: input projection, FiLM-modulated
    SiLU blocks, zero-initialized output layer."""

    def __init__(self, in_dim: int, hidden: int, n_blocks: int, cond_dim: int,
                 rng: np.random.Generator, name: str, film_frozen: bool = False):
        self.in_dim = in_dim
        self.lin_in = Linear(in_dim, hidden, rng, f"{name}.lin_in")
        self.blocks = []
        for i in range(n_blocks):
            self.blocks.append((
                FiLMLayer(cond_dim, hidden, rng, f"{name}.film{i}", frozen=film_frozen),
                Linear(hidden, hidden, rng, f"{name}.block{i}"),
            ))
        self.lin_out = Linear(hidden, in_dim, rng, f"{name}.lin_out", zero_init=True)

    def __call__(self, x: Tensor, cond: Tensor) -> Tensor:
        h = self.lin_in(x)
        for film, lin in self.blocks:
            h = lin(T.silu(film(h, cond)))
        return self.lin_out(h)

    def parameters(self) -> list[Parameter]:
        out = self.lin_in.parameters()
        for film, lin in self.blocks:
            out += film.parameters() + lin.parameters()
        return out + self.lin_out.parameters()


class AdversaryHead:
    """MLP predicting the padded action vector from the shape code; only ever
    sees the code through a gradient reversal."""

    def __init__(self, code_dim: int, n_joints: int, hidden: int,
                 rng: np.random.Generator, name: str = "adversary"):
        self.mlp = MLP([code_dim, hidden, n_joints], rng, f"{name}.mlp")

    def __call__(self, z_reversed: Tensor) -> Tensor:
        return self.mlp(z_reversed)

    def parameters(self) -> list[Parameter]:
        return self.mlp.parameters()


class FlowModel:
    """All networks of the two-stage flow, built from a NetConfig-like dict."""

    VARIANTS = ("cond", "uncond", "adv")

    def __init__(self, point_dim: int, n_joints: int, code_dim: int = 64,
                 hidden: int = 128, point_blocks: int = 3, latent_blocks: int = 2,
                 encoder_hidden: int = 128, fourier_sigma: float = 1.0,
                 fourier_freqs: int = 32, variant: str = "cond", seed: int = 0,
                 film_frozen: bool = False):
        if variant not in self.VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; expected {self.VARIANTS}")
        self.point_dim = point_dim
        self.n_joints = n_joints
        self.code_dim = code_dim
        self.hidden = hidden
        self.point_blocks = point_blocks
        self.latent_blocks = latent_blocks
        self.encoder_hidden = encoder_hidden
        self.fourier_sigma = fourier_sigma
        self.fourier_freqs = fourier_freqs
        self.variant = variant
        self.seed = int(seed)
        self.film_frozen = film_frozen

        rng = np.random.default_rng(self.seed)
        self.shape_encoder = ShapeEncoder(point_dim, code_dim, encoder_hidden, rng)
        self.action_encoder = ActionEncoder(
            n_joints, code_dim, encoder_hidden,
            fourier_seed=self.seed + 1000, sigma=fourier_sigma,
            n_freqs=fourier_freqs, rng=rng)
        self.point_time = TimeEmbedding(code_dim, rng, name="point_time")
        self.latent_time = TimeEmbedding(code_dim, rng, name="latent_time")
        self.point_net = ConditionedVelocityNet(
            point_dim, hidden, point_blocks, code_dim, rng, "point_net",
            film_frozen=film_frozen)
        self.latent_net = ConditionedVelocityNet(
            code_dim, hidden, latent_blocks, code_dim, rng, "latent_net",
            film_frozen=film_frozen)
        self.adversary = AdversaryHead(code_dim, n_joints, encoder_hidden, rng)

    # conditioning -------------------------------------------------------

    def point_condition(self, z_x: Tensor, z_a: Tensor, t: Tensor) -> Tensor:
        """c = Z_x + Z_a + e_t, all dim D, combined elementwise."""
        _check_dim(z_x, self.code_dim)
        _check_dim(z_a, self.code_dim)
        return T.add(T.add(z_x, z_a), self.point_time(t))

    def latent_condition(self, z_a: Tensor, t: Tensor) -> Tensor:
        """c' = Z_a + e_t for the conditioned variant, e_t alone otherwise."""
        e_t = self.latent_time(t)
        if self.variant == "cond":
            _check_dim(z_a, self.code_dim)
            return T.add(z_a, e_t)
        return e_t

    # velocity fields ----------------------------------------------------

    def point_velocity(self, x_t: Tensor, t: Tensor, z_x: Tensor,
                       z_a: Tensor) -> Tensor:
        if x_t.data.ndim != 3 or x_t.data.shape[2] != self.point_dim:
            raise ShapeError(
                f"point velocity expects (B, N, {self.point_dim}), got {x_t.data.shape}"
            )
        return self.point_net(x_t, self.point_condition(z_x, z_a, t))

    def latent_velocity(self, y_t: Tensor, t: Tensor, z_a: Tensor) -> Tensor:
        _check_dim(y_t, self.code_dim)
        return self.latent_net(y_t, self.latent_condition(z_a, t))

    # bookkeeping --------------------------------------------------------

    def parameters(self) -> list[Parameter]:
        """All trainable parameters except the adversary head's."""
        return (self.shape_encoder.parameters()
                + self.action_encoder.parameters()
                + self.point_time.parameters()
                + self.latent_time.parameters()
                + self.point_net.parameters()
                + self.latent_net.parameters())

    def all_parameters(self) -> list[Parameter]:
        return self.parameters() + self.adversary.parameters()

    def hyperparams(self) -> dict:
        return {
            "point_dim": self.point_dim,
            "n_joints": self.n_joints,
            "code_dim": self.code_dim,
            "hidden": self.hidden,
            "point_blocks": self.point_blocks,
            "latent_blocks": self.latent_blocks,
            "encoder_hidden": self.encoder_hidden,
            "fourier_sigma": self.fourier_sigma,
            "fourier_freqs": self.fourier_freqs,
            "variant": self.variant,
            "seed": self.seed,
            "film_frozen": self.film_frozen,
        }

    @classmethod
    def from_hyperparams(cls, hp: dict) -> "FlowModel":
        return cls(**hp)


def _check_dim(z: Tensor, dim: int) -> None:
    if z.data.ndim != 2 or z.data.shape[1] != dim:
        raise ShapeError(f"expected (B, {dim}) code, got {z.data.shape}")
