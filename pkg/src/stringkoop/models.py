"""Koopman autoencoders and deep diagonal SSM stacks mapping an initial profile to a trajectory.

Models are immutable pytrees (named tuples of arrays), so ``jax.grad`` and optax
work on them directly.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from .recurrence import (
    EigenParams,
    SsmLayer,
    continuous_eigenvalues,
    eigen_from_polar,
    ic_layer_forward,
    realize_eigenvalues,
    ssm_layer_forward,
    vandermonde_rollout,
)

__all__ = [
    "MODEL_KINDS",
    "ModelDims",
    "Dense",
    "KoopmanModel",
    "SsmStack",
    "LossWeights",
    "mlp_forward",
    "koopman_rollout",
    "koopman_latents",
    "composite_loss",
    "ssm_forward",
    "ssm_loss",
    "predict",
    "model_loss",
    "gradients",
    "initialize",
    "count_parameters",
    "cast",
]

MODEL_KINDS = ("koopman", "koopman_var", "ssm")


class NonFiniteError(FloatingPointError):
    pass


class Dense(NamedTuple):
    weight: jnp.ndarray  # (in, out)
    bias: jnp.ndarray


class KoopmanModel(NamedTuple):
    encoder: tuple
    decoder: tuple
    eigen: EigenParams
    state_mlp: tuple | None = None

    @property
    def latent_dim(self) -> int:
        return self.eigen.count


class SsmStack(NamedTuple):
    ic_layer: SsmLayer
    layers: tuple
    readout: Dense

    @property
    def depth(self) -> int:
        return 1 + len(self.layers)


@dataclass(frozen=True)
class ModelDims:
    """Sizes of every model family. Defaults reproduce the published Koopman sizes."""

    num_points: int = 64
    latent: int = 128
    hidden: int = 192
    state_hidden: int = 192
    ssm_features: int = 64
    ssm_state: int = 64
    depth: int = 8

    def to_dict(self) -> dict:
        return asdict(self)


class LossWeights(NamedTuple):
    prediction: float = 1.0
    encoding: float = 1.0
    consistency: float = 0.01


def silu(x):
    return x * jax.nn.sigmoid(x)


def mlp_forward(layers, x):
    """Dense layers with SiLU between them and no activation after the last."""
    for i, layer in enumerate(layers):
        x = x @ layer.weight + layer.bias
        if i < len(layers) - 1:
            x = silu(x)
    return x


def _to_complex(z):
    n = z.shape[-1] // 2
    return z[..., :n] + 1j * z[..., n:]


def _to_real(z):
    return jnp.concatenate([jnp.real(z), jnp.imag(z)], axis=-1)


def encode(model: KoopmanModel, x):
    return _to_complex(mlp_forward(model.encoder, x))


def state_gain(model: KoopmanModel, z):
    """Complex per-state gain ``1 + MLP(Re(z)^2, Im(z)^2)`` of the state-varying variant."""
    feats = jnp.concatenate([jnp.real(z) ** 2, jnp.imag(z) ** 2], axis=-1)
    return 1.0 + _to_complex(mlp_forward(model.state_mlp, feats))


def decode(model: KoopmanModel, z):
    if model.state_mlp is not None:
        z = z * state_gain(model, z)
    return mlp_forward(model.decoder, _to_real(z))


def koopman_latents(model: KoopmanModel, x0, steps: int):
    """Latent sequence ``Lambda**k phi(x0)`` for ``k = 0 .. steps``; shape (..., steps+1, n)."""
    z0 = encode(model, x0)
    lam = realize_eigenvalues(model.eigen)
    return jnp.concatenate([z0[..., None, :], vandermonde_rollout(lam, z0, steps)], axis=-2)


def koopman_rollout(model: KoopmanModel, x0, steps: int):
    """Decoded frames for ``k = 0 .. steps``; row 0 is the autoencoded ``x0``."""
    return decode(model, koopman_latents(model, x0, steps))


def composite_loss(model: KoopmanModel, batch, weights: LossWeights = LossWeights()):
    """Weighted prediction + encoding + latent-consistency loss, averaged over the batch.

    ``batch`` has shape (B, L, N_x); the prediction and consistency sums run over
    ``k = 1 .. L-1`` and the whole field. Returns ``(total, breakdown)``.
    """
    batch = jnp.asarray(batch)
    steps = batch.shape[-2] - 1
    latents = koopman_latents(model, batch[..., 0, :], steps)
    frames = decode(model, latents)
    pred = jnp.sum((batch[..., 1:, :] - frames[..., 1:, :]) ** 2, axis=(-2, -1))
    enc = jnp.sum((batch[..., 0, :] - frames[..., 0, :]) ** 2, axis=-1)
    cons = jnp.sum(jnp.abs(encode(model, batch[..., 1:, :]) - latents[..., 1:, :]) ** 2, axis=(-2, -1))
    terms = {"prediction": pred.mean(), "encoding": enc.mean(), "consistency": cons.mean()}
    total = (
        weights.prediction * terms["prediction"]
        + weights.encoding * terms["encoding"]
        + weights.consistency * terms["consistency"]
    )
    return total, terms


def ssm_forward(stack: SsmStack, u0, steps: int):
    """Outputs for ``k = 1 .. steps`` from the initial profile ``u0``; shape (..., steps, N_x)."""
    h = ic_layer_forward(stack.ic_layer, u0, steps)
    for layer in stack.layers:
        h = h + silu(ssm_layer_forward(layer, h))
    return h @ stack.readout.weight + stack.readout.bias


def ssm_loss(stack: SsmStack, batch):
    batch = jnp.asarray(batch)
    out = ssm_forward(stack, batch[..., 0, :], batch.shape[-2] - 1)
    mse = jnp.mean((batch[..., 1:, :] - out) ** 2)
    return mse, {"prediction": mse}


def predict(model, x0, length: int):
    """Trajectory of ``length`` rows aligned with the data (row 0 is the initial frame)."""
    if isinstance(model, SsmStack):
        x0 = jnp.asarray(x0)
        out = ssm_forward(model, x0, length - 1)
        return jnp.concatenate([x0[..., None, :].astype(out.dtype), out], axis=-2)
    return koopman_rollout(model, x0, length - 1)


def model_loss(model, batch, weights: LossWeights = LossWeights()):
    if isinstance(model, SsmStack):
        return ssm_loss(model, batch)
    return composite_loss(model, batch, weights)


def gradients(model, batch, weights: LossWeights = LossWeights()):
    """Reverse-mode gradient of the training loss; same pytree structure as ``model``."""
    return jax.grad(lambda m: model_loss(m, batch, weights)[0])(model)


def model_kind(model) -> str:
    if isinstance(model, SsmStack):
        return "ssm"
    return "koopman_var" if model.state_mlp is not None else "koopman"


# ---------------------------------------------------------------- initialisation


def _dense(rng, fan_in: int, fan_out: int) -> Dense:
    bound = 1.0 / np.sqrt(fan_in)
    return Dense(
        jnp.asarray(rng.uniform(-bound, bound, (fan_in, fan_out))),
        jnp.asarray(rng.uniform(-bound, bound, fan_out)),
    )


def _mlp(rng, sizes) -> tuple:
    return tuple(_dense(rng, a, b) for a, b in zip(sizes[:-1], sizes[1:]))


def ring_eigen(rng, n: int, r_min: float = 0.99, r_max: float = 1.0, max_phase: float = np.pi) -> EigenParams:
    """Eigenvalues uniform in magnitude on ``[r_min, r_max)`` and in phase on ``(0, max_phase)``."""
    magnitude = r_min + (r_max - r_min) * rng.uniform(size=n)
    magnitude = np.minimum(magnitude, np.nextafter(1.0, 0.0))
    phase = np.maximum(rng.uniform(size=n) * max_phase, 1e-12)
    return eigen_from_polar(magnitude, phase)


def _ssm_layer(rng, n: int, m_in: int, m_out: int, normalize: bool = True) -> SsmLayer:
    """Random layer; with ``normalize`` the input rows are scaled so a white-noise input
    keeps unit stationary state variance despite eigenvalues close to the unit circle."""
    b_scale = 1.0 / np.sqrt(2 * m_in)
    c_scale = 1.0 / np.sqrt(n)
    eigen = ring_eigen(rng, n)
    row_scale = np.ones((n, 1))
    if normalize:
        a = np.asarray(continuous_eigenvalues(eigen))
        a_bar = np.exp(a)  # delta = 1 at init
        row_scale = (np.sqrt(1 - np.abs(a_bar) ** 2) / np.abs((a_bar - 1) / a))[:, None]
    return SsmLayer(
        eigen=eigen,
        b_re=jnp.asarray(rng.normal(0, b_scale, (n, m_in)) * row_scale),
        b_im=jnp.asarray(rng.normal(0, b_scale, (n, m_in)) * row_scale),
        c_re=jnp.asarray(rng.normal(0, c_scale, (m_out, n))),
        c_im=jnp.asarray(rng.normal(0, c_scale, (m_out, n))),
        feedthrough=jnp.asarray(rng.normal(0, 1.0, m_out) if m_in == m_out else np.zeros(m_out)),
        delta_log=jnp.zeros(n),
    )


def initialize(kind: str, dims: ModelDims = ModelDims(), seed: int = 0):
    """Fresh model of ``kind`` in float64.

    koopman: three dense layers each side; koopman_var: one dense layer each side plus a
    two-layer state MLP; ssm: impulse-driven first layer, ``depth - 1`` residual layers
    and a dense readout.
    """
    rng = np.random.default_rng(seed)
    nx, n = dims.num_points, dims.latent
    if kind == "koopman":
        return KoopmanModel(
            encoder=_mlp(rng, [nx, dims.hidden, dims.hidden, 2 * n]),
            decoder=_mlp(rng, [2 * n, dims.hidden, dims.hidden, nx]),
            eigen=ring_eigen(rng, n),
        )
    if kind == "koopman_var":
        return KoopmanModel(
            encoder=_mlp(rng, [nx, 2 * n]),
            decoder=_mlp(rng, [2 * n, nx]),
            eigen=ring_eigen(rng, n),
            state_mlp=_mlp(rng, [2 * n, dims.state_hidden, 2 * n]),
        )
    if kind == "ssm":
        if dims.depth < 1:
            raise ValueError("ssm depth must be >= 1")
        m, p = dims.ssm_features, dims.ssm_state
        return SsmStack(
            ic_layer=_ssm_layer(rng, p, nx, m, normalize=False),
            layers=tuple(_ssm_layer(rng, p, m, m) for _ in range(dims.depth - 1)),
            readout=_dense(rng, m, nx),
        )
    raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


def count_parameters(model) -> int:
    return int(sum(np.size(leaf) for leaf in jax.tree_util.tree_leaves(model)))


def cast(model, dtype):
    return jax.tree_util.tree_map(lambda a: jnp.asarray(a, dtype=dtype), model)
