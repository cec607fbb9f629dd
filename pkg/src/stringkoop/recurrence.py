"""Diagonal complex linear recurrences: eigenvalue parameterisation, scans and rollouts.

Everything here is written against ``jax.numpy`` so the neural models can
differentiate through it; numpy inputs are accepted and promoted. Complex maps are
stored as separate real/imaginary arrays so gradients stay real-valued.
"""

from __future__ import annotations

from typing import NamedTuple

import jax

jax.config.update("jax_enable_x64", True)

import jax.numpy as jnp  # noqa: E402
import numpy as np  # noqa: E402

__all__ = [
    "EigenParams",
    "SsmLayer",
    "realize_eigenvalues",
    "eigen_from_polar",
    "scan_recurrence",
    "sequential_recurrence",
    "vandermonde_rollout",
    "discretize_zoh",
    "ic_layer_forward",
    "ssm_layer_forward",
]


class EigenParams(NamedTuple):
    """Log-magnitude and log-phase parameters of ``n`` stable complex eigenvalues."""

    nu_log: jnp.ndarray
    theta_log: jnp.ndarray

    @property
    def count(self) -> int:
        return self.nu_log.shape[-1]


class SsmLayer(NamedTuple):
    """One diagonal SSM layer.

    ``b_re/b_im`` have shape (n, m_in), ``c_re/c_im`` shape (m_out, n). The eigen
    parameters describe the continuous-time diagonal ``-exp(nu_log) + i exp(theta_log)``,
    discretised with step ``exp(delta_log)``.
    """

    eigen: EigenParams
    b_re: jnp.ndarray
    b_im: jnp.ndarray
    c_re: jnp.ndarray
    c_im: jnp.ndarray
    feedthrough: jnp.ndarray
    delta_log: jnp.ndarray

    @property
    def input_map(self):
        return self.b_re + 1j * self.b_im

    @property
    def output_map(self):
        return self.c_re + 1j * self.c_im

    @property
    def state_size(self) -> int:
        return self.b_re.shape[0]


def continuous_eigenvalues(eigen: EigenParams):
    return -jnp.exp(eigen.nu_log) + 1j * jnp.exp(eigen.theta_log)


def realize_eigenvalues(eigen: EigenParams):
    """``exp(-exp(nu_log) + i exp(theta_log))``, strictly inside the unit disc."""
    return jnp.exp(continuous_eigenvalues(eigen))


def eigen_from_polar(magnitude, phase) -> EigenParams:
    """Inverse of :func:`realize_eigenvalues` for ``0 < magnitude < 1`` and ``phase > 0``."""
    magnitude = np.asarray(magnitude, dtype=np.float64)
    phase = np.asarray(phase, dtype=np.float64)
    if np.any((magnitude <= 0) | (magnitude >= 1)):
        raise ValueError("eigenvalue magnitudes must lie in (0, 1)")
    with np.errstate(divide="ignore"):
        theta_log = np.log(phase)
    return EigenParams(jnp.asarray(np.log(-np.log(magnitude))), jnp.asarray(theta_log))


def _combine(left, right):
    a1, b1 = left
    a2, b2 = right
    return a1 * a2, a2 * b1 + b2


def scan_recurrence(lam, inputs, x0=None):
    """States of ``x_{k+1} = lam * x_k + u_k`` for ``k = 0 .. L-1`` by associative scan.

    ``inputs`` has shape (..., L, n); ``lam`` broadcasts against (n,). Row ``k`` of the
    result is the state after consuming ``u_k``. Accumulation runs in complex128.
    """
    u = jnp.asarray(inputs).astype(jnp.complex128)
    lam = jnp.asarray(lam).astype(jnp.complex128)
    a = jnp.broadcast_to(lam, u.shape)
    if x0 is not None:
        x0 = jnp.asarray(x0).astype(jnp.complex128)
        u = u.at[..., 0, :].add(lam * x0)
    _, states = jax.lax.associative_scan(_combine, (a, u), axis=u.ndim - 2)
    return states


def sequential_recurrence(lam, inputs, x0=None) -> np.ndarray:
    """Plain loop over time; the reference the scan is checked against."""
    u = np.asarray(inputs, dtype=np.complex128)
    lam = np.asarray(lam, dtype=np.complex128)
    x = np.zeros(u.shape[:-2] + u.shape[-1:], np.complex128) if x0 is None else np.asarray(x0, np.complex128)
    out = np.empty_like(u)
    for k in range(u.shape[-2]):
        x = lam * x + u[..., k, :]
        out[..., k, :] = x
    return out


def _powers(lam, steps: int, first: int = 1):
    """Rows ``lam**first, lam**(first+1), ...`` built by cumulative products."""
    lam = jnp.asarray(lam)
    if steps == 0:
        return jnp.zeros((0,) + lam.shape, dtype=jnp.result_type(lam, jnp.complex64))
    factors = jnp.broadcast_to(lam, (steps,) + lam.shape)
    if first == 0:
        factors = factors.at[0].set(jnp.ones_like(lam))
    return jnp.cumprod(factors, axis=0)


def vandermonde_rollout(lam, x0, steps: int):
    """``x_k = lam**k * x0`` for ``k = 1 .. steps``; returns shape (..., steps, n)."""
    x0 = jnp.asarray(x0)
    return _powers(lam, steps) * x0[..., None, :]


def discretize_zoh(a_cont, b_tilde, delta):
    """Zero-order hold: ``A_bar = exp(a delta)``, ``B_bar = (A_bar - 1) / a * B``.

    Rows with ``|a| < 1e-12`` fall back to the limit ``B_bar = delta * B``.
    """
    a_cont = jnp.asarray(a_cont)
    delta = jnp.asarray(delta)
    a_bar = jnp.exp(a_cont * delta)
    tiny = jnp.abs(a_cont) < 1e-12
    safe = jnp.where(tiny, 1.0, a_cont)
    gain = jnp.where(tiny, delta, (a_bar - 1.0) / safe)
    return a_bar, gain[:, None] * jnp.asarray(b_tilde)


def _apply_input(u, b_bar):
    # real input times complex map, kept as two real products so gradients stay real
    return jax.lax.complex(u @ jnp.real(b_bar).T, u @ jnp.imag(b_bar).T)


def _discrete(layer: SsmLayer):
    return discretize_zoh(continuous_eigenvalues(layer.eigen), layer.input_map, jnp.exp(layer.delta_log))


def ic_layer_forward(layer: SsmLayer, u0, steps: int):
    """Map an initial condition to ``steps`` outputs.

    The impulse ``u0 delta_k`` enters at k = 0, so ``x_1 = B_bar u0`` and
    ``x_{k+1} = A_bar x_k``; outputs ``y_k = Re(C x_k)`` for ``k = 1 .. steps``. The
    feedthrough only acts at k = 0 and so never appears in the delayed output.
    """
    a_bar, b_bar = _discrete(layer)
    x1 = _apply_input(jnp.asarray(u0), b_bar)
    states = _powers(a_bar, steps, first=0) * x1[..., None, :]
    return jnp.real(states @ layer.output_map.T)


def ssm_layer_forward(layer: SsmLayer, u):
    """Sequence-to-sequence pass ``x_k = A_bar x_{k-1} + B_bar u_k``, ``y_k = Re(C x_k) + D u_k``."""
    a_bar, b_bar = _discrete(layer)
    u = jnp.asarray(u)
    states = scan_recurrence(a_bar, _apply_input(u, b_bar))
    y = jnp.real(states @ layer.output_map.T).astype(u.dtype)
    return y + layer.feedthrough * u
