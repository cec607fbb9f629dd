"""Exact dynamic mode decomposition with Hankel (time-delay) augmentation."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .physics import Trajectory

__all__ = ["DmdModel", "hankel_embed", "fit_dmd", "predict", "one_step_operator"]

log = logging.getLogger(__name__)

SV_CUTOFF = 1e-12


@dataclass(frozen=True, eq=False)
class DmdModel:
    rank: int
    lags: int
    eigenvalues: np.ndarray
    modes: np.ndarray
    amplitudes: np.ndarray
    dt: float = 1.0

    def __post_init__(self):
        if not (self.modes.shape[1] == self.eigenvalues.size == self.rank):
            raise ValueError(
                f"inconsistent DMD model: rank {self.rank}, {self.eigenvalues.size} eigenvalues, "
                f"modes {self.modes.shape}"
            )

    @property
    def num_points(self) -> int:
        return self.modes.shape[0] // self.lags

    @property
    def continuous_eigenvalues(self) -> np.ndarray:
        return np.log(self.eigenvalues) / self.dt


def hankel_embed(traj, lags: int) -> np.ndarray:
    """Stack ``lags`` consecutive snapshots per column: (lags * N_x, L - lags + 1)."""
    data = traj.data if isinstance(traj, Trajectory) else np.asarray(traj)
    steps = data.shape[0]
    if not 1 <= lags < steps:
        raise ValueError(f"need 1 <= lags < L, got lags={lags}, L={steps}")
    cols = steps - lags + 1
    return np.concatenate([data[j : j + cols].T for j in range(lags)], axis=0)


def fit_dmd(snapshots, rank: int, lags: int = 1, dt: float = 1.0) -> DmdModel:
    """Exact DMD of a snapshot matrix whose columns are consecutive states."""
    snapshots = np.asarray(snapshots)
    x, x_next = snapshots[:, :-1], snapshots[:, 1:]
    if x.shape[1] < rank:
        raise ValueError(f"rank {rank} needs at least {rank + 1} snapshots, got {snapshots.shape[1]}")
    u, s, vh = np.linalg.svd(x, full_matrices=False)
    numerical = int(np.sum(s > SV_CUTOFF * s[0])) if s.size and s[0] > 0 else 0
    if numerical == 0:
        raise ValueError("snapshot matrix is numerically zero")
    if rank > numerical:
        log.warning("requested rank %d exceeds numerical rank %d; truncating", rank, numerical)
        rank = numerical
    u, s, v = u[:, :rank], s[:rank], vh[:rank].conj().T
    x_next_v_sinv = (x_next @ v) / s
    a_tilde = u.conj().T @ x_next_v_sinv
    lam, w = np.linalg.eig(a_tilde)
    modes = x_next_v_sinv @ w
    amps = np.linalg.lstsq(modes, snapshots[:, 0].astype(np.complex128), rcond=None)[0]
    return DmdModel(rank, lags, lam.astype(np.complex128), modes.astype(np.complex128), amps, dt)


def fit_amplitudes(model: DmdModel, x0) -> np.ndarray:
    return np.linalg.lstsq(model.modes, np.asarray(x0, dtype=np.complex128), rcond=None)[0]


def predict(model: DmdModel, x0, steps: int, embedded: bool = False) -> np.ndarray:
    """Forecast ``steps`` snapshots starting at the embedded initial state ``x0``.

    Amplitudes are refit to ``x0``. Returns the first delay block of each
    ``Phi diag(lam**k) b`` (shape (steps, N_x)), or the full embedded states when
    ``embedded`` is set.
    """
    x0 = np.asarray(x0)
    if x0.shape[-1] != model.modes.shape[0]:
        raise ValueError(f"x0 has length {x0.shape[-1]}, model expects {model.modes.shape[0]}")
    b = fit_amplitudes(model, x0)
    powers = model.eigenvalues[None, :] ** np.arange(steps)[:, None]
    states = (powers * b) @ model.modes.T
    states = states.real
    return states if embedded else states[:, : model.num_points]


def one_step_operator(model: DmdModel) -> np.ndarray:
    """Full-space operator ``Phi diag(lam) Phi^+`` advancing an embedded state one step."""
    return (model.modes * model.eigenvalues) @ np.linalg.pinv(model.modes)
