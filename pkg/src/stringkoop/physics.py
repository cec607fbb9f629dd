"""Modal model of a simply-supported stiff string, linear and tension-modulated.

Displacement is expanded on the sine basis ``y(x, t) = sum_mu c_mu(t) sin(eta_mu x)``
with plain coefficients (the forward transform carries the ``2 / length`` factor).
Each mode is a damped oscillator; the Kirchhoff-Carrier tension increment couples
them through a single scalar.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp, trapezoid

__all__ = [
    "StringParams",
    "ModalSystem",
    "ModalState",
    "Trajectory",
    "IntegrationError",
    "build_modal_system",
    "interior_grid",
    "slt_forward",
    "slt_inverse",
    "linear_solution",
    "tension_increment",
    "tension_increment_quadrature",
    "ModalRhs",
    "linear_rhs",
    "nonlinear_rhs",
    "integrate",
    "render_trajectory",
    "modal_energy",
]

ALIAS_FRACTION = 0.45


class IntegrationError(RuntimeError):
    """Raised when the adaptive integrator cannot reach the requested end time."""


@dataclass(frozen=True)
class StringParams:
    """Physical constants of the string. Defaults describe a nylon string tuned to B3."""

    rho: float = 1140.0
    area: float = 0.5188e-6
    young: float = 5.4e9
    inertia: float = 0.141e-12
    tension0: float = 60.97
    d1: float = 8.0e-5
    d3: float = 1.4e-5
    length: float = 0.65

    def __post_init__(self):
        for name, value in self.as_dict().items():
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"StringParams.{name} must be strictly positive, got {value!r}")

    @property
    def linear_density(self) -> float:
        return self.rho * self.area

    def as_dict(self) -> dict[str, float]:
        return {
            "rho": self.rho,
            "area": self.area,
            "young": self.young,
            "inertia": self.inertia,
            "tension0": self.tension0,
            "d1": self.d1,
            "d3": self.d3,
            "length": self.length,
        }


@dataclass(frozen=True, eq=False)
class ModalSystem:
    params: StringParams
    num_modes: int
    eta: np.ndarray
    omega0_sq: np.ndarray
    sigma: np.ndarray

    @property
    def omega_d(self) -> np.ndarray:
        """Damped angular frequencies (rad/s)."""
        return np.sqrt(self.omega0_sq - self.sigma**2)

    @property
    def frequencies(self) -> np.ndarray:
        """Damped natural frequencies in Hz."""
        return self.omega_d / (2 * np.pi)

    def discrete_eigenvalues(self, dt: float) -> np.ndarray:
        """Poles ``exp((-sigma + i omega_d) dt)`` of each mode, positive-frequency half."""
        return np.exp((-self.sigma + 1j * self.omega_d) * dt)


@dataclass(frozen=True, eq=False)
class ModalState:
    """Per-mode displacement coefficients and their time derivatives.

    Either 1-D (one instant) or 2-D with time along the first axis.
    """

    coeffs: np.ndarray
    coeff_rates: np.ndarray

    def __post_init__(self):
        if np.shape(self.coeffs) != np.shape(self.coeff_rates):
            raise ValueError(
                f"coeffs and coeff_rates differ in shape: "
                f"{np.shape(self.coeffs)} vs {np.shape(self.coeff_rates)}"
            )

    @classmethod
    def at_rest(cls, coeffs) -> "ModalState":
        coeffs = np.asarray(coeffs, dtype=np.float64)
        return cls(coeffs, np.zeros_like(coeffs))

    def __neg__(self) -> "ModalState":
        return ModalState(-self.coeffs, -self.coeff_rates)

    def __getitem__(self, k) -> "ModalState":
        return ModalState(self.coeffs[k], self.coeff_rates[k])

    def __len__(self) -> int:
        return len(self.coeffs)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.coeffs, self.coeff_rates], axis=-1)

    @classmethod
    def from_flat(cls, y: np.ndarray) -> "ModalState":
        m = y.shape[-1] // 2
        return cls(y[..., :m], y[..., m:])


@dataclass(eq=False)
class Trajectory:
    """Displacement field sampled as ``data[k, j] = y(grid[j], k * dt)``."""

    data: np.ndarray
    dt: float
    grid: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        self.grid = np.asarray(self.grid, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[1] != self.grid.size:
            raise ValueError(
                f"data shape {self.data.shape} does not match grid of {self.grid.size} points"
            )
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("trajectory contains non-finite samples")

    @property
    def num_steps(self) -> int:
        return self.data.shape[0]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.num_steps) * self.dt


def build_modal_system(params: StringParams, sample_rate: float, max_modes: int = 10_000) -> ModalSystem:
    """Keep every mode whose damped frequency lies below ``0.45 * sample_rate``."""
    if not sample_rate > 0:
        raise ValueError(f"sample_rate must be positive, got {sample_rate!r}")
    rho_a = params.linear_density
    mu = np.arange(1, max_modes + 1)
    eta = mu * np.pi / params.length
    omega0_sq = (params.young * params.inertia * eta**4 + params.tension0 * eta**2) / rho_a
    sigma = (params.d3 * eta**2 + params.d1) / (2 * rho_a)
    underdamped = sigma**2 < omega0_sq
    f_d = np.sqrt(np.where(underdamped, omega0_sq - sigma**2, 0.0)) / (2 * np.pi)
    ok = underdamped & (f_d < ALIAS_FRACTION * sample_rate)
    # largest prefix of admissible modes
    count = int(np.argmin(ok)) if not ok.all() else ok.size
    if count == 0:
        raise ValueError(
            f"no mode is underdamped and below {ALIAS_FRACTION} * {sample_rate} Hz for these parameters"
        )
    return ModalSystem(params, count, eta[:count], omega0_sq[:count], sigma[:count])


def interior_grid(length: float, num_points: int = 64) -> np.ndarray:
    """Uniform grid on (0, length) with both endpoints excluded."""
    return np.arange(1, num_points + 1) * length / (num_points + 1)


def _with_boundaries(profile: np.ndarray, grid: np.ndarray, length: float):
    """Append the clamped endpoints so trapezoid quadrature spans [0, length]."""
    x, y = grid, profile
    if x[0] > 0:
        x = np.concatenate([[0.0], x])
        y = np.concatenate([np.zeros(y.shape[:-1] + (1,)), y], axis=-1)
    if x[-1] < length:
        x = np.concatenate([x, [length]])
        y = np.concatenate([y, np.zeros(y.shape[:-1] + (1,))], axis=-1)
    return x, y


def sine_basis(grid: np.ndarray, num_modes: int, length: float) -> np.ndarray:
    """Matrix ``S[j, mu] = sin(eta_mu x_j)``."""
    eta = np.arange(1, num_modes + 1) * np.pi / length
    return np.sin(np.outer(grid, eta))


def slt_forward(profile, system: ModalSystem, grid: np.ndarray | None = None) -> np.ndarray:
    """Project displacement samples onto the sine basis.

    ``profile`` may carry leading batch axes (e.g. time). When ``grid`` is omitted the
    samples are assumed to sit on :func:`interior_grid`.
    """
    profile = np.asarray(profile, dtype=np.float64)
    length = system.params.length
    if grid is None:
        grid = interior_grid(length, profile.shape[-1])
    grid = np.asarray(grid, dtype=np.float64)
    if profile.shape[-1] != grid.size:
        raise ValueError(f"profile has {profile.shape[-1]} samples, grid has {grid.size}")
    x, y = _with_boundaries(profile, grid, length)
    kernel = np.sin(np.outer(x, system.eta))  # (Nx', M)
    return (2.0 / length) * trapezoid(y[..., :, None] * kernel, x, axis=-2)


def slt_inverse(coeffs, grid: np.ndarray, length: float) -> np.ndarray:
    """Evaluate ``sum_mu c_mu sin(mu pi x / length)`` on ``grid``; leading axes broadcast."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    return coeffs @ sine_basis(np.asarray(grid, dtype=np.float64), coeffs.shape[-1], length).T


def linear_solution(ic: ModalState, system: ModalSystem, dt: float, steps: int) -> ModalState:
    """Closed-form damped-oscillator response sampled at ``k * dt`` for ``k < steps``."""
    if np.any(system.sigma**2 >= system.omega0_sq):
        raise ValueError("linear_solution requires every mode to be underdamped")
    t = (np.arange(steps) * dt)[:, None]
    s, wd = system.sigma, system.omega_d
    c0, v0 = np.asarray(ic.coeffs, np.float64), np.asarray(ic.coeff_rates, np.float64)
    decay = np.exp(-s * t)
    cos, sin = np.cos(wd * t), np.sin(wd * t)
    a = (v0 + s * c0) / wd
    coeffs = decay * (c0 * cos + a * sin)
    rates = decay * (v0 * cos - (s * a + wd * c0) * sin)
    coeffs[0], rates[0] = c0, v0
    return ModalState(coeffs, rates)


def tension_increment(coeffs, params: StringParams):
    """Tension rise ``T1 = (E A / 4) sum c_mu^2 eta_mu^2`` (closed modal form)."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    eta = np.arange(1, coeffs.shape[-1] + 1) * np.pi / params.length
    return 0.25 * params.young * params.area * np.sum(coeffs**2 * eta**2, axis=-1)


def tension_increment_quadrature(coeffs, params: StringParams, num_points: int = 4097) -> float:
    """Reference ``(E A / 2 l) * integral of y'(x)^2`` by Simpson quadrature of the slope."""
    from scipy.integrate import simpson

    coeffs = np.asarray(coeffs, dtype=np.float64)
    ell = params.length
    x = np.linspace(0.0, ell, num_points)
    eta = np.arange(1, coeffs.size + 1) * np.pi / ell
    slope = np.cos(np.outer(x, eta)) @ (coeffs * eta)
    return params.young * params.area / (2 * ell) * simpson(slope**2, x=x)


class ModalRhs:
    """Right-hand side of the modal ODEs, callable on a :class:`ModalState`.

    ``flat(t, y)`` is the same map on the concatenated ``[coeffs, rates]`` vector and is
    what the integrator calls in its inner loop.
    """

    def __init__(self, system: ModalSystem, nonlinear: bool = True):
        self.system = system
        self.nonlinear = nonlinear
        p = system.params
        self._m = system.num_modes
        self._damp = 2 * system.sigma
        self._w2 = system.omega0_sq
        self._eta2 = system.eta**2
        self._couple = system.eta**2 / p.linear_density
        self._ea4 = 0.25 * p.young * p.area

    def flat(self, _t, y):
        m = self._m
        c, v = y[:m], y[m:]
        stiffness = self._w2
        if self.nonlinear:
            stiffness = stiffness + self._couple * (self._ea4 * np.dot(c * c, self._eta2))
        out = np.empty_like(y)
        out[:m] = v
        out[m:] = -self._damp * v - stiffness * c
        return out

    def __call__(self, state: ModalState) -> ModalState:
        return ModalState.from_flat(self.flat(0.0, state.flat()))


def linear_rhs(state: ModalState, system: ModalSystem) -> ModalState:
    c, v = state.coeffs, state.coeff_rates
    return ModalState(v, -2 * system.sigma * v - system.omega0_sq * c)


def nonlinear_rhs(state: ModalState, system: ModalSystem) -> ModalState:
    """Modal ODE right-hand side with the tension-modulated stiffening term."""
    c, v = state.coeffs, state.coeff_rates
    t1 = tension_increment(c, system.params)
    stiffness = system.omega0_sq + system.eta**2 * t1 / system.params.linear_density
    return ModalState(v, -2 * system.sigma * v - stiffness * c)


def integrate(
    rhs: Callable[[ModalState], ModalState],
    ic: ModalState,
    dt: float,
    steps: int,
    rtol: float = 1e-8,
    atol: float = 1e-10,
    method: str = "RK45",
) -> ModalState:
    """Adaptive explicit Runge-Kutta with dense output, sampled at ``k * dt`` for ``k < steps``.

    ``rhs`` maps a 1-D :class:`ModalState` to its time derivative, e.g.
    ``functools.partial(nonlinear_rhs, system=system)``; a :class:`ModalRhs` is used
    through its flat-vector fast path. ``method`` is any explicit scipy RK scheme;
    the default is Dormand-Prince 5(4).
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt!r}")
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps!r}")
    y0 = ic.flat().astype(np.float64)
    if steps == 1:
        return ModalState.from_flat(y0[None, :].copy())

    f = getattr(rhs, "flat", None)
    if f is None:

        def f(_t, y):
            return rhs(ModalState.from_flat(y)).flat()

    t_eval = np.arange(steps) * dt
    sol = solve_ivp(f, (0.0, t_eval[-1]), y0, method=method, t_eval=t_eval, rtol=rtol, atol=atol)
    if sol.status != 0:
        raise IntegrationError(f"integration stopped at t={sol.t[-1] if sol.t.size else 0.0:.6g}s: {sol.message}")
    out = sol.y.T
    out[0] = y0
    return ModalState.from_flat(out)


def render_trajectory(
    modal_seq: ModalState,
    system: ModalSystem,
    grid: np.ndarray,
    dt: float,
    meta: dict | None = None,
) -> Trajectory:
    data = slt_inverse(modal_seq.coeffs, grid, system.params.length)
    info = {"params": system.params.as_dict(), "num_modes": system.num_modes}
    info.update(meta or {})
    return Trajectory(data, dt, grid, info)


def modal_energy(state: ModalState, system: ModalSystem, nonlinear: bool = True):
    """Lyapunov functional of the modal ODEs, non-increasing under damping.

    ``0.5 rho A (sum v^2 + sum omega0^2 c^2) + T1^2 / (E A)``; the last term is the
    potential of the tension-modulation force in plain-coefficient scaling.
    """
    p = system.params
    rho_a = p.linear_density
    c, v = np.asarray(state.coeffs), np.asarray(state.coeff_rates)
    energy = 0.5 * rho_a * (np.sum(v**2, axis=-1) + np.sum(system.omega0_sq * c**2, axis=-1))
    if nonlinear:
        energy = energy + tension_increment(c, p) ** 2 / (p.young * p.area)
    return energy
