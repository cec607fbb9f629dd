"""Trajectory datasets: initial conditions, simulation, normalisation and on-disk format.

A dataset directory holds one little-endian float32 file per trajectory
(``traj_00000.f32``, time-major, shape L x N_x) and a ``manifest.json`` that is
written last and therefore marks a complete dataset.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .physics import (
    IntegrationError,
    ModalRhs,
    ModalState,
    StringParams,
    Trajectory,
    build_modal_system,
    integrate,
    interior_grid,
    linear_solution,
    render_trajectory,
    slt_forward,
)

__all__ = [
    "FORMAT_VERSION",
    "DatasetError",
    "IcSpec",
    "DatasetManifest",
    "Dataset",
    "sample_ic_spec",
    "make_initial_condition",
    "simulate",
    "generate_dataset",
    "load_dataset",
]

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
STORAGE_DTYPE = np.dtype("<f4")
MIN_AMPLITUDE, MAX_AMPLITUDE = 1e-3, 1e-2
IC_KINDS = ("gaussian", "uniform_noise")
MODEL_KINDS = ("linear", "tension_modulated")


class DatasetError(Exception):
    """Missing, truncated or inconsistent dataset files."""


@dataclass(frozen=True)
class IcSpec:
    kind: str
    amplitude: float
    gaussian_mean: float | None = None
    gaussian_std: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in IC_KINDS:
            raise ValueError(f"unknown initial-condition kind {self.kind!r}; expected one of {IC_KINDS}")
        # tolerate round-off at the bounds
        if not (MIN_AMPLITUDE * (1 - 1e-12) <= self.amplitude <= MAX_AMPLITUDE * (1 + 1e-12)):
            raise ValueError(
                f"amplitude {self.amplitude!r} m outside [{MIN_AMPLITUDE}, {MAX_AMPLITUDE}] m"
            )
        if self.kind == "gaussian" and (self.gaussian_mean is None or not self.gaussian_std):
            raise ValueError("gaussian initial conditions need gaussian_mean and a positive gaussian_std")


def sample_ic_spec(kind: str, seed: int, length: float, amplitude_range=(MIN_AMPLITUDE, MAX_AMPLITUDE)) -> IcSpec:
    """Draw amplitude (and Gaussian mean/width) for one trajectory from its seed."""
    rng = np.random.default_rng(seed)
    amplitude = float(rng.uniform(*amplitude_range))
    if kind == "gaussian":
        mean = float(rng.uniform(0.2, 0.8) * length)
        std = float(rng.uniform(0.02, 0.1) * length)
        return IcSpec(kind, amplitude, mean, std, seed)
    return IcSpec(kind, amplitude, seed=seed)


def make_initial_condition(spec: IcSpec, grid: np.ndarray, length: float) -> np.ndarray:
    """Initial displacement on ``grid`` with peak magnitude ``spec.amplitude``.

    Gaussians are tapered by ``sin(pi x / length)`` so they vanish at the clamped ends;
    noise is i.i.d. uniform on [-1, 1] with any boundary samples zeroed. The initial
    velocity is always zero.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if spec.kind == "gaussian":
        if not 0 < spec.gaussian_mean < length:
            raise ValueError(f"gaussian_mean {spec.gaussian_mean} outside (0, {length})")
        bump = np.exp(-((grid - spec.gaussian_mean) ** 2) / (2 * spec.gaussian_std**2))
        profile = bump * np.sin(np.pi * grid / length)
    else:
        # seed offset keeps the noise stream independent of the spec draw
        rng = np.random.default_rng([spec.seed, 1])
        profile = rng.uniform(-1.0, 1.0, grid.size)
    profile[(grid <= 0) | (grid >= length)] = 0.0
    peak = np.max(np.abs(profile))
    if peak == 0:
        raise ValueError("initial condition vanishes on the grid")
    return profile * (spec.amplitude / peak)


@dataclass
class DatasetManifest:
    sample_rate: float
    num_steps: int
    num_trajectories: int
    ic_kind: str = "gaussian"
    model_kind: str = "tension_modulated"
    params: StringParams = field(default_factory=StringParams)
    num_points: int = 64
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    amplitude_range: tuple[float, float] = (MIN_AMPLITUDE, MAX_AMPLITUDE)
    seed: int = 0
    seeds: list[int] = field(default_factory=list)
    normalization_scale: float | None = None
    integrator: dict = field(default_factory=lambda: {"method": "DOP853", "rtol": 1e-8, "atol": 1e-10})
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        if self.ic_kind not in IC_KINDS:
            raise ValueError(f"unknown ic_kind {self.ic_kind!r}; expected one of {IC_KINDS}")
        if self.model_kind not in MODEL_KINDS:
            raise ValueError(f"unknown model_kind {self.model_kind!r}; expected one of {MODEL_KINDS}")
        self.split = tuple(float(f) for f in self.split)
        if len(self.split) != 3 or min(self.split) < 0 or abs(sum(self.split) - 1) > 1e-9:
            raise ValueError(f"split fractions must be three nonnegative numbers summing to 1, got {self.split}")
        lo, hi = self.amplitude_range = tuple(float(a) for a in self.amplitude_range)
        if not (MIN_AMPLITUDE <= lo <= hi <= MAX_AMPLITUDE):
            raise ValueError(
                f"amplitude_range {list(self.amplitude_range)} m outside [{MIN_AMPLITUDE}, {MAX_AMPLITUDE}] m"
            )
        if self.num_steps < 2 or self.num_trajectories < 1:
            raise ValueError("need num_steps >= 2 and num_trajectories >= 1")
        if not self.seeds:
            self.seeds = [int(s) for s in np.random.SeedSequence(self.seed).generate_state(self.num_trajectories)]
        if len(self.seeds) != self.num_trajectories:
            raise ValueError("one seed per trajectory required")
        if self.normalization_scale is not None and not self.normalization_scale > 0:
            raise ValueError("normalization_scale must be positive")

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    @property
    def grid(self) -> np.ndarray:
        return interior_grid(self.params.length, self.num_points)

    def split_indices(self) -> dict[str, np.ndarray]:
        n = self.num_trajectories
        n_train = int(round(self.split[0] * n))
        n_val = min(int(round(self.split[1] * n)), n - n_train)
        idx = np.arange(n)
        return {"train": idx[:n_train], "val": idx[n_train : n_train + n_val], "test": idx[n_train + n_val :]}

    def ic_specs(self) -> list[IcSpec]:
        return [sample_ic_spec(self.ic_kind, s, self.params.length, self.amplitude_range) for s in self.seeds]

    def file_name(self, i: int) -> str:
        return f"traj_{i:05d}.f32"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["params"] = self.params.as_dict()
        d["split"] = list(self.split)
        d["amplitude_range"] = list(self.amplitude_range)
        d["storage"] = {"dtype": "float32", "byte_order": "little", "layout": "time-major (L, N_x)"}
        d["splits"] = {k: v.tolist() for k, v in self.split_indices().items()}
        d["files"] = [self.file_name(i) for i in range(self.num_trajectories)]
        d["ic_specs"] = [asdict(s) for s in self.ic_specs()]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        known = {f for f in cls.__dataclass_fields__}
        kwargs = {k: v for k, v in d.items() if k in known}
        kwargs["params"] = StringParams(**d.get("params", {}))
        return cls(**kwargs)


def simulate(manifest: DatasetManifest, spec: IcSpec) -> Trajectory:
    """Simulate one initial condition in 64-bit and render it on the dataset grid."""
    system = build_modal_system(manifest.params, manifest.sample_rate)
    grid = manifest.grid
    profile = make_initial_condition(spec, grid, manifest.params.length)
    ic = ModalState.at_rest(slt_forward(profile, system, grid))
    if manifest.model_kind == "linear":
        seq = linear_solution(ic, system, manifest.dt, manifest.num_steps)
    else:
        opts = dict(manifest.integrator)
        try:
            seq = integrate(ModalRhs(system, nonlinear=True), ic, manifest.dt, manifest.num_steps, **opts)
        except IntegrationError as err:
            raise IntegrationError(f"trajectory with seed {spec.seed} failed: {err}") from err
    return render_trajectory(seq, system, grid, manifest.dt, meta={"ic": asdict(spec), "model_kind": manifest.model_kind})


def generate_dataset(manifest: DatasetManifest, out_dir) -> DatasetManifest:
    """Simulate, normalise by the training-split std and write every trajectory.

    Returns the manifest with ``normalization_scale`` filled in.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    specs = manifest.ic_specs()
    raw = np.stack([simulate(manifest, spec).data for spec in specs])
    train = manifest.split_indices()["train"]
    pool = raw[train] if train.size else raw
    scale = float(np.std(pool))
    if not scale > 0:
        raise DatasetError("training data has zero variance; cannot normalise")
    manifest = replace(manifest, normalization_scale=scale)
    for i, traj in enumerate(raw):
        (traj / scale).astype(STORAGE_DTYPE).tofile(out / manifest.file_name(i))
    (out / MANIFEST_NAME).write_text(json.dumps(manifest.to_dict(), indent=2))
    log.info("wrote %d trajectories to %s (scale %.6g m)", len(raw), out, scale)
    return manifest


@dataclass(eq=False)
class Dataset:
    manifest: DatasetManifest
    data: np.ndarray  # (num_trajectories, L, N_x), normalised, float32
    path: Path | None = None

    @property
    def scale(self) -> float:
        return self.manifest.normalization_scale

    def split(self, name: str) -> np.ndarray:
        return self.data[self.manifest.split_indices()[name]]

    def normalize(self, displacement):
        return np.asarray(displacement) / self.scale

    def denormalize(self, values):
        return np.asarray(values, dtype=np.float64) * self.scale


def _read_trajectory(path: Path, steps: int, points: int) -> np.ndarray:
    if not path.exists():
        raise DatasetError(f"missing trajectory file: {path}")
    expected = steps * points * STORAGE_DTYPE.itemsize
    size = path.stat().st_size
    if size != expected:
        raise DatasetError(
            f"{path}: expected {expected} bytes for shape ({steps}, {points}), found {size}; "
            f"data ends at byte offset {size}"
        )
    values = np.fromfile(path, dtype=STORAGE_DTYPE)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise DatasetError(f"{path}: non-finite value at byte offset {bad[0] * STORAGE_DTYPE.itemsize}")
    return values.reshape(steps, points)


def load_dataset(manifest_path) -> Dataset:
    """Load a dataset from its directory or ``manifest.json`` path."""
    path = Path(manifest_path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.exists():
        raise DatasetError(f"missing manifest: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise DatasetError(f"{path}: corrupt manifest at byte offset {err.pos}: {err.msg}") from err
    version = raw.get("format_version")
    if version != FORMAT_VERSION:
        raise DatasetError(f"{path}: format_version {version!r} not supported (expected {FORMAT_VERSION})")
    manifest = DatasetManifest.from_dict(raw)
    if manifest.normalization_scale is None:
        raise DatasetError(f"{path}: manifest lacks normalization_scale")
    root = path.parent
    data = np.stack(
        [
            _read_trajectory(root / manifest.file_name(i), manifest.num_steps, manifest.num_points)
            for i in range(manifest.num_trajectories)
        ]
    )
    return Dataset(manifest, data, root)
