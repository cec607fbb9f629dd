"""Config-driven experiment commands: datasets, fitting, training, evaluation tables and curves.

Every command takes an :class:`ExperimentConfig`, writes CSV/checkpoint artifacts
under ``out_dir`` together with the fully resolved config, and returns the paths
or tables it produced.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import jax.numpy as jnp
import numpy as np

from . import metrics
from .dataset import (
    Dataset,
    DatasetError,
    DatasetManifest,
    generate_dataset,
    load_dataset,
    make_initial_condition,
    simulate,
)
from .dmd import fit_dmd, hankel_embed
from .dmd import predict as dmd_predict
from .models import MODEL_KINDS, ModelDims, initialize
from .physics import (
    ModalState,
    StringParams,
    build_modal_system,
    linear_solution,
    render_trajectory,
    slt_forward,
)
from .storage import CheckpointError, load_checkpoint, save_dmd, save_model
from .training import TrainConfig, _predict_jit, train

__all__ = [
    "SCHEMA_VERSION",
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "cmd_dataset",
    "cmd_fit_dmd",
    "cmd_train",
    "cmd_eval",
    "cmd_error_curve",
    "cmd_spectrum",
    "predict_trajectories",
]

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class DmdConfig:
    rank: int = 50
    lags: int = 2
    amplitude: float = 0.0055


@dataclass
class EvalConfig:
    horizon: int | None = None
    extrapolation: float = 2.0
    split: str = "val"
    probe_position: float = 0.24


@dataclass
class ExperimentConfig:
    out_dir: str = "runs/default"
    dataset: dict = field(default_factory=dict)
    model: dict = field(default_factory=lambda: {"kind": "koopman_var", "dims": {}})
    train: dict = field(default_factory=dict)
    dmd: DmdConfig = field(default_factory=DmdConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seeds: list[int] = field(default_factory=lambda: [0])
    schema_version: int = SCHEMA_VERSION

    # ------------------------------------------------------------ views
    @property
    def out(self) -> Path:
        return Path(self.out_dir)

    @property
    def dataset_path(self) -> Path:
        return Path(self.dataset.get("path") or self.out / "data")

    def manifest(self) -> DatasetManifest:
        spec = {k: v for k, v in self.dataset.items() if k != "path"}
        if "params" in spec:
            spec["params"] = StringParams(**spec["params"])
        try:
            return DatasetManifest(**spec)
        except TypeError as err:
            raise ConfigError(f"dataset section: {err}") from err

    @property
    def model_kind(self) -> str:
        return self.model.get("kind", "koopman_var")

    @property
    def dims(self) -> ModelDims:
        try:
            return ModelDims(**self.model.get("dims", {}))
        except TypeError as err:
            raise ConfigError(f"model.dims: {err}") from err

    def train_config(self, seed: int, horizon: int) -> TrainConfig:
        try:
            return TrainConfig(**{**self.train, "seed": seed, "horizon": horizon})
        except (TypeError, ValueError) as err:
            raise ConfigError(f"train section: {err}") from err

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = {"kind": self.model_kind, "dims": self.dims.to_dict()}
        d["train"] = {k: v for k, v in TrainConfig(**self.train).to_dict().items() if k not in ("seed", "horizon")}
        try:
            d["dataset"] = {"path": str(self.dataset_path), **{
                k: v for k, v in self.manifest().to_dict().items()
                if k in {f.name for f in fields(DatasetManifest)} and k not in ("seeds", "normalization_scale")
            }}
        except (ConfigError, ValueError):
            pass
        return d

    def write_resolved(self, name: str = "resolved_config.json") -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / name
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path


def load_config(source) -> ExperimentConfig:
    """Build a config from a JSON file path or an already-parsed mapping."""
    if isinstance(source, (str, Path)):
        try:
            raw = json.loads(Path(source).read_text())
        except FileNotFoundError as err:
            raise ConfigError(f"config file not found: {source}") from err
        except json.JSONDecodeError as err:
            raise ConfigError(f"{source}: invalid JSON at line {err.lineno}: {err.msg}") from err
    else:
        raw = dict(source)
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        cfg = ExperimentConfig(
            out_dir=raw.get("out_dir", "runs/default"),
            dataset=dict(raw.get("dataset", {})),
            model=dict(raw.get("model", {"kind": "koopman_var"})),
            train=dict(raw.get("train", {})),
            dmd=DmdConfig(**raw.get("dmd", {})),
            eval=EvalConfig(**raw.get("eval", {})),
            seeds=[int(s) for s in raw.get("seeds", [0])],
        )
    except TypeError as err:
        raise ConfigError(str(err)) from err
    if cfg.model_kind not in MODEL_KINDS:
        raise ConfigError(f"model.kind {cfg.model_kind!r} not in {MODEL_KINDS}")
    if "loss_weights" in cfg.train:
        cfg.train["loss_weights"] = tuple(cfg.train["loss_weights"])
    if cfg.eval.extrapolation < 1:
        raise ConfigError("eval.extrapolation must be >= 1 (eval horizon >= training horizon)")
    # a section holding only "path" points at existing data; cmd_dataset still needs the full spec
    if set(cfg.dataset) - {"path"}:
        try:
            cfg.manifest()
        except ValueError as err:
            raise ConfigError(f"dataset section: {err}") from err
    return cfg


# ---------------------------------------------------------------- helpers


def _horizon(cfg: ExperimentConfig, ds: Dataset) -> int:
    h = cfg.eval.horizon or ds.manifest.num_steps
    if h > ds.manifest.num_steps:
        raise ConfigError(f"eval.horizon {h} exceeds dataset length {ds.manifest.num_steps}")
    return h


def _write_csv(path: Path, header: list[str], rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _discover_checkpoints(cfg: ExperimentConfig) -> list[Path]:
    return sorted(p.parent for p in cfg.out.glob("*/checkpoint.json"))


def predict_trajectories(kind: str, model, data: np.ndarray, length: int) -> np.ndarray:
    """Forecast ``length`` rows for every trajectory in ``data`` (N, L, N_x)."""
    if kind == "zero":
        return np.zeros_like(data[:, :length], dtype=np.float64)
    if kind == "truth":
        return data[:, :length].astype(np.float64)
    if kind == "dmd":
        x0s = data[:, : model.lags].reshape(len(data), -1).astype(np.float64)
        if x0s.shape[1] != model.modes.shape[0]:
            raise ConfigError(
                f"DMD checkpoint expects {model.num_points} grid points, dataset has {data.shape[2]}"
            )
        return np.stack([dmd_predict(model, x0, length) for x0 in x0s])
    expected = model.decoder[-1].weight.shape[1] if hasattr(model, "decoder") else model.readout.weight.shape[1]
    if expected != data.shape[2]:
        raise ConfigError(f"{kind} checkpoint expects {expected} grid points, dataset has {data.shape[2]}")
    out = []
    for start in range(0, len(data), 64):
        x0 = jnp.asarray(data[start : start + 64, 0])
        out.append(np.asarray(_predict_jit(model, x0, length), dtype=np.float64))
    return np.concatenate(out)


# ---------------------------------------------------------------- commands


def cmd_dataset(cfg: ExperimentConfig) -> DatasetManifest:
    manifest = generate_dataset(cfg.manifest(), cfg.dataset_path)
    cfg.write_resolved()
    if manifest.model_kind == "linear":
        _spot_check_linear(cfg.dataset_path)
    splits = {k: len(v) for k, v in manifest.split_indices().items()}
    print(
        f"dataset {cfg.dataset_path}: {manifest.num_trajectories} x ({manifest.num_steps}, {manifest.num_points}) "
        f"{manifest.model_kind}/{manifest.ic_kind} @ {manifest.sample_rate:g} Hz, splits {splits}, "
        f"scale {manifest.normalization_scale:.6g} m"
    )
    return manifest


def _spot_check_linear(path: Path, index: int = 0) -> None:
    """Compare a stored linear trajectory with the closed-form modal solution."""
    ds = load_dataset(path)
    m = ds.manifest
    spec = m.ic_specs()[index]
    system = build_modal_system(m.params, m.sample_rate)
    c0 = slt_forward(make_initial_condition(spec, m.grid, m.params.length), system, m.grid)
    seq = linear_solution(ModalState.at_rest(c0), system, m.dt, m.num_steps)
    expected = render_trajectory(seq, system, m.grid, m.dt).data / m.normalization_scale
    err = np.max(np.abs(ds.data[index] - expected)) / np.max(np.abs(expected))
    if err > 1e-6:
        raise FloatingPointError(f"stored linear trajectory {index} deviates from the analytic solution by {err:.3g}")


def cmd_fit_dmd(cfg: ExperimentConfig) -> Path:
    """Fit Hankel DMD on one training initial condition rescaled to ``dmd.amplitude``."""
    ds = load_dataset(cfg.dataset_path)
    m = ds.manifest
    horizon = _horizon(cfg, ds)
    train_idx = m.split_indices()["train"]
    spec = replace(m.ic_specs()[int(train_idx[0]) if train_idx.size else 0], amplitude=cfg.dmd.amplitude)
    raw = simulate(replace(m, num_steps=horizon), spec).data / ds.scale
    model = fit_dmd(hankel_embed(raw, cfg.dmd.lags), cfg.dmd.rank, cfg.dmd.lags, m.dt)
    path = save_dmd(
        cfg.out / "dmd",
        model,
        {"requested_rank": cfg.dmd.rank, "fit_amplitude": cfg.dmd.amplitude, "fit_seed": spec.seed, "num_points": m.num_points},
    )
    cfg.write_resolved()
    print(f"dmd: rank {model.rank}, lags {model.lags}, max |lambda| {np.abs(model.eigenvalues).max():.8f} -> {path}")
    return path


def cmd_train(cfg: ExperimentConfig) -> list[Path]:
    ds = load_dataset(cfg.dataset_path)
    horizon = _horizon(cfg, ds)
    kind, dims = cfg.model_kind, cfg.dims
    if dims.num_points != ds.manifest.num_points:
        dims = replace(dims, num_points=ds.manifest.num_points)
    paths = []
    for seed in cfg.seeds:
        tc = cfg.train_config(seed, horizon)
        result = train(initialize(kind, dims, seed), ds.split("train"), ds.split("val"), tc)
        out = cfg.out / f"{kind}_seed{seed}"
        save_model(out, result.model, kind, dims, {"seed": seed, "best_epoch": result.best_epoch,
                                                   "diverged": result.diverged, "horizon": horizon})
        header = ["epoch", "loss", "prediction", "encoding", "consistency", "val_rel_mse", "best_val_rel_mse"]
        _write_csv(out / "history.csv", header, ([h.get(k, "") for k in header] for h in result.history))
        last = result.history[-1] if result.history else {}
        print(f"{kind} seed {seed}: {len(result.history)} epochs, best val rel MSE "
              f"{last.get('best_val_rel_mse', float('nan')):.6g} at epoch {result.best_epoch} -> {out}")
        paths.append(out)
    cfg.write_resolved()
    return paths


def _load_models(cfg: ExperimentConfig, checkpoint) -> list[tuple[str, int | str, object]]:
    dirs = [Path(checkpoint)] if checkpoint else _discover_checkpoints(cfg)
    if not dirs:
        raise CheckpointError(f"no checkpoints found under {cfg.out}")
    models = []
    for d in dirs:
        kind, model, meta = load_checkpoint(d)
        models.append((kind, meta.get("seed", "-"), model))
    return models


def cmd_eval(cfg: ExperimentConfig, checkpoint=None, baselines: bool = True) -> dict:
    """Relative MSE/MAE at the training horizon; one row per (model, seed) plus a seed summary."""
    ds = load_dataset(cfg.dataset_path)
    horizon = _horizon(cfg, ds)
    data = ds.split(cfg.eval.split)
    if len(data) == 0:
        raise DatasetError(f"split {cfg.eval.split!r} is empty")
    entries = _load_models(cfg, checkpoint)
    if baselines:
        entries += [("zero", "-", None), ("truth", "-", None)]
    per_traj, rows = [], []
    for kind, seed, model in entries:
        pred = predict_trajectories(kind, model, data, horizon)
        mse = metrics.rel_mse(pred, data[:, :horizon])
        mae = metrics.rel_mae(pred, data[:, :horizon])
        per_traj += [(kind, seed, i, a, b) for i, (a, b) in enumerate(zip(mse, mae))]
        rows.append((kind, seed, len(data), mse.mean(), mse.std(), mae.mean(), mae.std()))
    summary = []
    for kind in dict.fromkeys(r[0] for r in rows):
        mine = [r for r in rows if r[0] == kind]
        mse_m, mse_s = metrics.aggregate([r[3] for r in mine])
        mae_m, mae_s = metrics.aggregate([r[5] for r in mine])
        summary.append((kind, len(mine), mse_m, mse_s, mae_m, mae_s))
    out = cfg.out / "eval"
    _write_csv(out / "per_trajectory.csv", ["model", "seed", "trajectory", "rel_mse", "rel_mae"], per_traj)
    _write_csv(out / "metrics.csv",
               ["model", "seed", "n_trajectories", "rel_mse_mean", "rel_mse_std", "rel_mae_mean", "rel_mae_std"], rows)
    _write_csv(out / "summary.csv",
               ["model", "n_seeds", "rel_mse_mean", "rel_mse_std", "rel_mae_mean", "rel_mae_std"], summary)
    cfg.write_resolved()
    for kind, n, a, b, c, d in summary:
        print(f"{kind:12s} seeds={n}  rel MSE {a:.4f}({b:.4f})  rel MAE {c:.4f}({d:.4f})")
    return {"rows": rows, "summary": summary, "dir": out}


def cmd_error_curve(cfg: ExperimentConfig, checkpoint=None) -> list[Path]:
    """Per-timestep MAE in centimetres on the test split, including the extrapolated region."""
    ds = load_dataset(cfg.dataset_path)
    horizon = _horizon(cfg, ds)
    length = min(ds.manifest.num_steps, int(round(horizon * cfg.eval.extrapolation)))
    data = ds.split("test")
    if len(data) == 0:
        raise DatasetError("test split is empty")
    probe = metrics.probe_index(ds.manifest.grid, cfg.eval.probe_position)
    to_cm = ds.scale * 100.0
    truth = data[:, :length].astype(np.float64)
    paths = []
    for kind, seed, model in _load_models(cfg, checkpoint):
        pred = predict_trajectories(kind, model, data, length)
        at_probe = metrics.timestep_mae(pred, truth, probe) * to_cm
        field_avg = metrics.timestep_mae(pred, truth) * to_cm
        rows = (
            (k, k * ds.manifest.dt, at_probe[k], field_avg[k], int(k >= horizon))
            for k in range(length)
        )
        path = cfg.out / "curves" / f"error_curve_{kind}_seed{seed}.csv"
        _write_csv(path, ["step", "time_s", "mae_probe_cm", "mae_field_cm", "extrapolated"], rows)
        paths.append(path)
    cfg.write_resolved()
    return paths


def cmd_spectrum(
    cfg: ExperimentConfig,
    trajectory: int = 0,
    start: int = 0,
    window: int | None = None,
    split: str = "test",
    checkpoint=None,
    nfft: int | None = None,
) -> Path:
    """Magnitude spectrum at the probe position of one trajectory slice (ground truth or model)."""
    ds = load_dataset(cfg.dataset_path)
    m = ds.manifest
    data = ds.split(split)
    if not 0 <= trajectory < len(data):
        raise ConfigError(f"trajectory {trajectory} outside split {split!r} of size {len(data)}")
    window = window or (m.num_steps - start)
    if start < 0 or window < 1 or start + window > m.num_steps:
        raise ConfigError(f"window [{start}, {start + window}) exceeds trajectory length {m.num_steps}")
    source = "truth"
    series = data[trajectory : trajectory + 1]
    if checkpoint:
        kind, model, meta = load_checkpoint(checkpoint)
        series = predict_trajectories(kind, model, series, start + window)
        source = f"{kind}_seed{meta.get('seed', '-')}"
    probe = metrics.probe_index(m.grid, cfg.eval.probe_position)
    signal = np.asarray(series[0, start : start + window, probe], dtype=np.float64) * ds.scale
    freqs, mag = metrics.magnitude_spectrum(signal, m.sample_rate, nfft=nfft)
    path = cfg.out / "spectra" / f"spectrum_{source}_{split}{trajectory}_{start}_{window}.csv"
    _write_csv(path, ["freq_hz", "magnitude"], zip(freqs, mag))
    return path
