"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (printed in the pytest terminal summary) before
asserting. The training and dataset fixtures are session-scoped and marked slow.
"""

import csv
import hashlib
import json
import time

import numpy as np
import pytest

from stringkoop import cli
from stringkoop.dataset import DatasetManifest, IcSpec, make_initial_condition, simulate
from stringkoop.experiment import cmd_dataset, cmd_error_curve, cmd_eval, cmd_fit_dmd, cmd_train, load_config
from stringkoop.metrics import peak_frequency, probe_index, rel_mae, rel_mse
from stringkoop.models import ModelDims, count_parameters, initialize
from stringkoop.physics import (
    ModalRhs,
    ModalState,
    StringParams,
    build_modal_system,
    integrate,
    interior_grid,
    linear_solution,
    render_trajectory,
    slt_forward,
)
from stringkoop.recurrence import scan_recurrence, sequential_recurrence, vandermonde_rollout

from gradcheck import finite_difference_errors

P = StringParams()
HORIZON = 400


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def experiment(out_dir, dataset_path, **sections):
    return load_config({
        "schema_version": 1,
        "out_dir": str(out_dir),
        "dataset": {"path": str(dataset_path)},
        "eval": {"horizon": HORIZON, "extrapolation": 2.0, "split": "val"},
        **sections,
    })


def make_dataset(root, model_kind):
    """100 Gaussian trajectories at 4 kHz, long enough for 2x extrapolation."""
    cfg = load_config({
        "schema_version": 1,
        "out_dir": str(root),
        "dataset": {"sample_rate": 4000, "num_steps": 2 * HORIZON, "num_trajectories": 100,
                    "model_kind": model_kind, "ic_kind": "gaussian", "seed": 0},
    })
    cmd_dataset(cfg)
    return cfg.dataset_path


@pytest.fixture(scope="session")
def linear_data(tmp_path_factory):
    return make_dataset(tmp_path_factory.mktemp("linear"), "linear")


@pytest.fixture(scope="session")
def nonlinear_data(tmp_path_factory):
    return make_dataset(tmp_path_factory.mktemp("nonlinear"), "tension_modulated")


@pytest.fixture(scope="session")
def dmd_linear(tmp_path_factory, linear_data):
    cfg = experiment(tmp_path_factory.mktemp("dmd_linear"), linear_data)
    start = time.perf_counter()
    ckpt = cmd_fit_dmd(cfg)
    result = cmd_eval(cfg, ckpt, baselines=False)
    return cfg, ckpt, result, time.perf_counter() - start


@pytest.fixture(scope="session")
def trained(tmp_path_factory, nonlinear_data):
    out = tmp_path_factory.mktemp("koopman")
    configs = {}
    for kind in ("koopman_var", "koopman"):
        cfg = experiment(out, nonlinear_data, model={"kind": kind, "dims": {"latent": 128}},
                         train={"max_epochs": 500})
        cmd_train(cfg)
        configs[kind] = cfg
    return out, configs


# ---------------------------------------------------------------- 1-3: physics


def noise_ic(system, amplitude, seed=0):
    grid = interior_grid(P.length, 64)
    profile = make_initial_condition(IcSpec("uniform_noise", 0.01, seed=seed), grid, P.length) * (amplitude / 0.01)
    return ModalState.at_rest(slt_forward(profile, system, grid)), grid


def test_01_integrator_reduces_to_analytic_solution(acceptance):
    system, dt = build_modal_system(P, 16000), 1 / 16000
    results = {}
    for label, amplitude, nonlinear in (("T1 off, 1 cm", 0.01, False), ("T1 on, 10 um", 1e-5, True)):
        ic, grid = noise_ic(system, amplitude)
        start = time.perf_counter()
        # atol follows the amplitude so the tolerance stays relative
        num = integrate(ModalRhs(system, nonlinear), ic, dt, 4000, atol=1e-10 * amplitude / 0.01)
        elapsed = time.perf_counter() - start
        ref = linear_solution(ic, system, dt, 4000)
        err = rel_mse(render_trajectory(num, system, grid, dt).data, render_trajectory(ref, system, grid, dt).data)[0]
        results[label] = (err, elapsed)
    ok = all(err < 1e-8 and t < 10 for err, t in results.values())
    detail = "; ".join(f"{k}: rel MSE {e:.2e} in {t:.1f} s" for k, (e, t) in results.items())
    assert acceptance(1, "physics oracle", ok, detail + " (limits 1e-8, 10 s)")


def test_02_fundamental_is_tuned_to_b3(acceptance):
    system = build_modal_system(P, 4000)
    f1 = system.frequencies[0]
    # measured as well: spectrum of a pure mode-1 linear trajectory
    coeffs = np.zeros(system.num_modes)
    coeffs[0] = 1e-3
    seq = linear_solution(ModalState.at_rest(coeffs), system, 1 / 4000, 4000)
    measured = peak_frequency(seq.coeffs[:, 0], 4000, (200, 300))
    bin_width = 4000 / len(seq.coeffs)
    ok = abs(f1 - 247.0) <= 0.3 and abs(f1 - 246.94) <= 0.3 and abs(measured - f1) <= bin_width
    assert acceptance(2, "tuning", ok, f"f1 = {f1:.4f} Hz (spectral peak {measured:.3f} Hz), B3 = 246.94 Hz, tolerance 247.0 +/- 0.3")


def test_03_pitch_glide(acceptance):
    m = DatasetManifest(sample_rate=16000, num_steps=4000, num_trajectories=1, model_kind="tension_modulated",
                        ic_kind="uniform_noise")
    traj = simulate(m, IcSpec("uniform_noise", 0.01, seed=0))
    y = traj.data[:, probe_index(m.grid, 0.24)]
    window = 1600  # 100 ms
    early = peak_frequency(y[:window], 16000, (200, 300))
    late = peak_frequency(y[-window:], 16000, (200, 300))
    assert acceptance(3, "pitch glide", early - late >= 1.0,
                      f"first 100 ms {early:.2f} Hz, last 100 ms {late:.2f} Hz, drop {early - late:.2f} Hz (need >= 1)")


# ---------------------------------------------------------------- 4-7: experiments


@pytest.mark.slow
def test_04_dmd_reproduces_linear_data(acceptance, dmd_linear):
    _, ckpt, result, elapsed = dmd_linear
    row = next(r for r in result["rows"] if r[0] == "dmd")
    mae = row[5]
    ok = mae < 0.01 and elapsed < 60
    assert acceptance(4, "DMD on linear data", ok, f"val rel MAE {mae:.2e} at {HORIZON} steps, fit+eval {elapsed:.1f} s (limits 0.01, 60 s)")


@pytest.mark.slow
def test_05_dmd_fails_on_tension_modulation(acceptance, tmp_path, nonlinear_data):
    cfg = experiment(tmp_path, nonlinear_data)
    result = cmd_eval(cfg, cmd_fit_dmd(cfg), baselines=False)
    mse = next(r for r in result["rows"] if r[0] == "dmd")[3]
    assert acceptance(5, "DMD on nonlinear data", mse > 0.1, f"val rel MSE {mse:.3f} at {HORIZON} steps (need > 0.1)")


@pytest.mark.slow
def test_06_koopman_var_desk_scale(acceptance, trained):
    out, configs = trained
    best = {}
    for kind in configs:
        history = read_rows(out / f"{kind}_seed0" / "history.csv")
        best[kind] = float(history[-1]["best_val_rel_mse"])
        assert len(history) <= 500
    eval_rows = {r[0]: r[3] for r in cmd_eval(configs["koopman"], None, baselines=False)["rows"]}
    ok = eval_rows["koopman_var"] < 0.05 and eval_rows["koopman_var"] <= eval_rows["koopman"]
    assert acceptance(6, "Koopman_var training", ok,
                      f"val rel MSE koopman_var {eval_rows['koopman_var']:.4f}, koopman {eval_rows['koopman']:.4f} "
                      f"(training best {best['koopman_var']:.4f} / {best['koopman']:.4f}); need < 0.05 and var <= plain")


def region_means(path):
    rows = read_rows(path)
    mae = np.array([float(r["mae_field_cm"]) for r in rows])
    extra = np.array([r["extrapolated"] == "1" for r in rows])
    return mae[~extra].mean(), mae[extra].mean()


@pytest.mark.slow
def test_07_extrapolation(acceptance, trained, dmd_linear):
    out, configs = trained
    parts, ok = [], True
    for path in cmd_error_curve(configs["koopman"]):
        inside, beyond = region_means(path)
        ok &= beyond > inside
        parts.append(f"{path.stem.removeprefix('error_curve_')} {inside:.4f} -> {beyond:.4f} cm")
    cfg, ckpt, _, _ = dmd_linear
    inside, beyond = region_means(cmd_error_curve(cfg, ckpt)[0])
    ok &= beyond <= 2 * inside
    parts.append(f"dmd linear {inside:.2e} -> {beyond:.2e} cm (ratio {beyond / inside:.2f}, limit 2)")
    assert acceptance(7, "extrapolation", ok, "; ".join(parts))


# ---------------------------------------------------------------- 8-11: numerics


def test_08_scan_correctness(acceptance):
    rng = np.random.default_rng(0)
    n, length = 128, 4096
    lam = rng.uniform(0.9, 1.0, n) * np.exp(1j * rng.uniform(0, np.pi, n))
    u = rng.normal(size=(length, n)) + 1j * rng.normal(size=(length, n))
    x0 = rng.normal(size=n) + 1j * rng.normal(size=n)
    seq = sequential_recurrence(lam, u, x0)
    scan_err = np.linalg.norm(np.asarray(scan_recurrence(lam, u, x0)) - seq) / np.linalg.norm(seq)
    zero = np.asarray(scan_recurrence(lam, np.zeros((length, n)), x0))
    vand_err = np.linalg.norm(np.asarray(vandermonde_rollout(lam, x0, length)) - zero) / np.linalg.norm(zero)
    ok = scan_err < 1e-12 and vand_err < 1e-12
    assert acceptance(8, "scan correctness", ok, f"scan vs loop {scan_err:.2e}, Vandermonde vs scan {vand_err:.2e} (limit 1e-12)")


def test_09_gradient_audit(acceptance):
    dims = ModelDims(num_points=6, latent=4, hidden=8, state_hidden=8, ssm_features=5, ssm_state=4, depth=3)
    rng = np.random.default_rng(1)
    x = np.linspace(0, 1, 8)[1:-1]
    batch = np.stack([a * np.sin(np.pi * x) * np.cos(0.5 * np.arange(8))[:, None] for a in rng.normal(size=3)])
    worst = {}
    for kind in ("koopman", "koopman_var", "ssm"):
        errors = finite_difference_errors(initialize(kind, dims, seed=2), batch)
        name = max(errors, key=errors.get)
        worst[kind] = (errors[name], name, len(errors))
    ok = all(e < 1e-4 for e, _, _ in worst.values())
    detail = "; ".join(f"{k}: worst {e:.1e} ({name}, {n} groups)" for k, (e, name, n) in worst.items())
    assert acceptance(9, "gradient audit", ok, detail + " (limit 1e-4)")


def test_10_metric_identities(acceptance):
    rng = np.random.default_rng(2)
    truth = rng.normal(size=(5, 50, 16))
    pred = truth + 0.1 * rng.normal(size=truth.shape)
    zero = rel_mse(np.zeros_like(truth), truth)
    scale_err = max(
        np.max(np.abs(f(s * pred, s * truth) - f(pred, truth)) / f(pred, truth))
        for f in (rel_mse, rel_mae) for s in (1e-4, 0.37, 81.0, 1e5)
    )
    ok = np.all(zero == 1.0) and np.all(rel_mse(truth, truth) == 0) and np.all(rel_mae(truth, truth) == 0) and scale_err < 1e-12
    assert acceptance(10, "metric identities", ok, f"zero predictor {zero.min():.1f}..{zero.max():.1f}, perfect 0, scale drift {scale_err:.1e}")


def test_11_parameter_counts(acceptance):
    counts = {kind: count_parameters(initialize(kind, ModelDims())) for kind in ("koopman", "koopman_var")}
    reference = {"koopman": 191_077, "koopman_var": 134_885}
    dev = {k: counts[k] / reference[k] - 1 for k in counts}
    ok = all(abs(d) < 0.10 for d in dev.values())
    detail = "; ".join(f"{k} {counts[k]:,} vs {reference[k]:,} ({dev[k]:+.1%})" for k in counts)
    assert acceptance(11, "parameter counts", ok, detail + " (limit 10%)")


def test_12_commands_are_deterministic(acceptance, tmp_path):
    base = {
        "schema_version": 1,
        "dataset": {"sample_rate": 4000, "num_steps": 60, "num_trajectories": 10, "model_kind": "tension_modulated", "seed": 4},
        "model": {"kind": "koopman_var", "dims": {"latent": 8, "state_hidden": 16}},
        "train": {"max_epochs": 4, "batch_size": 4},
        "dmd": {"rank": 10},
        "eval": {"horizon": 30},
        "seeds": [0, 1],
    }
    digests = []
    for run in ("a", "b"):
        path = tmp_path / f"{run}.json"
        path.write_text(json.dumps({**base, "out_dir": str(tmp_path / run)}))
        for verb in ("dataset", "fit-dmd", "train", "eval", "error-curve"):
            assert cli.main([verb, "--config", str(path)]) == 0
        assert cli.main(["spectrum", "--config", str(path), "--start", "10", "--window", "40"]) == 0
        root = tmp_path / run
        digests.append({p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
                        for p in sorted(root.rglob("*.csv"))})
    same = digests[0] == digests[1] and len(digests[0]) >= 8
    assert acceptance(12, "determinism", same, f"{len(digests[0])} CSV files compared byte-for-byte across two runs")
