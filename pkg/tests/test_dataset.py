import json

import numpy as np
import pytest

from stringkoop.dataset import (
    DatasetError,
    DatasetManifest,
    IcSpec,
    generate_dataset,
    load_dataset,
    make_initial_condition,
    sample_ic_spec,
    simulate,
)
from stringkoop.physics import (
    ModalState,
    StringParams,
    build_modal_system,
    interior_grid,
    linear_solution,
    render_trajectory,
    slt_forward,
)

P = StringParams()
GRID = interior_grid(P.length, 64)


def small_manifest(**kw):
    base = dict(sample_rate=4000, num_steps=40, num_trajectories=10, model_kind="linear", seed=3)
    return DatasetManifest(**{**base, **kw})


@pytest.fixture(scope="module")
def linear_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("linear")
    generate_dataset(small_manifest(), out)
    return out


# ---------------------------------------------------------------- initial conditions


def test_noise_peak_equals_amplitude():
    profile = make_initial_condition(IcSpec("uniform_noise", 0.01, seed=4), GRID, P.length)
    assert np.max(np.abs(profile)) == 0.01


def test_same_seed_same_profile():
    a = make_initial_condition(sample_ic_spec("uniform_noise", 11, P.length), GRID, P.length)
    b = make_initial_condition(sample_ic_spec("uniform_noise", 11, P.length), GRID, P.length)
    np.testing.assert_array_equal(a, b)


def test_centred_gaussian_peaks_at_midpoint():
    profile = make_initial_condition(IcSpec("gaussian", 0.005, P.length / 2, 0.05), GRID, P.length)
    cell = GRID[1] - GRID[0]
    assert abs(GRID[np.argmax(profile)] - P.length / 2) <= cell
    assert np.isclose(profile.max(), 0.005)


def test_profile_vanishes_at_clamped_ends():
    fine = np.linspace(0, P.length, 201)
    for kind in ("gaussian", "uniform_noise"):
        profile = make_initial_condition(sample_ic_spec(kind, 5, P.length), fine, P.length)
        assert profile[0] == 0 and profile[-1] == 0


@pytest.mark.parametrize("amplitude", [0.02, 5e-4, -0.005])
def test_amplitude_bounds_enforced(amplitude):
    with pytest.raises(ValueError, match="amplitude"):
        IcSpec("uniform_noise", amplitude)


def test_sampled_specs_respect_ranges():
    for seed in range(200):
        spec = sample_ic_spec("gaussian", seed, P.length)
        assert 1e-3 <= spec.amplitude <= 1e-2
        assert 0.2 * P.length <= spec.gaussian_mean <= 0.8 * P.length
        assert 0.02 * P.length <= spec.gaussian_std <= 0.1 * P.length


# ---------------------------------------------------------------- manifest


def test_split_counts_8_1_1():
    splits = small_manifest().split_indices()
    assert [len(splits[k]) for k in ("train", "val", "test")] == [8, 1, 1]


def test_splits_disjoint_and_exhaustive():
    splits = small_manifest(num_trajectories=37).split_indices()
    joined = np.concatenate(list(splits.values()))
    assert sorted(joined.tolist()) == list(range(37))


@pytest.mark.parametrize("split", [(0.5, 0.5, 0.5), (0.9, 0.1), (1.1, -0.1, 0.0)])
def test_bad_split_rejected(split):
    with pytest.raises(ValueError, match="split"):
        small_manifest(split=split)


def test_manifest_dict_round_trip():
    m = small_manifest()
    again = DatasetManifest.from_dict(json.loads(json.dumps(m.to_dict())))
    assert again.seeds == m.seeds and again.params == m.params and again.split == m.split


# ---------------------------------------------------------------- generation and loading


def test_writes_one_file_per_trajectory_and_manifest(linear_dir):
    assert len(list(linear_dir.glob("traj_*.f32"))) == 10
    assert (linear_dir / "manifest.json").exists()


def test_training_split_has_unit_std(linear_dir):
    ds = load_dataset(linear_dir)
    assert abs(np.std(ds.split("train").astype(np.float64)) - 1.0) < 1e-6


def test_linear_trajectory_matches_analytic_solution(linear_dir):
    ds = load_dataset(linear_dir)
    m = ds.manifest
    spec = m.ic_specs()[4]
    system = build_modal_system(m.params, m.sample_rate)
    c0 = slt_forward(make_initial_condition(spec, m.grid, P.length), system, m.grid)
    expected = render_trajectory(linear_solution(ModalState.at_rest(c0), system, m.dt, m.num_steps), system, m.grid, m.dt)
    np.testing.assert_array_equal(ds.data[4], (expected.data / ds.scale).astype(np.float32))


def test_regeneration_is_byte_identical(linear_dir, tmp_path):
    generate_dataset(small_manifest(), tmp_path)
    for f in sorted(linear_dir.glob("traj_*.f32")):
        assert f.read_bytes() == (tmp_path / f.name).read_bytes()
    assert (linear_dir / "manifest.json").read_text() == (tmp_path / "manifest.json").read_text()


def test_load_round_trip_bytes(linear_dir):
    ds = load_dataset(linear_dir / "manifest.json")
    for i in range(10):
        assert ds.data[i].astype("<f4").tobytes() == (linear_dir / f"traj_{i:05d}.f32").read_bytes()


def test_denormalize_inverts_normalize(linear_dir):
    ds = load_dataset(linear_dir)
    raw = simulate(ds.manifest, ds.manifest.ic_specs()[0]).data
    np.testing.assert_allclose(ds.denormalize(ds.normalize(raw)), raw, rtol=1e-12)
    # float32 storage limits the stored copy to single precision
    np.testing.assert_allclose(ds.denormalize(ds.data[0]), raw, rtol=0, atol=2e-7 * np.abs(raw).max())


def test_all_values_finite(linear_dir):
    assert np.all(np.isfinite(load_dataset(linear_dir).data))


def copy_dataset(src, dst):
    for f in src.iterdir():
        (dst / f.name).write_bytes(f.read_bytes())
    return dst


def test_missing_file_named(linear_dir, tmp_path):
    copy_dataset(linear_dir, tmp_path)
    (tmp_path / "traj_00003.f32").unlink()
    with pytest.raises(DatasetError, match="traj_00003.f32"):
        load_dataset(tmp_path)


def test_truncated_file_reports_offset(linear_dir, tmp_path):
    copy_dataset(linear_dir, tmp_path)
    path = tmp_path / "traj_00002.f32"
    path.write_bytes(path.read_bytes()[:1000])
    with pytest.raises(DatasetError, match=r"traj_00002\.f32.*byte offset 1000"):
        load_dataset(tmp_path)


def test_non_finite_value_reports_offset(linear_dir, tmp_path):
    copy_dataset(linear_dir, tmp_path)
    path = tmp_path / "traj_00001.f32"
    values = np.fromfile(path, "<f4")
    values[17] = np.nan
    values.tofile(path)
    with pytest.raises(DatasetError, match="byte offset 68"):
        load_dataset(tmp_path)


def test_wrong_format_version_rejected(linear_dir, tmp_path):
    copy_dataset(linear_dir, tmp_path)
    doc = json.loads((tmp_path / "manifest.json").read_text())
    doc["format_version"] = 99
    (tmp_path / "manifest.json").write_text(json.dumps(doc))
    with pytest.raises(DatasetError, match="format_version"):
        load_dataset(tmp_path)


def test_missing_manifest(tmp_path):
    with pytest.raises(DatasetError, match="manifest"):
        load_dataset(tmp_path)


def test_nonlinear_small_dataset(tmp_path):
    m = generate_dataset(small_manifest(model_kind="tension_modulated", num_steps=30, num_trajectories=3,
                                        ic_kind="uniform_noise"), tmp_path)
    ds = load_dataset(tmp_path)
    assert ds.data.shape == (3, 30, 64) and m.normalization_scale > 0
    assert np.all(np.isfinite(ds.data))
