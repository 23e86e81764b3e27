import json

import numpy as np
import numpy.testing as npt
import pytest

from nlts import (
    CholeskyError,
    ConfigError,
    KernelSpec,
    SplitSpec,
    cholesky_with_jitter,
    generate_benchmark,
    kernel_matrix,
    load_dataset,
    sample_gp,
    sample_gp_matrix,
    split_series,
)
from nlts.synth import KERNEL_KINDS, default_kernel_specs


class TestKernelSpec:
    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            KernelSpec(kind="spectral")

    def test_bad_hyperparameters(self):
        with pytest.raises(ConfigError):
            KernelSpec(kind="rbf", lengthscale=0.0)
        with pytest.raises(ConfigError):
            KernelSpec(kind="matern", smoothness=2.0)
        with pytest.raises(ConfigError):
            KernelSpec(kind="rational_quadratic", mixture=0.0)
        with pytest.raises(ConfigError):
            KernelSpec(kind="polynomial", degree=0)

    def test_resolved_defaults_scale_with_grid(self):
        grid = np.linspace(0.0, 2.0, 5)
        spec = KernelSpec(kind="exp_sine_squared").resolved(grid)
        assert spec.lengthscale == pytest.approx(0.4)
        assert spec.periodicity == pytest.approx(0.5)

    def test_resolved_keeps_explicit_values(self):
        grid = np.linspace(0.0, 1.0, 5)
        spec = KernelSpec(kind="rbf", lengthscale=0.7).resolved(grid)
        assert spec.lengthscale == 0.7


class TestKernelMatrix:
    GRID = np.linspace(0.0, 1.0, 9)

    @pytest.mark.parametrize("kind", KERNEL_KINDS)
    def test_symmetric(self, kind):
        k = kernel_matrix(KernelSpec(kind=kind), self.GRID)
        npt.assert_array_equal(k, k.T)

    @pytest.mark.parametrize("kind", KERNEL_KINDS)
    def test_factorizable_with_jitter(self, kind):
        k = kernel_matrix(KernelSpec(kind=kind), self.GRID)
        chol, jitter = cholesky_with_jitter(k)
        npt.assert_allclose(chol @ chol.T, k + jitter * np.eye(k.shape[0]), atol=1e-10)

    def test_rbf_unit_diagonal(self):
        k = kernel_matrix(KernelSpec(kind="rbf"), self.GRID)
        npt.assert_allclose(np.diag(k), np.ones(9), rtol=1e-15)

    def test_rbf_value(self):
        spec = KernelSpec(kind="rbf", lengthscale=0.5)
        k = kernel_matrix(spec, np.array([0.0, 1.0]))
        assert k[0, 1] == pytest.approx(np.exp(-0.5 * (1.0 / 0.5) ** 2))

    def test_linear_example(self):
        k = kernel_matrix(KernelSpec(kind="linear"), np.array([1.0, 2.0]))
        npt.assert_allclose(k, [[1.0, 2.0], [2.0, 4.0]], rtol=1e-15)

    def test_polynomial_example(self):
        spec = KernelSpec(kind="polynomial", bias=1.0, degree=2)
        k = kernel_matrix(spec, np.array([1.0, 2.0]))
        npt.assert_allclose(k, [[4.0, 9.0], [9.0, 25.0]], rtol=1e-15)

    def test_matern_half_is_exponential(self):
        spec = KernelSpec(kind="matern", smoothness=0.5, lengthscale=0.3)
        k = kernel_matrix(spec, np.array([0.0, 0.6]))
        assert k[0, 1] == pytest.approx(np.exp(-2.0))

    def test_matern_families_order(self):
        # smoother kernels have larger mid-range correlation
        grid = np.array([0.0, 0.25])
        vals = []
        for nu in (0.5, 1.5, 2.5):
            spec = KernelSpec(kind="matern", smoothness=nu, lengthscale=0.25)
            vals.append(kernel_matrix(spec, grid)[0, 1])
        assert vals[0] < vals[1] < vals[2]

    def test_exp_sine_squared_periodic(self):
        spec = KernelSpec(kind="exp_sine_squared", periodicity=0.5, lengthscale=1.0)
        k = kernel_matrix(spec, np.array([0.0, 0.5, 1.0]))
        assert k[0, 1] == pytest.approx(1.0)  # exactly one period apart
        assert k[0, 2] == pytest.approx(1.0)

    def test_rational_quadratic_value(self):
        spec = KernelSpec(kind="rational_quadratic", lengthscale=1.0, mixture=2.0)
        k = kernel_matrix(spec, np.array([0.0, 2.0]))
        assert k[0, 1] == pytest.approx((1.0 + 4.0 / 4.0) ** -2.0)

    @pytest.mark.parametrize("kind", ["rbf", "matern", "rational_quadratic", "exp_sine_squared"])
    def test_stationary_shift_invariance(self, kind):
        spec = KernelSpec(kind=kind, lengthscale=0.37, periodicity=0.21)
        grid = np.linspace(0.0, 1.0, 7)
        k1 = kernel_matrix(spec, grid)
        k2 = kernel_matrix(spec, grid + 13.5)
        npt.assert_allclose(k1, k2, atol=1e-12)

    def test_variance_scales(self):
        base = kernel_matrix(KernelSpec(kind="rbf"), self.GRID)
        scaled = kernel_matrix(KernelSpec(kind="rbf", variance=4.0), self.GRID)
        npt.assert_allclose(scaled, 4.0 * base, rtol=1e-15)

    def test_bad_grid(self):
        with pytest.raises(ConfigError):
            kernel_matrix(KernelSpec(kind="rbf"), np.array([]))
        with pytest.raises(ConfigError):
            kernel_matrix(KernelSpec(kind="rbf"), np.array([0.0, np.nan]))

    @pytest.mark.parametrize("kind", KERNEL_KINDS)
    def test_psd_on_random_grids(self, kind):
        rng = np.random.default_rng(4)
        for _ in range(20):
            grid = np.sort(rng.uniform(0, 3, int(rng.integers(2, 12))))
            k = kernel_matrix(KernelSpec(kind=kind), grid)
            eigs = np.linalg.eigvalsh(k)
            assert eigs.min() > -1e-8 * max(1.0, eigs.max())


class TestCholeskyJitter:
    def test_spd_needs_no_jitter(self):
        k = np.array([[2.0, 0.5], [0.5, 1.0]])
        chol, jitter = cholesky_with_jitter(k)
        assert jitter == 0.0
        npt.assert_allclose(chol @ chol.T, k, rtol=1e-12)

    def test_singular_gets_jitter(self):
        k = np.ones((4, 4))  # rank one
        chol, jitter = cholesky_with_jitter(k)
        assert jitter > 0.0
        npt.assert_allclose(chol @ chol.T, k + jitter * np.eye(4), atol=1e-8)

    def test_negative_definite_fails(self):
        with pytest.raises(CholeskyError):
            cholesky_with_jitter(-np.eye(3))


class TestSampleGP:
    def test_deterministic(self):
        spec = KernelSpec(kind="rbf")
        grid = np.linspace(0, 1, 16)
        a = sample_gp_matrix(spec, grid, 5, seed=3)
        b = sample_gp_matrix(spec, grid, 5, seed=3)
        npt.assert_array_equal(a, b)

    def test_per_series_substreams(self):
        spec = KernelSpec(kind="rbf")
        grid = np.linspace(0, 1, 16)
        full = sample_gp_matrix(spec, grid, 4, seed=3)
        # regenerating a prefix leaves earlier rows untouched
        prefix = sample_gp_matrix(spec, grid, 2, seed=3)
        npt.assert_array_equal(full[:2], prefix)

    def test_wraps_provenance(self):
        spec = KernelSpec(kind="linear")
        grid = np.linspace(0.1, 1.0, 8)
        out = sample_gp(spec, grid, 3, seed=11)
        assert len(out) == 3
        assert [s.series_index for s in out] == [0, 1, 2]
        assert all(s.seed == 11 for s in out)
        assert all(s.kernel.lengthscale is not None for s in out)
        assert all(len(s.series) == 8 for s in out)

    def test_zero_count(self):
        assert sample_gp(KernelSpec(kind="rbf"), np.linspace(0, 1, 4), 0, seed=0) == []

    def test_empirical_covariance_small(self):
        spec = KernelSpec(kind="rbf", lengthscale=0.3)
        grid = np.linspace(0, 1, 5)
        k = kernel_matrix(spec, grid)
        draws = sample_gp_matrix(spec, grid, 40_000, seed=21)
        emp = draws.T @ draws / draws.shape[0]
        rel = np.linalg.norm(emp - k) / np.linalg.norm(k)
        assert rel < 0.05

    def test_linear_kernel_draws_are_lines(self):
        # a linear-kernel GP draw is t * w with w ~ N(0, variance); the rank-1
        # matrix needs jitter, which adds O(sqrt(jitter)) off-line noise
        spec = KernelSpec(kind="linear")
        grid = np.linspace(0.5, 2.0, 6)
        draws = sample_gp_matrix(spec, grid, 50, seed=7)
        for row in draws:
            slope = row / grid
            npt.assert_allclose(slope, slope[0], rtol=0, atol=1e-2)


class TestGenerateBenchmark:
    def test_files_and_manifest(self, tmp_path):
        specs = default_kernel_specs()
        manifest = generate_benchmark(specs, count=2, length=40, holdout=10, seed=5,
                                      out_dir=tmp_path)
        csvs = sorted(p.name for p in tmp_path.glob("*.csv"))
        assert len(csvs) == 12
        assert "rbf_0000.csv" in csvs and "linear_0001.csv" in csvs
        on_disk = json.loads((tmp_path / "manifest.json").read_text())
        assert on_disk == manifest
        assert manifest["schema"] == "nlts.synth/1"
        assert len(manifest["files"]) == 12
        entry = manifest["files"][0]
        assert set(entry) == {"file", "kernel", "seed", "series_index", "length", "holdout"}

    def test_round_trip_through_loader(self, tmp_path):
        generate_benchmark([KernelSpec(kind="matern")], count=3, length=50, holdout=12,
                           seed=2, out_dir=tmp_path)
        for i in range(3):
            ds = load_dataset(tmp_path / f"matern_{i:04d}.csv")
            assert ds.holdout == 12
            assert len(ds.series) == 50
            hist, tgt = split_series(ds.series, SplitSpec.by_horizon(ds.holdout))
            assert len(hist) == 38 and len(tgt) == 12

    def test_normalized_values_in_unit_range(self, tmp_path):
        generate_benchmark([KernelSpec(kind="rbf")], count=2, length=30, holdout=5,
                           seed=1, out_dir=tmp_path)
        ds = load_dataset(tmp_path / "rbf_0000.csv")
        assert ds.series.values.min() == pytest.approx(0.0)
        assert ds.series.values.max() == pytest.approx(1.0)

    def test_value_raw_column_preserved(self, tmp_path):
        generate_benchmark([KernelSpec(kind="rbf")], count=1, length=20, holdout=4,
                           seed=9, out_dir=tmp_path)
        ds_raw = load_dataset(tmp_path / "rbf_0000.csv", value_column="value_raw")
        spec = KernelSpec(kind="rbf")
        from nlts.rng import derive_seed

        expected = sample_gp_matrix(spec, np.linspace(0, 1, 20), 1, derive_seed(9, 0))[0]
        npt.assert_allclose(ds_raw.series.values, expected, rtol=0, atol=1e-15)

    def test_count_zero(self, tmp_path):
        manifest = generate_benchmark([KernelSpec(kind="rbf")], count=0, length=10,
                                      holdout=2, seed=0, out_dir=tmp_path)
        assert manifest["files"] == []
        assert not list(tmp_path.glob("*.csv"))

    def test_holdout_bounds(self, tmp_path):
        with pytest.raises(ConfigError):
            generate_benchmark([KernelSpec(kind="rbf")], count=1, length=10, holdout=10,
                               seed=0, out_dir=tmp_path)
        with pytest.raises(ConfigError):
            generate_benchmark([KernelSpec(kind="rbf")], count=1, length=10, holdout=-1,
                               seed=0, out_dir=tmp_path)

    def test_deterministic_across_calls(self, tmp_path):
        a_dir = tmp_path / "a"
        b_dir = tmp_path / "b"
        for d in (a_dir, b_dir):
            generate_benchmark([KernelSpec(kind="rational_quadratic")], count=2, length=25,
                               holdout=5, seed=31, out_dir=d)
        a = (a_dir / "rational_quadratic_0001.csv").read_text()
        b = (b_dir / "rational_quadratic_0001.csv").read_text()
        assert a == b
