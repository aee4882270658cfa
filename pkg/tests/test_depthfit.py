import numpy as np
import pytest

from pauskit.depthfit import (
    DepthSeries,
    cscan_from_volume,
    fit_depth_decay,
    linear_std_to_db,
    max_imaging_depth,
    roi_signal_stats,
    series_from_stats,
    synthetic_nirf_series,
    to_db,
)
from pauskit.model import Grid, Roi
from pauskit.phantoms import depth_target_doc
from pauskit.scene import Scene
from pauskit.simulate import synthesize_volume


class TestCScan:
    def test_constant_volume(self):
        grid = Grid(nx=8, nz=20, dx=1.0, dz=0.5)
        stack = np.full((3, 20, 8), 2.5)
        cscan = cscan_from_volume(stack, grid, center_depth_mm=5.0, range_mm=1.0)
        assert cscan.shape == (3, 8)
        assert np.all(cscan == 2.5)

    def test_single_pixel_window_is_that_slice(self):
        grid = Grid(nx=4, nz=10, dx=1.0, dz=1.0)
        stack = np.arange(40.0).reshape(1, 10, 4)
        cscan = cscan_from_volume(stack, grid, center_depth_mm=3.5, range_mm=0.5)
        assert np.array_equal(cscan[0], stack[0, 3, :])

    def test_window_outside_grid(self):
        grid = Grid(nx=4, nz=10, dx=1.0, dz=1.0)
        stack = np.ones((1, 10, 4))
        with pytest.raises(ValueError):
            cscan_from_volume(stack, grid, center_depth_mm=9.9, range_mm=1.0)

    def test_slab_peak_at_lateral_center(self, psf):
        scene = Scene.from_doc(depth_target_doc(8.0, noise_sigma=0.0))
        volume = synthesize_volume(scene, psf)
        image = np.abs(volume.fiber_sum()[0])
        cscan = cscan_from_volume(image[None], scene.grid, 8.0, 1.0)
        peak_col = int(np.argmax(cscan[0]))
        true_col = scene.grid.nearest_index(0.0, 8.0)[0]
        assert abs(peak_col - true_col) <= 1


class TestRoiStats:
    def test_strong_signal_selects_everything(self):
        rng = np.random.default_rng(12)
        image = np.abs(rng.normal(1.0, 0.1, (30, 30)))
        image[2:10, 2:10] = rng.normal(5.0, 0.2, (8, 8))  # ~ mean + 40 sigma
        stats = roi_signal_stats(image, Roi(2, 2, 8, 8), Roi(15, 15, 10, 10))
        assert stats.n_selected == 64
        target = image[2:10, 2:10]
        assert stats.mean == pytest.approx(target.mean())
        assert stats.std == pytest.approx(target.std())
        assert not stats.below_sensitivity

    def test_noise_only_target_rarely_selects(self):
        # false-positive count stays near the Gaussian 3-sigma tail rate
        rng = np.random.default_rng(13)
        counts = []
        for _ in range(100):
            image = np.abs(rng.normal(1.0, 0.05, (40, 40)))
            stats = roi_signal_stats(image, Roi(0, 0, 12, 12), Roi(20, 20, 16, 16))
            counts.append(stats.n_selected)
        mean_count = np.mean(counts)
        expected = 144 * 0.00135
        assert mean_count < 10 * expected + 1.0

    def test_below_sensitivity_result(self):
        image = np.ones((20, 20))
        stats = roi_signal_stats(image, Roi(0, 0, 4, 4), Roi(10, 10, 6, 6))
        assert stats.below_sensitivity
        assert stats.n_selected == 0
        assert np.isnan(stats.mean)

    def test_mean_threshold_fallback(self):
        image = np.ones((20, 20))
        image[10:16, 10:16] = 2.0
        image[10, 10] = 2.6                # noise box: mean 2.017, std 0.099
        image[0:4, 0:4] = 2.1              # above the mean, below mean + 3 sigma
        noise = Roi(10, 10, 6, 6)
        strict = roi_signal_stats(image, Roi(0, 0, 4, 4), noise)
        fallback = roi_signal_stats(image, Roi(0, 0, 4, 4), noise,
                                    use_mean_threshold=True)
        assert strict.below_sensitivity
        assert not fallback.below_sensitivity
        assert fallback.n_selected == 16

    def test_overlapping_rois_rejected(self):
        with pytest.raises(ValueError):
            roi_signal_stats(np.ones((10, 10)), Roi(0, 0, 5, 5), Roi(3, 3))


class TestFitDepthDecay:
    def test_exact_line(self):
        depths = np.array([2.0, 6.0, 11.0, 17.0])
        series = DepthSeries("PA", depths, -0.5 * depths + 10.0, noise_floor_db=0.0)
        fit = fit_depth_decay(series)
        assert fit.slope_db_per_mm == pytest.approx(-0.5, abs=1e-12)
        assert fit.intercept_db == pytest.approx(10.0, abs=1e-12)
        assert fit.max_depth_mm == pytest.approx(20.0, abs=1e-10)
        assert fit.slope_std == pytest.approx(0.0, abs=1e-10)
        assert fit.intercept_std == pytest.approx(0.0, abs=1e-10)
        assert fit.max_depth_std_mm == pytest.approx(0.0, abs=1e-10)
        assert fit.r_squared == pytest.approx(1.0)

    def test_reported_pa_constants(self):
        # slope -0.41 dB/mm, intercept 17.12 dB, floor 3.18 dB -> 34.0 mm
        depth, _ = max_imaging_depth(-0.41, 17.12, 3.18)
        assert depth == pytest.approx(34.0, abs=0.05)

    def test_reported_nirf_constants(self):
        depth, _ = max_imaging_depth(-0.15, 4.41, 2.97)
        assert depth == pytest.approx(9.6, abs=0.05)

    def test_normal_equations_residual_orthogonality(self):
        rng = np.random.default_rng(21)
        depths = np.sort(rng.uniform(2, 20, 12))
        signal = 12.0 - 0.4 * depths + rng.normal(0, 0.5, 12)
        std = rng.uniform(0.2, 0.8, 12)
        series = DepthSeries("PA", depths, signal, std_db=std, noise_floor_db=0.0)
        fit = fit_depth_decay(series)
        w = 1.0 / std ** 2
        residual = signal - (fit.intercept_db + fit.slope_db_per_mm * depths)
        scale = np.abs(w * signal).sum()
        assert abs((w * residual).sum()) / scale < 1e-10
        assert abs((w * residual * depths).sum()) / scale < 1e-10

    def test_db_shift_invariance(self):
        rng = np.random.default_rng(22)
        depths = np.sort(rng.uniform(2, 20, 8))
        signal = 14.0 - 0.5 * depths + rng.normal(0, 0.3, 8)
        base = DepthSeries("PA", depths, signal, noise_floor_db=1.0)
        shifted = DepthSeries("PA", depths, signal + 25.0, noise_floor_db=26.0)
        assert fit_depth_decay(shifted).max_depth_mm == pytest.approx(
            fit_depth_decay(base).max_depth_mm, rel=1e-9)

    def test_two_sigma_coverage(self):
        # exact decay plus zero-mean dB noise: >= 90/100 trials cover the truth
        rng = np.random.default_rng(77)
        hits = 0
        for _ in range(100):
            depths = np.linspace(3, 16, 10)
            signal = 15.0 - 0.45 * depths + rng.normal(0, 0.8, 10)
            series = DepthSeries("PA", depths, signal, std_db=np.full(10, 0.8),
                                 noise_floor_db=0.0)
            fit = fit_depth_decay(series)
            if abs(fit.slope_db_per_mm + 0.45) <= 2 * fit.slope_std:
                hits += 1
        assert hits >= 90

    def test_degenerate_inputs(self):
        with pytest.raises(ValueError):
            fit_depth_decay(DepthSeries("PA", [3.0], [1.0]))
        with pytest.raises(ValueError):
            max_imaging_depth(0.0, 3.0, 1.0)
        # flat signal: slope 0 never meets the floor
        with pytest.raises(ValueError):
            fit_depth_decay(DepthSeries("PA", [2.0, 5.0], [3.0, 3.0]))

    def test_floor_std_contributes(self):
        depths = np.linspace(3, 16, 8)
        rng = np.random.default_rng(30)
        signal = 15.0 - 0.45 * depths + rng.normal(0, 0.2, 8)
        series = DepthSeries("PA", depths, signal, std_db=np.full(8, 0.2),
                             noise_floor_db=0.0)
        without = fit_depth_decay(series)
        with_floor = fit_depth_decay(series, floor_std_db=1.0)
        assert with_floor.max_depth_std_mm > without.max_depth_std_mm


class TestSeriesPlumbing:
    def test_csv_round_trip(self, tmp_path):
        series = DepthSeries("NIRF", [2.0, 4.0, 8.0], [5.0, 4.1, 2.9],
                             std_db=[0.2, 0.3, 0.4], noise_floor_db=1.5)
        path = tmp_path / "series.csv"
        series.to_csv(path)
        back = DepthSeries.from_csv(path, modality="NIRF", noise_floor_db=1.5)
        assert np.array_equal(back.depths_mm, series.depths_mm)
        assert np.array_equal(back.signal_db, series.signal_db)
        assert np.array_equal(back.std_db, series.std_db)

    def test_series_validation(self):
        with pytest.raises(ValueError):
            DepthSeries("PA", [5.0, 3.0], [1.0, 2.0])
        with pytest.raises(ValueError):
            DepthSeries("PA", [3.0, 5.0], [1.0])

    def test_db_helpers(self):
        assert to_db(10.0) == pytest.approx(20.0)
        assert linear_std_to_db(2.0, 0.2) == pytest.approx(20 / np.log(10) * 0.1)

    def test_series_from_stats_uses_deepest_noise_floor(self):
        from pauskit.depthfit import SignalStats

        stats = [
            SignalStats(10.0, 1.0, 5, 0.5, 0.05, 0.65, False),
            SignalStats(4.0, 0.5, 5, 0.8, 0.08, 1.04, False),
        ]
        series = series_from_stats([4.0, 9.0], stats)
        assert series.noise_floor_db == pytest.approx(to_db(0.8))
        assert series.signal_db == pytest.approx(to_db([10.0, 4.0]))

    def test_toy_nirf_generator_fits_back(self):
        series = synthetic_nirf_series(noise_db=0.0)
        fit = fit_depth_decay(series)
        assert fit.slope_db_per_mm == pytest.approx(-0.15, abs=1e-12)
        assert fit.max_depth_mm == pytest.approx(9.6, abs=1e-9)
