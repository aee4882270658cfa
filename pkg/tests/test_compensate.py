import numpy as np
import pytest

from pauskit.compensate import (
    PixelSelection,
    compensate_volume,
    fit_optical_props,
    fit_volume,
    normalize_pa,
    pairwise_reduce,
    select_pixels,
    share_objective,
)
from pauskit.errors import NoSignalError
from pauskit.fluence import fiber_fluence_matrix
from pauskit.model import Grid, Roi
from pauskit.phantoms import diffuse_absorber_doc, injected_agent_doc
from pauskit.scene import Scene
from pauskit.simulate import IQVolume, noise_slice, synthesize_volume
from pauskit.unmix import pixel_ncc

NOISE_ROI = Roi(2, 2, 6, 6)


def make_volume(data, grid, wavelengths=(795.0,)):
    return IQVolume(np.asarray(data, dtype=complex), grid, wavelengths)


class TestSelectPixels:
    def test_one_bright_pixel(self):
        grid = Grid(nx=12, nz=12, dx=0.5, dz=0.5)
        rng = np.random.default_rng(1)
        data = 0.01 * (rng.standard_normal((1, 4, 12, 12))
                       + 1j * rng.standard_normal((1, 4, 12, 12)))
        data[0, :, 9, 6] = 1.0  # 100x the noise scale
        volume = make_volume(data, grid)
        selection = select_pixels(volume, 795.0, Roi(1, 1, 6, 6), min_depth_mm=0.0)
        assert selection.count == 1
        assert tuple(selection.indices[0]) == (9, 6)
        assert selection.weights[0] == 1.0

    def test_squared_magnitude_weights(self):
        grid = Grid(nx=16, nz=16, dx=0.5, dz=0.5)
        data = np.zeros((1, 4, 16, 16), dtype=complex)
        data[0, :, 10, 3] = 2.0  # fiber-averaged magnitudes (2a, a)
        data[0, :, 10, 7] = 1.0
        volume = make_volume(data, grid)
        selection = select_pixels(volume, 795.0, NOISE_ROI, min_depth_mm=0.0)
        weights = {tuple(idx): w for idx, w in zip(selection.indices, selection.weights)}
        assert weights[(10, 3)] == pytest.approx(0.8, rel=1e-12)
        assert weights[(10, 7)] == pytest.approx(0.2, rel=1e-12)

    def test_pure_noise_false_positive_rate(self):
        # Rayleigh tail above mean + 3 sigma of the fiber-summed envelope:
        # P = exp(-(sqrt(pi/2) + 3 sqrt(2 - pi/2))^2 / 2) ~= 5.6e-3 per pixel,
        # inflated by the 36-pixel threshold estimate. Monte Carlo mean must
        # sit within a factor-of-four band around the analytic rate.
        grid = Grid(nx=30, nz=30, dx=0.5, dz=0.5)
        analytic = np.exp(-0.5 * (np.sqrt(np.pi / 2) + 3 * np.sqrt(2 - np.pi / 2)) ** 2)
        counts = []
        for seed in range(120):
            data = np.stack([noise_slice(seed, 0, i, (30, 30), 1.0) for i in range(4)])
            volume = make_volume(data[None], grid)
            try:
                sel = select_pixels(volume, 795.0, NOISE_ROI, min_depth_mm=0.0)
                counts.append(sel.count)
            except NoSignalError:
                counts.append(0)
        mean_count = np.mean(counts)
        expected = analytic * 30 * 30
        assert 0.25 * expected < mean_count < 4.0 * expected

    def test_empty_selection_raises(self):
        grid = Grid(nx=16, nz=16, dx=0.5, dz=0.5)
        volume = make_volume(np.zeros((1, 4, 16, 16)), grid)
        with pytest.raises(NoSignalError):
            select_pixels(volume, 795.0, NOISE_ROI, min_depth_mm=0.0)

    def test_min_depth_exclusion(self):
        grid = Grid(nx=16, nz=16, dx=0.5, dz=0.5)
        data = np.zeros((1, 4, 16, 16), dtype=complex)
        data[0, :, 1, 8] = 1.0   # at 0.75 mm depth
        data[0, :, 12, 8] = 1.0  # at 6.25 mm depth
        volume = make_volume(data, grid)
        selection = select_pixels(volume, 795.0, NOISE_ROI, min_depth_mm=2.0)
        assert selection.count == 1
        assert tuple(selection.indices[0]) == (12, 8)

    def test_small_noise_roi_rejected(self):
        grid = Grid(nx=16, nz=16, dx=0.5, dz=0.5)
        volume = make_volume(np.ones((1, 4, 16, 16)), grid)
        with pytest.raises(ValueError):
            select_pixels(volume, 795.0, Roi(0, 0, 2, 2))


class TestNormalizePA:
    def test_equal_fibers_uniform_shares(self):
        grid = Grid(nx=8, nz=8, dx=1.0, dz=1.0)
        data = np.ones((1, 5, 8, 8), dtype=complex)
        volume = make_volume(data, grid)
        selection = PixelSelection(np.array([[4, 4]]), np.array([1.0]), 0, 0, 0)
        shares, _ = normalize_pa(volume, selection, 795.0)
        assert shares[0] == pytest.approx(np.full(5, 0.2))

    def test_shares_sum_to_one(self, point_volume):
        selection = select_pixels(point_volume, 795.0, NOISE_ROI)
        shares, _ = normalize_pa(point_volume, selection, 795.0)
        assert shares.sum(axis=1) == pytest.approx(np.ones(shares.shape[0]), abs=1e-12)

    def test_zero_sum_pixels_dropped_with_warning(self):
        grid = Grid(nx=8, nz=8, dx=1.0, dz=1.0)
        data = np.zeros((1, 4, 8, 8), dtype=complex)
        data[0, :, 2, 2] = 1.0
        volume = make_volume(data, grid)
        selection = PixelSelection(np.array([[2, 2], [5, 5]]),
                                   np.array([0.5, 0.5]), 0, 0, 0)
        with pytest.warns(UserWarning, match="zero-sum"):
            shares, kept = normalize_pa(volume, selection, 795.0)
        assert shares.shape[0] == 1 and kept.count == 1

    def test_point_target_shares_match_model(self, point_scene, point_volume):
        # single source pixel: every blob pixel carries the source's shares
        selection = select_pixels(point_volume, 795.0, NOISE_ROI)
        shares, selection = normalize_pa(point_volume, selection, 795.0)
        ix, iz = point_scene.grid.nearest_index(0.0, 8.0)
        x, z = point_scene.grid.pixel_center(ix, iz)
        phi = fiber_fluence_matrix(np.array([[x, 0.0, z]]), point_scene.fibers,
                                   point_scene.medium.mu_eff_cm(795.0), 10.0)[0]
        model = phi / phi.sum()
        source_row = np.nonzero((selection.indices == [iz, ix]).all(axis=1))[0]
        assert source_row.size == 1
        assert shares[source_row[0]] == pytest.approx(model, abs=1e-6)


class TestFitOpticalProps:
    def test_zero_residual_fixed_point(self, diffuse_scene):
        # shares generated exactly from the model at (1.5, 8.0)
        rng = np.random.default_rng(3)
        indices = np.column_stack([rng.integers(25, 110, 40), rng.integers(5, 90, 40)])
        selection = PixelSelection(indices, np.full(40, 1 / 40), 0.0, 0.0, 0.0)
        points = selection.positions_mm(diffuse_scene.grid)
        phi = fiber_fluence_matrix(points, diffuse_scene.fibers, 1.5, 8.0)
        shares = phi / phi.sum(axis=1, keepdims=True)
        fit = fit_optical_props(shares, selection, diffuse_scene.grid,
                                diffuse_scene.fibers, 795.0)
        assert fit.mu_eff_cm == pytest.approx(1.5, rel=1e-3)
        assert fit.mu_s_prime_cm == pytest.approx(8.0, rel=1e-3)
        assert fit.objective < 1e-12
        assert fit.n_evaluations <= 41 * 41 + 500

    def test_diffuse_noiseless_recovery(self, diffuse_scene, diffuse_volume):
        selection = select_pixels(diffuse_volume, 795.0, NOISE_ROI)
        shares, selection = normalize_pa(diffuse_volume, selection, 795.0)
        fit = fit_optical_props(shares, selection, diffuse_scene.grid,
                                diffuse_scene.fibers, 795.0, lateral_sigma_mm=0.3)
        assert fit.mu_eff_cm == pytest.approx(np.sqrt(4.5), rel=0.02)
        assert fit.mu_s_prime_cm == pytest.approx(10.0, rel=0.02)

    def test_compact_target_carries_resolution_bias(self, point_scene, point_volume):
        # pixel-position share matching on an isolated small target is biased
        # by the resolution cell; bounds pinned from the profiling oracle
        selection = select_pixels(point_volume, 795.0, NOISE_ROI)
        shares, selection = normalize_pa(point_volume, selection, 795.0)
        fit = fit_optical_props(shares, selection, point_scene.grid,
                                point_scene.fibers, 795.0)
        assert abs(fit.mu_eff_cm / np.sqrt(4.5) - 1.0) < 0.06
        assert abs(fit.mu_s_prime_cm / 10.0 - 1.0) < 0.35

    def test_objective_zero_iff_shares_match(self, diffuse_scene):
        indices = np.array([[60, 40], [80, 50]])
        selection = PixelSelection(indices, np.array([0.5, 0.5]), 0, 0, 0)
        points = selection.positions_mm(diffuse_scene.grid)
        phi = fiber_fluence_matrix(points, diffuse_scene.fibers, 2.0, 9.0)
        shares = phi / phi.sum(axis=1, keepdims=True)
        at_truth = share_objective(shares, selection.weights, points,
                                   diffuse_scene.fibers, 2.0, 9.0)
        off = share_objective(shares, selection.weights, points,
                              diffuse_scene.fibers, 2.5, 9.0)
        assert at_truth == pytest.approx(0.0, abs=1e-25)
        assert off > 1e-9

    def test_too_few_fibers_rejected(self, diffuse_scene):
        selection = PixelSelection(np.array([[50, 50]]), np.array([1.0]), 0, 0, 0)
        with pytest.raises(ValueError):
            fit_optical_props(np.full((1, 2), 0.5), selection, diffuse_scene.grid,
                              diffuse_scene.fibers, 795.0)

    def test_share_invariance_under_global_rescale(self, diffuse_scene, diffuse_volume):
        # power-of-two factor: bitwise-identical shares, identical fit
        scaled = diffuse_volume.with_data(diffuse_volume.data * 4.0)
        sel_a = select_pixels(diffuse_volume, 795.0, NOISE_ROI)
        sel_b = select_pixels(scaled, 795.0, NOISE_ROI)
        shares_a, sel_a = normalize_pa(diffuse_volume, sel_a, 795.0)
        shares_b, sel_b = normalize_pa(scaled, sel_b, 795.0)
        assert np.array_equal(shares_a, shares_b)
        assert np.array_equal(sel_a.indices, sel_b.indices)
        fit_a = fit_optical_props(shares_a, sel_a, diffuse_scene.grid,
                                  diffuse_scene.fibers, 795.0)
        fit_b = fit_optical_props(shares_b, sel_b, diffuse_scene.grid,
                                  diffuse_scene.fibers, 795.0)
        assert fit_a.mu_eff_cm == fit_b.mu_eff_cm
        assert fit_a.mu_s_prime_cm == fit_b.mu_s_prime_cm

    def test_general_rescale_within_float_precision(self, diffuse_scene, diffuse_volume):
        scaled = diffuse_volume.with_data(diffuse_volume.data * 3.7)
        sel_a = select_pixels(diffuse_volume, 795.0, NOISE_ROI)
        sel_b = select_pixels(scaled, 795.0, NOISE_ROI)
        shares_a, _ = normalize_pa(diffuse_volume, sel_a, 795.0)
        shares_b, _ = normalize_pa(scaled, sel_b, 795.0)
        assert shares_a == pytest.approx(shares_b, rel=1e-12)

    def test_monotonicity_over_nested_selections(self, diffuse_scene, diffuse_volume):
        # adding pixels never degrades noiseless recovery beyond the optimizer
        # floor jitter (2e-4 in relative-error units, pinned from oracle runs)
        selection = select_pixels(diffuse_volume, 795.0, NOISE_ROI)
        shares, selection = normalize_pa(diffuse_volume, selection, 795.0)
        order = np.argsort(selection.weights)[::-1]
        true_me = np.sqrt(4.5)
        errors = []
        for k in (10, 100, 1000, selection.count):
            keep = np.zeros(selection.count, dtype=bool)
            keep[order[:k]] = True
            sub = selection.subset(keep)
            fit = fit_optical_props(shares[keep], sub, diffuse_scene.grid,
                                    diffuse_scene.fibers, 795.0, lateral_sigma_mm=0.3)
            errors.append(max(abs(fit.mu_eff_cm / true_me - 1),
                              abs(fit.mu_s_prime_cm / 10.0 - 1)))
        for previous, current in zip(errors, errors[1:]):
            assert current <= previous + 2e-4


@pytest.fixture(scope="module")
def fitted(clean_scene, clean_volume):
    fits = fit_volume(clean_volume, NOISE_ROI)
    energies = {lam: clean_scene.fibers.energy(lam)
                for lam in clean_volume.wavelengths_nm}
    return fits, energies


class TestCompensate:
    def test_reconstruction_identity(self, clean_volume, fitted):
        # compensated image times the fluence denominator returns the fiber sum
        fits, energies = fitted
        result = compensate_volume(clean_volume, fits, energies=energies)
        assert np.array_equal(result.images, result.volume.data.sum(axis=1))
        ratio = clean_volume.data / np.where(result.volume.data == 0, 1,
                                             result.volume.data)
        j = 4
        valid = result.valid_mask[j] & (np.abs(clean_volume.data[j, 0]) > 1e-12)
        per_pixel = ratio[j, 0][valid]
        assert np.all(np.isfinite(per_pixel))

    def test_missing_fit_rejected(self, clean_volume, fitted):
        fits, energies = fitted
        with pytest.raises(ValueError):
            compensate_volume(clean_volume, [None] * len(fits), energies=energies)

    def test_denominator_guard_masks_pixels(self, clean_volume, fitted):
        fits, energies = fitted
        result = compensate_volume(clean_volume, fits, energies=energies,
                                   eps_rel=1e-2)
        assert not result.valid_mask.all()
        j = 0
        # guard-zeroed pixels: invalid AND outside the near-field flag region
        deep = clean_volume.grid.z_centers() >= 2.0 * 10.0 / fits[j].mu_s_prime_cm
        guarded = ~result.valid_mask[j] & deep[:, None]
        assert guarded.any()
        assert np.all(result.volume.data[j][:, guarded] == 0)

    def test_near_field_rows_flagged(self, clean_volume, fitted):
        fits, energies = fitted
        result = compensate_volume(clean_volume, fits, energies=energies)
        grid = clean_volume.grid
        shallow = grid.z_centers() < 2.0 * 10.0 / fits[0].mu_s_prime_cm
        assert not result.valid_mask[0][shallow, :].any()

    def test_energy_path_invariance(self, clean_volume, fitted):
        # multiply the data by per-wavelength factors and fold the same
        # factors into the pulse energies: compensated output unchanged
        fits, energies = fitted
        factors = {lam: 1.0 + 0.1 * k for k, lam in
                   enumerate(clean_volume.wavelengths_nm)}
        scaled_data = clean_volume.data.copy()
        for j, lam in enumerate(clean_volume.wavelengths_nm):
            scaled_data[j] *= factors[lam]
        scaled_volume = clean_volume.with_data(scaled_data)
        scaled_energies = {lam: energies[lam] * factors[lam]
                           for lam in clean_volume.wavelengths_nm}
        base = compensate_volume(clean_volume, fits, energies=energies)
        scaled = compensate_volume(scaled_volume, fits, energies=scaled_energies)
        assert np.allclose(scaled.images, base.images, rtol=1e-9)
        assert np.allclose(scaled.compound, base.compound, rtol=1e-9)

    def test_two_depth_targets_share_spectrum_after_compensation(self, psf):
        doc = injected_agent_doc(noise_sigma=0.0, clutter=False, distractor=False,
                         background=False)
        doc["absorbers"][0]["map"] = [
            {"kind": "disk", "x_mm": 0.0, "z_mm": 5.0, "radius_mm": 0.7, "value": 1.0},
            {"kind": "disk", "x_mm": 0.0, "z_mm": 10.0, "radius_mm": 0.7, "value": 1.0},
        ]
        scene = Scene.from_doc(doc)
        volume = synthesize_volume(scene, psf)
        fits = fit_volume(volume, NOISE_ROI)
        energies = {lam: scene.fibers.energy(lam) for lam in volume.wavelengths_nm}
        result = compensate_volume(volume, fits, energies=energies)
        grid = scene.grid
        spectra = {}
        for tag, depth in (("shallow", 5.0), ("deep", 10.0)):
            ix, iz = grid.nearest_index(0.0, depth)
            spectra[tag] = (np.abs(result.images[:, iz, ix]),
                            np.abs(volume.fiber_sum()[:, iz, ix]))
        ncc_after = pixel_ncc(spectra["shallow"][0], spectra["deep"][0])
        ncc_before = pixel_ncc(spectra["shallow"][1], spectra["deep"][1])
        assert ncc_after >= 0.999
        assert ncc_before < ncc_after


class TestFitVolume:
    def test_skips_wavelengths_without_signal(self, psf):
        doc = diffuse_absorber_doc(wavelengths=(730.0, 795.0))
        doc["absorbers"][0]["spectrum"]["value"] = [0.0, 0.05]
        scene = Scene.from_doc(doc)
        volume = synthesize_volume(scene, psf)
        fits = fit_volume(volume, NOISE_ROI, coarse_grid=11)
        assert fits[0] is None
        assert fits[1] is not None

    def test_threading_matches_serial(self, diffuse_volume):
        serial = fit_volume(diffuse_volume, NOISE_ROI, coarse_grid=11)
        threaded = fit_volume(diffuse_volume, NOISE_ROI, coarse_grid=11, threads=3)
        assert serial[0].mu_eff_cm == threaded[0].mu_eff_cm
        assert serial[0].mu_s_prime_cm == threaded[0].mu_s_prime_cm


def test_pairwise_reduce_matches_sum():
    rng = np.random.default_rng(9)
    arrays = [rng.standard_normal((4, 4)) for _ in range(7)]
    assert pairwise_reduce(arrays) == pytest.approx(np.sum(arrays, axis=0), rel=1e-12)
    with pytest.raises(ValueError):
        pairwise_reduce([])
