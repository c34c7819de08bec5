"""Tests for the linear stack baseline and the matched-filter search."""

import numpy as np
import pytest

from emstack import baselines, emfield, simnet, trainer


def near_field_geometry(cells_per_side=16, num_layers=1):
    # 28 GHz, half-wavelength pitch; 16x16 keeps r in [1,3] m inside
    # the curvature-sensitive zone while staying cheap
    wavelength = emfield.SPEED_OF_LIGHT / 28e9
    return emfield.build_geometry(
        carrier_frequency_hz=28e9,
        cells_per_side=cells_per_side,
        num_layers=num_layers,
        layer_spacing_m=wavelength,
        output_distance_m=3.0 * wavelength,
        num_output_antennas=2,
    )


def los_field(geometry, r, theta, amplitude=1.0 + 0.0j):
    pos = emfield.UePosition(range_m=r, azimuth_rad=theta)
    return amplitude * emfield.array_response(geometry, pos)


class TestLinearSimModel:
    def test_no_nonlinear_layers(self):
        geom = near_field_geometry(cells_per_side=4, num_layers=3)
        model = baselines.linear_sim_model(geom, np.random.default_rng(0))
        assert model.nl_layer_set == frozenset()
        assert all(isinstance(l, simnet.LinearLayer) for l in model.layers)
        assert all(l.trainable for l in model.layers)

    def test_homogeneity(self):
        geom = near_field_geometry(cells_per_side=4, num_layers=2)
        model = baselines.linear_sim_model(geom, np.random.default_rng(1))
        rng = np.random.default_rng(2)
        x = rng.standard_normal(geom.num_cells) + 1j * rng.standard_normal(geom.num_cells)
        c = 0.7 - 2.1j
        base = simnet.forward(model, x).output_field
        scaled = simnet.forward(model, c * x).output_field
        np.testing.assert_allclose(scaled, c * base, rtol=1e-12)

    def test_shares_geometry_with_nonlinear_variant(self):
        geom = near_field_geometry(cells_per_side=4, num_layers=2)
        shared = simnet.compute_propagation(geom)
        rng = np.random.default_rng(3)
        linear = baselines.linear_sim_model(geom, rng, propagation=shared)
        from emstack import nonlin

        nl = simnet.assemble_model(
            geom,
            [
                simnet.uniform_phase_layer(geom.num_cells, rng),
                simnet.NonlinearLayer(
                    nonlin.ShiftedReluLowpass(), np.zeros(geom.num_cells)
                ),
            ],
            propagation=shared,
        )
        assert linear.geometry.fingerprint() == nl.geometry.fingerprint()


class TestSearchGrid:
    def test_validation(self):
        with pytest.raises(ValueError):
            baselines.SearchGrid(np.array([1.0]), np.array([-1.0, 1.0]))
        with pytest.raises(ValueError):
            baselines.SearchGrid(np.array([1.0, 0.5]), np.array([-1.0, 1.0]))
        with pytest.raises(ValueError):
            baselines.SearchGrid(np.array([-1.0, 1.0]), np.array([-1.0, 1.0]))

    def test_make_grid_spans_bounds(self):
        grid = baselines.make_search_grid((1.0, 3.0), np.deg2rad(70.0), 50, 40)
        assert grid.shape == (50, 40)
        assert grid.r_points[0] == 1.0 and grid.r_points[-1] == 3.0
        assert grid.theta_points[0] == pytest.approx(-np.deg2rad(70.0))

    def test_cell_diagonal(self):
        grid = baselines.SearchGrid(
            np.array([1.0, 1.5, 2.0]), np.array([-0.2, 0.0, 0.2])
        )
        # dr = 0.5, arc at r_max: 2.0 * 0.2
        assert baselines.grid_cell_diagonal(grid) == pytest.approx(np.hypot(0.5, 0.4))


class TestSteeringRows:
    def test_matches_scalar_array_response(self):
        geom = near_field_geometry()
        rng = np.random.default_rng(4)
        r = rng.uniform(1.0, 3.0, 20)
        th = rng.uniform(-1.2, 1.2, 20)
        rows = baselines.steering_rows(geom, r, th)
        for i in range(20):
            expected = emfield.array_response(
                geom, emfield.UePosition(range_m=r[i], azimuth_rad=th[i])
            )
            np.testing.assert_allclose(rows[i], expected, rtol=1e-12)

    def test_unit_norm(self):
        geom = near_field_geometry()
        rows = baselines.steering_rows(geom, [1.0, 2.0], [0.3, -0.5])
        np.testing.assert_allclose(np.linalg.norm(rows, axis=1), 1.0, atol=1e-12)


class TestMlEstimate:
    def test_on_grid_target_recovered_exactly(self):
        geom = near_field_geometry()
        grid = baselines.make_search_grid((1.0, 3.0), np.deg2rad(70.0), 21, 21)
        r_true = float(grid.r_points[7])
        th_true = float(grid.theta_points[13])
        field = los_field(geom, r_true, th_true, amplitude=3.0 - 4.0j)
        r_hat, th_hat = baselines.ml_estimate(field, geom, grid)
        assert r_hat == r_true
        assert th_hat == th_true

    def test_zero_input_returns_first_grid_point(self):
        geom = near_field_geometry()
        grid = baselines.make_search_grid((1.0, 3.0), np.deg2rad(70.0), 5, 7)
        r_hat, th_hat = baselines.ml_estimate(
            np.zeros(geom.num_cells, dtype=complex), geom, grid
        )
        assert r_hat == grid.r_points[0]
        assert th_hat == grid.theta_points[0]

    def test_scaling_invariance(self):
        geom = near_field_geometry()
        grid = baselines.make_search_grid((1.0, 3.0), np.deg2rad(70.0), 15, 15)
        rng = np.random.default_rng(5)
        field = rng.standard_normal(geom.num_cells) + 1j * rng.standard_normal(
            geom.num_cells
        )
        base = baselines.ml_estimate(field, geom, grid)
        scaled = baselines.ml_estimate((0.3 - 2.0j) * field, geom, grid)
        assert base == scaled

    def test_metric_map_matches_direct_computation(self):
        geom = near_field_geometry(cells_per_side=8)
        grid = baselines.make_search_grid((1.0, 3.0), np.deg2rad(70.0), 6, 9)
        rng = np.random.default_rng(6)
        field = rng.standard_normal(geom.num_cells) + 1j * rng.standard_normal(
            geom.num_cells
        )
        metric = baselines.ml_metric_map(field, geom, grid, block_rows=7)
        for i, r in enumerate(grid.r_points):
            for j, th in enumerate(grid.theta_points):
                a = emfield.array_response(
                    geom, emfield.UePosition(range_m=r, azimuth_rad=th)
                )
                direct = abs(np.vdot(a, field)) ** 2
                assert metric[i, j] == pytest.approx(direct, rel=1e-12)

    def test_block_size_does_not_change_result(self):
        geom = near_field_geometry(cells_per_side=8)
        grid = baselines.make_search_grid((1.0, 3.0), np.deg2rad(70.0), 10, 10)
        rng = np.random.default_rng(7)
        field = rng.standard_normal(geom.num_cells) + 1j * rng.standard_normal(
            geom.num_cells
        )
        full = baselines.ml_metric_map(field, geom, grid, block_rows=1000)
        tiny = baselines.ml_metric_map(field, geom, grid, block_rows=3)
        np.testing.assert_allclose(tiny, full, rtol=1e-12)

    def test_off_grid_target_within_one_cell_diagonal(self):
        # range-azimuth ridge coupling can shift the argmax a range cell
        # or two, but the Cartesian miss stays inside one cell diagonal
        geom = near_field_geometry()
        grid = baselines.make_search_grid((1.0, 3.0), np.deg2rad(70.0), 40, 40)
        budget = baselines.grid_cell_diagonal(grid)
        rng = np.random.default_rng(8)
        for _ in range(8):
            r_true = rng.uniform(1.05, 2.95)
            th_true = rng.uniform(-1.1, 1.1)
            field = los_field(geom, r_true, th_true)
            r_hat, th_hat = baselines.ml_estimate(field, geom, grid)
            miss = np.hypot(
                r_hat * np.cos(th_hat) - r_true * np.cos(th_true),
                r_hat * np.sin(th_hat) - r_true * np.sin(th_true),
            )
            assert miss <= budget, (r_true, th_true, r_hat, th_hat, miss)

    def test_rejects_wrong_field_length(self):
        geom = near_field_geometry(cells_per_side=4)
        grid = baselines.make_search_grid((1.0, 3.0), 1.0, 5, 5)
        with pytest.raises(ValueError):
            baselines.ml_estimate(np.zeros(7, dtype=complex), geom, grid)


class TestTwoStage:
    def test_interior_coarse_point_recovered(self):
        geom = near_field_geometry()
        coarse = baselines.make_search_grid((1.0, 3.0), np.deg2rad(70.0), 30, 30)
        r_true = float(coarse.r_points[11])
        th_true = float(coarse.theta_points[17])
        field = los_field(geom, r_true, th_true)
        r_hat, th_hat = baselines.ml_estimate_two_stage(
            field, geom, (1.0, 3.0), np.deg2rad(70.0), coarse_size=30, refine_size=21
        )
        assert r_hat == pytest.approx(r_true, abs=1e-12)
        assert th_hat == pytest.approx(th_true, abs=1e-12)

    def test_refinement_tightens_coarse_estimate(self):
        geom = near_field_geometry()
        rng = np.random.default_rng(9)
        worse = better = 0.0
        for _ in range(4):
            r_true = rng.uniform(1.2, 2.8)
            th_true = rng.uniform(-1.0, 1.0)
            field = los_field(geom, r_true, th_true)
            coarse_grid = baselines.make_search_grid((1.0, 3.0), np.deg2rad(70.0), 25, 25)
            r_c, th_c = baselines.ml_estimate(field, geom, coarse_grid)
            r_f, th_f = baselines.ml_estimate_two_stage(
                field, geom, (1.0, 3.0), np.deg2rad(70.0), coarse_size=25, refine_size=21
            )
            worse += np.hypot(r_c - r_true, th_c - th_true)
            better += np.hypot(r_f - r_true, th_f - th_true)
        assert better <= worse

    def test_boundary_peak_stays_in_bounds(self):
        geom = near_field_geometry()
        field = los_field(geom, 1.0, -np.deg2rad(70.0))
        r_hat, th_hat = baselines.ml_estimate_two_stage(
            field, geom, (1.0, 3.0), np.deg2rad(70.0), coarse_size=15, refine_size=11
        )
        assert 1.0 <= r_hat <= 3.0
        assert -np.deg2rad(70.0) <= th_hat <= np.deg2rad(70.0)

    def test_bad_sizes_rejected(self):
        geom = near_field_geometry(cells_per_side=4)
        with pytest.raises(ValueError):
            baselines.ml_estimate_two_stage(
                np.zeros(16, dtype=complex), geom, (1.0, 3.0), 1.0, coarse_size=1
            )


class TestEvaluateMl:
    def _dataset(self, geom, count=12):
        scenario = emfield.Scenario(rician_factor=1e12, noise_power_w=0.0)
        return trainer.generate_dataset(geom, scenario, count, np.random.default_rng(10))

    def test_records_schema_matches_trainer(self):
        geom = near_field_geometry(cells_per_side=8, num_layers=1)
        ds = self._dataset(geom)
        grid = baselines.make_search_grid((1.0, 3.0), np.deg2rad(70.0), 30, 30)
        result = baselines.evaluate_ml(
            ds, geom, ds.split.test, lambda f: baselines.ml_estimate(f, geom, grid)
        )
        assert result.records.dtype == trainer.RECORD_DTYPE
        assert result.records.size == ds.split.test.size
        assert result.rmse >= 0.0

    def test_deterministic(self):
        geom = near_field_geometry(cells_per_side=8, num_layers=1)
        ds = self._dataset(geom)
        grid = baselines.make_search_grid((1.0, 3.0), np.deg2rad(70.0), 20, 20)
        est = lambda f: baselines.ml_estimate(f, geom, grid)
        a = baselines.evaluate_ml(ds, geom, ds.split.test, est)
        b = baselines.evaluate_ml(ds, geom, ds.split.test, est)
        assert a.rmse == b.rmse
        np.testing.assert_array_equal(a.records, b.records)

    def test_rmse_consistent_with_error_column(self):
        geom = near_field_geometry(cells_per_side=8, num_layers=1)
        ds = self._dataset(geom)
        grid = baselines.make_search_grid((1.0, 3.0), np.deg2rad(70.0), 20, 20)
        result = baselines.evaluate_ml(
            ds, geom, ds.split.test, lambda f: baselines.ml_estimate(f, geom, grid)
        )
        assert result.rmse == pytest.approx(
            float(np.sqrt(np.mean(result.records["error_m"] ** 2)))
        )

    def test_empty_split_rejected(self):
        geom = near_field_geometry(cells_per_side=4, num_layers=1)
        ds = self._dataset(geom)
        with pytest.raises(ValueError):
            baselines.evaluate_ml(ds, geom, np.array([], dtype=int), lambda f: (1.0, 0.0))
