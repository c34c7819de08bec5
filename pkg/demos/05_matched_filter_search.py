"""Matched-filter grid search: the classical estimator the learned
receivers are measured against.

Correlates a noisy aperture field with candidate steering vectors over
an (r, azimuth) grid and picks the peak.  Shows exact recovery for
on-grid sources, the cost of an exhaustive grid, and the two-stage
coarse-plus-refine shortcut.
"""

import time

import numpy as np

from emstack import baselines, emfield, trainer

wavelength = emfield.SPEED_OF_LIGHT / 28e9
geom = emfield.build_geometry(28e9, 16, 1, 3 * wavelength, 3 * wavelength)
scenario = emfield.Scenario()
rng = np.random.default_rng(9)

grid = baselines.make_search_grid((1.0, 3.0), np.deg2rad(70.0), 60, 60)
print(f"grid {grid.shape[0]} x {grid.shape[1]} over r 1-3 m, azimuth +-70 deg")
print(f"worst-case cell diagonal {baselines.grid_cell_diagonal(grid):.4f} m")

# noiseless on-grid source: the peak lands exactly on the true cell
r_true = grid.r_points[17]
th_true = grid.theta_points[41]
a = emfield.array_response(geom, emfield.UePosition(r_true, th_true))
r_hat, th_hat = baselines.ml_estimate((2.0 - 1.0j) * a, geom, grid)
print(f"\nnoiseless on-grid source at (r {r_true:.4f}, az {th_true:.4f}):")
print(f"  estimate (r {r_hat:.4f}, az {th_hat:.4f}), "
      f"exact match: {r_hat == r_true and th_hat == th_true}")
print("the metric is scale-invariant, so the unknown channel gain and")
print("transmit power do not shift the peak.")

dataset = trainer.generate_dataset(geom, scenario, 60, rng)
indices = np.arange(60)

start = time.perf_counter()
exhaustive = baselines.evaluate_ml(
    dataset, geom, indices, lambda f: baselines.ml_estimate(f, geom, grid)
)
t_full = time.perf_counter() - start

start = time.perf_counter()
two_stage = baselines.evaluate_ml(
    dataset, geom, indices,
    lambda f: baselines.ml_estimate_two_stage(f, geom, (1.0, 3.0), np.deg2rad(70.0)),
)
t_two = time.perf_counter() - start

print(f"\n60 noisy samples at the default link budget:")
print(f"  exhaustive {grid.shape[0]}x{grid.shape[1]}: "
      f"RMSE {exhaustive.rmse:.4f} m in {t_full:.2f} s")
print(f"  two-stage 100 coarse + 21 refine:  "
      f"RMSE {two_stage.rmse:.4f} m in {t_two:.2f} s")
print("the refinement stage searches +-1 coarse cell around the peak at")
print("10x finer steps, so the two-stage search matches a 1000-per-axis")
print("exhaustive grid while evaluating about 1% of its candidates; at")
print("the full-scale aperture this estimator reaches millimeter error.")
