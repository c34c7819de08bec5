"""Comparison systems for the localization study.

Two baselines: an all-linear stacked receiver trained through the same
pipeline as the nonlinear one, and a fully digital matched-filter
estimator that searches a (range, azimuth) grid directly on the
aperture field.  The matched filter sees all cell signals at once, so
its hardware cost is one RF chain per cell; it serves as an accuracy
bound, not as a comparable architecture.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import emfield, simnet, trainer


def linear_sim_model(
    geometry: emfield.SimGeometry,
    rng: np.random.Generator,
    propagation: simnet.Propagation | None = None,
) -> simnet.SimModel:
    """All-phase-shift stack (no nonlinear layer anywhere), uniform
    random phase init, trainable; depth comes from the geometry."""
    layers = [
        simnet.uniform_phase_layer(geometry.num_cells, rng)
        for _ in range(geometry.num_layers)
    ]
    return simnet.assemble_model(geometry, layers, propagation)


# ---------------------------------------------------------------------------
# Matched-filter grid search
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SearchGrid:
    """Candidate ranges and azimuths; flat index runs azimuth-fastest."""

    r_points: np.ndarray
    theta_points: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r_points, dtype=float)
        th = np.asarray(self.theta_points, dtype=float)
        object.__setattr__(self, "r_points", r)
        object.__setattr__(self, "theta_points", th)
        for name, axis in (("r_points", r), ("theta_points", th)):
            if axis.ndim != 1 or axis.size < 2:
                raise ValueError(f"{name} needs at least 2 points")
            if np.any(np.diff(axis) <= 0):
                raise ValueError(f"{name} must be strictly increasing")
        if r[0] <= 0:
            raise ValueError("ranges must be positive")

    @property
    def shape(self) -> tuple:
        return (self.r_points.size, self.theta_points.size)


def make_search_grid(r_bounds, theta_max_rad, num_r: int, num_theta: int) -> SearchGrid:
    return SearchGrid(
        r_points=np.linspace(float(r_bounds[0]), float(r_bounds[1]), num_r),
        theta_points=np.linspace(-float(theta_max_rad), float(theta_max_rad), num_theta),
    )


def grid_cell_diagonal(grid: SearchGrid) -> float:
    """Cartesian diagonal of the worst (largest radius) grid cell in
    meters: range step across, arc length r_max * theta step along."""
    dr = float(np.max(np.diff(grid.r_points)))
    dth = float(np.max(np.diff(grid.theta_points)))
    r_max = float(grid.r_points[-1])
    return float(np.hypot(dr, r_max * dth))


def steering_rows(geometry: emfield.SimGeometry, r_values, theta_values) -> np.ndarray:
    """Steering vectors for paired (r, theta) lists, one per row.

    Matches :func:`emfield.array_response` entry for entry; vectorized
    so the grid search does not pay per-point Python overhead.
    """
    r = np.asarray(r_values, dtype=float)
    th = np.asarray(theta_values, dtype=float)
    cells = geometry.cell_positions[0]
    pos = np.stack([r * np.sin(th), np.zeros_like(r), -r * np.cos(th)], axis=-1)
    dist = np.sqrt(np.sum((cells[None, :, :] - pos[:, None, :]) ** 2, axis=-1))
    k = geometry.wavenumber
    return np.exp(-1j * k * (r[:, None] - dist)) / np.sqrt(geometry.num_cells)


def ml_metric_map(
    input_field,
    geometry: emfield.SimGeometry,
    grid: SearchGrid,
    block_rows: int = 1024,
) -> np.ndarray:
    """Matched-filter power |a(r, theta)^H s|^2 over the whole grid.

    Shape (num_r, num_theta); evaluated in row blocks to bound the
    steering-matrix working set.
    """
    s = np.asarray(input_field, dtype=complex)
    if s.shape != (geometry.num_cells,):
        raise ValueError("input field must be a length-M vector")
    n_r, n_th = grid.shape
    r_flat = np.repeat(grid.r_points, n_th)
    th_flat = np.tile(grid.theta_points, n_r)
    metric = np.empty(n_r * n_th)
    for start in range(0, metric.size, block_rows):
        stop = min(start + block_rows, metric.size)
        rows = steering_rows(geometry, r_flat[start:stop], th_flat[start:stop])
        metric[start:stop] = np.abs(rows.conj() @ s) ** 2
    return metric.reshape(n_r, n_th)


def ml_estimate(
    input_field,
    geometry: emfield.SimGeometry,
    grid: SearchGrid,
    block_rows: int = 1024,
) -> tuple:
    """Exhaustive argmax of the matched-filter power over the grid.

    Ties resolve to the smallest flat index (range-major,
    azimuth-fastest), so an all-zero input returns the first grid point.
    """
    metric = ml_metric_map(input_field, geometry, grid, block_rows)
    flat = int(np.argmax(metric))  # first occurrence wins ties
    i_r, i_th = divmod(flat, grid.shape[1])
    return float(grid.r_points[i_r]), float(grid.theta_points[i_th])


def ml_estimate_two_stage(
    input_field,
    geometry: emfield.SimGeometry,
    r_bounds,
    theta_max_rad: float,
    coarse_size: int = 100,
    refine_size: int = 21,
) -> tuple:
    """Coarse search then a dense pass one coarse cell around the peak.

    With the defaults this reaches the resolution of a 1000x1000
    exhaustive grid at roughly 1% of its cost; the refinement window is
    clipped at the search bounds.
    """
    if coarse_size < 2 or refine_size < 2:
        raise ValueError("grid sizes must be >= 2")
    coarse = make_search_grid(r_bounds, theta_max_rad, coarse_size, coarse_size)
    r0, th0 = ml_estimate(input_field, geometry, coarse)
    dr = float(coarse.r_points[1] - coarse.r_points[0])
    dth = float(coarse.theta_points[1] - coarse.theta_points[0])
    fine = SearchGrid(
        r_points=np.linspace(
            max(r0 - dr, float(r_bounds[0])), min(r0 + dr, float(r_bounds[1])), refine_size
        ),
        theta_points=np.linspace(
            max(th0 - dth, -float(theta_max_rad)),
            min(th0 + dth, float(theta_max_rad)),
            refine_size,
        ),
    )
    return ml_estimate(input_field, geometry, fine)


def evaluate_ml(
    dataset: trainer.Dataset,
    geometry: emfield.SimGeometry,
    indices,
    estimator,
) -> trainer.EvalResult:
    """Run a (field -> (r, theta)) estimator over a split; same record
    schema and RMSE definition as the trained-model evaluation."""
    indices = np.asarray(indices)
    if indices.size == 0:
        raise ValueError("cannot evaluate an empty split")
    records = np.empty(indices.size, dtype=trainer.RECORD_DTYPE)
    estimates = np.empty((indices.size, 2))
    for row, i in enumerate(indices):
        sample = dataset.samples[i]
        r_hat, th_hat = estimator(sample.input_field)
        estimates[row] = (r_hat * np.cos(th_hat), r_hat * np.sin(th_hat))
        records[row] = (
            sample.position.range_m,
            sample.position.azimuth_rad,
            r_hat,
            th_hat,
            0.0,
        )
    truth = dataset.position_matrix(indices)
    records["error_m"] = np.sqrt(np.sum((estimates - truth) ** 2, axis=-1))
    return trainer.EvalResult(
        rmse=trainer.position_rmse(estimates, truth), records=records
    )
