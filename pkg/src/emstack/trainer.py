"""Dataset generation, the position-regression loss, Adam, and the
training loop for stacked-surface localization models.

The objective is the mean squared Cartesian position error of the
readout; the reported metric is its square root (position RMSE in
meters).  All randomness flows from explicit seeds: the dataset draw,
the split, and the batch shuffle are each reproducible in isolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import emfield, simnet

READOUT_CALIBRATION_QUANTILE = 0.95


@dataclass(frozen=True)
class SplitIndices:
    """Disjoint, exhaustive train/validation/test index sets."""

    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray


@dataclass
class Dataset:
    samples: list
    split: SplitIndices
    scenario: emfield.Scenario

    def field_matrix(self, indices) -> np.ndarray:
        return np.stack([self.samples[i].input_field for i in indices])

    def position_matrix(self, indices) -> np.ndarray:
        return np.stack([self.samples[i].position.plane_xy() for i in indices])


def split_indices(count: int, rng: np.random.Generator) -> SplitIndices:
    """Shuffled 80/10/10 split; remainder after the integer train and
    validation sizes goes to test, so the three sets partition range(count)."""
    if count < 3:
        raise ValueError("need at least 3 samples to form three splits")
    perm = rng.permutation(count)
    n_train = int(0.8 * count)
    n_val = int(0.1 * count)
    return SplitIndices(
        train=perm[:n_train],
        validation=perm[n_train : n_train + n_val],
        test=perm[n_train + n_val :],
    )


def generate_dataset(
    geometry: emfield.SimGeometry,
    scenario: emfield.Scenario,
    count: int,
    rng: np.random.Generator,
) -> Dataset:
    """Draw ``count`` channel realizations, then split them.

    Noise is frozen inside each sample; epochs reuse the same draw.
    """
    samples = [emfield.draw_sample(geometry, scenario, rng) for _ in range(count)]
    return Dataset(samples=samples, split=split_indices(count, rng), scenario=scenario)


# ---------------------------------------------------------------------------
# Targets and metrics
# ---------------------------------------------------------------------------


def normalize_targets(r, theta, r_bounds):
    """Affine map of range to [-1, 1] and azimuth (|theta| <= pi/2) to
    [-1, 1]; used for bounded diagnostics, not for the training loss."""
    r_min, r_max = float(r_bounds[0]), float(r_bounds[1])
    if not r_max > r_min:
        raise ValueError("need r_max > r_min")
    r_norm = (np.asarray(r, dtype=float) - r_min) / (r_max - r_min) * 2.0 - 1.0
    theta_norm = 2.0 * np.asarray(theta, dtype=float) / np.pi
    return r_norm, theta_norm


def denormalize_targets(r_norm, theta_norm, r_bounds):
    r_min, r_max = float(r_bounds[0]), float(r_bounds[1])
    if not r_max > r_min:
        raise ValueError("need r_max > r_min")
    r = (np.asarray(r_norm, dtype=float) + 1.0) / 2.0 * (r_max - r_min) + r_min
    theta = np.asarray(theta_norm, dtype=float) * np.pi / 2.0
    return r, theta


def position_rmse(estimates, ground_truth) -> float:
    """Root mean squared Euclidean distance between 2-D position lists."""
    est = np.asarray(estimates, dtype=float)
    ref = np.asarray(ground_truth, dtype=float)
    if est.shape != ref.shape or est.ndim != 2 or est.shape[1] != 2:
        raise ValueError("estimates and ground truth must both be (N, 2)")
    if est.shape[0] == 0:
        raise ValueError("cannot compute an RMSE over zero samples")
    return float(np.sqrt(np.mean(np.sum((est - ref) ** 2, axis=1))))


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    bias_learning_rate: float = 1e-7
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 64
    epochs: int = 100
    patience: int = 20
    seed: int = 0
    loss_kind: str = "position-mse"

    def __post_init__(self):
        if self.learning_rate < 0 or self.bias_learning_rate < 0:
            raise ValueError("learning rates must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("moment decays must lie in [0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.epochs < 0 or self.patience < 0:
            raise ValueError("epochs and patience must be >= 0")
        if self.loss_kind != "position-mse":
            raise ValueError(f"unknown loss kind {self.loss_kind!r}")


@dataclass
class AdamState:
    """Per-parameter first/second moments keyed like the gradient set."""

    step: int = 0
    first: dict = field(default_factory=dict)
    second: dict = field(default_factory=dict)


def adam_step(
    model: simnet.SimModel,
    grads: simnet.GradientSet,
    state: AdamState,
    config: TrainConfig,
) -> AdamState:
    """One bias-corrected Adam update, in place on the model.

    Phases use ``learning_rate`` and wrap modulo 2 pi; biases use
    ``bias_learning_rate`` and are clamped to <= 0 afterwards.
    """
    state.step += 1
    t = state.step
    for kind, table, rate in (
        ("phase", grads.phase, config.learning_rate),
        ("bias", grads.bias, config.bias_learning_rate),
    ):
        for layer_index, grad in table.items():
            key = (kind, layer_index)
            m = state.first.get(key)
            v = state.second.get(key)
            if m is None:
                m = np.zeros_like(grad)
                v = np.zeros_like(grad)
            m = config.beta1 * m + (1.0 - config.beta1) * grad
            v = config.beta2 * v + (1.0 - config.beta2) * grad**2
            state.first[key] = m
            state.second[key] = v
            m_hat = m / (1.0 - config.beta1**t)
            v_hat = v / (1.0 - config.beta2**t)
            delta = rate * m_hat / (np.sqrt(v_hat) + config.epsilon)
            layer = model.layers[layer_index - 1]
            if kind == "phase":
                layer.phases = (layer.phases - delta) % (2.0 * np.pi)
            else:
                layer.biases = np.minimum(layer.biases - delta, 0.0)
    return state


# ---------------------------------------------------------------------------
# Loss plumbing
# ---------------------------------------------------------------------------


def calibrate_readout_scale(
    model: simnet.SimModel, dataset: Dataset, quantile: float = READOUT_CALIBRATION_QUANTILE
) -> float:
    """Set the readout scale so typical output amplitudes land in [0, 1].

    Scale is the reciprocal of the given quantile of the per-sample
    maximum output amplitude over the training split, evaluated with
    the model as-is.
    """
    fields = dataset.field_matrix(dataset.split.train)
    out = simnet.forward(model, fields).output_field
    peak = np.quantile(np.max(np.abs(out), axis=-1), quantile)
    if not peak > 0:
        raise ValueError("all training outputs are zero; cannot calibrate readout")
    scale = float(1.0 / peak)
    model.readout_scale = scale
    return scale


def position_loss_and_cotangent(output_field, positions, scale, r_bounds):
    """Mean squared position error of a batch plus its packed cotangent.

    Chains d/dp through the polar readout down to the two output
    amplitudes; outputs with exactly zero amplitude get zero cotangent.
    """
    y = np.asarray(output_field)
    p_ref = np.asarray(positions, dtype=float)
    batch = max(y.shape[0], 1) if y.ndim == 2 else 1
    r_min, r_max = float(r_bounds[0]), float(r_bounds[1])

    range_est, azimuth_est, p_hat = simnet.readout(y, scale, (r_min, r_max))
    err = p_hat - p_ref
    value = float(np.mean(np.sum(err**2, axis=-1)))

    d_p = 2.0 * err / batch
    cos_t, sin_t = np.cos(azimuth_est), np.sin(azimuth_est)
    d_range = d_p[..., 0] * cos_t + d_p[..., 1] * sin_t
    d_azimuth = range_est * (-d_p[..., 0] * sin_t + d_p[..., 1] * cos_t)
    d_amp = np.stack(
        [d_range * scale * (r_max - r_min), d_azimuth * scale * np.pi], axis=-1
    )
    mag = np.abs(y)
    direction = np.where(mag > 0, y / np.where(mag > 0, mag, 1.0), 0.0)
    return value, d_amp * direction


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_rmse: float


@dataclass
class TrainResult:
    best_model: simnet.SimModel
    best_epoch: int
    best_val_rmse: float
    history: list
    stopped_early: bool = False
    diverged: bool = False


@dataclass(frozen=True)
class EvalResult:
    rmse: float
    records: np.ndarray  # structured: r, theta, r_hat, theta_hat, error_m


RECORD_DTYPE = np.dtype(
    [
        ("r", float),
        ("theta", float),
        ("r_hat", float),
        ("theta_hat", float),
        ("error_m", float),
    ]
)


def evaluate(model: simnet.SimModel, dataset: Dataset, indices) -> EvalResult:
    """Position RMSE plus per-sample truth/estimate/error rows."""
    indices = np.asarray(indices)
    if indices.size == 0:
        raise ValueError("cannot evaluate an empty split")
    if model.readout_scale is None:
        raise ValueError("model has no readout scale; calibrate before evaluating")
    fields = dataset.field_matrix(indices)
    out = simnet.forward(model, fields).output_field
    bounds = (dataset.scenario.r_min_m, dataset.scenario.r_max_m)
    range_est, azimuth_est, p_hat = simnet.readout(out, model.readout_scale, bounds)
    truth = dataset.position_matrix(indices)
    errors = np.sqrt(np.sum((p_hat - truth) ** 2, axis=-1))
    records = np.empty(indices.size, dtype=RECORD_DTYPE)
    records["r"] = [dataset.samples[i].position.range_m for i in indices]
    records["theta"] = [dataset.samples[i].position.azimuth_rad for i in indices]
    records["r_hat"] = range_est
    records["theta_hat"] = azimuth_est
    records["error_m"] = errors
    return EvalResult(rmse=position_rmse(p_hat, truth), records=records)


def train(
    model: simnet.SimModel, dataset: Dataset, config: TrainConfig
) -> TrainResult:
    """Mini-batch Adam on the mean squared position error.

    The model is updated in place; the returned best checkpoint is an
    independent clone taken at the lowest validation RMSE.  A NaN batch
    loss or validation RMSE stops training immediately and the best
    (last good) checkpoint is returned with ``diverged`` set.
    """
    if dataset.split.train.size == 0 or dataset.split.validation.size == 0:
        raise ValueError("training requires non-empty train and validation splits")
    if model.readout_scale is None:
        calibrate_readout_scale(model, dataset)
    bounds = (dataset.scenario.r_min_m, dataset.scenario.r_max_m)
    rng = np.random.default_rng(config.seed)
    state = AdamState()
    train_idx = dataset.split.train
    n_train = train_idx.size

    best = TrainResult(
        best_model=model.clone(),
        best_epoch=0,
        best_val_rmse=evaluate(model, dataset, dataset.split.validation).rmse,
        history=[],
    )
    since_best = 0
    for epoch in range(1, config.epochs + 1):
        order = train_idx[rng.permutation(n_train)]
        sq_error_sum = 0.0
        for start in range(0, n_train, config.batch_size):
            chunk = order[start : start + config.batch_size]
            fields = dataset.field_matrix(chunk)
            positions = dataset.position_matrix(chunk)
            trace = simnet.forward(model, fields)
            loss, cot = position_loss_and_cotangent(
                trace.output_field, positions, model.readout_scale, bounds
            )
            if math.isnan(loss):
                best.diverged = True
                return best
            grads = simnet.backward(model, trace, cot)
            adam_step(model, grads, state, config)
            sq_error_sum += loss * chunk.size
        train_loss = sq_error_sum / n_train
        val_rmse = evaluate(model, dataset, dataset.split.validation).rmse
        best.history.append(EpochRecord(epoch, train_loss, val_rmse))
        if math.isnan(val_rmse):
            best.diverged = True
            return best
        if val_rmse < best.best_val_rmse:
            best.best_model = model.clone()
            best.best_epoch = epoch
            best.best_val_rmse = val_rmse
            since_best = 0
        else:
            since_best += 1
            if config.patience > 0 and since_best >= config.patience:
                best.stopped_early = True
                break
    return best


def history_rows(result: TrainResult):
    """(epoch, train_loss, val_rmse) tuples for CSV emission."""
    return [(rec.epoch, rec.train_loss, rec.val_rmse) for rec in result.history]
