"""Differentiable stacked-metasurface receiver network.

Forward model: the input field enters layer 1, propagates between
consecutive layers through fixed Rayleigh-Sommerfeld coupling matrices,
and each layer applies either programmable unit-modulus phase shifts or
a passive element-wise envelope nonlinearity (no phase shifter on
nonlinear layers).  A final coupling matrix maps the last layer onto a
small output antenna array whose amplitudes encode range and azimuth.

Gradients are hand-derived reverse-mode adjoints over exactly this
operator set.  Complex cotangents are packed as
c = dL/dRe(z) + j dL/dIm(z); real parameters (phases, biases) receive
real gradients via Re[conj(c) dz/dparam].
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import emfield, nonlin

CHECKPOINT_FORMAT = "emstack-checkpoint-1"


@dataclass
class LinearLayer:
    """Programmable phase-shift layer; coefficient is exp(j phase)."""

    phases: np.ndarray
    trainable: bool = True

    def __post_init__(self):
        self.phases = np.asarray(self.phases, dtype=float)
        if self.phases.ndim != 1:
            raise ValueError("phases must be a 1-D vector")


@dataclass
class NonlinearLayer:
    """Passive nonlinear layer: per-cell envelope map with bias shifts.

    ``activation`` is one family whose parameters may be per-cell
    arrays; heterogeneous cells are expressed through array parameters
    or a per-cell tabulated set rather than a Python list of objects.
    """

    activation: nonlin.Activation
    biases: np.ndarray
    trainable: bool = False

    def __post_init__(self):
        self.biases = np.asarray(self.biases, dtype=float)
        if self.biases.ndim != 1:
            raise ValueError("biases must be a 1-D vector")
        if np.any(self.biases > 0):
            raise ValueError("biases must be <= 0")


Layer = LinearLayer | NonlinearLayer


@dataclass(frozen=True)
class Propagation:
    """Read-only coupling matrices shared by every model on a geometry."""

    interlayer: tuple  # W for layer transitions 1->2 .. (L-1)->L
    output: np.ndarray  # last layer -> antenna array


def compute_propagation(geometry: emfield.SimGeometry) -> Propagation:
    mats = []
    for src in range(1, geometry.num_layers):
        w = emfield.rayleigh_sommerfeld_matrix(geometry, src, src + 1).entries
        w.setflags(write=False)
        mats.append(w)
    g = emfield.rayleigh_sommerfeld_matrix(
        geometry, geometry.num_layers, emfield.OUTPUT_ARRAY
    ).entries
    g.setflags(write=False)
    return Propagation(interlayer=tuple(mats), output=g)


@dataclass
class SimModel:
    geometry: emfield.SimGeometry
    layers: list
    propagation: Propagation
    readout_scale: float | None = None

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def nl_layer_set(self) -> frozenset:
        return frozenset(
            i + 1 for i, layer in enumerate(self.layers) if isinstance(layer, NonlinearLayer)
        )

    def clone(self) -> "SimModel":
        copies = []
        for layer in self.layers:
            if isinstance(layer, LinearLayer):
                copies.append(LinearLayer(layer.phases.copy(), layer.trainable))
            else:
                copies.append(
                    NonlinearLayer(layer.activation, layer.biases.copy(), layer.trainable)
                )
        return SimModel(self.geometry, copies, self.propagation, self.readout_scale)


def assemble_model(
    geometry: emfield.SimGeometry,
    layers,
    propagation: Propagation | None = None,
    readout_scale: float | None = None,
) -> SimModel:
    """Bind a layer schedule to a geometry, computing (or reusing) the
    coupling matrices."""
    layers = list(layers)
    if len(layers) != geometry.num_layers:
        raise ValueError(
            f"schedule has {len(layers)} layers, geometry expects {geometry.num_layers}"
        )
    m = geometry.num_cells
    for i, layer in enumerate(layers):
        size = layer.phases.size if isinstance(layer, LinearLayer) else layer.biases.size
        if size != m:
            raise ValueError(f"layer {i + 1} has {size} cells, geometry has {m}")
    if propagation is None:
        propagation = compute_propagation(geometry)
    return SimModel(geometry, layers, propagation, readout_scale)


def uniform_phase_layer(num_cells: int, rng: np.random.Generator) -> LinearLayer:
    """Uninformative phase initialization, i.i.d. uniform on [0, 2 pi)."""
    return LinearLayer(phases=rng.uniform(0.0, 2.0 * np.pi, num_cells))


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------


@dataclass
class ForwardTrace:
    """Intermediate fields retained for the backward pass.

    ``pre_activation[i]`` is the field after the coupling matrix into
    layer i+1 and before its phase shift or nonlinearity;
    ``post_activation[i]`` is the field leaving that layer.
    """

    input_field: np.ndarray
    pre_activation: list = field(default_factory=list)
    post_activation: list = field(default_factory=list)
    output_field: np.ndarray | None = None


def forward(model: SimModel, input_field) -> ForwardTrace:
    """Run the field recursion; accepts (..., M) batches."""
    x = np.asarray(input_field, dtype=complex)
    m = model.geometry.num_cells
    if x.shape[-1] != m:
        raise ValueError(f"input trailing axis {x.shape[-1]} != cell count {m}")
    trace = ForwardTrace(input_field=x)
    for i, layer in enumerate(model.layers):
        # coupling into layer i+1; the first layer sees the input directly
        z = x if i == 0 else x @ model.propagation.interlayer[i - 1].T
        trace.pre_activation.append(z)
        if isinstance(layer, LinearLayer):
            x = np.exp(1j * layer.phases) * z
        else:
            x = layer.activation.apply(z, layer.biases)
        trace.post_activation.append(x)
    trace.output_field = x @ model.propagation.output.T
    return trace


def readout(output_field, scale: float, r_bounds) -> tuple:
    """Map the two output amplitudes to (range, azimuth, xy position).

    range = r_min + scale |y_1| (r_max - r_min);
    azimuth = (2 scale |y_2| - 1) pi/2.  Estimates are not clamped;
    out-of-range values are the loss's problem, not the readout's.
    """
    y = np.asarray(output_field, dtype=complex)
    if y.shape[-1] != 2:
        raise ValueError("readout requires exactly 2 output antennas")
    if not scale > 0:
        raise ValueError("readout scale must be positive")
    r_min, r_max = float(r_bounds[0]), float(r_bounds[1])
    range_est = r_min + scale * np.abs(y[..., 0]) * (r_max - r_min)
    azimuth_est = (2.0 * scale * np.abs(y[..., 1]) - 1.0) * (np.pi / 2.0)
    position = np.stack(
        [range_est * np.cos(azimuth_est), range_est * np.sin(azimuth_est)], axis=-1
    )
    return range_est, azimuth_est, position


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------


@dataclass
class GradientSet:
    """Real gradients keyed by 1-based layer index.

    Frozen layers do not appear at all: phase gradients exist only for
    trainable linear layers, bias gradients only for trainable
    nonlinear layers.
    """

    phase: dict = field(default_factory=dict)
    bias: dict = field(default_factory=dict)

    def scaled(self, factor: float) -> "GradientSet":
        return GradientSet(
            phase={k: v * factor for k, v in self.phase.items()},
            bias={k: v * factor for k, v in self.bias.items()},
        )


def _batch_sum(arr: np.ndarray) -> np.ndarray:
    return arr.reshape(-1, arr.shape[-1]).sum(axis=0)


def backward(model: SimModel, trace: ForwardTrace, output_cotangent) -> GradientSet:
    """Reverse-mode gradients of a real loss through the whole stack.

    ``output_cotangent`` packs dL/dRe(y) + j dL/dIm(y) per output
    antenna, batched like the trace.  Gradients are summed over leading
    (batch) axes in fixed array order.
    """
    cot = np.asarray(output_cotangent, dtype=complex)
    if trace.output_field is None or cot.shape != trace.output_field.shape:
        raise ValueError("cotangent shape must match the trace output")
    grads = GradientSet()
    cot_x = cot @ np.conj(model.propagation.output)
    for i in range(model.num_layers - 1, -1, -1):
        layer = model.layers[i]
        z = trace.pre_activation[i]
        if isinstance(layer, LinearLayer):
            phi = np.exp(1j * layer.phases)
            if layer.trainable:
                sens = np.real(np.conj(cot_x) * (1j * phi * z))
                grads.phase[i + 1] = _batch_sum(sens)
            cot_z = np.conj(phi) * cot_x
        else:
            act, biases = layer.activation, layer.biases
            rho = np.abs(z)
            nonzero = rho > 0.0
            safe_rho = np.where(nonzero, rho, 1.0)
            direction = np.where(nonzero, z / safe_rho, 0.0)
            amp = np.asarray(act.value(rho, biases), dtype=float)
            slope = np.asarray(act.derivative(rho, biases), dtype=float)
            u = np.conj(cot_x) * direction
            cot_z = direction * (slope * np.real(u) - 1j * (amp / safe_rho) * np.imag(u))
            if layer.trainable:
                dc_db = act.bias_derivative(rho, biases)
                if dc_db is None:
                    raise ValueError(
                        f"{type(act).__name__} provides no bias derivative; "
                        "layer biases cannot be trainable"
                    )
                grads.bias[i + 1] = _batch_sum(np.asarray(dc_db) * np.real(u))
        cot_x = cot_z if i == 0 else cot_z @ np.conj(model.propagation.interlayer[i - 1])
    return grads


def finite_difference_check(
    model: SimModel,
    input_field,
    loss,
    step: float = 1e-6,
    rng: np.random.Generator | None = None,
    num_params: int = 32,
) -> float:
    """Compare backward gradients against central differences.

    ``loss`` maps an output field to (scalar value, packed cotangent).
    Perturbs ``num_params`` randomly chosen trainable coordinates (all
    of them if fewer exist) and returns the worst relative error, where
    each coordinate's error is measured against its own magnitude with
    a floor of 1e-3 times the largest sampled gradient.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    rng = rng or np.random.default_rng(0)
    trace = forward(model, input_field)
    _, cot = loss(trace.output_field)
    grads = backward(model, trace, cot)

    coords = []
    for i, layer in enumerate(model.layers):
        if isinstance(layer, LinearLayer) and layer.trainable:
            coords += [("phase", i, m) for m in range(layer.phases.size)]
        elif isinstance(layer, NonlinearLayer) and layer.trainable:
            coords += [("bias", i, m) for m in range(layer.biases.size)]
    if not coords:
        return 0.0
    if len(coords) > num_params:
        picks = rng.choice(len(coords), size=num_params, replace=False)
        coords = [coords[int(p)] for p in picks]

    def loss_at():
        return float(loss(forward(model, input_field).output_field)[0])

    pairs = []
    for kind, i, m in coords:
        vec = model.layers[i].phases if kind == "phase" else model.layers[i].biases
        saved = vec[m]
        vec[m] = saved + step
        hi = loss_at()
        vec[m] = saved - step
        lo = loss_at()
        vec[m] = saved
        fd = (hi - lo) / (2.0 * step)
        table = grads.phase if kind == "phase" else grads.bias
        pairs.append((fd, float(table[i + 1][m])))

    scale = max((max(abs(fd), abs(an)) for fd, an in pairs), default=0.0)
    worst = 0.0
    for fd, an in pairs:
        denom = max(abs(fd), abs(an), 1e-3 * scale, 1e-300)
        worst = max(worst, abs(fd - an) / denom)
    return worst


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def _geometry_to_dict(g: emfield.SimGeometry) -> dict:
    return {
        "carrier_frequency_hz": g.carrier_frequency_hz,
        "cells_per_side": g.cells_per_side,
        "num_layers": g.num_layers,
        "layer_spacing_m": g.layer_spacing_m,
        "output_distance_m": g.output_distance_m,
        "num_output_antennas": g.num_output_antennas,
        "output_spacing_m": g.output_spacing_m,
    }


def model_to_dict(model: SimModel) -> dict:
    layers = []
    for layer in model.layers:
        if isinstance(layer, LinearLayer):
            layers.append(
                {
                    "kind": "linear",
                    "phases": layer.phases.tolist(),
                    "trainable": layer.trainable,
                }
            )
        else:
            layers.append(
                {
                    "kind": "nonlinear",
                    "activation": nonlin.activation_to_dict(layer.activation),
                    "biases": layer.biases.tolist(),
                    "trainable": layer.trainable,
                }
            )
    return {
        "format": CHECKPOINT_FORMAT,
        "geometry": _geometry_to_dict(model.geometry),
        "layers": layers,
        "readout_scale": model.readout_scale,
    }


def model_from_dict(data: dict, propagation: Propagation | None = None) -> SimModel:
    if data.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unrecognized checkpoint format {data.get('format')!r}")
    geometry = emfield.build_geometry(**data["geometry"])
    layers = []
    for entry in data["layers"]:
        if entry["kind"] == "linear":
            layers.append(LinearLayer(np.array(entry["phases"]), entry["trainable"]))
        elif entry["kind"] == "nonlinear":
            layers.append(
                NonlinearLayer(
                    activation=nonlin.activation_from_dict(entry["activation"]),
                    biases=np.array(entry["biases"]),
                    trainable=entry["trainable"],
                )
            )
        else:
            raise ValueError(f"unknown layer kind {entry['kind']!r}")
    return assemble_model(geometry, layers, propagation, data.get("readout_scale"))


def save_checkpoint(path, model: SimModel, extra: dict | None = None) -> None:
    """Single JSON file; float repr round-trips bit-exactly."""
    payload = model_to_dict(model)
    if extra:
        payload["extra"] = extra
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def load_checkpoint(path, propagation: Propagation | None = None):
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    return model_from_dict(payload, propagation), payload.get("extra", {})
