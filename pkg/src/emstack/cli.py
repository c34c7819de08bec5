"""Experiment runner for the stacked-surface localization study.

Verbs:

``run``
    Train and evaluate per a plain-text config: a single model, a sweep
    over the nonlinear layer position, or a sweep over stack depth with
    trainable / static-random / all-linear variants.
``curves``
    Export envelope nonlinearity curves for a list of diode
    coefficients plus their fitted piecewise-linear surrogates.
``check``
    Fast self-test of the physics invariants and gradients.
``ml-baseline``
    Standalone matched-filter grid-search evaluation.

Outputs are CSV (authoritative) plus small SVG plots, written under a
directory named by a hash of the effective config so distinct
configurations never collide.  Exit codes: 0 success, 1 config error,
2 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import baselines, emfield, nonlin, simnet, trainer


class ConfigError(Exception):
    """Invalid or unknown configuration input; exit code 1."""


class NumericalFailure(Exception):
    """Training or evaluation produced non-finite results; exit code 2."""


# ---------------------------------------------------------------------------
# Configuration schema
# ---------------------------------------------------------------------------

def _parse_int_list(text: str):
    try:
        values = [int(tok) for tok in text.replace(",", " ").split()]
    except ValueError as exc:
        raise ConfigError(f"expected a list of integers, got {text!r}") from exc
    if not values:
        raise ConfigError("empty integer list")
    return values


def _parse_float_list(text: str):
    try:
        return [float(tok) for tok in text.replace(",", " ").split()]
    except ValueError as exc:
        raise ConfigError(f"expected a list of numbers, got {text!r}") from exc


# section -> key -> (parser, default as text)
_SCHEMA = {
    "scenario": {
        "carrier_frequency_hz": (float, "28e9"),
        "cells_per_side": (int, "8"),
        "num_layers": (int, "4"),
        "layer_spacing_wavelengths": (float, "3.0"),
        "output_distance_wavelengths": (float, "3.0"),
        "num_output_antennas": (int, "2"),
        "r_min_m": (float, "1.0"),
        "r_max_m": (float, "3.0"),
        "theta_max_deg": (float, "70.0"),
        "rician_factor_db": (float, "20.0"),
        "transmit_power_dbm": (float, "30.0"),
        "noise_power_dbm": (float, "-110.0"),
    },
    "model": {
        "nl_mode": (str, "trainable"),
        "nl_layer_index": (str, "last"),
        "activation": (str, "relu-fit"),
        "activation_gain": (float, "0.5"),
        "bias_scale_factor": (float, "3.0"),
        "alpha_min": (float, "55.0"),
        "alpha_max": (float, "57.0"),
        "table_points": (int, "2048"),
    },
    "training": {
        "num_samples": (int, "2000"),
        "learning_rate": (float, "1e-2"),
        "bias_learning_rate": (float, "1e-9"),
        "beta1": (float, "0.9"),
        "beta2": (float, "0.999"),
        "epsilon": (float, "1e-8"),
        "batch_size": (int, "64"),
        "epochs": (int, "50"),
        "patience": (int, "0"),
        "seeds": (_parse_int_list, "101, 202, 303"),
    },
    "experiment": {
        "sweep": (str, "none"),
        "depth_values": (_parse_int_list, "2, 4, 6"),
        "ml_mode": (str, "two-stage"),
        "ml_coarse": (int, "100"),
        "ml_refine": (int, "21"),
        "ml_exhaustive_points": (int, "1000"),
        "seed": (int, "42"),
    },
    "curves": {
        "alphas": (_parse_float_list, "18, 33, 56"),
        "bias_shift_volts": (float, "0.4"),
        "v_max": (float, "1.0"),
        "samples": (int, "200"),
    },
}

_NL_MODES = ("trainable", "static-random", "linear")
_ACTIVATIONS = ("relu-fit", "smooth", "diode-table")
_SWEEPS = ("none", "nl-layer-index", "depth-L")
_ML_MODES = ("two-stage", "exhaustive")


@dataclass
class ExperimentConfig:
    """Parsed and validated settings; ``values[section][key]`` holds the
    typed entries, ``hash_id`` names the output directory."""

    values: dict
    hash_id: str
    text: str

    def __getitem__(self, section):
        return self.values[section]


def _read_config_text(text: str) -> dict:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    values = {
        section: {key: default for key, (_, default) in keys.items()}
        for section, keys in _SCHEMA.items()
    }
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            values[section][key] = raw
    return values


def load_config(text: str = "", overrides: dict | None = None) -> ExperimentConfig:
    """Parse config text over the documented defaults, apply overrides
    (mapping "section.key" -> raw text), validate, and hash."""
    raw = _read_config_text(text)
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if section not in _SCHEMA or key not in _SCHEMA[section]:
            raise ConfigError(f"unknown override {dotted!r}")
        raw[section][key] = str(value)

    typed = {}
    for section, keys in _SCHEMA.items():
        typed[section] = {}
        for key, (cast, _) in keys.items():
            try:
                typed[section][key] = cast(raw[section][key])
            except ConfigError:
                raise
            except (TypeError, ValueError) as exc:
                raise ConfigError(
                    f"bad value for {section}.{key}: {raw[section][key]!r}"
                ) from exc

    _validate(typed)
    canonical = canonical_text(typed)
    hash_id = hashlib.sha256(canonical.encode()).hexdigest()[:12]
    return ExperimentConfig(values=typed, hash_id=hash_id, text=canonical)


def canonical_text(values: dict) -> str:
    lines = []
    for section in sorted(values):
        lines.append(f"[{section}]")
        for key in sorted(values[section]):
            v = values[section][key]
            if isinstance(v, list):
                v = ", ".join(str(x) for x in v)
            lines.append(f"{key} = {v}")
        lines.append("")
    return "\n".join(lines)


def _validate(cfg: dict) -> None:
    sc, mo, tr, ex, cu = (cfg[k] for k in ("scenario", "model", "training", "experiment", "curves"))
    if mo["nl_mode"] not in _NL_MODES:
        raise ConfigError(f"nl_mode must be one of {_NL_MODES}")
    if mo["activation"] not in _ACTIVATIONS:
        raise ConfigError(f"activation must be one of {_ACTIVATIONS}")
    if ex["sweep"] not in _SWEEPS:
        raise ConfigError(f"sweep must be one of {_SWEEPS}")
    if ex["ml_mode"] not in _ML_MODES:
        raise ConfigError(f"ml_mode must be one of {_ML_MODES}")
    if mo["nl_layer_index"] != "last":
        try:
            idx = int(mo["nl_layer_index"])
        except ValueError as exc:
            raise ConfigError("nl_layer_index must be an integer or 'last'") from exc
        if not 1 <= idx <= sc["num_layers"]:
            raise ConfigError("nl_layer_index outside 1..num_layers")
    if sc["cells_per_side"] < 1 or sc["num_layers"] < 1:
        raise ConfigError("cells_per_side and num_layers must be >= 1")
    if not 0 < sc["r_min_m"] < sc["r_max_m"]:
        raise ConfigError("need 0 < r_min_m < r_max_m")
    if not 0 < sc["theta_max_deg"] <= 70.0:
        raise ConfigError("theta_max_deg must be in (0, 70]")
    if mo["alpha_min"] > mo["alpha_max"] or mo["alpha_min"] <= 0:
        raise ConfigError("need 0 < alpha_min <= alpha_max")
    if mo["bias_scale_factor"] < 0 or mo["activation_gain"] <= 0:
        raise ConfigError("bias_scale_factor must be >= 0 and activation_gain > 0")
    if tr["num_samples"] < 10:
        raise ConfigError("num_samples must be >= 10")
    if not tr["seeds"]:
        raise ConfigError("at least one training seed required")
    if min(ex["depth_values"]) < 1:
        raise ConfigError("depth_values must be >= 1")
    if ex["ml_coarse"] < 2 or ex["ml_refine"] < 2 or ex["ml_exhaustive_points"] < 2:
        raise ConfigError("grid sizes must be >= 2")
    if cu["v_max"] <= 0 or cu["samples"] < 2:
        raise ConfigError("curves need v_max > 0 and samples >= 2")
    if cu["bias_shift_volts"] < 0:
        raise ConfigError("bias_shift_volts is a rightward knee shift; must be >= 0")
    if mo["table_points"] < 512:
        raise ConfigError("table_points must be >= 512")
    if mo["activation"] == "diode-table" and mo["nl_mode"] == "trainable":
        raise ConfigError(
            "diode-table curves have a frozen operating point; "
            "use nl_mode = static-random or a bias-capable activation"
        )
    # TrainConfig re-validates rates and sizes
    _train_config(cfg)


def _train_config(cfg: dict, seed: int = 0) -> trainer.TrainConfig:
    t = cfg["training"]
    try:
        return trainer.TrainConfig(
            learning_rate=t["learning_rate"],
            bias_learning_rate=t["bias_learning_rate"],
            beta1=t["beta1"],
            beta2=t["beta2"],
            epsilon=t["epsilon"],
            batch_size=t["batch_size"],
            epochs=t["epochs"],
            patience=t["patience"],
            seed=seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_preset(name: str) -> str:
    path = resources.files("emstack").joinpath(f"presets/{name}.ini")
    try:
        return path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        available = sorted(
            p.name[:-4]
            for p in resources.files("emstack").joinpath("presets").iterdir()
            if p.name.endswith(".ini")
        )
        raise ConfigError(f"unknown preset {name!r}; available: {available}") from exc


# ---------------------------------------------------------------------------
# Experiment assembly
# ---------------------------------------------------------------------------


def build_geometry(cfg: ExperimentConfig, num_layers: int | None = None) -> emfield.SimGeometry:
    sc = cfg["scenario"]
    wavelength = emfield.SPEED_OF_LIGHT / sc["carrier_frequency_hz"]
    return emfield.build_geometry(
        carrier_frequency_hz=sc["carrier_frequency_hz"],
        cells_per_side=sc["cells_per_side"],
        num_layers=num_layers if num_layers is not None else sc["num_layers"],
        layer_spacing_m=sc["layer_spacing_wavelengths"] * wavelength,
        output_distance_m=sc["output_distance_wavelengths"] * wavelength,
        num_output_antennas=sc["num_output_antennas"],
    )


def build_scenario(cfg: ExperimentConfig) -> emfield.Scenario:
    sc = cfg["scenario"]
    return emfield.Scenario(
        r_min_m=sc["r_min_m"],
        r_max_m=sc["r_max_m"],
        theta_max_rad=np.deg2rad(sc["theta_max_deg"]),
        rician_factor=emfield.db_to_linear(sc["rician_factor_db"]),
        transmit_power_w=emfield.dbm_to_watts(sc["transmit_power_dbm"]),
        noise_power_w=emfield.dbm_to_watts(sc["noise_power_dbm"]),
    )


def build_dataset(cfg: ExperimentConfig, geometry: emfield.SimGeometry) -> trainer.Dataset:
    return trainer.generate_dataset(
        geometry,
        build_scenario(cfg),
        cfg["training"]["num_samples"],
        np.random.default_rng(cfg["experiment"]["seed"]),
    )


def _make_activation(cfg: ExperimentConfig, num_cells: int, rng: np.random.Generator):
    mo = cfg["model"]
    kind = mo["activation"]
    if kind == "relu-fit":
        return nonlin.FittedRelu(gain=mo["activation_gain"])
    if kind == "smooth":
        return nonlin.ShiftedReluLowpass(gain=mo["activation_gain"])
    # per-cell physical diode curves sampled at fabrication
    alphas = nonlin.sample_static_alphas(
        num_cells, (mo["alpha_min"], mo["alpha_max"]), rng
    )
    tables = [
        nonlin.diode_activation(
            nonlin.DiodeCircuitParams(alpha_per_volt=a),
            v_max=1.0,
            n_points=mo["table_points"],
        )
        for a in alphas
    ]
    grid = tables[0].grid
    return nonlin.TabulatedActivationSet(
        grid, np.stack([t.values for t in tables])
    )


def build_model(
    cfg: ExperimentConfig,
    geometry: emfield.SimGeometry,
    propagation: simnet.Propagation,
    dataset: trainer.Dataset,
    seed: int,
    nl_position: int | None = None,
) -> simnet.SimModel:
    """One model per nl-mode, with the nonlinear layer's bias scale
    calibrated to the field it will actually see.

    Knee magnitudes are drawn half-normal at ``bias_scale_factor`` times
    the median pre-activation amplitude at the nonlinear position under
    the freshly initialized phases.  Trainable and static-random differ
    only in whether the biases update afterwards.
    """
    mo = cfg["model"]
    rng = np.random.default_rng(seed)
    m = geometry.num_cells
    if mo["nl_mode"] == "linear":
        return baselines.linear_sim_model(geometry, rng, propagation)

    if nl_position is None:
        raw = mo["nl_layer_index"]
        nl_position = geometry.num_layers if raw == "last" else int(raw)
    if not 1 <= nl_position <= geometry.num_layers:
        raise ConfigError("nonlinear layer position outside the stack")

    trainable = mo["nl_mode"] == "trainable"
    layers = []
    for l in range(1, geometry.num_layers + 1):
        if l == nl_position:
            layers.append(
                simnet.NonlinearLayer(
                    _make_activation(cfg, m, rng), np.zeros(m), trainable=trainable
                )
            )
        else:
            layers.append(simnet.uniform_phase_layer(m, rng))
    model = simnet.assemble_model(geometry, layers, propagation)

    nl_layer = model.layers[nl_position - 1]
    if nl_layer.activation.supports_bias:
        trace = simnet.forward(model, dataset.field_matrix(dataset.split.train))
        median_amp = float(np.median(np.abs(trace.pre_activation[nl_position - 1])))
        scale = mo["bias_scale_factor"] * median_amp
        nl_layer.biases = -np.abs(rng.standard_normal(m)) * scale
    return model


def _train_and_test(cfg, model, dataset, seed):
    result = trainer.train(model, dataset, _train_config(cfg.values, seed))
    if result.diverged:
        raise NumericalFailure(f"training diverged (seed {seed})")
    test = trainer.evaluate(result.best_model, dataset, dataset.split.test)
    if not np.isfinite(test.rmse):
        raise NumericalFailure(f"non-finite test RMSE (seed {seed})")
    return result, test


def _ml_estimator(cfg: ExperimentConfig, geometry: emfield.SimGeometry):
    ex = cfg["experiment"]
    sc = cfg["scenario"]
    bounds = (sc["r_min_m"], sc["r_max_m"])
    theta_max = np.deg2rad(sc["theta_max_deg"])
    if ex["ml_mode"] == "exhaustive":
        grid = baselines.make_search_grid(
            bounds, theta_max, ex["ml_exhaustive_points"], ex["ml_exhaustive_points"]
        )
        return lambda field: baselines.ml_estimate(field, geometry, grid)
    return lambda field: baselines.ml_estimate_two_stage(
        field, geometry, bounds, theta_max, ex["ml_coarse"], ex["ml_refine"]
    )


# ---------------------------------------------------------------------------
# Output files
# ---------------------------------------------------------------------------


class _CsvWriter:
    """Streams rows and flushes after each write so an interrupted sweep
    keeps its completed points."""

    def __init__(self, path: Path, header_comment: str, columns):
        self._fh = open(path, "w", encoding="utf-8")
        self._fh.write(header_comment + "\n")
        self._fh.write(",".join(columns) + "\n")
        self._fh.flush()

    def row(self, *values):
        out = []
        for v in values:
            if isinstance(v, float):
                out.append(repr(v))
            else:
                out.append(str(v))
        self._fh.write(",".join(out) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()


def _header(cfg: ExperimentConfig) -> str:
    return f"# config_hash={cfg.hash_id} seed={cfg['experiment']['seed']}"


def write_records_csv(path: Path, cfg: ExperimentConfig, records: np.ndarray) -> None:
    w = _CsvWriter(path, _header(cfg), ["r", "theta", "r_hat", "theta_hat", "error_m"])
    for rec in records:
        w.row(*(float(rec[name]) for name in records.dtype.names))
    w.close()


def _svg_polyline(points, color):
    coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
    return (
        f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>'
    )


_PALETTE = ("#1f6fb4", "#d1495b", "#3a7d44", "#8d5a97", "#c77d2e", "#4f6d7a")


def svg_plot(path, series, x_label: str, y_label: str, title: str = "") -> None:
    """Minimal line plot: ``series`` is a list of (label, x, y) with
    numeric arrays.  CSV stays authoritative; this is a quick look."""
    width, height = 640, 420
    left, right, top, bottom = 64, 16, 28, 46
    xs = np.concatenate([np.asarray(x, dtype=float) for _, x, _ in series])
    ys = np.concatenate([np.asarray(y, dtype=float) for _, _, y in series])
    x_lo, x_hi = float(xs.min()), float(xs.max())
    y_lo, y_hi = float(ys.min()), float(ys.max())
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    def sx(v):
        return left + (v - x_lo) / (x_hi - x_lo) * (width - left - right)

    def sy(v):
        return height - bottom - (v - y_lo) / (y_hi - y_lo) * (height - top - bottom)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.0f}" y="18" text-anchor="middle" font-size="13">{title}</text>',
    ]
    for i in range(5):
        xv = x_lo + (x_hi - x_lo) * i / 4
        yv = y_lo + (y_hi - y_lo) * i / 4
        parts.append(
            f'<line x1="{sx(xv):.1f}" y1="{height - bottom}" x2="{sx(xv):.1f}" '
            f'y2="{height - bottom + 4}" stroke="black"/>'
            f'<text x="{sx(xv):.1f}" y="{height - bottom + 16}" text-anchor="middle" '
            f'font-size="10">{xv:.3g}</text>'
        )
        parts.append(
            f'<line x1="{left - 4}" y1="{sy(yv):.1f}" x2="{left}" y2="{sy(yv):.1f}" '
            f'stroke="black"/>'
            f'<text x="{left - 6}" y="{sy(yv) + 3:.1f}" text-anchor="end" '
            f'font-size="10">{yv:.3g}</text>'
        )
    parts.append(
        f'<line x1="{left}" y1="{height - bottom}" x2="{width - right}" '
        f'y2="{height - bottom}" stroke="black"/>'
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{height - bottom}" stroke="black"/>'
    )
    parts.append(
        f'<text x="{(left + width - right) / 2:.0f}" y="{height - 8}" '
        f'text-anchor="middle" font-size="11">{x_label}</text>'
    )
    parts.append(
        f'<text x="14" y="{(top + height - bottom) / 2:.0f}" text-anchor="middle" '
        f'font-size="11" transform="rotate(-90 14 {(top + height - bottom) / 2:.0f})">'
        f"{y_label}</text>"
    )
    for i, (label, x, y) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        pts = [(sx(float(a)), sy(float(b))) for a, b in zip(x, y)]
        parts.append(_svg_polyline(pts, color))
        parts.append(
            f'<text x="{width - right - 8}" y="{top + 14 + 14 * i}" text-anchor="end" '
            f'font-size="11" fill="{color}">{label}</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts), encoding="utf-8")


# ---------------------------------------------------------------------------
# Verbs
# ---------------------------------------------------------------------------


def run_experiment(cfg: ExperimentConfig, out_root) -> Path:
    """Train/evaluate per the sweep axis; returns the output directory.

    Results stream into ``results.csv`` one row per completed point, so
    partial sweeps leave usable files behind.
    """
    out_dir = Path(out_root) / cfg.hash_id
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.ini").write_text(cfg.text, encoding="utf-8")
    sweep = cfg["experiment"]["sweep"]
    seeds = cfg["training"]["seeds"]

    results = _CsvWriter(
        out_dir / "results.csv",
        _header(cfg),
        ["sweep", "point", "variant", "seed", "test_rmse_m"],
    )
    models_dir = out_dir / "models"
    models_dir.mkdir(exist_ok=True)

    def run_point(point, variant, geometry, propagation, dataset, nl_position=None):
        rmses = []
        for seed in seeds:
            point_cfg = cfg if variant is None else _variant_config(cfg, variant)
            model = build_model(
                point_cfg, geometry, propagation, dataset, seed, nl_position
            )
            result, test = _train_and_test(point_cfg, model, dataset, seed)
            rmses.append(test.rmse)
            label = variant or cfg["model"]["nl_mode"]
            results.row(sweep, point, label, seed, test.rmse)
            hist = _CsvWriter(
                out_dir / f"history-{point}-{label}-{seed}.csv",
                _header(cfg),
                ["epoch", "train_loss", "val_rmse"],
            )
            for epoch, loss, val in trainer.history_rows(result):
                hist.row(epoch, loss, val)
            hist.close()
            simnet.save_checkpoint(
                models_dir / f"{point}-{label}-{seed}.json",
                result.best_model,
                extra={"test_rmse_m": test.rmse, "seed": seed},
            )
        mean = float(np.mean(rmses))
        results.row(sweep, point, variant or cfg["model"]["nl_mode"], "mean", mean)
        return mean, result, test

    try:
        if sweep == "none":
            geometry = build_geometry(cfg)
            propagation = simnet.compute_propagation(geometry)
            dataset = build_dataset(cfg, geometry)
            _, _, test = run_point("single", None, geometry, propagation, dataset)
            write_records_csv(out_dir / "records.csv", cfg, test.records)
            ml = baselines.evaluate_ml(
                dataset, geometry, dataset.split.test, _ml_estimator(cfg, geometry)
            )
            results.row(sweep, "single", "ml", "-", ml.rmse)
        elif sweep == "nl-layer-index":
            geometry = build_geometry(cfg)
            propagation = simnet.compute_propagation(geometry)
            dataset = build_dataset(cfg, geometry)
            means = []
            for position in range(1, geometry.num_layers + 1):
                mean, _, _ = run_point(
                    position, None, geometry, propagation, dataset, nl_position=position
                )
                means.append(mean)
            svg_plot(
                out_dir / "results.svg",
                [("mean test RMSE", np.arange(1, geometry.num_layers + 1), means)],
                "nonlinear layer position",
                "test RMSE [m]",
                "placement sweep",
            )
        else:  # depth-L
            depths = cfg["experiment"]["depth_values"]
            curves = {v: [] for v in _NL_MODES}
            ml_rmse = None
            for depth in depths:
                geometry = build_geometry(cfg, num_layers=depth)
                propagation = simnet.compute_propagation(geometry)
                dataset = build_dataset(cfg, geometry)
                for variant in _NL_MODES:
                    mean, _, _ = run_point(
                        depth, variant, geometry, propagation, dataset,
                        nl_position=depth,
                    )
                    curves[variant].append(mean)
                if ml_rmse is None:
                    ml = baselines.evaluate_ml(
                        dataset, geometry, dataset.split.test,
                        _ml_estimator(cfg, geometry),
                    )
                    ml_rmse = ml.rmse
                results.row(sweep, depth, "ml", "-", ml_rmse)
            svg_plot(
                out_dir / "results.svg",
                [(v, depths, curves[v]) for v in _NL_MODES],
                "number of layers",
                "test RMSE [m]",
                "depth sweep",
            )
    finally:
        results.close()
    return out_dir


def _variant_config(cfg: ExperimentConfig, nl_mode: str) -> ExperimentConfig:
    values = {s: dict(d) for s, d in cfg.values.items()}
    values["model"]["nl_mode"] = nl_mode
    return ExperimentConfig(values=values, hash_id=cfg.hash_id, text=cfg.text)


def export_curves(cfg: ExperimentConfig, out_root) -> Path:
    """Envelope curves for each diode coefficient at a common knee
    shift, plus fitted piecewise-linear surrogate parameters."""
    cu = cfg["curves"]
    alphas = cu["alphas"]
    if not alphas:
        raise ConfigError("curves.alphas must list at least one coefficient")
    bias = -cu["bias_shift_volts"]
    out_dir = Path(out_root) / cfg.hash_id
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.ini").write_text(cfg.text, encoding="utf-8")

    amplitudes = np.linspace(0.0, cu["v_max"], cu["samples"])
    columns, fits = [], []
    for alpha in alphas:
        params = nonlin.DiodeCircuitParams(alpha_per_volt=alpha, bias_volts=bias)
        table = nonlin.diode_activation(params, v_max=cu["v_max"])
        columns.append(table.value(amplitudes))
        fits.append(
            (alpha, nonlin.fit_relu_approximation(table, (0.0, cu["v_max"])))
        )

    w = _CsvWriter(
        out_dir / "curves.csv",
        _header(cfg),
        ["amplitude"] + [f"C_alpha_{a:g}" for a in alphas],
    )
    for i, v in enumerate(amplitudes):
        w.row(float(v), *(float(col[i]) for col in columns))
    w.close()

    w = _CsvWriter(
        out_dir / "relu_fits.csv",
        _header(cfg),
        ["alpha", "gain", "knee", "residual_rms"],
    )
    for alpha, fit in fits:
        w.row(float(alpha), fit.gain, fit.knee, fit.residual_rms)
    w.close()

    series = [
        (f"alpha {a:g}", amplitudes, col) for a, col in zip(alphas, columns)
    ]
    series += [
        (
            f"fit {a:g}",
            amplitudes,
            fit.activation().value(amplitudes),
        )
        for a, fit in fits
    ]
    svg_plot(
        out_dir / "curves.svg",
        series,
        "input amplitude [V]",
        "envelope amplitude C[v]",
        f"diode envelope curves, knee shift {cu['bias_shift_volts']:g} V",
    )
    return out_dir


def self_check(seed: int = 0, stream=None) -> bool:
    """Fast invariant and gradient battery; prints one line per check."""
    stream = stream or sys.stdout
    rng = np.random.default_rng(seed)
    checks = []

    geom = emfield.build_geometry(28e9, 4, 2, 0.032, 0.032, 2)
    pos = [
        emfield.UePosition(rng.uniform(1.0, 3.0), rng.uniform(-1.2, 1.2))
        for _ in range(50)
    ]
    norm_err = max(
        abs(np.linalg.norm(emfield.array_response(geom, p)) - 1.0) for p in pos
    )
    checks.append(("steering unit norm", norm_err < 1e-12, f"max err {norm_err:.2e}"))

    prop = simnet.compute_propagation(geom)
    lin = baselines.linear_sim_model(geom, rng, prop)
    x = rng.standard_normal(16) + 1j * rng.standard_normal(16)
    c = 1.3 - 0.4j
    hom = np.max(
        np.abs(
            simnet.forward(lin, c * x).output_field
            - c * simnet.forward(lin, x).output_field
        )
    )
    checks.append(("linear homogeneity", hom < 1e-12, f"max err {hom:.2e}"))

    nl_model = simnet.assemble_model(
        geom,
        [
            simnet.uniform_phase_layer(16, rng),
            simnet.NonlinearLayer(
                nonlin.FittedRelu(gain=0.5),
                -np.abs(rng.standard_normal(16)) * 0.3,
                trainable=True,
            ),
        ],
        prop,
    )
    rot = np.exp(1j * 0.91)
    eq = np.max(
        np.abs(
            simnet.forward(nl_model, rot * x).output_field
            - rot * simnet.forward(nl_model, x).output_field
        )
    )
    checks.append(("phase equivariance", eq < 1e-12, f"max err {eq:.2e}"))

    def loss(y):
        d = y - (0.1 + 0.2j)
        return float(np.sum(np.abs(d) ** 2)), 2.0 * d

    fd = max(
        simnet.finite_difference_check(model, 3.0 * x, loss, rng=rng)
        for model in (lin, nl_model)
    )
    checks.append(("gradient finite differences", fd < 1e-4, f"max rel err {fd:.2e}"))

    worst = 0.0
    for _ in range(100):
        params = nonlin.DiodeCircuitParams(alpha_per_volt=rng.uniform(18.0, 57.0))
        s = rng.uniform(-2.0, 2.0)
        u = nonlin.diode_bandpass_response(params, s)
        ri = params.antenna_resistance_ohm * params.saturation_current_a
        resid = abs(u - ri * np.expm1(2.0 * params.alpha_per_volt * (s - u)))
        worst = max(worst, resid)
    checks.append(("diode residual", worst <= 1e-12, f"max residual {worst:.2e}"))

    relu_err = 0.0
    lp = nonlin.closed_form_lowpass(nonlin.Relu())
    for v in rng.uniform(0.0, 3.0, 20):
        num = nonlin.lowpass_from_bandpass(nonlin.Relu(), float(v))
        relu_err = max(relu_err, abs(num - lp.value(float(v))))
    checks.append(
        ("envelope quadrature vs closed form", relu_err < 1e-7, f"max err {relu_err:.2e}")
    )

    all_ok = True
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'} {name} ({detail})", file=stream)
        all_ok = all_ok and ok
    return all_ok


def run_ml_baseline(cfg: ExperimentConfig, out_root) -> Path:
    """Matched-filter evaluation on a fresh dataset's test split."""
    out_dir = Path(out_root) / cfg.hash_id
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.ini").write_text(cfg.text, encoding="utf-8")
    geometry = build_geometry(cfg)
    dataset = build_dataset(cfg, geometry)
    result = baselines.evaluate_ml(
        dataset, geometry, dataset.split.test, _ml_estimator(cfg, geometry)
    )
    if not np.isfinite(result.rmse):
        raise NumericalFailure("non-finite matched-filter RMSE")
    write_records_csv(out_dir / "ml_records.csv", cfg, result.records)
    w = _CsvWriter(out_dir / "ml_summary.csv", _header(cfg), ["estimator", "test_rmse_m"])
    w.row(cfg["experiment"]["ml_mode"], result.rmse)
    w.close()
    return out_dir


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _load_from_args(args) -> ExperimentConfig:
    if args.config is not None:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    elif args.preset is not None:
        text = load_preset(args.preset)
    else:
        text = ""
    overrides = {}
    if args.seed is not None:
        overrides["experiment.seed"] = args.seed
    return load_config(text, overrides)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="emstack",
        description="Stacked-surface localization experiments",
    )
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in ("run", "curves", "check", "ml-baseline"):
        p = sub.add_parser(verb)
        p.add_argument("--config", help="path to a key = value config file")
        p.add_argument("--preset", help="name of a shipped preset config")
        p.add_argument("--seed", type=int, help="dataset seed override")
        p.add_argument("--out", default="results", help="output root directory")

    args = parser.parse_args(argv)
    try:
        if args.verb == "check":
            return 0 if self_check(args.seed if args.seed is not None else 0) else 2
        cfg = _load_from_args(args)
        if args.verb == "run":
            out = run_experiment(cfg, args.out)
        elif args.verb == "curves":
            out = export_curves(cfg, args.out)
        else:
            out = run_ml_baseline(cfg, args.out)
        print(f"results written to {out}")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (NumericalFailure, nonlin.QuadratureError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
