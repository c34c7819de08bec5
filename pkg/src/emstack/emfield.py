"""Physical layer of the simulator: geometry, diffraction operators, channels.

Everything downstream (the stacked forward model, the trainer, the
matched-filter baseline) consumes the objects built here.  Conventions:

* Metasurface layers are parallel x-y planes stacked along +z, layer 1
  centered at the origin.  The receive array sits behind the last layer.
* The user terminal lies on the -z side at polar coordinates (r, theta),
  mapped to Cartesian (r sin(theta), 0, -r cos(theta)); theta = 0 is
  boresight.
* All quantities are SI (meters, Hz, watts).  Complex fields are the
  equivalent low-pass representation at the carrier.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0


def dbm_to_watts(dbm: float) -> float:
    """Convert a power level in dBm to watts."""
    return 10.0 ** (dbm / 10.0) / 1000.0


def db_to_linear(db: float) -> float:
    """Convert a power ratio in dB to linear scale."""
    return 10.0 ** (db / 10.0)


@dataclass(frozen=True, eq=False)
class SimGeometry:
    """Physical layout of the stacked surface and its output array.

    Cells form a square grid with half-wavelength pitch on every layer;
    layer l sits at axial coordinate (l - 1) * layer_spacing_m.  The
    output array is a line of antennas along x at output_distance_m
    behind the last layer.

    Attributes
    ----------
    carrier_frequency_hz : float
        Carrier frequency f0.
    wavelength_m : float
        Wavelength c / f0.
    cells_per_side : int
        Grid side length; each layer has cells_per_side**2 cells.
    num_layers : int
        Number of stacked layers L.
    layer_spacing_m : float
        Axial gap between consecutive layers.
    output_distance_m : float
        Gap between the last layer and the output array.
    num_output_antennas : int
        Output array size N_R.
    output_spacing_m : float
        Element pitch of the output array.
    cell_positions : tuple of ndarray
        Per-layer (M, 3) cell coordinates in meters.
    output_positions : ndarray
        (N_R, 3) output antenna coordinates.
    """

    carrier_frequency_hz: float
    wavelength_m: float
    cells_per_side: int
    num_layers: int
    layer_spacing_m: float
    output_distance_m: float
    num_output_antennas: int
    output_spacing_m: float
    cell_positions: tuple
    output_positions: np.ndarray

    @property
    def num_cells(self) -> int:
        """Cells per layer, M."""
        return self.cells_per_side ** 2

    @property
    def cell_pitch_m(self) -> float:
        return self.wavelength_m / 2.0

    @property
    def cell_area_m2(self) -> float:
        """Cell area A = lambda^2 / 4."""
        return self.wavelength_m ** 2 / 4.0

    @property
    def wavenumber(self) -> float:
        """k = 2 pi / lambda."""
        return 2.0 * np.pi / self.wavelength_m

    @property
    def aperture_diagonal_m(self) -> float:
        """Diagonal extent D of one square layer."""
        return np.sqrt(2.0) * (self.cells_per_side - 1) * self.cell_pitch_m

    def fingerprint(self) -> str:
        """Stable hash of the defining parameters, for run provenance."""
        key = (
            f"{self.carrier_frequency_hz!r}|{self.cells_per_side}|"
            f"{self.num_layers}|{self.layer_spacing_m!r}|"
            f"{self.output_distance_m!r}|{self.num_output_antennas}|"
            f"{self.output_spacing_m!r}"
        )
        return hashlib.sha256(key.encode()).hexdigest()[:16]


def build_geometry(
    carrier_frequency_hz: float,
    cells_per_side: int,
    num_layers: int,
    layer_spacing_m: float,
    output_distance_m: float,
    num_output_antennas: int = 2,
    output_spacing_m: float | None = None,
) -> SimGeometry:
    """Assemble a :class:`SimGeometry` from scenario parameters.

    Cell coordinates are centered on each layer's plane center.  The
    output array pitch defaults to half a wavelength.

    Raises
    ------
    ValueError
        If the frequency, a distance, or a count is not positive.
    """
    if carrier_frequency_hz <= 0:
        raise ValueError("carrier frequency must be positive")
    if cells_per_side < 1 or num_layers < 1 or num_output_antennas < 1:
        raise ValueError("cell grid, layer and antenna counts must be >= 1")
    if layer_spacing_m <= 0 or output_distance_m <= 0:
        raise ValueError("layer spacing and output distance must be positive")

    wavelength = SPEED_OF_LIGHT / carrier_frequency_hz
    pitch = wavelength / 2.0
    if output_spacing_m is None:
        output_spacing_m = pitch

    n = cells_per_side
    # Grid centered at the plane center, x fastest then y.
    axis = (np.arange(n) - (n - 1) / 2.0) * pitch
    gx, gy = np.meshgrid(axis, axis, indexing="xy")
    base = np.column_stack([gx.ravel(), gy.ravel(), np.zeros(n * n)])

    layers = []
    for l in range(num_layers):
        pos = base.copy()
        pos[:, 2] = l * layer_spacing_m
        pos.setflags(write=False)
        layers.append(pos)

    out_axis = (np.arange(num_output_antennas) - (num_output_antennas - 1) / 2.0)
    out = np.column_stack([
        out_axis * output_spacing_m,
        np.zeros(num_output_antennas),
        np.full(num_output_antennas, (num_layers - 1) * layer_spacing_m + output_distance_m),
    ])
    out.setflags(write=False)

    return SimGeometry(
        carrier_frequency_hz=float(carrier_frequency_hz),
        wavelength_m=float(wavelength),
        cells_per_side=int(cells_per_side),
        num_layers=int(num_layers),
        layer_spacing_m=float(layer_spacing_m),
        output_distance_m=float(output_distance_m),
        num_output_antennas=int(num_output_antennas),
        output_spacing_m=float(output_spacing_m),
        cell_positions=tuple(layers),
        output_positions=out,
    )


def fraunhofer_distance(geometry: SimGeometry) -> float:
    """Far-field boundary 2 D^2 / lambda for one layer's aperture."""
    d = geometry.aperture_diagonal_m
    return 2.0 * d ** 2 / geometry.wavelength_m


# ---------------------------------------------------------------------------
# Diffraction operators
# ---------------------------------------------------------------------------

OUTPUT_ARRAY = "output"


@dataclass(frozen=True, eq=False)
class PropagationMatrix:
    """Dense complex coupling matrix between two consecutive planes."""

    entries: np.ndarray
    source_layer: int
    dest_layer: object  # layer index or OUTPUT_ARRAY


def diffraction_kernel(distance, cos_incidence, wavelength: float, cell_area: float):
    """Scalar free-space coupling coefficient between two cells.

    Implements (A cos(chi) / d) * (1 / (2 pi d) - j / lambda) * exp(j k d)
    for propagation distance d and obliquity cosine cos(chi).  Accepts
    arrays and broadcasts.

    Raises
    ------
    ValueError
        If any distance is not strictly positive.
    """
    d = np.asarray(distance, dtype=float)
    if np.any(d <= 0.0):
        raise ValueError("diffraction kernel requires strictly positive distances")
    k = 2.0 * np.pi / wavelength
    amplitude = cell_area * np.asarray(cos_incidence) / d
    return amplitude * (1.0 / (2.0 * np.pi * d) - 1j / wavelength) * np.exp(1j * k * d)


def rayleigh_sommerfeld_matrix(
    geometry: SimGeometry, source_layer: int, dest_layer
) -> PropagationMatrix:
    """Build the diffraction matrix from one layer to the next plane.

    ``source_layer`` is 1-based.  ``dest_layer`` must be either
    ``source_layer + 1`` or :data:`OUTPUT_ARRAY` when the source is the
    last layer.  Entry (m, i) couples source cell i to destination
    element m; the obliquity cosine is taken against the source-plane
    normal (+z).
    """
    if not 1 <= source_layer <= geometry.num_layers:
        raise ValueError(f"source layer {source_layer} out of range")
    src = geometry.cell_positions[source_layer - 1]
    if dest_layer == OUTPUT_ARRAY:
        if source_layer != geometry.num_layers:
            raise ValueError("output array couples only to the last layer")
        dst = geometry.output_positions
    else:
        if dest_layer != source_layer + 1:
            raise ValueError("destination must be the layer immediately after the source")
        dst = geometry.cell_positions[dest_layer - 1]

    diff = dst[:, None, :] - src[None, :, :]
    dist = np.sqrt(np.sum(diff ** 2, axis=-1))
    cos_chi = diff[:, :, 2] / dist
    entries = diffraction_kernel(dist, cos_chi, geometry.wavelength_m, geometry.cell_area_m2)
    if not np.all(np.isfinite(entries)):
        raise FloatingPointError("non-finite propagation entry (degenerate geometry)")
    entries.setflags(write=False)
    return PropagationMatrix(entries=entries, source_layer=source_layer, dest_layer=dest_layer)


# ---------------------------------------------------------------------------
# Source positions and channels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UePosition:
    """Terminal position in polar coordinates on the -z side of layer 1."""

    range_m: float
    azimuth_rad: float

    def __post_init__(self):
        if self.range_m <= 0:
            raise ValueError("range must be positive")
        if not abs(self.azimuth_rad) < np.pi / 2:
            raise ValueError("azimuth must lie strictly inside +-90 degrees")

    def cartesian(self) -> np.ndarray:
        """3-D coordinates (r sin(theta), 0, -r cos(theta))."""
        r, th = self.range_m, self.azimuth_rad
        return np.array([r * np.sin(th), 0.0, -r * np.cos(th)])

    def plane_xy(self) -> np.ndarray:
        """2-D position (r cos(theta), r sin(theta)) used by the loss."""
        r, th = self.range_m, self.azimuth_rad
        return np.array([r * np.cos(th), r * np.sin(th)])


def array_response(geometry: SimGeometry, position: UePosition) -> np.ndarray:
    """Near-field steering vector of the first layer for a point source.

    Entry m is exp(-j k (r - r_m)) / sqrt(M) with r the distance from
    the source to the layer center and r_m the distance to cell m.  The
    result has unit Euclidean norm by construction.
    """
    cells = geometry.cell_positions[0]
    p = position.cartesian()
    r_m = np.sqrt(np.sum((cells - p) ** 2, axis=1))
    k = geometry.wavenumber
    m = geometry.num_cells
    return np.exp(-1j * k * (position.range_m - r_m)) / np.sqrt(m)


def path_loss(geometry: SimGeometry, position: UePosition) -> float:
    """Free-space power path loss (4 pi r / lambda)^2."""
    return (4.0 * np.pi * position.range_m / geometry.wavelength_m) ** 2


def rician_channel(
    geometry: SimGeometry,
    position: UePosition,
    rician_factor_linear: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw one Rician channel vector between the source and layer 1.

    The line-of-sight term is the steering vector with a random common
    phase; the scattered term has i.i.d. circular complex Gaussian
    entries of variance 1/M.  The mixture is scaled so that
    E[||h||^2] = 1 / path_loss.
    """
    if rician_factor_linear < 0:
        raise ValueError("Rician factor must be nonnegative")
    m = geometry.num_cells
    gamma = rng.uniform(0.0, 2.0 * np.pi)
    nlos = (rng.standard_normal(m) + 1j * rng.standard_normal(m)) / np.sqrt(2.0 * m)
    kap = rician_factor_linear
    los = array_response(geometry, position) * np.exp(1j * gamma)
    h = np.sqrt(kap / (kap + 1.0)) * los + np.sqrt(1.0 / (kap + 1.0)) * nlos
    return h / np.sqrt(path_loss(geometry, position))


@dataclass(frozen=True)
class Scenario:
    """Source sampling region and radio parameters for dataset draws."""

    r_min_m: float = 1.0
    r_max_m: float = 3.0
    theta_max_rad: float = np.deg2rad(70.0)
    rician_factor: float = db_to_linear(20.0)
    transmit_power_w: float = dbm_to_watts(30.0)
    noise_power_w: float = dbm_to_watts(-110.0)

    def __post_init__(self):
        if not 0 < self.r_min_m < self.r_max_m:
            raise ValueError("need 0 < r_min < r_max")
        if not 0 < self.theta_max_rad <= np.deg2rad(70.0):
            raise ValueError("theta_max must be in (0, 70] degrees")
        if self.noise_power_w < 0 or self.transmit_power_w <= 0:
            raise ValueError("powers out of range")


@dataclass(frozen=True)
class ChannelSample:
    """One training/evaluation draw: position, channel, observed field."""

    position: UePosition
    channel: np.ndarray
    input_field: np.ndarray
    noise_power: float
    pilot: complex


def draw_sample(
    geometry: SimGeometry, scenario: Scenario, rng: np.random.Generator
) -> ChannelSample:
    """Draw a uniform position, its channel, and the noisy layer-1 field.

    The pilot is the real amplitude sqrt(P_T); the observed field is
    h * pilot plus circular complex Gaussian noise of per-entry variance
    ``noise_power_w``.
    """
    r = rng.uniform(scenario.r_min_m, scenario.r_max_m)
    th = rng.uniform(-scenario.theta_max_rad, scenario.theta_max_rad)
    position = UePosition(range_m=r, azimuth_rad=th)
    h = rician_channel(geometry, position, scenario.rician_factor, rng)
    pilot = np.sqrt(scenario.transmit_power_w)
    m = geometry.num_cells
    noise = (rng.standard_normal(m) + 1j * rng.standard_normal(m)) * np.sqrt(
        scenario.noise_power_w / 2.0
    )
    field = h * pilot + noise
    field.setflags(write=False)
    return ChannelSample(
        position=position,
        channel=h,
        input_field=field,
        noise_power=scenario.noise_power_w,
        pilot=complex(pilot),
    )


# ---------------------------------------------------------------------------
# Binary matrix cache
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<QQ")


def save_matrix(path, matrix: np.ndarray) -> None:
    """Write a complex matrix as little-endian binary.

    Layout: two uint64 dimensions, then row-major interleaved
    real/imag float64 pairs.
    """
    arr = np.ascontiguousarray(matrix, dtype=np.complex128)
    if arr.ndim != 2:
        raise ValueError("only 2-D matrices are cached")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(arr.shape[0], arr.shape[1]))
        fh.write(arr.astype("<c16").tobytes())


def load_matrix(path) -> np.ndarray:
    """Read a matrix written by :func:`save_matrix`."""
    with open(path, "rb") as fh:
        rows, cols = _HEADER.unpack(fh.read(_HEADER.size))
        data = np.frombuffer(fh.read(), dtype="<c16")
    if data.size != rows * cols:
        raise ValueError("matrix file truncated")
    return data.astype(np.complex128).reshape(rows, cols)
