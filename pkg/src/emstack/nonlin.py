"""Passive RF nonlinearities and their envelope-domain equivalents.

A memoryless device with bandpass response F acting on a narrowband
carrier, followed by fundamental-harmonic filtering, behaves in the
complex baseband as a phase-preserving amplitude map

    sigma(x) = C[|x|] * exp(j arg x),
    C[v] = (2 / pi) * integral_0^pi F[v cos(phi)] cos(phi) dphi.

This module provides the bandpass device models, the C[v] integral with
a catalog of closed forms, a transcendental solver for a diode-coupled
antenna cell, tabulation of diode-derived activations, and the ReLU
surrogate fit used by the trainable network.

Bias convention: a cell's operating point is shifted by adding a bias
b <= 0 to the instantaneous input, F_b[s] = F[s + b], which moves the
activation knee to higher envelopes.  Activation objects take the bias
as an extra argument so one family serves a whole layer of cells.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.optimize import minimize_scalar

QUADRATURE_ABS_TOL = 1e-9
DIODE_RESIDUAL_TOL = 1e-12

# exp() overflows float64 beyond ~709; saturate the diode branch there
_EXP_CLIP = 700.0


class QuadratureError(RuntimeError):
    """Raised when the adaptive integral misses its error target."""

    def __init__(self, message, achieved_error):
        super().__init__(f"{message} (achieved error estimate {achieved_error:.3e})")
        self.achieved_error = achieved_error


# ---------------------------------------------------------------------------
# Bandpass device models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiodeCircuitParams:
    """Constants of the diode-coupled antenna cell.

    ``alpha_per_volt`` lumps thermal voltage and doping; the default
    antenna resistance is the half-wave dipole value.  ``bias_volts``
    shifts the operating point and must be <= 0.
    """

    alpha_per_volt: float
    saturation_current_a: float = 1e-6
    antenna_resistance_ohm: float = 73.0
    bias_volts: float = 0.0

    def __post_init__(self):
        if self.saturation_current_a <= 0 or self.alpha_per_volt <= 0:
            raise ValueError("saturation current and alpha must be positive")
        if self.antenna_resistance_ohm <= 0:
            raise ValueError("antenna resistance must be positive")
        if self.bias_volts > 0:
            raise ValueError("bias must be <= 0")


class BandpassNL:
    """Memoryless instantaneous response F[v] of one device."""

    def __call__(self, v):
        raise NotImplementedError

    def phase_breakpoints(self, amplitude: float):
        """Angles in (0, pi) where F[v cos(phi)] cos(phi) is non-smooth."""
        return ()

    def closed_form(self) -> "Activation":
        raise ValueError(f"{type(self).__name__} has no closed-form envelope map")


class Relu(BandpassNL):
    def __call__(self, v):
        return np.maximum(v, 0.0)

    def phase_breakpoints(self, amplitude):
        return (np.pi / 2.0,) if amplitude > 0 else ()

    def closed_form(self):
        return ShiftedReluLowpass(shift=0.0)


class ShiftedRelu(BandpassNL):
    """F[v] = max(v + a, 0) for a real threshold offset a."""

    def __init__(self, a: float):
        self.a = float(a)

    def __call__(self, v):
        return np.maximum(v + self.a, 0.0)

    def phase_breakpoints(self, amplitude):
        if amplitude <= 0 or abs(self.a) >= amplitude:
            return ()
        return (math.acos(-self.a / amplitude),)

    def closed_form(self):
        return ShiftedReluLowpass(shift=self.a)


class AbsoluteValue(BandpassNL):
    def __call__(self, v):
        return np.abs(v)

    def phase_breakpoints(self, amplitude):
        return (np.pi / 2.0,) if amplitude > 0 else ()

    def closed_form(self):
        # even response: no fundamental-harmonic output
        return ZeroActivation()


class Sign(BandpassNL):
    def __call__(self, v):
        return np.sign(v)

    def phase_breakpoints(self, amplitude):
        return (np.pi / 2.0,) if amplitude > 0 else ()

    def closed_form(self):
        return ConstantAmplitude(level=4.0 / np.pi)


class OddPower(BandpassNL):
    """F[v] = v**n.  The envelope map vanishes for even n.

    For odd n the defining integral gives
    C[v] = binom(n+1, (n+1)/2) / 2**n * v**n, which is the default.
    A published catalog instead lists the amplitude coefficient as
    binom(n, (n+1)/2) / 2**n (half the integral's value, e.g. C[v] = v/2
    for n = 1 where the integral yields v); pass
    ``use_catalog_coefficient=True`` to reproduce that variant.
    """

    def __init__(self, n: int, use_catalog_coefficient: bool = False):
        if n < 1 or n != int(n):
            raise ValueError("exponent must be a positive integer")
        self.n = int(n)
        self.use_catalog_coefficient = use_catalog_coefficient

    def __call__(self, v):
        return np.asarray(v) ** self.n

    def closed_form(self):
        n = self.n
        if n % 2 == 0:
            raise ValueError("even powers have no closed-form entry; their envelope map is zero")
        if self.use_catalog_coefficient:
            coeff = math.comb(n, (n + 1) // 2) / 2.0 ** n
        else:
            coeff = math.comb(n + 1, (n + 1) // 2) / 2.0 ** n
        return PowerLowpass(exponent=n, coefficient=coeff)


class DiodeCircuit(BandpassNL):
    """Instantaneous response of the diode-coupled cell, from Kirchhoff's laws."""

    def __init__(self, params: DiodeCircuitParams):
        self.params = params

    def __call__(self, v):
        return diode_bandpass_response(self.params, v)


# ---------------------------------------------------------------------------
# Diode transcendental solver
# ---------------------------------------------------------------------------


def diode_bandpass_response(params: DiodeCircuitParams, instantaneous_input):
    """Transmitted voltage u solving u = R_A I_s (exp(2 alpha (s - u)) - 1).

    The bias, when nonzero, is folded into the input as s + b.  The
    unique root lies in [-R_A I_s, max(0, 2 s)]; it is found by Newton
    on the log form 2 alpha (s - u) + ln(R_A I_s) - ln(u + R_A I_s) = 0
    (immune to exp overflow), safeguarded by bisection, to absolute
    residual <= 1e-12 on the original equation (or to the nearest
    representable root when float64 conditioning caps the residual,
    which only happens for inputs far beyond physical volt scales).
    Deep-cutoff inputs, where u + R_A I_s would underflow, short-circuit
    to the saturation expansion u = R_A I_s (exp(2 alpha (s + R_A I_s)) - 1).
    """
    arr = np.asarray(instantaneous_input, dtype=float)
    if arr.ndim == 0:
        return _diode_solve_scalar(params, float(arr))
    flat = np.array([_diode_solve_scalar(params, s) for s in arr.ravel()])
    return flat.reshape(arr.shape)


def _diode_solve_scalar(params: DiodeCircuitParams, s: float) -> float:
    if not math.isfinite(s):
        raise ValueError("diode input must be finite")
    s_eff = s + params.bias_volts
    ri = params.antenna_resistance_ohm * params.saturation_current_a
    alpha2 = 2.0 * params.alpha_per_volt
    log_ri = math.log(ri)
    x_at_floor = alpha2 * (s_eff + ri)
    if x_at_floor <= math.log(DIODE_RESIDUAL_TOL) + abs(log_ri):
        return -ri + ri * math.exp(x_at_floor)
    lo, hi = -ri, max(0.0, 2.0 * s_eff)

    def log_form(u):
        return alpha2 * (s_eff - u) + log_ri - math.log(u + ri)

    u = min(max(0.0, lo), hi)
    if u + ri <= 0.0:
        u = 0.5 * (lo + hi)
    for _ in range(200):
        h = log_form(u)
        # exact identity: residual of the original equation (only worth
        # evaluating once h is small; math.expm1 overflows near 710)
        if abs(h) < 1.0 and abs((u + ri) * math.expm1(h)) <= DIODE_RESIDUAL_TOL:
            return u
        if h > 0:
            lo = u
        else:
            hi = u
        # bracket exhausted at float resolution: u is the representable root
        if hi - lo <= 4.0 * np.finfo(float).eps * max(abs(lo), abs(hi), 1.0):
            return u
        slope = -alpha2 - 1.0 / (u + ri)
        u_new = u - h / slope
        if not (lo < u_new <= hi) or u_new == u:
            u_new = 0.5 * (lo + hi)
        u = u_new
    raise AssertionError(f"diode solver stalled for input {s!r}")


# ---------------------------------------------------------------------------
# Envelope activations
# ---------------------------------------------------------------------------


def _scalar_or_array(p):
    return np.asarray(p, dtype=float) if np.ndim(p) else float(p)


class Activation:
    """Envelope amplitude map C[v] with derivatives, applied phase-preserving.

    ``value`` and ``derivative`` broadcast over amplitude and bias
    arrays.  ``bias_derivative`` returns None for families whose
    operating point is frozen at construction; the backward pass treats
    that as "bias not trainable here".
    """

    supports_bias = False

    def value(self, v, bias=0.0):
        raise NotImplementedError

    def derivative(self, v, bias=0.0):
        raise NotImplementedError

    def bias_derivative(self, v, bias=0.0):
        return None

    def apply(self, x, bias=0.0):
        """sigma(x) = C[|x|] exp(j arg x); exactly 0 at x = 0."""
        x = np.asarray(x, dtype=complex)
        rho = np.abs(x)
        out = np.zeros_like(x)
        nz = rho > 0.0
        c = np.broadcast_to(np.asarray(self.value(rho, bias), dtype=float), x.shape)
        np.divide(x, rho, out=out, where=nz)
        out *= c
        return out

    def _require_zero_bias(self, bias):
        if np.any(np.asarray(bias) != 0.0):
            raise NotImplementedError(f"{type(self).__name__} has no operating-point shift")


class ScaledLinear(Activation):
    """C[v] = gain * v.  An input bias on a linear device cancels out of
    the fundamental harmonic, so the bias argument is a no-op."""

    supports_bias = True

    def __init__(self, gain: float):
        self.gain = float(gain)

    def value(self, v, bias=0.0):
        return self.gain * np.asarray(v, dtype=float)

    def derivative(self, v, bias=0.0):
        return np.broadcast_to(self.gain, np.shape(v)).astype(float, copy=False)

    def bias_derivative(self, v, bias=0.0):
        return np.zeros(np.broadcast_shapes(np.shape(v), np.shape(bias)))


class ZeroActivation(Activation):
    """Identically zero output (even bandpass response)."""

    def value(self, v, bias=0.0):
        self._require_zero_bias(bias)
        return np.zeros(np.shape(v))

    def derivative(self, v, bias=0.0):
        self._require_zero_bias(bias)
        return np.zeros(np.shape(v))


class ConstantAmplitude(Activation):
    """C[v] = level for v > 0, 0 at v = 0 (hard-limiter response)."""

    def __init__(self, level: float):
        self.level = float(level)

    def value(self, v, bias=0.0):
        self._require_zero_bias(bias)
        v = np.asarray(v, dtype=float)
        return np.where(v > 0.0, self.level, 0.0)

    def derivative(self, v, bias=0.0):
        self._require_zero_bias(bias)
        return np.zeros(np.shape(v))


class PowerLowpass(Activation):
    """C[v] = coefficient * v**exponent."""

    def __init__(self, exponent: int, coefficient: float):
        self.exponent = int(exponent)
        self.coefficient = float(coefficient)

    def value(self, v, bias=0.0):
        self._require_zero_bias(bias)
        return self.coefficient * np.asarray(v, dtype=float) ** self.exponent

    def derivative(self, v, bias=0.0):
        self._require_zero_bias(bias)
        n = self.exponent
        v = np.asarray(v, dtype=float)
        if n == 1:
            return np.full(v.shape, self.coefficient)
        return self.coefficient * n * v ** (n - 1)


class ShiftedReluLowpass(Activation):
    """Exact envelope map of a (shifted) half-wave rectifier.

    With effective threshold a = shift + bias:

        C[v] = (1 + sgn a)/2 * v                       for v <= |a|
        C[v] = (v arccos(-a/v) + a sqrt(v^2-a^2)/v)/pi for v >  |a|

    times an overall gain.  Continuously differentiable in both v and
    the bias across the branch point.  ``shift`` and ``gain`` may be
    arrays so one object serves a whole layer of per-cell devices.
    """

    supports_bias = True

    def __init__(self, shift=0.0, gain=1.0):
        self.shift = _scalar_or_array(shift)
        self.gain = _scalar_or_array(gain)

    def _branches(self, v, bias):
        shape = np.broadcast_shapes(
            np.shape(v), np.shape(bias), np.shape(self.shift), np.shape(self.gain)
        )
        vv = np.broadcast_to(np.asarray(v, dtype=float), shape).ravel()
        aa = np.broadcast_to(self.shift + np.asarray(bias, dtype=float), shape).ravel()
        return shape, vv, aa, vv > np.abs(aa)

    @staticmethod
    def _restore(out, shape):
        return out.reshape(shape) if shape else float(out[0])

    def value(self, v, bias=0.0):
        shape, vv, aa, above = self._branches(v, bias)
        out = np.where(aa > 0, vv, np.where(aa < 0, 0.0, 0.5 * vv))
        if above.any():
            vb, ab = vv[above], aa[above]
            arg = np.clip(-ab / vb, -1.0, 1.0)
            root = np.sqrt(np.maximum(vb ** 2 - ab ** 2, 0.0))
            out[above] = (vb * np.arccos(arg) + ab * root / vb) / np.pi
        return self.gain * self._restore(out, shape)

    def derivative(self, v, bias=0.0):
        shape, vv, aa, above = self._branches(v, bias)
        out = np.where(aa > 0, 1.0, np.where(aa < 0, 0.0, 0.5))
        if above.any():
            vb, ab = vv[above], aa[above]
            arg = np.clip(-ab / vb, -1.0, 1.0)
            root = np.sqrt(np.maximum(vb ** 2 - ab ** 2, 0.0))
            out[above] = (np.arccos(arg) - ab * root / vb ** 2) / np.pi
        return self.gain * self._restore(out, shape)

    def bias_derivative(self, v, bias=0.0):
        shape, vv, aa, above = self._branches(v, bias)
        out = np.zeros(vv.shape)
        if above.any():
            vb, ab = vv[above], aa[above]
            root = np.sqrt(np.maximum(vb ** 2 - ab ** 2, 0.0))
            out[above] = (2.0 / np.pi) * root / vb
        return self.gain * self._restore(out, shape)


class FittedRelu(Activation):
    """Piecewise-linear surrogate C[v] = gain * max(v - knee, 0).

    This is the numerically cheap stand-in for a diode-derived curve.
    A bias b shifts the knee to knee - b (rightward for b < 0).  At the
    knee itself the derivative takes the midpoint value gain/2.  Both
    parameters may be per-cell arrays.
    """

    supports_bias = True

    def __init__(self, gain, knee=0.0):
        self.gain = _scalar_or_array(gain)
        self.knee = _scalar_or_array(knee)

    def _excess(self, v, bias):
        return np.asarray(v, dtype=float) - (self.knee - np.asarray(bias, dtype=float))

    def value(self, v, bias=0.0):
        return self.gain * np.maximum(self._excess(v, bias), 0.0)

    def derivative(self, v, bias=0.0):
        e = self._excess(v, bias)
        return self.gain * (np.where(e > 0, 1.0, 0.0) + np.where(e == 0, 0.5, 0.0))

    def bias_derivative(self, v, bias=0.0):
        e = self._excess(v, bias)
        return self.gain * (np.where(e > 0, 1.0, 0.0) + np.where(e == 0, 0.5, 0.0))


class TabulatedActivation(Activation):
    """C[v] sampled on a fixed grid with piecewise-linear interpolation.

    The derivative is the segment slope between knots and the average of
    the adjacent slopes at a knot.  Beyond the last knot the value is
    clamped and the derivative is zero.  The operating point is frozen
    at tabulation time, so there is no bias derivative.
    """

    def __init__(self, grid: np.ndarray, values: np.ndarray):
        grid = np.asarray(grid, dtype=float)
        values = np.asarray(values, dtype=float)
        if grid.ndim != 1 or grid.shape != values.shape or grid.size < 2:
            raise ValueError("need matching 1-D grid and values with >= 2 points")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        self.grid = grid
        self.values = values
        self._slopes = np.diff(values) / np.diff(grid)
        knot = np.empty_like(grid)
        knot[0] = self._slopes[0]
        knot[-1] = 0.0  # clamped top end
        knot[1:-1] = 0.5 * (self._slopes[:-1] + self._slopes[1:])
        self._knot_slopes = knot

    def value(self, v, bias=0.0):
        self._require_zero_bias(bias)
        return np.interp(np.asarray(v, dtype=float), self.grid, self.values)

    def derivative(self, v, bias=0.0):
        self._require_zero_bias(bias)
        flat = np.atleast_1d(np.asarray(v, dtype=float))
        idx = np.clip(np.searchsorted(self.grid, flat, side="right") - 1, 0, self._slopes.size - 1)
        out = self._slopes[idx].astype(float)
        out[flat >= self.grid[-1]] = 0.0
        knot_idx = np.searchsorted(self.grid, flat)
        on_knot = (knot_idx < self.grid.size) & (
            self.grid[np.minimum(knot_idx, self.grid.size - 1)] == flat
        )
        out[on_knot] = self._knot_slopes[knot_idx[on_knot]]
        return out.reshape(np.shape(v)) if np.ndim(v) else float(out[0])


class TabulatedActivationSet(Activation):
    """Per-cell tabulated curves sharing one amplitude grid.

    ``values`` has shape (num_cells, grid size); amplitude inputs must
    have num_cells as their trailing axis.  Interpolation, knot and
    extrapolation semantics match :class:`TabulatedActivation` row-wise.
    """

    def __init__(self, grid: np.ndarray, values: np.ndarray):
        grid = np.asarray(grid, dtype=float)
        values = np.asarray(values, dtype=float)
        if grid.ndim != 1 or values.ndim != 2 or values.shape[1] != grid.size:
            raise ValueError("values must be (num_cells, len(grid))")
        if grid.size < 2 or np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly increasing with >= 2 points")
        self.grid = grid
        self.values = values
        self._slopes = np.diff(values, axis=1) / np.diff(grid)
        knot = np.empty_like(values)
        knot[:, 0] = self._slopes[:, 0]
        knot[:, -1] = 0.0
        knot[:, 1:-1] = 0.5 * (self._slopes[:, :-1] + self._slopes[:, 1:])
        self._knot_slopes = knot

    @property
    def num_cells(self) -> int:
        return self.values.shape[0]

    def _locate(self, v):
        v = np.asarray(v, dtype=float)
        if v.ndim == 0 or v.shape[-1] != self.num_cells:
            raise ValueError("trailing axis must index the cells")
        seg = np.clip(np.searchsorted(self.grid, v, side="right") - 1, 0, self._slopes.shape[1] - 1)
        cells = np.arange(self.num_cells)
        return v, seg, cells

    def value(self, v, bias=0.0):
        self._require_zero_bias(bias)
        v, seg, cells = self._locate(v)
        left = self.grid[seg]
        t = np.clip((v - left) / (self.grid[seg + 1] - left), 0.0, 1.0)
        v0 = self.values[cells, seg]
        v1 = self.values[cells, seg + 1]
        return v0 * (1.0 - t) + v1 * t

    def derivative(self, v, bias=0.0):
        self._require_zero_bias(bias)
        v, seg, cells = self._locate(v)
        out = self._slopes[cells, seg]
        out = np.where(v >= self.grid[-1], 0.0, out)
        knot_idx = np.searchsorted(self.grid, v)
        safe = np.minimum(knot_idx, self.grid.size - 1)
        on_knot = (knot_idx < self.grid.size) & (self.grid[safe] == v)
        return np.where(on_knot, self._knot_slopes[cells, safe], out)


# ---------------------------------------------------------------------------
# Envelope integral
# ---------------------------------------------------------------------------


def lowpass_from_bandpass(nl: BandpassNL, amplitude: float) -> float:
    """Evaluate C[v] = (2/pi) * int_0^pi F[v cos(phi)] cos(phi) dphi.

    Adaptive quadrature to absolute tolerance 1e-9, with the device's
    known kink angles passed as subdivision points.

    Raises
    ------
    QuadratureError
        If the integrator's error estimate exceeds the tolerance.
    """
    v = float(amplitude)
    if not math.isfinite(v):
        raise ValueError("amplitude must be finite")

    def integrand(phi):
        return float(nl(v * math.cos(phi))) * math.cos(phi)

    points = [p for p in nl.phase_breakpoints(abs(v)) if 0.0 < p < np.pi]
    val, err = quad(
        integrand,
        0.0,
        np.pi,
        points=points or None,
        epsabs=QUADRATURE_ABS_TOL,
        epsrel=0.0,
        limit=200,
    )
    if err > 50 * QUADRATURE_ABS_TOL:
        raise QuadratureError("envelope integral did not converge", err)
    return 2.0 / np.pi * val


def closed_form_lowpass(nl: BandpassNL) -> Activation:
    """Catalog closed form of the envelope map for supported devices."""
    return nl.closed_form()


# ---------------------------------------------------------------------------
# Diode activation tabulation and the ReLU surrogate fit
# ---------------------------------------------------------------------------


def tabulation_grid(v_max: float, n_points: int = 512, log_floor: float = 1e-8) -> np.ndarray:
    """Amplitude grid: a short linear run up to ``log_floor``, then
    log-spaced to ``v_max``.  Envelopes span decades after path loss, so
    most resolution goes to the logarithmic part."""
    if v_max <= log_floor:
        return np.linspace(0.0, v_max, n_points)
    n_lin = max(4, n_points // 64)
    lin = np.linspace(0.0, log_floor, n_lin, endpoint=False)
    log = np.geomspace(log_floor, v_max, n_points - n_lin)
    return np.concatenate([lin, log])


def _gauss_legendre_nodes(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    phi = (x + 1.0) * (np.pi / 2.0)
    return phi, w * (np.pi / 2.0)


def _diode_response_grid(params: DiodeCircuitParams, s: np.ndarray) -> np.ndarray:
    """Vectorized diode solve to the same residual tolerance as the
    scalar path (masked log-form Newton with bisection safeguard)."""
    s_eff = s + params.bias_volts
    ri = params.antenna_resistance_ohm * params.saturation_current_a
    alpha2 = 2.0 * params.alpha_per_volt
    log_ri = math.log(ri)
    x_floor = alpha2 * (s_eff + ri)
    cutoff = x_floor <= math.log(DIODE_RESIDUAL_TOL) + abs(log_ri)

    lo = np.full(s_eff.shape, -ri)
    hi = np.maximum(0.0, 2.0 * s_eff)
    u = np.clip(0.0, lo, hi)
    resid = np.zeros(s_eff.shape)

    def log_form(u):
        return alpha2 * (s_eff - u) + log_ri - np.log(u + ri)

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        eps = np.finfo(float).eps
        for _ in range(200):
            h = np.where(cutoff, 0.0, log_form(u))
            resid = (u + ri) * np.expm1(h)
            exhausted = hi - lo <= 4.0 * eps * np.maximum(np.maximum(np.abs(lo), np.abs(hi)), 1.0)
            active = ~cutoff & ~exhausted & (np.abs(resid) > DIODE_RESIDUAL_TOL)
            if not np.any(active):
                break
            lo = np.where(active & (h > 0), u, lo)
            hi = np.where(active & (h <= 0), u, hi)
            slope = -alpha2 - 1.0 / (u + ri)
            newton = u - h / slope
            ok = np.isfinite(newton) & (newton > lo) & (newton <= hi) & (newton != u)
            u = np.where(active, np.where(ok, newton, 0.5 * (lo + hi)), u)
        else:
            raise AssertionError("vectorized diode solve stalled")
    return np.where(cutoff, -ri + ri * np.exp(np.minimum(x_floor, 0.0)), u)


def diode_activation(
    params: DiodeCircuitParams,
    v_max: float = 1.0,
    n_points: int = 2048,
    quadrature_nodes: int = 129,
) -> TabulatedActivation:
    """Tabulate the diode cell's envelope map C[v] on [0, v_max].

    Each grid amplitude is pushed through the transcendental cell
    response and the envelope integral; the integral uses fixed
    Gauss-Legendre nodes (the composed integrand is smooth).  The
    512-point floor keeps linear interpolation honest; the denser
    default holds interpolation error near 1e-5 relative around the
    knee, where the curve bends fastest.
    """
    if n_points < 512 or v_max <= 0:
        raise ValueError("need v_max > 0 and at least 512 grid points")
    grid = tabulation_grid(v_max, n_points)
    phi, w = _gauss_legendre_nodes(quadrature_nodes)
    # arguments matrix: grid amplitude x quadrature node
    args = grid[:, None] * np.cos(phi)[None, :]
    f = _diode_response_grid(params, args)
    c = (2.0 / np.pi) * (f * np.cos(phi)[None, :]) @ w
    # at v = 0 the integrand is a constant times cos(phi): exactly zero,
    # not the ~1e-21 quadrature roundoff
    c[grid == 0.0] = 0.0
    return TabulatedActivation(grid, c)


@dataclass(frozen=True)
class ReluFit:
    """Least-squares ReLU surrogate g * max(v - knee, 0) of a curve."""

    gain: float
    knee: float
    residual_rms: float

    def activation(self) -> FittedRelu:
        return FittedRelu(gain=self.gain, knee=self.knee)


def fit_relu_approximation(activation: Activation, amplitude_range) -> ReluFit:
    """Fit g * max(v - a, 0) to an activation over an amplitude range.

    The knee is found by a bounded 1-D search (the gain is a closed-form
    least-squares solution for each candidate knee).  Rejects degenerate
    inputs: an empty or zero-width range, or an identically zero curve.
    """
    lo, hi = float(amplitude_range[0]), float(amplitude_range[1])
    if not hi > lo:
        raise ValueError("amplitude range must have positive width")
    if isinstance(activation, TabulatedActivation):
        grid = activation.grid[(activation.grid >= lo) & (activation.grid <= hi)]
        if grid.size < 8:
            grid = np.linspace(lo, hi, 256)
    else:
        grid = np.linspace(lo, hi, 256)
    c = np.asarray(activation.value(grid), dtype=float)
    scale = float(np.max(np.abs(c)))
    if scale == 0.0:
        raise ValueError("cannot fit a ReLU to an identically zero activation")

    def fit_at(knee):
        m = np.maximum(grid - knee, 0.0)
        denom = float(m @ m)
        if denom == 0.0:
            return 0.0, float(np.sqrt(np.mean(c ** 2)))
        g = float(m @ c) / denom
        return g, float(np.sqrt(np.mean((c - g * m) ** 2)))

    candidates = np.linspace(lo, hi, 200, endpoint=False)
    rms = np.array([fit_at(a)[1] for a in candidates])
    best = candidates[int(np.argmin(rms))]
    span = (hi - lo) / 199.0
    res = minimize_scalar(
        lambda a: fit_at(a)[1],
        bounds=(max(lo, best - 2 * span), min(hi, best + 2 * span)),
        method="bounded",
        options={"xatol": 1e-10},
    )
    knee = float(res.x) if res.fun <= rms.min() else float(best)
    gain, err = fit_at(knee)
    return ReluFit(gain=gain, knee=knee, residual_rms=err)


def apply_activation(activation: Activation, x, bias=0.0):
    """Phase-preserving complex application of an envelope map."""
    return activation.apply(x, bias)


# ---------------------------------------------------------------------------
# Cell population sampling
# ---------------------------------------------------------------------------


def sample_static_alphas(count: int, alpha_range, rng: np.random.Generator) -> np.ndarray:
    """Fabrication-time diode parameter draws, uniform on [min, max]."""
    lo, hi = float(alpha_range[0]), float(alpha_range[1])
    if lo > hi:
        raise ValueError("alpha range must satisfy min <= max")
    if lo == hi:
        return np.full(count, lo)
    return rng.uniform(lo, hi, size=count)


def sample_trainable_bias_init(
    count: int, rng: np.random.Generator, scale: float = 1e-5
) -> np.ndarray:
    """Half-normal non-positive bias init: -|N(0,1)| * scale."""
    return -np.abs(rng.standard_normal(count)) * scale


# ---------------------------------------------------------------------------
# Table export and serialization
# ---------------------------------------------------------------------------


def export_activation_table(activation: Activation, path, amplitudes) -> None:
    """Write (amplitude, C, dC/dv) rows as CSV for curve plotting."""
    v = np.asarray(amplitudes, dtype=float)
    c = np.asarray(activation.value(v), dtype=float)
    dc = np.asarray(activation.derivative(v), dtype=float)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("amplitude,C,dC_dv\n")
        for row in zip(v, c, dc):
            fh.write(f"{float(row[0])!r},{float(row[1])!r},{float(row[2])!r}\n")


def _param_to_json(p):
    return p.tolist() if isinstance(p, np.ndarray) else p


def activation_to_dict(activation: Activation) -> dict:
    """JSON-ready descriptor of an activation (for checkpoints).

    Scalar and per-cell array parameters both round-trip; arrays come
    back as arrays, scalars as scalars.
    """
    if isinstance(activation, ScaledLinear):
        return {"kind": "scaled_linear", "gain": activation.gain}
    if isinstance(activation, ZeroActivation):
        return {"kind": "zero"}
    if isinstance(activation, ConstantAmplitude):
        return {"kind": "constant_amplitude", "level": activation.level}
    if isinstance(activation, PowerLowpass):
        return {
            "kind": "power",
            "exponent": activation.exponent,
            "coefficient": activation.coefficient,
        }
    if isinstance(activation, ShiftedReluLowpass):
        return {
            "kind": "shifted_relu_lowpass",
            "shift": _param_to_json(activation.shift),
            "gain": _param_to_json(activation.gain),
        }
    if isinstance(activation, FittedRelu):
        return {
            "kind": "fitted_relu",
            "gain": _param_to_json(activation.gain),
            "knee": _param_to_json(activation.knee),
        }
    if isinstance(activation, TabulatedActivationSet):
        return {
            "kind": "tabulated_set",
            "grid": activation.grid.tolist(),
            "values": activation.values.tolist(),
        }
    if isinstance(activation, TabulatedActivation):
        return {
            "kind": "tabulated",
            "grid": activation.grid.tolist(),
            "values": activation.values.tolist(),
        }
    raise TypeError(f"cannot serialize activation {type(activation).__name__}")


def activation_from_dict(desc: dict) -> Activation:
    """Inverse of :func:`activation_to_dict`."""
    kind = desc["kind"]
    if kind == "scaled_linear":
        return ScaledLinear(gain=desc["gain"])
    if kind == "zero":
        return ZeroActivation()
    if kind == "constant_amplitude":
        return ConstantAmplitude(level=desc["level"])
    if kind == "power":
        return PowerLowpass(exponent=desc["exponent"], coefficient=desc["coefficient"])
    if kind == "shifted_relu_lowpass":
        return ShiftedReluLowpass(shift=desc["shift"], gain=desc["gain"])
    if kind == "fitted_relu":
        return FittedRelu(gain=desc["gain"], knee=desc["knee"])
    if kind == "tabulated_set":
        return TabulatedActivationSet(np.array(desc["grid"]), np.array(desc["values"]))
    if kind == "tabulated":
        return TabulatedActivation(np.array(desc["grid"]), np.array(desc["values"]))
    raise ValueError(f"unknown activation kind {kind!r}")
