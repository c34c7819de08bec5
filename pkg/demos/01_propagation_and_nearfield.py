"""Geometry and propagation: how a stacked-surface receiver sees a
nearby transmitter.

Builds the desk-scale geometry, inspects the diffraction coupling
between consecutive layers, and shows how aperture size controls the
wavefront-curvature information that makes range observable.
"""

import numpy as np

from emstack import emfield

wavelength = emfield.SPEED_OF_LIGHT / 28e9
geom = emfield.build_geometry(
    carrier_frequency_hz=28e9,
    cells_per_side=8,
    num_layers=4,
    layer_spacing_m=3.0 * wavelength,
    output_distance_m=3.0 * wavelength,
)
print(f"carrier 28 GHz, wavelength {wavelength * 1e3:.2f} mm")
print(f"{geom.num_cells} cells per layer, {geom.num_layers} layers, "
      f"cell pitch {geom.cell_pitch_m * 1e3:.2f} mm")

w = emfield.rayleigh_sommerfeld_matrix(geom, 1, 2).entries
print(f"\nlayer 1 -> 2 coupling matrix {w.shape}, "
      f"|entry| range {np.abs(w).min():.3e} .. {np.abs(w).max():.3e}")
print("each cell feeds every cell of the next layer; magnitude falls")
print("with distance and obliquity, phase spins with path length.")

print("\naperture size vs the far-field boundary 2 D^2 / lambda:")
for side in (8, 16, 40):
    g = emfield.build_geometry(28e9, side, 1, wavelength, wavelength)
    print(f"  {side:>2d} x {side}: aperture {g.aperture_diagonal_m * 1e2:5.1f} cm, "
          f"boundary {emfield.fraunhofer_distance(g):6.2f} m")
print("the full-scale surface keeps the whole 1-3 m operating band in")
print("its radiative near field; the desk-scale one does not, which is")
print("why desk runs land at decimeters while full-scale matched")
print("filtering reaches millimeters.")

# range information = how fast the steering vector decorrelates in r
print("\nsteering-vector range correlation |<a(1 m), a(3 m)>| at 0.3 rad:")
for side in (8, 16, 40):
    g = emfield.build_geometry(28e9, side, 1, wavelength, wavelength)
    near = emfield.array_response(g, emfield.UePosition(1.0, 0.3))
    far = emfield.array_response(g, emfield.UePosition(3.0, 0.3))
    print(f"  {side:>2d} x {side}: {np.abs(np.vdot(near, far)):.4f} "
          f"(norm check {np.linalg.norm(near):.12f})")
print("smaller correlation means two ranges produce more distinct")
print("aperture fields; the link budget near 120 dB makes even the")
print("small desk-scale dip usable, just with coarser accuracy.")
