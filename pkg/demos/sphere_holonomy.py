"""Holonomy of the round sphere, three ways.

1. The C^k filtration of covariant derivatives of curvature has rank 1.
2. Parallel translates of curvature fields along curves span the same line.
3. A geodesic triangle rotates the fibre by its enclosed area.

Run with ``python3 demos/sphere_holonomy.py``.
"""

import numpy as np

from finsler_holonomy import FinslerSpace
from finsler_holonomy import holonomy_algebra as ha
from finsler_holonomy.transport import holonomy_angle, spherical_triangle_loop, transport

sphere = FinslerSpace.builtin("sphere2")
x = np.array([1.0, 1.0])

for rep in ha.ck_reports(sphere, x):
    print(f"C^{rep.extra['k']}: {len(rep.labels):3d} generators, rank {rep.rank}, gap {rep.gap:.2e}")

curves = ha.default_curve_family(sphere, x, n_segments=3, n_polylines=2)
span = ha.translated_curvature_span(sphere, x, curves)
print(f"translated curvature span over {len(curves)} curves: rank {span.rank}, gap {span.gap:.2e}")

for span_phi in (0.3, 0.7, 1.2):
    loop, area = spherical_triangle_loop(1.2, 0.2, span_phi)
    u0 = ha.indicatrix_samples(sphere, loop.start, 1)[:, 0]
    angle = holonomy_angle(sphere, loop.start, u0, transport(sphere, loop, u0, tol=1e-12).point)
    print(f"triangle with area {area:.6f}: rotation {angle:.6f}, error {abs(angle - area):.1e}")
