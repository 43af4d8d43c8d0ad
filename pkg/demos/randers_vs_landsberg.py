"""A Randers metric that is not Landsberg, next to metrics that are.

The Landsberg residual separates the two classes.  On the Randers metric
the C^k ranks keep growing with k, and transport stops being a fibre
isometry.  The indicatrix is still preserved.

Run with ``python3 demos/randers_vs_landsberg.py``.
"""

import numpy as np

from finsler_holonomy import FinslerSpace
from finsler_holonomy import holonomy_algebra as ha
from finsler_holonomy.cli import classify_space
from finsler_holonomy.transport import Curve, isometry_check, transport

for name in ("minkowski-quartic", "poincare-disk", "randers"):
    row = classify_space(FinslerSpace.builtin(name), 2, 8)
    print(f"{name:18s} {row['verdict']:16s} landsberg {row['landsberg_residual']:.2e}")

randers = FinslerSpace.builtin("randers")
x = np.array([0.2, 0.1])
print("randers C^k ranks:", [r.rank for r in ha.ck_reports(randers, x, k_max=5)])

curve = Curve.polyline([[-0.4, -0.3], [0.3, 0.1], [0.5, 0.6]])
u0 = ha.indicatrix_samples(randers, curve.start, 1)[:, 0]
pairs = [(np.array([1.0, 0.0]), np.array([0.0, 1.0]))]
print(f"F drift {transport(randers, curve, u0).f_drift:.1e}, "
      f"isometry defect {isometry_check(randers, curve, u0, pairs):.2e}")
