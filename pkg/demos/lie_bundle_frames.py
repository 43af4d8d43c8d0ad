"""Parallel frames on Lie algebra bundles.

An ad-valued connection on so(3) transports brackets to brackets.  A
connection that is not a derivation does not, and the structure constants
drift in its parallel frame.

Run with ``python3 demos/lie_bundle_frames.py``.
"""

from finsler_holonomy import lie_bundle as lb
from finsler_holonomy.transport import Curve

curve = Curve.polyline([[0.0, 0.0], [0.5, 0.2], [0.1, 0.7], [-0.4, 0.1]])
for model in (lb.so3_ad_model(), lb.non_derivation_model()):
    print(
        f"{model.name:15s} lie residual {lb.lie_connection_residual(model, [0.1, 0.2], 0):.1e}  "
        f"bracket defect {lb.transport_bracket_check(model, curve):.1e}  "
        f"constant drift {lb.structure_constant_drift(model, curve):.1e}"
    )
