"""Predict touchdown locations from geometry alone, across epsilon.

For the asymmetric star-shaped domain, the predicted first-touchdown
point jumps between distinct skeleton branches as epsilon varies, and
for large epsilon collapses to a single interior point near the deepest
part of the domain.  No PDE solve is involved: everything comes from
the distance-to-boundary skeleton plus the layer-profile constants.

Run:  python3 demos/02_skeleton_prediction.py
"""

from quenchmesh.geometry import preset_domain
from quenchmesh.profiles import profile_constants, solve_w0, solve_w1bar
from quenchmesh.skeleton import (
    compute_skeleton,
    predict_touchdown,
    prediction_to_csv,
    skeleton_to_csv,
)

domain = preset_domain("polar-asym")
constants = profile_constants(solve_w0(), solve_w1bar(solve_w0()))

skeleton = compute_skeleton(domain, grid_h=0.01)
skeleton_to_csv(skeleton, "polar_asym_skeleton.csv")
print(f"skeleton: {len(skeleton.points)} points on "
      f"{len(skeleton.branches)} branches  (wrote polar_asym_skeleton.csv)")

for eps in (0.02, 0.024, 0.04, 0.092):
    pred = predict_touchdown(domain, eps, constants, skeleton=skeleton)
    top = pred.points[0]
    print(f"eps={eps:<6g} regime={pred.regime:<12s} "
          f"candidates={len(pred.points)}  top=({top[0]:+.3f}, {top[1]:+.3f})"
          + ("  [clamped to deepest skeleton point]" if pred.clamped else ""))
    prediction_to_csv(pred, f"polar_asym_prediction_eps{eps}.csv")
