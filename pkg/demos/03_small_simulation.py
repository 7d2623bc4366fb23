"""Run a small end-to-end simulation and compare against the prediction.

A coarse mesh (about 320 triangles) on the rectangle with a relatively
large epsilon keeps this demo under a minute.  The solver runs the
moving-mesh finite-element discretization to quenching, extracts the
touchdown trough, and checks it against the purely geometric
prediction.  Production runs in the test suite use 6240+ triangles.

Run:  python3 demos/03_small_simulation.py
"""

import math

from quenchmesh.geometry import preset_domain
from quenchmesh.profiles import profile_constants, solve_w0, solve_w1bar
from quenchmesh.skeleton import predict_touchdown
from quenchmesh.timeint import run_simulation, touchdown_troughs

domain = preset_domain("rect")
eps = 0.1

result = run_simulation(domain, eps, target_N=320)
print(f"quenched = {result.quenched}  at t = {result.t_final:.4f} "
      f"(flat-state bound is 1/3)")

troughs = touchdown_troughs(result.mesh, result.U)
for trough in troughs:
    x, y = trough.location
    print(f"touchdown point ({x:+.4f}, {y:+.4f})  u = {trough.value:.4f}")

w0 = solve_w0()
constants = profile_constants(w0, solve_w1bar(w0))
pred = predict_touchdown(domain, eps, constants, grid_h=0.02)
px, py = pred.points[0]
tx, ty = troughs[0].location
gap = math.hypot(tx - px, ty - py)
print(f"predicted ({px:+.4f}, {py:+.4f})  regime={pred.regime}  "
      f"distance to simulated trough = {gap:.4f}")
