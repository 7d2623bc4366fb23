"""Solve the boundary-layer profiles and print the key constants.

The touchdown prediction machinery rests on two one-dimensional
profiles: the leading-order wall layer w0(z) and its first correction
w1bar(z).  This demo solves both, reports the constants that govern
merge-point ranking, and writes the profiles to CSV.

Run:  python3 demos/01_layer_profiles.py
"""

from quenchmesh.profiles import (
    export_profile_csv,
    profile_constants,
    solve_w0,
    solve_w1bar,
    wkb_envelope_fit,
)

w0 = solve_w0()
w1bar = solve_w1bar(w0)
constants = profile_constants(w0, w1bar)

print("layer-profile constants")
print(f"  z0 (location of the w0 minimum)     = {constants.z0:.5f}")
print(f"  w0(z0)                              = {constants.w0_at_z0:.5f}")
print(f"  w1bar(z0)                           = {constants.w1bar_at_z0:.5f}")
print(f"  alpha (ranking coefficient)         = {constants.alpha:.5f}")

slope = wkb_envelope_fit(w0)
print(f"  oscillation decay rate (fit)        = {slope:.5f}")
print(f"  oscillation decay rate (analytic)   = {constants.wkb_rate:.5f}")

for profile, name in ((w0, "w0"), (w1bar, "w1bar")):
    path = f"profile_{name}.csv"
    export_profile_csv(profile, path)
    print(f"wrote {path}")
