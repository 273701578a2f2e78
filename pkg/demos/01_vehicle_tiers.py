"""
Kinematic and dynamic vehicle tiers
===================================

Drive the same constant steering input on both fidelity tiers and compare
the turning circles with their closed-form predictions.
"""

import math

from tracklearn.geometry import Pose2
from tracklearn.vehicle import (NOMINAL_PARAMS, VehicleState, initial_state, steady_state_yaw_rate, step_dynamic,
                                step_kinematic, turn_radius)

P = NOMINAL_PARAMS
DT = 0.05
delta = 0.1

# The kinematic tier has no tyre slip, so its CoG circle is exact.
for v in (2.0, 5.0, 10.0):
    s = initial_state(Pose2(0, 0, 0), v)
    for _ in range(100):
        s = step_kinematic(s, P, v, delta, DT)
    print(f"kinematic  v={v:4.1f} m/s  yaw rate {s.r_yaw:.4f} rad/s  radius {turn_radius(P, delta):.3f} m")

# The dynamic tier settles to the linear-tyre steady state instead.
for v in (2.0, 5.0, 10.0):
    s = VehicleState(Pose2(0, 0, 0), v_x=v)
    for _ in range(400):
        s = step_dynamic(s, P, 0.0, delta, DT)
    ref = steady_state_yaw_rate(P, v, delta)
    print(f"dynamic    v={v:4.1f} m/s  yaw rate {s.r_yaw:.4f} rad/s  linear model {ref:.4f}  "
          f"sideslip {math.degrees(math.atan2(s.v_y, s.v_x)):+.2f} deg")
