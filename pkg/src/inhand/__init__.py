"""Planar in-hand manipulation workbench.

A quasistatic sliding-friction simulator, a tactile observation surrogate,
a discrete Viterbi pose tracker, and a factor-graph smoother-controller,
wired into a closed-loop scenario harness.
"""

from .geometry import (
    GroundLine,
    ObjectModel,
    Pose2,
    Twist2,
    Wrench2,
    between,
    closest_point_to_ground,
    compose,
    inverse,
    lever_arm,
    load_object,
    log_residual,
)

__version__ = "0.1.0"
