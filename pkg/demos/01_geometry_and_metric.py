"""Lines, intersections and the consistency error.

Run: python demos/01_geometry_and_metric.py
"""
import numpy as np

from dvpnet.geometry import (consistency_error, d_rms, d_rms_bruteforce, discretize, line_through,
                             segment_intersection)

# Two labeled road edges; their extensions meet at the vanishing point.
left = ((10.0, 120.0), (50.0, 70.0))
right = ((118.0, 120.0), (80.0, 70.0))
vp = segment_intersection(left, right)
print("vanishing point:", vp)

# Homogeneous lines carry a unit normal, so |a x + b y + c| is a distance.
a, b, c = line_through(*left)
print("line through the left edge: %.4f x + %.4f y + %.4f = 0" % (a, b, c))

# The residual of an edge against the best line through a candidate vp is
# the square root of the smaller eigenvalue of its second-moment matrix.
E = [(1, 1), (2, -1), (3, 0)]
print("closed form  d_rms = %.6f" % d_rms(E, (0, 0)))
print("angle sweep  d_rms = %.6f" % d_rms_bruteforce(E, (0, 0)))

# Consistency error: mean residual of the sampled edges, in percent of the
# image diagonal. Zero at the true vp, growing as the guess drifts away.
edges = [discretize(left, 64).points, discretize(right, 64).points]
for dx in (0, 2, 5, 10, 20):
    guess = (vp.x + dx, vp.y)
    print("vp shifted by %2d px -> CE %.3f" % (dx, consistency_error(edges, guess, (128, 128))))
