"""Independent reference computations used by the test-suite.

Nothing here imports the code under test except for plain data types.
"""

import math

import numpy as np


def sampled_los(boxes, uav, user, user_z=0.0, step=0.1):
    """LoS by marching along the segment at ``step`` metres.

    Blocked if any sample lies strictly inside a footprint and strictly below
    its roof.  Returns (los, min_roof_clearance) where the clearance is the
    smallest |z - h| over in-footprint samples (used to spot grazing cases).
    """
    a = np.array([user[0], user[1], user_z], dtype=float)
    b = np.asarray(uav, dtype=float)
    length = float(np.linalg.norm(b - a))
    n = max(2, int(math.ceil(length / step)) + 1)
    t = np.linspace(0.0, 1.0, n)
    pts = a + t[:, None] * (b - a)
    clearance = math.inf
    for xmin, ymin, xmax, ymax, h in boxes:
        inside = (pts[:, 0] > xmin) & (pts[:, 0] < xmax) & (pts[:, 1] > ymin) & (pts[:, 1] < ymax)
        if not inside.any():
            continue
        z = pts[inside, 2]
        clearance = min(clearance, float(np.min(np.abs(z - h))))
        if np.any(z < h):
            return False, clearance
    return True, clearance


def roof_clearance_exact(boxes, uav, user, user_z=0.0):
    """Smallest vertical gap between the segment and any roof it crosses.

    Evaluated at the entry/exit parameters of every crossed footprint, found by
    brute-force bisection on a fine grid rather than slab algebra.
    """
    a = np.array([user[0], user[1], user_z], dtype=float)
    b = np.asarray(uav, dtype=float)
    t = np.linspace(0.0, 1.0, 200001)
    pts = a + t[:, None] * (b - a)
    best = math.inf
    for xmin, ymin, xmax, ymax, h in boxes:
        inside = (pts[:, 0] >= xmin) & (pts[:, 0] <= xmax) & (pts[:, 1] >= ymin) & (pts[:, 1] <= ymax)
        if inside.any():
            best = min(best, float(np.min(np.abs(pts[inside, 2] - h))))
    return best


def gain_reference(uav, heading, user):
    """Scalar ground-truth gain with the north-clockwise azimuth convention."""
    east = user[0] - uav[0]
    north = user[1] - uav[1]
    horiz = math.hypot(east, north)
    rho = math.atan2(uav[2], horiz)
    phi = math.atan2(east, north)
    return 15.0 * (abs(math.cos(rho)) + 2.0 * abs(math.sin(phi + heading)))


def mlp_reference(layers, x):
    """Loop-based re-implementation of a dense network forward pass."""
    h = [float(v) for v in x]
    for w, b, act in layers:
        rows, cols = len(w), len(w[0])
        z = [b[j] + sum(h[i] * w[i][j] for i in range(rows)) for j in range(cols)]
        if act == "tanh":
            h = [math.tanh(v) for v in z]
        elif act == "relu":
            h = [v if v > 0 else 0.0 for v in z]
        else:
            h = z
    return h[0]


def ols_line(xs, ys):
    """Two-parameter least squares via an explicit 2x2 normal-equation solve."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    a = np.array([[len(xs), xs.sum()], [xs.sum(), (xs * xs).sum()]])
    rhs = np.array([ys.sum(), (xs * ys).sum()])
    intercept, slope = np.linalg.solve(a, rhs)
    return slope, intercept


def blocked_run_length(boxes, uav, user, user_z=0.0, step=1e-3):
    """Length of the segment lying inside a footprint and below its roof.

    Marches at ``step`` metres; a positive value means the link is blocked by
    an obstruction at least that long (in 3D), zero means LoS at this resolution.
    """
    a = np.array([user[0], user[1], user_z], dtype=float)
    b = np.asarray(uav, dtype=float)
    length = float(np.linalg.norm(b - a))
    n = max(2, int(math.ceil(length / step)) + 1)
    t = np.linspace(0.0, 1.0, n)
    pts = a + t[:, None] * (b - a)
    worst = 0.0
    for xmin, ymin, xmax, ymax, h in boxes:
        hit = ((pts[:, 0] > xmin) & (pts[:, 0] < xmax) & (pts[:, 1] > ymin) & (pts[:, 1] < ymax)
               & (pts[:, 2] < h))
        worst = max(worst, hit.sum() * length / (n - 1))
    return worst
