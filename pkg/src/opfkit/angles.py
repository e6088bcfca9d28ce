"""Principal-value handling for angles; every mod-2pi reduction goes through here."""
from __future__ import annotations

import numpy as np

TWO_PI = 2.0 * np.pi


def principal(a):
    """Map angles into (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    out = a - TWO_PI * np.ceil((a - np.pi) / TWO_PI)
    # guard against rounding landing exactly on -pi
    out = np.where(out <= -np.pi, out + TWO_PI, out)
    return out if out.ndim else float(out)


def angle_distance(a, b):
    """|a - b| measured on the circle."""
    return np.abs(principal(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)))
