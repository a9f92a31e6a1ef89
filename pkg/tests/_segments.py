"""Random continuous convex segments in one dimension for property tests."""
import numpy as np

from pwa_sens.mmps import AffineMap, ConvexSegment
from pwa_sens.polytope import Polytope


def random_segment(rng, max_pieces=6, lo=0.0, hi=10.0):
    """Max of 2..max_pieces affine maps with breakpoints inside ``[lo, hi]``."""
    q = int(rng.integers(2, max_pieces + 1))
    breaks = np.sort(rng.uniform(lo, hi, q - 1))
    slopes = np.sort(rng.uniform(-5, 5, q))
    slopes += np.arange(q) * 1e-3  # keep neighbours distinct
    b = np.zeros(q)
    for k in range(1, q):
        b[k] = b[k - 1] + (slopes[k - 1] - slopes[k]) * breaks[k - 1]
    pieces = [AffineMap([a], c) for a, c in zip(slopes, b)]
    return ConvexSegment(pieces, Polytope.interval(lo, hi))


def segment_from(slopes, breaks, lo, hi, value_at_lo=0.0):
    """Continuous convex segment with given slopes and interior breakpoints."""
    b = [value_at_lo - slopes[0] * lo]
    for k in range(1, len(slopes)):
        b.append(b[-1] + (slopes[k - 1] - slopes[k]) * breaks[k - 1])
    pieces = [AffineMap([a], c) for a, c in zip(slopes, b)]
    return ConvexSegment(pieces, Polytope.interval(lo, hi))
