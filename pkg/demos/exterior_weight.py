"""Exterior weight kappa near the boundary of the unit square.

Compares kappa(0.5, t) d^(2s) with the half-plane limit C B(1/2, s + 1/2) / (2s)
as the distance t to the bottom edge shrinks.
"""

import numpy as np
from scipy.special import beta

from hpfrac.geometry import unit_square
from hpfrac.kernel import KernelParams, exterior_weight, normalization_constant


def main():
    sq = unit_square()
    for s in (0.3, 0.5, 0.7):
        limit = normalization_constant(s) * beta(0.5, s + 0.5) / (2 * s)
        ts = 10.0 ** -np.arange(1, 8)
        k = exterior_weight(sq, KernelParams(s), np.column_stack([np.full_like(ts, 0.5), ts]))
        print(f"s = {s}: half-plane limit {limit:.10f}")
        for t, v in zip(ts, k):
            print(f"  t = {t:.0e}  kappa t^(2s) = {v * t ** (2 * s):.10f}")


if __name__ == "__main__":
    main()
