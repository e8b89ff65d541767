"""Reference values and independent oracles shared by the test modules."""

from __future__ import annotations

import math

# (year, lambda_plus, lambda_minus, gamma, lambda, N_eff) as published
PUBLISHED_SUPPORT = [
    (2012, 1.77, 0.07, 0.80, 0.44, 573),
    (2013, 1.93, 0.10, 0.85, 0.40, 633),
    (2014, 2.15, 0.07, 0.86, 0.49, 519),
    (2015, 1.80, 0.06, 0.80, 0.47, 537),
    (2016, 1.98, 0.06, 0.83, 0.50, 506),
    (2017, 2.33, 0.11, 0.93, 0.42, 601),
]


def direct_smooth(quotes, tau_j, delta_j, cp_j, h=(0.05, 0.005, 0.001)):
    """Plain evaluation of the vega-weighted Gaussian kernel average."""
    def ce(d):
        return 1 + d / 100 if d < 0 else d / 100

    num = den = 0.0
    for q in quotes:
        x = math.log(q.tau / tau_j)
        y = ce(q.call_equiv_delta) - ce(delta_j)
        z = 0.0 if q.cp_flag == cp_j else 1.0
        phi = math.exp(-(x * x / (2 * h[0]) + y * y / (2 * h[1]) + z * z / (2 * h[2])))
        num += q.vega * q.implied_vol * phi
        den += q.vega * phi
    return num / den
