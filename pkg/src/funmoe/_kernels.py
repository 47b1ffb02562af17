"""Hot inner loops, jitted with numba when available.

The coordinate-descent kernel is the only part of the package where per-call
Python overhead matters (it runs tens of thousands of coordinate updates per
fit); everything else stays in plain numpy.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


@njit(cache=True)
def cd_sweeps(XT, wXT, col_ss, res, beta, w, wsum, thr,
              with_intercept, b0, tol, max_sweeps):
    """Cyclic soft-thresholded coordinate updates on a weighted Lasso.

    XT/wXT are the transposed (d x n) design and weighted design so each
    coordinate scan is contiguous. res and beta are updated in place;
    returns (intercept, sweeps).
    """
    n = XT.shape[1]
    d = XT.shape[0]
    wres2 = 0.0
    for i in range(n):
        wres2 += w[i] * res[i] * res[i]
    l1 = 0.0
    for j in range(d):
        l1 += abs(beta[j])
    prev = 0.5 * wres2 + thr * l1
    sweeps = 0
    for _ in range(max_sweeps):
        sweeps += 1
        for j in range(d):
            cj = col_ss[j]
            if cj <= 0.0:
                continue
            rho = cj * beta[j]
            for i in range(n):
                rho += wXT[j, i] * res[i]
            if rho > thr:
                new = (rho - thr) / cj
            elif rho < -thr:
                new = (rho + thr) / cj
            else:
                new = 0.0
            diff = beta[j] - new
            if diff != 0.0:
                for i in range(n):
                    res[i] += XT[j, i] * diff
                beta[j] = new
        if with_intercept:
            num = 0.0
            for i in range(n):
                num += w[i] * res[i]
            shift = num / wsum
            if shift != 0.0:
                b0 += shift
                for i in range(n):
                    res[i] -= shift
        wres2 = 0.0
        for i in range(n):
            wres2 += w[i] * res[i] * res[i]
        l1 = 0.0
        for j in range(d):
            l1 += abs(beta[j])
        cur = 0.5 * wres2 + thr * l1
        if prev - cur < tol * (1.0 + abs(prev)):
            break
        prev = cur
    return b0, sweeps
