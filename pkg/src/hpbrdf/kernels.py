"""Hot loops of the table pipeline, each in a numba and a numpy flavour.

``splat`` scatters samples into the 3x3x3 quadratic B-spline footprint
around their continuous bin index; ``gather`` reads the table with linear
interpolation in every axis.  Axis 1 (phi_d) is periodic with period
``n - 1`` because its last bin duplicates the first; the other angular axes
clamp at their ends.  The public names dispatch on :data:`USE_NUMBA`.
"""

import numpy as np

from ._accel import NUMBA_AVAILABLE, USE_NUMBA, njit


def bspline_weights(frac):
    """Quadratic B-spline taps for offsets -1, 0, +1 (``|frac| <= 0.5``)."""
    return np.stack(
        [0.5 * (0.5 - frac) ** 2, 0.75 - frac * frac, 0.5 * (0.5 + frac) ** 2], axis=-1
    )


def splat_numpy(data, weight, band, pos, values):
    """Accumulate ``values`` (N, C) at continuous positions ``pos`` (N, 3)."""
    _, nphi, nd, nh, nc = data.shape
    centre = np.rint(pos).astype(np.int64)
    taps = bspline_weights(pos - centre)
    off = np.array([-1, 0, 1])
    iphi = np.mod(centre[:, 0:1] + off, nphi - 1)
    idd = np.clip(centre[:, 1:2] + off, 0, nd - 1)
    ihh = np.clip(centre[:, 2:3] + off, 0, nh - 1)
    flat = (
        ((band[:, None, None, None] * nphi + iphi[:, :, None, None]) * nd + idd[:, None, :, None]) * nh
        + ihh[:, None, None, :]
    ).reshape(-1)
    w = (taps[:, 0, :, None, None] * taps[:, 1, None, :, None] * taps[:, 2, None, None, :]).reshape(-1)
    nbins = weight.size
    weight.reshape(-1)[:] += np.bincount(flat, weights=w, minlength=nbins)
    dflat = data.reshape(nbins, nc)
    vals = np.repeat(values, 27, axis=0)
    for c in range(nc):
        dflat[:, c] += np.bincount(flat, weights=w * vals[:, c], minlength=nbins)


@njit(cache=True)
def _splat_nb(data, weight, band, pos, values):
    n = pos.shape[0]
    nphi = data.shape[1]
    nd = data.shape[2]
    nh = data.shape[3]
    nc = data.shape[4]
    tap = np.empty((3, 3))
    idx = np.empty((3, 3), dtype=np.int64)
    for s in range(n):
        for ax in range(3):
            c = int(np.rint(pos[s, ax]))
            f = pos[s, ax] - c
            tap[ax, 0] = 0.5 * (0.5 - f) ** 2
            tap[ax, 1] = 0.75 - f * f
            tap[ax, 2] = 0.5 * (0.5 + f) ** 2
            for k in range(3):
                j = c + k - 1
                if ax == 0:
                    j = j % (nphi - 1)
                else:
                    lim = nd if ax == 1 else nh
                    if j < 0:
                        j = 0
                    elif j > lim - 1:
                        j = lim - 1
                idx[ax, k] = j
        b = band[s]
        for a in range(3):
            for d in range(3):
                wad = tap[0, a] * tap[1, d]
                for h in range(3):
                    w = wad * tap[2, h]
                    weight[b, idx[0, a], idx[1, d], idx[2, h]] += w
                    for c in range(nc):
                        data[b, idx[0, a], idx[1, d], idx[2, h], c] += w * values[s, c]


def splat_numba(data, weight, band, pos, values):
    _splat_nb(data, weight, np.ascontiguousarray(band, dtype=np.int64), np.ascontiguousarray(pos, dtype=np.float64), np.ascontiguousarray(values, dtype=np.float64))


def _linear_taps(x, n):
    x = np.clip(x, 0.0, n - 1)
    lo = np.minimum(np.floor(x).astype(np.int64), max(n - 2, 0))
    t = x - lo
    hi = np.minimum(lo + 1, n - 1)
    return lo, hi, t


def gather_numpy(table, pos):
    """Linear interpolation of ``table`` (L, P, D, H, C) at (N, 4) positions."""
    shape = table.shape[:4]
    taps = [_linear_taps(pos[:, ax], shape[ax]) for ax in range(4)]
    out = np.zeros((pos.shape[0], table.shape[4]))
    for corner in range(16):
        w = np.ones(pos.shape[0])
        idx = []
        for ax in range(4):
            lo, hi, t = taps[ax]
            if (corner >> ax) & 1:
                idx.append(hi)
                w = w * t
            else:
                idx.append(lo)
                w = w * (1.0 - t)
        out += w[:, None] * table[idx[0], idx[1], idx[2], idx[3]]
    return out


@njit(cache=True)
def _gather_nb(table, pos, out):
    n = pos.shape[0]
    nc = table.shape[4]
    lo = np.empty(4, dtype=np.int64)
    hi = np.empty(4, dtype=np.int64)
    t = np.empty(4)
    for s in range(n):
        for ax in range(4):
            m = table.shape[ax]
            x = pos[s, ax]
            if x < 0.0:
                x = 0.0
            elif x > m - 1:
                x = m - 1.0
            j = int(np.floor(x))
            if j > m - 2:
                j = max(m - 2, 0)
            lo[ax] = j
            hi[ax] = min(j + 1, m - 1)
            t[ax] = x - j
        for c in range(nc):
            out[s, c] = 0.0
        for corner in range(16):
            w = 1.0
            i0 = lo[0]
            i1 = lo[1]
            i2 = lo[2]
            i3 = lo[3]
            if corner & 1:
                i0 = hi[0]
                w *= t[0]
            else:
                w *= 1.0 - t[0]
            if corner & 2:
                i1 = hi[1]
                w *= t[1]
            else:
                w *= 1.0 - t[1]
            if corner & 4:
                i2 = hi[2]
                w *= t[2]
            else:
                w *= 1.0 - t[2]
            if corner & 8:
                i3 = hi[3]
                w *= t[3]
            else:
                w *= 1.0 - t[3]
            if w != 0.0:
                for c in range(nc):
                    out[s, c] += w * table[i0, i1, i2, i3, c]


def gather_numba(table, pos):
    out = np.empty((pos.shape[0], table.shape[4]))
    _gather_nb(table, np.ascontiguousarray(pos, dtype=np.float64), out)
    return out


if USE_NUMBA:
    splat, gather = splat_numba, gather_numba
else:
    splat, gather = splat_numpy, gather_numpy

__all__ = [
    "NUMBA_AVAILABLE",
    "USE_NUMBA",
    "bspline_weights",
    "gather",
    "gather_numba",
    "gather_numpy",
    "splat",
    "splat_numba",
    "splat_numpy",
]
