"""Lu-Chipman polar decomposition, derived scalar maps and PCA of tables."""

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientSamples, ZeroIntensity

SINGULAR_EPS = 1e-9
DEGENERATE_EPS = 1e-9


@dataclass
class LuChipmanFactors:
    """``M = M_delta @ M_R @ M_D``; ``M_D`` carries the intensity scale ``m00``."""

    M_delta: np.ndarray
    M_R: np.ndarray
    M_D: np.ndarray
    diattenuation: np.ndarray
    polarizance: np.ndarray
    retardance: np.ndarray
    preservation: np.ndarray
    singular_diattenuator: np.ndarray
    degenerate_depolarizer: np.ndarray


def _diattenuator_block(dvec):
    dn = np.linalg.norm(dvec, axis=-1)
    root = np.sqrt(np.clip(1.0 - dn * dn, 0.0, None))
    dhat = np.where(dn[..., None] > 0, dvec / np.where(dn > 0, dn, 1.0)[..., None], 0.0)
    return root[..., None, None] * np.eye(3) + (1.0 - root)[..., None, None] * (
        dhat[..., :, None] * dhat[..., None, :]
    )


def _decompose(m):
    m = np.asarray(m, dtype=float)
    m00 = m[..., 0, 0]
    scale = np.where(m00 > 0, m00, 1.0)
    dvec = m[..., 0, 1:] / scale[..., None]
    dn = np.linalg.norm(dvec, axis=-1)
    singular = dn >= 1.0 - SINGULAR_EPS

    md = np.zeros(m.shape)
    md[..., 0, 0] = 1.0
    md[..., 0, 1:] = dvec
    md[..., 1:, 0] = dvec
    md[..., 1:, 1:] = _diattenuator_block(dvec)
    md = md * scale[..., None, None]

    # I + (M - M_D) pinv(M_D) equals M inv(M_D) when M_D is invertible and
    # stays closest to identity on the polarizer limit
    mprime = np.eye(4) + (m - md) @ np.linalg.pinv(md)
    p_delta = mprime[..., 1:, 0]
    sub = mprime[..., 1:, 1:]
    u, s, vt = np.linalg.svd(sub)
    rot = u @ vt
    flip = np.linalg.det(rot) < 0
    sign = np.where(flip, -1.0, 1.0)[..., None, None]
    m_delta = sign * (u * s[..., None, :]) @ np.swapaxes(u, -1, -2)
    m_r = sign * rot
    degenerate = s[..., -1] <= DEGENERATE_EPS * np.maximum(s[..., 0], 1e-300)

    big_delta = np.zeros(m.shape)
    big_delta[..., 0, 0] = 1.0
    big_delta[..., 1:, 0] = p_delta
    big_delta[..., 1:, 1:] = m_delta
    big_r = np.zeros(m.shape)
    big_r[..., 0, 0] = 1.0
    big_r[..., 1:, 1:] = m_r
    return big_delta, big_r, md, singular, degenerate


def diattenuation(m, return_flag=False):
    m = np.asarray(m, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = np.linalg.norm(m[..., 0, 1:], axis=-1) / m[..., 0, 0]
    out = np.clip(raw, 0.0, 1.0)
    return (out, (raw < 0) | (raw > 1)) if return_flag else out


def polarizance(m, return_flag=False):
    m = np.asarray(m, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = np.linalg.norm(m[..., 1:, 0], axis=-1) / m[..., 0, 0]
    out = np.clip(raw, 0.0, 1.0)
    return (out, (raw < 0) | (raw > 1)) if return_flag else out


def retardance_scalar(m_r):
    m_r = np.asarray(m_r, dtype=float)
    tr = np.trace(m_r, axis1=-2, axis2=-1)
    return np.arccos(np.clip(tr / 2.0 - 1.0, -1.0, 1.0))


def preservation(m_delta):
    """``|trace(m_delta)| / 3`` over the lower-right 3x3 block."""
    m_delta = np.asarray(m_delta, dtype=float)
    return np.abs(np.trace(m_delta[..., 1:, 1:], axis1=-2, axis2=-1)) / 3.0


def lu_chipman(m):
    """Factor ``M = M_delta M_R M_D`` (broadcasts over leading axes).

    Singular diattenuators (``|D| >= 1 - 1e-9``) and rank-deficient
    depolarizers are flagged in the result, never silently repaired.

    Raises
    ------
    ZeroIntensity
        If any ``m00 <= 0``.
    """
    m = np.asarray(m, dtype=float)
    if np.any(m[..., 0, 0] <= 0):
        raise ZeroIntensity("Lu-Chipman needs m00 > 0")
    dlt, r, d, singular, degenerate = _decompose(m)
    return LuChipmanFactors(
        dlt,
        r,
        d,
        diattenuation(m),
        polarizance(m),
        retardance_scalar(r),
        preservation(dlt),
        singular,
        degenerate,
    )


SCALAR_NAMES = ("diattenuation", "polarizance", "retardance", "preservation")


def scalar_maps(m, valid=None):
    """Per-element scalar planes; invalid or non-positive-``m00`` entries become NaN."""
    m = np.asarray(m, dtype=float)
    ok = np.all(np.isfinite(m), axis=(-2, -1)) & (np.nan_to_num(m[..., 0, 0]) > 0)
    if valid is not None:
        ok &= np.asarray(valid, dtype=bool)
    safe = np.where(ok[..., None, None], m, np.eye(4))
    dlt, r, _, _, _ = _decompose(safe)
    maps = {
        "diattenuation": diattenuation(safe),
        "polarizance": polarizance(safe),
        "retardance": retardance_scalar(r),
        "preservation": preservation(dlt),
    }
    return {k: np.where(ok, v, np.nan) for k, v in maps.items()}


def retardance_matrices(m, valid=None):
    """``M_R`` for every element, NaN where invalid."""
    m = np.asarray(m, dtype=float)
    ok = np.all(np.isfinite(m), axis=(-2, -1)) & (np.nan_to_num(m[..., 0, 0]) > 0)
    if valid is not None:
        ok &= np.asarray(valid, dtype=bool)
    safe = np.where(ok[..., None, None], m, np.eye(4))
    r = _decompose(safe)[1]
    return np.where(ok[..., None, None], r, np.nan)


# -- PCA ---------------------------------------------------------------------

TABLE_AXES = ("lambda", "phi_d", "theta_d", "theta_h", "element")


@dataclass
class PcaResult:
    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray
    total_variance: float
    feature_shape: tuple

    @property
    def explained_ratio(self):
        return self.explained_variance / self.total_variance if self.total_variance > 0 else self.explained_variance * 0

    def component_images(self):
        return self.components.reshape((-1,) + tuple(self.feature_shape))


def pca_matrix(samples, n_components=None):
    """PCA of a ``(n_samples, n_features)`` matrix via the thin SVD.

    Raises
    ------
    InsufficientSamples
        With fewer than two samples or more components than samples allow.
    """
    x = np.asarray(samples, dtype=float)
    n, p = x.shape
    k = min(n, p) if n_components is None else int(n_components)
    if n < 2 or k > min(n, p) or k < 1:
        raise InsufficientSamples(f"{n} samples x {p} features cannot give {k} components")
    mean = x.mean(axis=0)
    xc = x - mean
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    var = s**2 / (n - 1)
    # deterministic component signs: largest-magnitude loading positive
    pivot = np.take_along_axis(vt, np.argmax(np.abs(vt), axis=1)[:, None], axis=1)
    vt = vt * np.where(pivot < 0, -1.0, 1.0)
    return PcaResult(mean, vt[:k], var[:k], float(var.sum()), (p,))


def normalized_features(table):
    """``(L, P, D, H, 16)`` array: entries divided by ``m00``, which is kept in slot 0."""
    data = np.asarray(table.data, dtype=float).reshape(table.dims + (16,))
    m00 = data[..., 0:1]
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(np.abs(m00) > 0, data / np.where(np.abs(m00) > 0, m00, 1.0), 0.0)
    out[..., 0] = data[..., 0]
    return out


def pca_table(table, slice_axes=("theta_d", "theta_h"), n_components=8):
    """PCA where each sample is a 2-D slice spanned by ``slice_axes``.

    All remaining axes (including the Mueller element) index samples.
    """
    feats = normalized_features(table)
    keep = [TABLE_AXES.index(a) for a in slice_axes]
    rest = [i for i in range(5) if i not in keep]
    arr = np.transpose(feats, rest + keep)
    fshape = tuple(feats.shape[i] for i in keep)
    x = arr.reshape(-1, int(np.prod(fshape)))
    res = pca_matrix(x, n_components)
    res.feature_shape = fshape
    return res
