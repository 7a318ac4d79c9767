"""Stokes/Mueller algebra, polarization frames and physical-validity tests.

Stokes vectors are arrays with a trailing axis of length 4 and Mueller
matrices arrays with trailing shape ``(4, 4)``; every function broadcasts
over leading axes.  Sign convention: ``s3 > 0`` is right-circular as seen
from the receiver, and a retarder with its fast axis horizontal carries
``+sin(delta)`` at row 2, column 3.
"""

from dataclasses import dataclass

import numpy as np

from .errors import MismatchedPropagation, NumericalFailure, ZeroIntensity

#: Minkowski metric used by the Givens-Kostinski test.
G_METRIC = np.diag([1.0, -1.0, -1.0, -1.0])

ADMISSIBLE_RTOL = 1e-9
GK_IMAG_RTOL = 1e-7
GK_CLUSTER_RTOL = 1e-6


@dataclass(frozen=True)
class WavelengthGrid:
    """Uniform spectral sampling, band centres in nanometres."""

    start_nm: float = 414.0
    step_nm: float = 8.0
    count: int = 68

    @property
    def wavelengths(self):
        return self.start_nm + self.step_nm * np.arange(self.count)

    @property
    def stop_nm(self):
        return self.start_nm + self.step_nm * (self.count - 1)

    def nearest_index(self, wavelength_nm):
        idx = np.rint((np.asarray(wavelength_nm) - self.start_nm) / self.step_nm)
        return np.clip(idx, 0, self.count - 1).astype(np.int64)


def _normalize(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


@dataclass(frozen=True)
class PolarizationFrame:
    """Right-handed basis ``(x_axis, y_axis, propagation)`` attached to a ray.

    Fields may carry leading batch axes; the trailing axis has length 3.
    """

    propagation: np.ndarray
    x_axis: np.ndarray
    y_axis: np.ndarray

    @classmethod
    def from_propagation(cls, propagation, x_hint):
        """Build a frame whose x-axis is ``x_hint`` projected off the ray."""
        p = _normalize(propagation)
        x_hint = np.asarray(x_hint, dtype=float)
        x = x_hint - np.sum(x_hint * p, axis=-1, keepdims=True) * p
        x = _normalize(x)
        y = np.cross(p, x)
        return cls(p, x, y)

    def check(self, atol=1e-9):
        p, x, y = self.propagation, self.x_axis, self.y_axis
        for v in (p, x, y):
            if not np.allclose(np.linalg.norm(v, axis=-1), 1.0, atol=atol, rtol=0):
                return False
        for a, b in ((p, x), (p, y), (x, y)):
            if not np.allclose(np.sum(a * b, axis=-1), 0.0, atol=atol, rtol=0):
                return False
        return bool(np.allclose(np.cross(x, y), p, atol=atol, rtol=0))


def lp_mueller(angle):
    """Ideal linear polarizer with its transmission axis at ``angle``."""
    angle = np.asarray(angle, dtype=float)
    c = np.cos(2 * angle)
    s = np.sin(2 * angle)
    m = np.zeros(angle.shape + (4, 4))
    m[..., 0, 0] = 1.0
    m[..., 0, 1] = m[..., 1, 0] = c
    m[..., 0, 2] = m[..., 2, 0] = s
    m[..., 1, 1] = c * c
    m[..., 1, 2] = m[..., 2, 1] = c * s
    m[..., 2, 2] = s * s
    return 0.5 * m


def frame_rotation(psi):
    """Re-express a Stokes vector in a frame rotated by ``psi`` about the ray."""
    psi = np.asarray(psi, dtype=float)
    c = np.cos(2 * psi)
    s = np.sin(2 * psi)
    m = np.zeros(psi.shape + (4, 4))
    m[..., 0, 0] = 1.0
    m[..., 3, 3] = 1.0
    m[..., 1, 1] = m[..., 2, 2] = c
    m[..., 1, 2] = s
    m[..., 2, 1] = -s
    return m


def retarder_mueller(fast_axis, retardance):
    """Linear retarder; ``retardance`` may vary per wavelength (broadcasts)."""
    fast_axis, retardance = np.broadcast_arrays(
        np.asarray(fast_axis, dtype=float), np.asarray(retardance, dtype=float)
    )
    c = np.cos(retardance)
    s = np.sin(retardance)
    r0 = np.zeros(retardance.shape + (4, 4))
    r0[..., 0, 0] = r0[..., 1, 1] = 1.0
    r0[..., 2, 2] = r0[..., 3, 3] = c
    r0[..., 2, 3] = s
    r0[..., 3, 2] = -s
    return frame_rotation(-fast_axis) @ r0 @ frame_rotation(fast_axis)


def depolarizer_mueller(preservation=0.0):
    """Isotropic depolarizer ``diag(1, a, a, a)``."""
    a = np.asarray(preservation, dtype=float)
    m = np.zeros(a.shape + (4, 4))
    m[..., 0, 0] = 1.0
    for k in (1, 2, 3):
        m[..., k, k] = a
    return m


def diattenuator_mueller(d_vector):
    """Homogeneous diattenuator with diattenuation vector ``d_vector`` (|D| < 1)."""
    d = np.asarray(d_vector, dtype=float)
    dn = np.linalg.norm(d, axis=-1)
    root = np.sqrt(np.clip(1.0 - dn * dn, 0.0, None))
    with np.errstate(invalid="ignore", divide="ignore"):
        dhat = np.where(dn[..., None] > 0, d / dn[..., None], 0.0)
    m = np.zeros(d.shape[:-1] + (4, 4))
    m[..., 0, 0] = 1.0
    m[..., 0, 1:] = d
    m[..., 1:, 0] = d
    eye = np.eye(3)
    m[..., 1:, 1:] = root[..., None, None] * eye + (1.0 - root)[..., None, None] * (
        dhat[..., :, None] * dhat[..., None, :]
    )
    return m


def signed_angle(a, b, axis):
    """Angle rotating unit vector ``a`` onto ``b`` about ``axis`` (right hand)."""
    cross = np.cross(a, b)
    return np.arctan2(np.sum(cross * axis, axis=-1), np.sum(a * b, axis=-1))


def frame_transfer(src, dst, atol=1e-6):
    """Mueller matrix converting Stokes vectors from frame ``src`` to ``dst``.

    Raises
    ------
    MismatchedPropagation
        If the two frames do not share a propagation direction.
    """
    if not np.allclose(src.propagation, dst.propagation, atol=atol, rtol=0):
        raise MismatchedPropagation("frames do not share a propagation direction")
    psi = signed_angle(src.x_axis, dst.x_axis, src.propagation)
    return frame_rotation(psi)


def is_admissible(s, rtol=ADMISSIBLE_RTOL):
    """``s0 >= 0`` and ``s0**2 - |s_pol|**2 >= -rtol * s0**2`` (broadcasts)."""
    s = np.asarray(s, dtype=float)
    s0 = s[..., 0]
    slack = s0 * s0 - np.sum(s[..., 1:] ** 2, axis=-1)
    tol = rtol * np.maximum(s0 * s0, np.finfo(float).tiny)
    out = (s0 >= -tol) & (slack >= -tol)
    return bool(out) if out.ndim == 0 else out


def dop(s):
    """Degree of polarization of a single Stokes vector."""
    s = np.asarray(s, dtype=float)
    if s[0] <= 0:
        raise ZeroIntensity("degree of polarization undefined for s0 <= 0")
    return float(np.linalg.norm(s[1:]) / s[0])


@dataclass
class GKDiagnostics:
    eigenvalues: np.ndarray
    test_vector: np.ndarray
    real_spectrum: bool
    admissible_vector: bool
    forward: bool


def _gk_batch(m):
    m = np.asarray(m, dtype=float)
    # the criterion is invariant under positive scaling; normalise against underflow
    mnorm = np.sqrt(np.sum(m * m, axis=(-2, -1)))
    m = m / np.where(mnorm > 0, mnorm, 1.0)[..., None, None]
    n = G_METRIC @ np.swapaxes(m, -1, -2) @ G_METRIC @ m
    scale = np.maximum(np.linalg.norm(n, axis=(-2, -1)), 1.0)
    try:
        w = np.linalg.eigvals(n)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"eigensolver failed: {exc}") from exc
    real_ok = np.all(np.abs(w.imag) <= GK_IMAG_RTOL * scale[..., None], axis=-1)

    wr = w.real
    cluster = wr >= wr.max(axis=-1, keepdims=True) - GK_CLUSTER_RTOL * scale[..., None]
    # the top eigenvalue may be degenerate (non-depolarizing matrices give
    # N = c*I); take its whole invariant subspace as the right-singular
    # vectors of N - lambda*I with the smallest singular values, then search
    # that subspace for the most admissible direction
    k = cluster.sum(axis=-1)
    lam = np.sum(wr * cluster, axis=-1) / k
    _, _, vt = np.linalg.svd(n - lam[..., None, None] * np.eye(4))
    u = np.swapaxes(vt, -1, -2)
    keep = np.arange(4) >= (4 - k)[..., None]
    form = np.swapaxes(u, -1, -2) @ G_METRIC @ u
    form = form * (keep[..., :, None] & keep[..., None, :]) - np.eye(4) * (~keep)[..., None, :]
    mu, c = np.linalg.eigh(form)
    test = (u @ c[..., :, -1:])[..., 0]
    test = test / np.maximum(np.linalg.norm(test, axis=-1, keepdims=True), 1e-300)
    test = np.where(test[..., :1] < 0, -test, test)
    slack = test[..., 0] ** 2 - np.sum(test[..., 1:] ** 2, axis=-1)
    admissible = slack >= -GK_CLUSTER_RTOL

    mnorm = np.sqrt(np.sum(m * m, axis=(-2, -1)))
    out0 = np.einsum("...j,...j->...", m[..., 0, :], test)
    forward = (out0 >= -GK_CLUSTER_RTOL * mnorm) & (
        m[..., 0, 0] >= -GK_CLUSTER_RTOL * mnorm
    )
    ok = real_ok & admissible & forward
    return ok, w, test, real_ok, admissible, forward


def physical_mask(m):
    """Vectorised Givens-Kostinski verdict for a stack of Mueller matrices."""
    m = np.asarray(m, dtype=float)
    finite = np.all(np.isfinite(m), axis=(-2, -1))
    safe = np.where(finite[..., None, None], m, 0.0)
    ok = _gk_batch(safe)[0]
    return ok & finite


def is_physical_gk(m):
    """Givens-Kostinski physical-realizability test of one Mueller matrix.

    ``N = G M^T G M`` must have a real spectrum and the eigenvector of its
    largest eigenvalue (any vector of that eigenspace when it is degenerate)
    must be an admissible Stokes vector that ``M`` maps forward.

    Returns
    -------
    ok : bool
    diagnostics : GKDiagnostics
    """
    ok, w, test, real_ok, admissible, forward = _gk_batch(np.asarray(m, dtype=float))
    diag = GKDiagnostics(
        eigenvalues=w,
        test_vector=test,
        real_spectrum=bool(real_ok),
        admissible_vector=bool(admissible),
        forward=bool(forward),
    )
    return bool(ok), diag


def random_admissible_stokes(rng, n, polarized_fraction=None):
    """Sample ``n`` admissible Stokes vectors (unit intensity).

    Directions are uniform on the Poincare sphere; the degree of polarization
    is 1 for ``polarized_fraction`` of the samples (the cone boundary, where
    violations first appear) and uniform in [0, 1] otherwise.
    """
    direction = rng.normal(size=(n, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    degree = rng.uniform(0.0, 1.0, size=n)
    if polarized_fraction is not None:
        degree[: int(polarized_fraction * n)] = 1.0
    s = np.empty((n, 4))
    s[:, 0] = 1.0
    s[:, 1:] = direction * degree[:, None]
    return s
