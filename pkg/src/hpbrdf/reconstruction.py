"""Least-squares recovery of per-pixel Mueller matrices from DRR intensities.

Each intensity is bilinear in the probe vectors, ``f = a^T M b``, hence linear
in the 16 entries of ``M``: the design-matrix row is ``kron(a, b)`` for the
row-major flattening of ``M``.  Rows follow the capture order (theta outer,
theta' inner).
"""

import struct
from dataclasses import dataclass

import numpy as np

from .ellipsometer import (
    geometry_factor,
    probe_vectors,
    sphere_geometry,
    transfer_matrices,
)
from .errors import BadMagic, InsufficientMeasurements, NonFinite, RankDeficient, TruncatedFile
from .mueller import WavelengthGrid, physical_mask

PINV_RCOND = 1e-10


def build_design_matrix(config, band, c_ei=None, c_rc=None, geometry=1.0):
    """Rows ``kron(a, b)`` of the linearised image formation, shape ``(..., K, 16)``.

    Raises
    ------
    InsufficientMeasurements
        If fewer than 16 (theta, theta') combinations are configured.
    """
    if config.n_measurements < 16:
        raise InsufficientMeasurements(
            f"{config.n_measurements} measurements cannot determine 16 unknowns"
        )
    c_ei = np.eye(4) if c_ei is None else np.asarray(c_ei, dtype=float)
    c_rc = np.eye(4) if c_rc is None else np.asarray(c_rc, dtype=float)
    b, a = probe_vectors(config, band, c_ei, c_rc, geometry)
    rows = a[..., None, :, :, None] * b[..., :, None, None, :]
    return rows.reshape(rows.shape[:-4] + (b.shape[-2] * a.shape[-2], 16))


def effective_rank(design, rcond=PINV_RCOND):
    s = np.linalg.svd(design, compute_uv=False)
    return np.sum(s > rcond * s[..., :1], axis=-1)


def _lstsq(design, values, weights, rcond):
    # zero-weight rows (occluded or missing) drop out of the system
    d = design * weights[..., None]
    f = np.where(weights > 0, values, 0.0)
    u, s, vt = np.linalg.svd(d, full_matrices=False)
    keep = s > rcond * s[..., :1]
    inv = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    coef = np.einsum("...ki,...k->...i", u, f) * inv
    x = np.einsum("...ij,...i->...j", vt, coef)
    resid = np.einsum("...kj,...j->...k", d, x) - f
    n_rows = np.maximum(weights.sum(axis=-1), 1)
    rms = np.sqrt(np.sum(resid**2, axis=-1) / n_rows)
    return x.reshape(x.shape[:-1] + (4, 4)), rms, keep.sum(axis=-1)


def solve_mueller(values, design, rcond=PINV_RCOND):
    """Least-squares Mueller matrix for one pixel and band.

    Returns
    -------
    mueller : (4, 4) ndarray
    rms_residual : float

    Raises
    ------
    NonFinite
        On NaN/inf measurements.
    RankDeficient
        If the relative singular-value cutoff drops any direction.
    """
    values = np.asarray(values, dtype=float).reshape(-1)
    design = np.asarray(design, dtype=float)
    if not np.all(np.isfinite(values)) or not np.all(np.isfinite(design)):
        raise NonFinite("measurements contain NaN or inf")
    m, rms, rank = _lstsq(design, values, np.ones_like(values), rcond)
    if rank < 16:
        raise RankDeficient(f"effective rank {int(rank)} < 16", rank=int(rank))
    return m, float(rms)


@dataclass
class MuellerImage:
    """Reconstructed matrices for one arm angle: ``data`` is ``(L, H, W, 4, 4)``."""

    data: np.ndarray
    valid: np.ndarray
    physical: np.ndarray
    residual: np.ndarray
    wavelength_grid: WavelengthGrid
    arm_angle: float

    @property
    def valid_fraction(self):
        return float(self.valid.mean()) if self.valid.size else 0.0

    def physical_fraction(self):
        n = self.valid.sum()
        return float((self.physical & self.valid).sum() / n) if n else 0.0


def reconstruct_image(capture, scene, config, arm_index, rcond=PINV_RCOND):
    """Solve every visible pixel of one arm angle, per band.

    ``capture`` is the ``(P, A, L, T, T', H, W)`` intensity array; NaN marks
    occluded measurements.  Pixels with fewer than 16 usable rows or a
    rank-deficient system are flagged invalid instead of raising.
    """
    n_pos, _, nb, nt, nq, h, w = capture.shape
    arm = config.light_arm_angles[arm_index]
    data = np.full((nb, h * w, 4, 4), np.nan)
    valid = np.zeros((nb, h * w), dtype=bool)
    physical = np.zeros((nb, h * w), dtype=bool)
    residual = np.full((nb, h * w), np.nan, dtype=np.float32)
    per_band = scene.view_offsets is not None
    geom = None if per_band else sphere_geometry(scene, arm)
    for band in range(nb):
        if per_band:
            geom = sphere_geometry(scene, arm, band)
        idx = geom.pixel_index
        if len(idx) == 0:
            continue
        c_ei, c_rc = transfer_matrices(geom, scene)
        design = build_design_matrix(config, band, c_ei, c_rc, geometry_factor(geom, config))
        vals = capture[:, arm_index, band].reshape(n_pos, nt * nq, h * w)[..., idx]
        vals = np.moveaxis(vals, -1, 0).reshape(len(idx), n_pos * nt * nq).astype(float)
        design = np.concatenate([design] * n_pos, axis=1)
        weights = np.isfinite(vals).astype(float)
        vals = np.where(weights > 0, vals, 0.0)
        m, rms, rank = _lstsq(design, vals, weights, rcond)
        ok = (weights.sum(axis=1) >= 16) & (rank == 16)
        data[band, idx] = np.where(ok[:, None, None], m, np.nan)
        valid[band, idx] = ok
        residual[band, idx] = rms
        physical[band, idx] = ok & physical_mask(m)
    shape = (nb, h, w)
    return MuellerImage(
        data.reshape(shape + (4, 4)),
        valid.reshape(shape),
        physical.reshape(shape),
        residual.reshape(shape),
        config.wavelength_grid,
        float(arm),
    )


# -- Mueller-image file ----------------------------------------------------

_IMAGE_MAGIC = b"HPMI"
_IMAGE_VERSION = 1


def write_mueller_image(path, image):
    """Header, float32 matrices ``[band][row][col][16]``, then packed validity and physicality bits."""
    nb, h, w = image.valid.shape
    grid = image.wavelength_grid
    with open(path, "wb") as fh:
        fh.write(_IMAGE_MAGIC)
        fh.write(struct.pack("<I", _IMAGE_VERSION))
        fh.write(struct.pack("<3I", w, h, nb))
        fh.write(struct.pack("<3d", grid.start_nm, grid.step_nm, image.arm_angle))
        fh.write(np.asarray(image.data, dtype="<f4").tobytes(order="C"))
        fh.write(np.packbits(image.valid.reshape(-1), bitorder="little").tobytes())
        fh.write(np.packbits(image.physical.reshape(-1), bitorder="little").tobytes())


def read_mueller_image(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _IMAGE_MAGIC:
        raise BadMagic(f"{path}: not a Mueller image")
    if len(raw) < 44:
        raise TruncatedFile(f"{path}: header truncated")
    w, h, nb = struct.unpack_from("<3I", raw, 8)
    start, step, arm = struct.unpack_from("<3d", raw, 20)
    off = 44
    n = nb * h * w
    nbits = (n + 7) // 8
    if len(raw) < off + 64 * n + 2 * nbits:
        raise TruncatedFile(f"{path}: payload truncated")
    data = np.frombuffer(raw, dtype="<f4", count=16 * n, offset=off).reshape(nb, h, w, 4, 4)
    off += 64 * n
    valid = np.unpackbits(np.frombuffer(raw, np.uint8, nbits, off), count=n, bitorder="little")
    off += nbits
    phys = np.unpackbits(np.frombuffer(raw, np.uint8, nbits, off), count=n, bitorder="little")
    return MuellerImage(
        data.astype(np.float32),
        valid.reshape(nb, h, w).astype(bool),
        phys.reshape(nb, h, w).astype(bool),
        np.full((nb, h, w), np.nan, dtype=np.float32),
        WavelengthGrid(start, step, nb),
        arm,
    )
