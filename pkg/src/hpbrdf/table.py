"""Tabulated hpBRDF: splatting, inpainting, lookup and the HPBT file format.

Angular axes use inclusive end points: ``phi_d`` bins sit at
``k * 2*pi / (n - 1)`` (the last duplicates the first; 361 bins give a 1
degree pitch), ``theta_d`` and ``theta_h`` at ``k * (pi/2) / (n - 1)``.

HPBT layout (little endian): ``b"HPBT"``, u32 version, u32 x 4 dims
``(n_lambda, n_phi_d, n_theta_d, n_theta_h)``, f64 lambda start, f64 lambda
step, float32 data ordered ``[lambda][phi_d][theta_d][theta_h][row][col]``,
float32 weight plane in the same bin order, then the occupancy mask packed
8 bins per byte (least significant bit first).
"""

import struct
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import kernels
from .analytic import eval_analytic
from .errors import BadMagic, DimMismatch, EmptyTable, TruncatedFile, UnfilledBin
from .mueller import WavelengthGrid, frame_transfer
from .rusinkiewicz import (
    RusinkiewiczCoord,
    SurfaceFrame,
    from_rusinkiewicz,
    hpbrdf_frames,
    to_rusinkiewicz,
)

FULL_DIMS = (68, 361, 91, 91)
DESK_DIMS = (16, 90, 23, 23)

_MAGIC = b"HPBT"
_VERSION = 1
_HEADER = struct.Struct("<4sI4I2d")


def data_payload_bytes(dims):
    """Bytes of the float32 Mueller payload for table ``dims``."""
    n = 1
    for d in dims:
        n *= int(d)
    return n * 16 * 4


def file_size_bytes(dims):
    n = int(np.prod(np.asarray(dims, dtype=np.int64)))
    return _HEADER.size + data_payload_bytes(dims) + 4 * n + (n + 7) // 8


def bin_pitch(dims):
    _, nphi, nd, nh = dims
    return 2 * np.pi / (nphi - 1), (np.pi / 2) / (nd - 1), (np.pi / 2) / (nh - 1)


def continuous_index(dims, coord):
    """Fractional bin positions ``(N, 3)`` of Rusinkiewicz coordinates."""
    p_phi, p_d, p_h = bin_pitch(dims)
    return np.stack(
        [np.asarray(coord.phi_d) / p_phi, np.asarray(coord.theta_d) / p_d, np.asarray(coord.theta_h) / p_h],
        axis=-1,
    )


def bin_centers(dims):
    p_phi, p_d, p_h = bin_pitch(dims)
    _, nphi, nd, nh = dims
    return np.arange(nphi) * p_phi, np.arange(nd) * p_d, np.arange(nh) * p_h


@dataclass
class HpbrdfTable:
    """Finalised table: ``data`` (L, P, D, H, 4, 4) float32, ``weight`` and ``mask`` per bin."""

    data: np.ndarray
    weight: np.ndarray
    mask: np.ndarray
    grid: WavelengthGrid

    @property
    def dims(self):
        return tuple(int(d) for d in self.mask.shape)

    @classmethod
    def empty(cls, dims, grid=None):
        grid = grid or WavelengthGrid(count=dims[0])
        return cls(
            np.zeros(tuple(dims) + (4, 4), dtype=np.float32),
            np.zeros(dims, dtype=np.float32),
            np.zeros(dims, dtype=bool),
            grid,
        )

    def copy(self):
        return HpbrdfTable(self.data.copy(), self.weight.copy(), self.mask.copy(), self.grid)


class TableBuilder:
    """Float64 accumulator for splatting; :meth:`finalize` yields a table."""

    def __init__(self, dims, grid=None):
        self.dims = tuple(int(d) for d in dims)
        self.grid = grid or WavelengthGrid(count=self.dims[0])
        if self.grid.count != self.dims[0]:
            raise DimMismatch("wavelength grid does not match table dims")
        self.sums = np.zeros(self.dims + (16,))
        self.weight = np.zeros(self.dims)
        self.accepted = 0
        self.skipped = 0

    def splat(self, band, coord, mueller, source_frames=None, omega=None, frame=None):
        """Add Mueller samples to their bins and 26 neighbours.

        ``mueller`` must be in the hpBRDF frames unless ``source_frames``
        ``(incident, outgoing)`` is given, in which case ``omega``
        ``(omega_i, omega_o)`` and ``frame`` are used to convert.
        Non-finite or out-of-range samples are skipped and counted.
        """
        m = np.asarray(mueller, dtype=float).reshape(-1, 4, 4)
        band = np.broadcast_to(np.asarray(band, dtype=np.int64), (m.shape[0],))
        if source_frames is not None:
            f_in, f_out = hpbrdf_frames(omega[0], omega[1], frame)
            m = frame_transfer(source_frames[1], f_out) @ m @ frame_transfer(f_in, source_frames[0])
        pos = continuous_index(self.dims, coord).reshape(-1, 3)
        _, nphi, nd, nh = self.dims
        ok = (
            np.all(np.isfinite(m.reshape(-1, 16)), axis=1)
            & np.all(np.isfinite(pos), axis=1)
            & (pos[:, 0] >= -0.5)
            & (pos[:, 0] <= nphi - 1 + 0.5)
            & (pos[:, 1] >= -0.5)
            & (pos[:, 1] <= nd - 0.5)
            & (pos[:, 2] >= -0.5)
            & (pos[:, 2] <= nh - 0.5)
            & (band >= 0)
            & (band < self.dims[0])
        )
        self.skipped += int((~ok).sum())
        self.accepted += int(ok.sum())
        if ok.any():
            kernels.splat(self.sums, self.weight, band[ok], pos[ok], m[ok].reshape(-1, 16))
        return int((~ok).sum())

    def finalize(self):
        sums = self.sums.copy()
        weight = self.weight.copy()
        # the last phi_d bin duplicates phi_d = 0
        sums[:, -1] = sums[:, 0]
        weight[:, -1] = weight[:, 0]
        mask = weight > 0
        data = np.zeros_like(sums)
        np.divide(sums, weight[..., None], out=data, where=mask[..., None])
        return HpbrdfTable(
            data.reshape(self.dims + (4, 4)).astype(np.float32),
            weight.astype(np.float32),
            mask,
            self.grid,
        )


def splat_image(builder, image, scene, config, arm_index, valid_only=True):
    """Splat every valid pixel of a reconstructed Mueller image."""
    from .ellipsometer import sphere_geometry

    arm = config.light_arm_angles[arm_index]
    per_band = scene.view_offsets is not None
    geom = None if per_band else sphere_geometry(scene, arm)
    skipped = 0
    for band in range(image.data.shape[0]):
        if per_band:
            geom = sphere_geometry(scene, arm, band)
        idx = geom.pixel_index
        m = image.data[band].reshape(-1, 4, 4)[idx]
        keep = image.valid[band].reshape(-1)[idx] if valid_only else np.ones(len(idx), bool)
        coord = to_rusinkiewicz(geom.omega_i[keep], geom.omega_o[keep], _subset(geom.surface, keep))
        skipped += builder.splat(band, coord, m[keep])
    return skipped


def _subset(frame, keep):
    return SurfaceFrame(frame.normal[keep], frame.tangent[keep])


# outside the theta ranges there are no samples, hence zero weight
# no samples exist beyond the theta ranges, so they contribute zero weight
_MODES = ["nearest", "wrap", "constant", "constant"]


def _smooth(x, sig, order, truncate):
    return ndimage.gaussian_filter(x, sig, order=order, mode=_MODES, truncate=truncate)


def _fill_once(data, known, sigma, truncate, fill):
    """Local weighted linear fit (first-order normalised convolution) at ``fill``.

    Gaussian-derivative filters give the centred moments
    ``sum g (x - x0)`` and ``sum g (x - x0)^2`` directly, so the phi_d wrap
    and the zero-weight theta boundaries stay consistent.  Bins whose neighbourhood cannot pin down a
    gradient fall back to the mask-weighted mean.
    """
    sig = (0.0, sigma[0], sigma[1], sigma[2])
    s2 = np.asarray(sigma, dtype=float) ** 2
    w = known.astype(float)

    def moments(x):
        # returns [sum g x, sum g x d_a (a=0..2)] at every bin
        first = []
        for a in range(3):
            order = [0, 0, 0, 0]
            order[a + 1] = 1
            first.append(s2[a] * _smooth(x, sig, order, truncate)[fill])
        return _smooth(x, sig, 0, truncate)[fill], first

    s0, s1 = moments(w)
    n = s0.shape[0]
    gram = np.empty((n, 4, 4))
    gram[:, 0, 0] = s0
    for a in range(3):
        gram[:, 0, a + 1] = gram[:, a + 1, 0] = s1[a]
    g0 = _smooth(w, sig, 0, truncate)[fill]
    for a in range(3):
        for b in range(a, 3):
            order = [0, 0, 0, 0]
            order[a + 1] += 1
            order[b + 1] += 1
            val = s2[a] * s2[b] * _smooth(w, sig, order, truncate)[fill]
            if a == b:
                val = val + s2[a] * g0
            gram[:, a + 1, b + 1] = gram[:, b + 1, a + 1] = val

    rhs = np.empty((n, 4, data.shape[-1]))
    for c in range(data.shape[-1]):
        t0, t1 = moments(data[..., c] * w)
        rhs[:, 0, c] = t0
        for a in range(3):
            rhs[:, a + 1, c] = t1[a]

    out = np.full((n, data.shape[-1]), np.nan)
    has = s0 > 1e-12
    out[has] = rhs[has, 0] / s0[has, None]
    # scale-free conditioning test on the normalised moment matrix
    scale = np.sqrt(np.abs(np.diagonal(gram, axis1=1, axis2=2))) + 1e-300
    norm = gram / scale[:, :, None] / scale[:, None, :]
    good = has & (np.linalg.cond(norm) < 1e6)
    if good.any():
        coef = np.linalg.solve(gram[good], rhs[good])
        out[good] = coef[:, 0]
    return out


def inpaint(table, sigma_bins=(2.0, 2.0, 2.0), truncate=3.0, max_rounds=16):
    """Fill empty bins by Gaussian-weighted local linear fits.

    Each empty bin takes the constant term of a weighted least-squares plane
    through the occupied bins around it, which reproduces linear trends across
    holes; the plain mask-weighted mean is used where the neighbourhood is too
    one-dimensional for a plane.  Occupied bins are never modified.  Rounds repeat with doubled support
    until every bin is filled.

    Raises
    ------
    EmptyTable
        If some wavelength has no occupied bin at all.
    """
    mask = table.mask
    if mask.all():
        return table.copy()
    if not mask.reshape(mask.shape[0], -1).any(axis=1).all():
        raise EmptyTable("a wavelength slice has no occupied bins")
    dims = table.dims
    # work on the unique phi_d bins so the wrap period is exact
    data = table.data.reshape(dims + (16,))[:, :-1].astype(float)
    known = mask[:, :-1].copy()
    sigma = np.asarray(sigma_bins, dtype=float)
    for _ in range(max_rounds):
        if known.all():
            break
        fill = ~known
        vals = _fill_once(data, known, sigma, truncate, fill)
        ok = np.all(np.isfinite(vals), axis=-1)
        idx = tuple(ix[ok] for ix in np.nonzero(fill))
        data[idx] = vals[ok]
        known[idx] = True
        sigma = sigma * 2.0
    out = table.copy()
    flat = out.data.reshape(dims + (16,))
    new = ~mask[:, :-1]
    flat[:, :-1][new] = data[new].astype(np.float32)
    flat[:, -1] = flat[:, 0]
    out.mask[:, :-1] = known
    out.mask[:, -1] = out.mask[:, 0]
    return out


def lookup_positions(table, wavelength_nm, coord):
    """(N, 4) fractional table positions for wavelengths and coordinates."""
    grid = table.grid
    lam = (np.asarray(wavelength_nm, dtype=float) - grid.start_nm) / grid.step_nm
    ang = continuous_index(table.dims, coord)
    lam = np.broadcast_to(lam, ang.shape[:-1])
    return np.concatenate([lam[..., None], ang], axis=-1).reshape(-1, 4)


def lookup(table, wavelength_nm, omega_i, omega_o, frame=None, mode="trilinear"):
    """Mueller matrices (hpBRDF frames) for direction pairs and wavelengths."""
    coord = to_rusinkiewicz(omega_i, omega_o, frame)
    return lookup_coord(table, wavelength_nm, coord, mode)


def lookup_coord(table, wavelength_nm, coord, mode="trilinear"):
    pos = lookup_positions(table, wavelength_nm, coord)
    shape = np.broadcast_shapes(np.shape(coord.theta_h), np.shape(wavelength_nm))
    flat = table.data.reshape(table.dims + (16,))
    if mode == "nearest":
        idx = np.rint(pos).astype(np.int64)
        for ax, n in enumerate(table.dims):
            idx[:, ax] = np.clip(idx[:, ax], 0, n - 1)
        hit = table.mask[idx[:, 0], idx[:, 1], idx[:, 2], idx[:, 3]]
        if not np.all(hit):
            raise UnfilledBin(f"{int((~hit).sum())} queries fall in empty bins")
        out = flat[idx[:, 0], idx[:, 1], idx[:, 2], idx[:, 3]].astype(float)
    elif mode == "trilinear":
        out = kernels.gather(flat, pos)
    else:
        raise ValueError(f"unknown lookup mode {mode!r}")
    return out.reshape(shape + (4, 4))


def tabulate_analytic(pbrdf, dims, grid=None):
    """Table sampled from the analytic oracle at bin centres (below-horizon bins left empty)."""
    grid = grid or WavelengthGrid(pbrdf.grid.start_nm, pbrdf.grid.step_nm, dims[0])
    phi, td, th = bin_centers(dims)
    pp, dd, hh = np.meshgrid(phi, td, th, indexing="ij")
    wi, wo = from_rusinkiewicz(RusinkiewiczCoord(pp, dd, hh))
    ok = (wi[..., 2] > 1e-6) & (wo[..., 2] > 1e-6)
    table = HpbrdfTable.empty(dims, grid)
    band_of = pbrdf.grid.nearest_index(grid.wavelengths)
    for b in range(dims[0]):
        m = eval_analytic(pbrdf, wi[ok], wo[ok], band_of[b])
        table.data[b][ok] = m.astype(np.float32)
        table.weight[b][ok] = 1.0
        table.mask[b][ok] = True
    return table


# -- HPBT I/O --------------------------------------------------------------


def write_table(path, table):
    dims = table.dims
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, *dims, table.grid.start_nm, table.grid.step_nm))
        for b in range(dims[0]):
            fh.write(np.ascontiguousarray(table.data[b], dtype="<f4").tobytes())
        for b in range(dims[0]):
            fh.write(np.ascontiguousarray(table.weight[b], dtype="<f4").tobytes())
        fh.write(np.packbits(table.mask.reshape(-1), bitorder="little").tobytes())


@dataclass
class TableHeader:
    version: int
    dims: tuple
    start_nm: float
    step_nm: float

    @property
    def payload_bytes(self):
        return data_payload_bytes(self.dims)

    @property
    def file_bytes(self):
        return file_size_bytes(self.dims)


def read_table_header(path):
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
    if len(raw) >= 4 and raw[:4] != _MAGIC:
        raise BadMagic(f"{path}: not an HPBT file")
    if len(raw) < _HEADER.size:
        raise TruncatedFile(f"{path}: header truncated")
    magic, version, d0, d1, d2, d3, start, step = _HEADER.unpack(raw)
    return TableHeader(version, (d0, d1, d2, d3), start, step)


def read_table(path, expected_dims=None):
    header = read_table_header(path)
    dims = header.dims
    if expected_dims is not None and tuple(expected_dims) != dims:
        raise DimMismatch(f"{path}: dims {dims} != expected {tuple(expected_dims)}")
    n = int(np.prod(dims))
    with open(path, "rb") as fh:
        raw = fh.read()
    need = file_size_bytes(dims)
    if len(raw) < need:
        raise TruncatedFile(f"{path}: expected {need} bytes, found {len(raw)}")
    if len(raw) > need:
        raise DimMismatch(f"{path}: {len(raw) - need} trailing bytes for dims {dims}")
    off = _HEADER.size
    data = np.frombuffer(raw, "<f4", 16 * n, off).reshape(dims + (4, 4)).astype(np.float32)
    off += 64 * n
    weight = np.frombuffer(raw, "<f4", n, off).reshape(dims).astype(np.float32)
    off += 4 * n
    mask = np.unpackbits(np.frombuffer(raw, np.uint8, (n + 7) // 8, off), count=n, bitorder="little")
    grid = WavelengthGrid(header.start_nm, header.step_nm, dims[0])
    return HpbrdfTable(data, weight, mask.reshape(dims).astype(bool), grid)
