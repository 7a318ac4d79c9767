"""Virtual dual-rotating-retarder acquisition of a sphere under a rotating lamp.

World layout: the sphere sits at the origin, the camera looks down ``-z``
from ``+z`` and the lamp arm rotates in the ``x-z`` plane; arm angle 0 puts
the lamp on the camera axis.  The capture archive stores intensities in
index order ``[position][arm][band][theta][theta'][row][col]``; pixels hidden
by the analyzer-QWP mount at a given position are stored as NaN.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .analytic import eval_analytic
from .errors import BadMagic, ConfigError, DimMismatch, TruncatedFile
from .mueller import (
    PolarizationFrame,
    WavelengthGrid,
    frame_transfer,
    lp_mueller,
    retarder_mueller,
)
from .rusinkiewicz import SurfaceFrame, hpbrdf_frames

ILLUM_QWP_DEG = (30.0, -45.0, 60.0, -90.0)
ANALYZER_QWP_DEG = (0.0, 30.0, 60.0, 90.0, 120.0, 150.0)
ARM_DEG = tuple(40.0 + 5.0 * k for k in range(25))


def _blackbody(wavelength_nm, temperature=3200.0):
    lam = wavelength_nm * 1e-9
    c2 = 1.438776877e-2
    b = 1.0 / (lam**5 * np.expm1(c2 / (lam * temperature)))
    return b / b.mean()


@dataclass
class AcquisitionConfig:
    """Optical configuration of the virtual ellipsometer (angles in radians)."""

    illum_qwp_angles: np.ndarray = field(default_factory=lambda: np.radians(ILLUM_QWP_DEG))
    analyzer_qwp_angles: np.ndarray = field(default_factory=lambda: np.radians(ANALYZER_QWP_DEG))
    light_arm_angles: np.ndarray = field(default_factory=lambda: np.radians(ARM_DEG))
    wavelength_grid: WavelengthGrid = field(default_factory=WavelengthGrid)
    illum_retardance: np.ndarray = None
    analyzer_retardance: np.ndarray = None
    light_spectrum: np.ndarray = None
    illum_polarizer_angle: float = 0.0
    analyzer_polarizer_angle: float = 0.0
    noise_rel: float = 0.0
    occlusion_masks: np.ndarray = None
    falloff: bool = True
    foreshortening: bool = True
    seed: int = 0

    def __post_init__(self):
        n = self.wavelength_grid.count
        self.illum_qwp_angles = np.atleast_1d(np.asarray(self.illum_qwp_angles, dtype=float))
        self.analyzer_qwp_angles = np.atleast_1d(np.asarray(self.analyzer_qwp_angles, dtype=float))
        self.light_arm_angles = np.atleast_1d(np.asarray(self.light_arm_angles, dtype=float))
        if self.illum_retardance is None:
            self.illum_retardance = np.full(n, np.pi / 2)
        if self.analyzer_retardance is None:
            self.analyzer_retardance = np.full(n, np.pi / 2)
        if self.light_spectrum is None:
            self.light_spectrum = _blackbody(self.wavelength_grid.wavelengths)
        for name in ("illum_retardance", "analyzer_retardance", "light_spectrum"):
            arr = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (n,)).copy()
            setattr(self, name, arr)
        if self.noise_rel < 0:
            raise ConfigError("noise_rel must be >= 0")
        if self.occlusion_masks is not None:
            masks = np.asarray(self.occlusion_masks, dtype=bool)
            if masks.ndim == 2:
                masks = masks[None]
            self.occlusion_masks = masks

    @property
    def n_measurements(self):
        return len(self.illum_qwp_angles) * len(self.analyzer_qwp_angles)

    @property
    def n_positions(self):
        return 1 if self.occlusion_masks is None else self.occlusion_masks.shape[0]


@dataclass
class SphereScene:
    """Sphere, pinhole camera and lamp arm (metres)."""

    radius: float = 0.05
    center: tuple = (0.0, 0.0, 0.0)
    camera_distance: float = 1.0
    width: int = 410
    height: int = 410
    fill: float = 0.9
    light_distance: float = 1.0
    camera_x_axis: tuple = (1.0, 0.0, 0.0)
    light_x_axis: tuple = (0.0, 1.0, 0.0)
    view_offsets: np.ndarray = None

    def __post_init__(self):
        if self.radius <= 0 or self.camera_distance <= self.radius:
            raise ConfigError("camera must sit outside the sphere")
        if self.light_distance <= self.radius:
            raise ConfigError("lamp must sit outside the sphere")

    @property
    def focal(self):
        # pixels per unit image-plane coordinate; sphere spans `fill` of the width
        half = self.radius / np.sqrt(self.camera_distance**2 - self.radius**2)
        return 0.5 * self.fill * min(self.width, self.height) / half

    def camera_position(self, band=None):
        pos = np.array(self.center, dtype=float) + np.array([0.0, 0.0, self.camera_distance])
        if self.view_offsets is not None and band is not None:
            off = np.asarray(self.view_offsets, dtype=float)[band]
            pos = pos + np.array([off[0], off[1], 0.0])
        return pos

    def light_position(self, arm_angle):
        return np.array(self.center, dtype=float) + self.light_distance * np.array(
            [np.sin(arm_angle), 0.0, np.cos(arm_angle)]
        )


@dataclass
class PixelGeometry:
    """Per-pixel geometry of visible sphere points (flattened pixel index)."""

    pixel_index: np.ndarray
    position: np.ndarray
    normal: np.ndarray
    omega_i: np.ndarray
    omega_o: np.ndarray
    light_distance: np.ndarray
    shape: tuple

    @property
    def surface(self):
        return SurfaceFrame.from_normal(self.normal)

    @property
    def cos_i(self):
        return np.sum(self.omega_i * self.normal, axis=-1)

    @property
    def cos_o(self):
        return np.sum(self.omega_o * self.normal, axis=-1)


def sphere_geometry(scene, arm_angle, band=None):
    """Intersect camera rays with the sphere; keep points lit and seen."""
    h, w = scene.height, scene.width
    cam = scene.camera_position(band)
    cols, rows = np.meshgrid(np.arange(w), np.arange(h))
    f = scene.focal
    dirs = np.stack(
        [(cols + 0.5 - w / 2) / f, -(rows + 0.5 - h / 2) / f, -np.ones_like(cols, dtype=float)],
        axis=-1,
    ).reshape(-1, 3)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    oc = cam - np.array(scene.center, dtype=float)
    b = dirs @ oc
    c = oc @ oc - scene.radius**2
    disc = b * b - c
    hit = disc > 0
    t = -b - np.sqrt(np.where(hit, disc, 0.0))
    pos = cam + t[:, None] * dirs
    normal = (pos - np.array(scene.center, dtype=float)) / scene.radius
    light = scene.light_position(arm_angle)
    to_light = light - pos
    dist = np.linalg.norm(to_light, axis=1)
    wi = to_light / dist[:, None]
    wo = -dirs
    lit = hit & (np.sum(wi * normal, axis=1) > 1e-6) & (np.sum(wo * normal, axis=1) > 1e-6)
    idx = np.nonzero(lit)[0]
    return PixelGeometry(idx, pos[idx], normal[idx], wi[idx], wo[idx], dist[idx], (h, w))


def geometry_factor(geom, config):
    g = np.ones(len(geom.pixel_index))
    if config.falloff:
        g = g / geom.light_distance**2
    if config.foreshortening:
        g = g * geom.cos_i
    return g


def transfer_matrices(geom, scene):
    """``C_{e->i}`` and ``C_{r->c}`` for every visible pixel."""
    f_in, f_out = hpbrdf_frames(geom.omega_i, geom.omega_o, geom.surface)
    emitted = PolarizationFrame.from_propagation(-geom.omega_i, np.asarray(scene.light_x_axis, dtype=float))
    camera = PolarizationFrame.from_propagation(geom.omega_o, np.asarray(scene.camera_x_axis, dtype=float))
    return frame_transfer(emitted, f_in), frame_transfer(f_out, camera)


def emitted_stokes(config, theta, band):
    """Stokes vector leaving the illumination module (its own frame)."""
    s = np.array([config.light_spectrum[band], 0.0, 0.0, 0.0])
    lp = lp_mueller(config.illum_polarizer_angle)
    qwp = retarder_mueller(theta, config.illum_retardance[band])
    return qwp @ lp @ s


def analyzer_row(config, theta_p, band):
    """First row of the analyzing chain ``L R(theta')``."""
    lp = lp_mueller(config.analyzer_polarizer_angle)
    qwp = retarder_mueller(theta_p, config.analyzer_retardance[band])
    return (lp @ qwp)[..., 0, :]


def simulate_pixel(m_gt, config, theta, theta_p, band, c_ei=None, c_rc=None, geometry=1.0):
    """Recorded intensity for one pixel, by the explicit matrix chain."""
    c_ei = np.eye(4) if c_ei is None else c_ei
    c_rc = np.eye(4) if c_rc is None else c_rc
    lp_a = lp_mueller(config.analyzer_polarizer_angle)
    qwp_a = retarder_mueller(theta_p, config.analyzer_retardance[band])
    s_out = lp_a @ qwp_a @ c_rc @ np.asarray(m_gt, dtype=float) @ c_ei @ emitted_stokes(config, theta, band)
    return float(geometry * s_out[0])


def probe_vectors(config, band, c_ei, c_rc, geometry):
    """Illumination-side ``b`` and analyzer-side ``a`` vectors with ``f = a M b``.

    Returns arrays of shape ``(..., n_theta, 4)`` and ``(..., n_theta', 4)``.
    """
    emitted = np.stack([emitted_stokes(config, t, band) for t in config.illum_qwp_angles])
    rows = np.stack([analyzer_row(config, t, band) for t in config.analyzer_qwp_angles])
    b = np.einsum("...jk,tk->...tj", c_ei, emitted)
    a = np.einsum("qj,...jk->...qk", rows, c_rc) * np.asarray(geometry)[..., None, None]
    return b, a


def _noise_block(seed, block, shape):
    gen = np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, 0, block]))
    return gen.standard_normal(shape)


def simulate_sphere_capture(pbrdf, scene, config, progress=None):
    """Simulate every (position, arm, band, theta, theta') image of the sphere.

    Returns
    -------
    numpy.ndarray, float32
        Shape ``(P, A, L, n_theta, n_theta', H, W)``.
    """
    n_pos = config.n_positions
    arms = config.light_arm_angles
    nb = config.wavelength_grid.count
    nt, nq = len(config.illum_qwp_angles), len(config.analyzer_qwp_angles)
    h, w = scene.height, scene.width
    out = np.zeros((n_pos, len(arms), nb, nt, nq, h * w), dtype=np.float32)
    per_band = scene.view_offsets is not None
    for ia, arm in enumerate(arms):
        geom = None if per_band else sphere_geometry(scene, arm)
        for band in range(nb):
            if per_band:
                geom = sphere_geometry(scene, arm, band)
            if len(geom.pixel_index) == 0:
                continue
            c_ei, c_rc = transfer_matrices(geom, scene)
            m = eval_analytic(pbrdf, geom.omega_i, geom.omega_o, band, geom.surface, check=False)
            b, a = probe_vectors(config, band, c_ei, c_rc, geometry_factor(geom, config))
            f = np.einsum("nqj,njk,ntk->ntq", a, m, b)
            for ip in range(n_pos):
                vals = f
                if config.noise_rel > 0:
                    block = (ip * len(arms) + ia) * nb + band
                    noise = _noise_block(config.seed, block, (nt, nq, h * w))[..., geom.pixel_index]
                    vals = f * (1.0 + config.noise_rel * np.moveaxis(noise, -1, 0))
                out[ip, ia, band][..., geom.pixel_index] = np.moveaxis(vals, 0, -1)
            if progress is not None:
                progress(ia, band)
    if config.occlusion_masks is not None:
        hidden = ~config.occlusion_masks.reshape(n_pos, h * w)
        for ip in range(n_pos):
            out[ip][..., hidden[ip]] = np.nan
    return out.reshape(n_pos, len(arms), nb, nt, nq, h, w)


def split_occlusion_masks(width, height, overlap=0.1):
    """Two complementary visibility masks (left/right QWP positions) whose union is everything."""
    cols = np.arange(width)[None, :].repeat(height, axis=0)
    edge = width * (0.5 + overlap / 2)
    left = cols < edge
    right = cols >= width - edge
    return np.stack([left, right])


# -- measurement archive ---------------------------------------------------

_ARCHIVE_MAGIC = b"HPMS"
_ARCHIVE_VERSION = 1


def write_capture(path, data, config):
    """Little-endian archive: header, angle lists, grid, then float32 intensities."""
    data = np.asarray(data, dtype="<f4")
    p, a, l, nt, nq, h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(_ARCHIVE_MAGIC)
        fh.write(struct.pack("<I", _ARCHIVE_VERSION))
        fh.write(struct.pack("<7I", p, a, l, nt, nq, h, w))
        grid = config.wavelength_grid
        fh.write(struct.pack("<2d", grid.start_nm, grid.step_nm))
        fh.write(np.asarray(config.illum_qwp_angles, dtype="<f8").tobytes())
        fh.write(np.asarray(config.analyzer_qwp_angles, dtype="<f8").tobytes())
        fh.write(np.asarray(config.light_arm_angles, dtype="<f8").tobytes())
        fh.write(data.tobytes(order="C"))


@dataclass
class CaptureArchive:
    data: np.ndarray
    wavelength_grid: WavelengthGrid
    illum_qwp_angles: np.ndarray
    analyzer_qwp_angles: np.ndarray
    light_arm_angles: np.ndarray

    def check_config(self, config):
        if (
            not np.allclose(self.illum_qwp_angles, config.illum_qwp_angles)
            or not np.allclose(self.analyzer_qwp_angles, config.analyzer_qwp_angles)
            or not np.allclose(self.light_arm_angles, config.light_arm_angles)
            or self.wavelength_grid != config.wavelength_grid
        ):
            raise DimMismatch("capture archive does not match the acquisition config")


def read_capture(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _ARCHIVE_MAGIC:
        raise BadMagic(f"{path}: not a capture archive")
    off = 8
    if len(raw) < off + 28 + 16:
        raise TruncatedFile(f"{path}: header truncated")
    dims = struct.unpack_from("<7I", raw, off)
    off += 28
    start, step = struct.unpack_from("<2d", raw, off)
    off += 16
    p, a, l, nt, nq, h, w = dims
    need = off + 8 * (nt + nq + a) + 4 * p * a * l * nt * nq * h * w
    if len(raw) < need:
        raise TruncatedFile(f"{path}: expected {need} bytes, found {len(raw)}")
    lists = []
    for n in (nt, nq, a):
        lists.append(np.frombuffer(raw, dtype="<f8", count=n, offset=off).copy())
        off += 8 * n
    data = np.frombuffer(raw, dtype="<f4", count=p * a * l * nt * nq * h * w, offset=off)
    data = data.reshape(dims).astype(np.float32)
    grid = WavelengthGrid(start, step, l)
    return CaptureArchive(data, grid, *lists)
