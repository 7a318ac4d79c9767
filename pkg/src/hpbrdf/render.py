"""Direct-illumination spectral polarimetric renderer for spheres and planes.

One bounce, one point light.  Stokes vectors leave the light in its own
frame, are rotated into the hpBRDF incident frame, multiplied by the
material Mueller matrix, rotated into the camera frame and scaled by
``cos(theta_i) / r**2``.
"""

from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .analytic import AnalyticPbrdf, eval_analytic
from .errors import ConfigError, NoVisibleBands
from .mueller import PolarizationFrame, frame_transfer, lp_mueller
from .rusinkiewicz import SurfaceFrame, half_vector
from .table import HpbrdfTable, lookup

NIR_CUTOFF_NM = 714.0


@dataclass
class PointLight:
    """Isotropic point emitter; ``intensity`` is a scalar or one value per rendered band."""

    position: tuple = (0.0, 0.0, 1.0)
    intensity: object = 1.0
    polarization: str = "unpolarized"
    angle_deg: float = 0.0
    x_axis: tuple = (0.0, 1.0, 0.0)

    def __post_init__(self):
        if self.polarization not in ("unpolarized", "linear"):
            raise ConfigError(f"unknown light polarization {self.polarization!r}")

    def stokes(self, n_bands):
        """``(n_bands, 4)`` emission in the light frame."""
        radiance = np.broadcast_to(np.asarray(self.intensity, dtype=float), (n_bands,))
        s = np.zeros((n_bands, 4))
        s[:, 0] = radiance
        if self.polarization == "linear":
            a = np.deg2rad(self.angle_deg)
            s[:, 1] = radiance * np.cos(2 * a)
            s[:, 2] = radiance * np.sin(2 * a)
        return s


@dataclass
class RenderScene:
    """Pinhole camera looking at a sphere or a finite plane (``z = 0``, normal ``+z``)."""

    shape: str = "sphere"
    width: int = 256
    height: int = 256
    radius: float = 0.05
    center: tuple = (0.0, 0.0, 0.0)
    plane_half_size: float = 0.1
    camera_position: tuple = (0.0, 0.0, 1.0)
    look_at: tuple = (0.0, 0.0, 0.0)
    up: tuple = (0.0, 1.0, 0.0)
    fov_deg: float = None
    light: PointLight = field(default_factory=PointLight)
    wavelengths_nm: tuple = (550.0,)

    def __post_init__(self):
        if self.shape not in ("sphere", "plane"):
            raise ConfigError(f"unknown shape {self.shape!r}")
        if self.width < 1 or self.height < 1:
            raise ConfigError("image must have at least one pixel")
        if isinstance(self.light, dict):
            self.light = PointLight(**self.light)

    def camera_basis(self):
        """``(right, up, forward)`` unit vectors."""
        fwd = np.asarray(self.look_at, float) - np.asarray(self.camera_position, float)
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(self.up, float))
        if np.linalg.norm(right) < 1e-9:
            raise ConfigError("camera up vector is parallel to the view direction")
        right /= np.linalg.norm(right)
        return right, np.cross(right, fwd), fwd

    def focal(self):
        """Pixels per unit image-plane coordinate."""
        if self.fov_deg is not None:
            return 0.5 * self.width / np.tan(np.deg2rad(self.fov_deg) / 2)
        dist = np.linalg.norm(np.asarray(self.camera_position, float) - np.asarray(self.center, float))
        extent = self.radius if self.shape == "sphere" else self.plane_half_size * np.sqrt(2)
        half = extent / np.sqrt(max(dist**2 - extent**2, 1e-12))
        return 0.45 * min(self.width, self.height) / half


@dataclass
class SceneHits:
    """Visible, lit surface points (flat pixel index into ``shape``)."""

    pixel_index: np.ndarray
    position: np.ndarray
    normal: np.ndarray
    omega_i: np.ndarray
    omega_o: np.ndarray
    light_distance: np.ndarray
    shape: tuple


def intersect(scene):
    right, up, fwd = scene.camera_basis()
    h, w = scene.height, scene.width
    f = scene.focal()
    cols, rows = np.meshgrid(np.arange(w), np.arange(h))
    u = ((cols + 0.5 - w / 2) / f).reshape(-1)
    v = (-(rows + 0.5 - h / 2) / f).reshape(-1)
    dirs = u[:, None] * right + v[:, None] * up + fwd
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    cam = np.asarray(scene.camera_position, float)
    center = np.asarray(scene.center, float)
    if scene.shape == "sphere":
        oc = cam - center
        b = dirs @ oc
        disc = b * b - (oc @ oc - scene.radius**2)
        hit = disc > 0
        t = -b - np.sqrt(np.where(hit, disc, 0.0))
        pos = cam + t[:, None] * dirs
        normal = (pos - center) / scene.radius
    else:
        dz = dirs[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (center[2] - cam[2]) / dz
        pos = cam + np.nan_to_num(t)[:, None] * dirs
        rel = pos - center
        hit = (t > 0) & (np.abs(rel[:, 0]) <= scene.plane_half_size) & (np.abs(rel[:, 1]) <= scene.plane_half_size)
        normal = np.broadcast_to(np.array([0.0, 0.0, 1.0]), pos.shape)
    to_light = np.asarray(scene.light.position, float) - pos
    dist = np.linalg.norm(to_light, axis=1)
    wi = to_light / np.maximum(dist, 1e-300)[:, None]
    wo = -dirs
    lit = hit & (np.sum(wi * normal, axis=1) > 1e-6) & (np.sum(wo * normal, axis=1) > 1e-6)
    idx = np.nonzero(lit)[0]
    return SceneHits(idx, pos[idx], np.array(normal[idx]), wi[idx], wo[idx], dist[idx], (h, w))


@dataclass
class TableMaterial:
    table: HpbrdfTable
    mode: str = "trilinear"


def material_mueller(material, hits, wavelength_nm):
    """hpBRDF-frame Mueller matrices ``(N, 4, 4)`` at one wavelength."""
    frame = SurfaceFrame.from_normal(hits.normal)
    if isinstance(material, AnalyticPbrdf):
        band = int(material.grid.nearest_index(wavelength_nm))
        return eval_analytic(material, hits.omega_i, hits.omega_o, band, frame)
    if isinstance(material, HpbrdfTable):
        material = TableMaterial(material)
    if isinstance(material, TableMaterial):
        return lookup(material.table, wavelength_nm, hits.omega_i, hits.omega_o, frame, material.mode)
    raise TypeError(f"unsupported material {type(material).__name__}")


def _camera_frames(scene, hits):
    right = scene.camera_basis()[0]
    frame = SurfaceFrame.from_normal(hits.normal)
    from .rusinkiewicz import hpbrdf_frames

    f_in, f_out = hpbrdf_frames(hits.omega_i, hits.omega_o, frame)
    emitted = PolarizationFrame.from_propagation(-hits.omega_i, np.asarray(scene.light.x_axis, float))
    camera = PolarizationFrame.from_propagation(hits.omega_o, right)
    return frame_transfer(emitted, f_in), frame_transfer(f_out, camera)


@dataclass
class MuellerRender:
    """Light-frame to camera-frame Mueller matrices, ``data`` is ``(B, H, W, 4, 4)``."""

    data: np.ndarray
    mask: np.ndarray
    wavelengths_nm: np.ndarray
    aux: dict


@dataclass
class SpectralStokesImage:
    """Camera-frame Stokes vectors, ``data`` is ``(B, H, W, 4)``; misses are zero."""

    data: np.ndarray
    mask: np.ndarray
    wavelengths_nm: np.ndarray
    aux: dict = field(default_factory=dict)

    @property
    def width(self):
        return self.data.shape[2]

    @property
    def height(self):
        return self.data.shape[1]


def _aux_maps(hits):
    h, w = hits.shape
    hv = half_vector(hits.omega_i, hits.omega_o)
    maps = {
        "theta_i": np.arccos(np.clip(np.sum(hits.omega_i * hits.normal, 1), -1, 1)),
        "theta_d": np.arccos(np.clip(np.sum(hv * hits.omega_i, 1), -1, 1)),
        "theta_h": np.arccos(np.clip(np.sum(hv * hits.normal, 1), -1, 1)),
    }
    out = {}
    for k, v in maps.items():
        plane = np.full(h * w, np.nan)
        plane[hits.pixel_index] = v
        out[k] = plane.reshape(h, w)
    return out


def render_mueller(scene, material):
    """Per-pixel Mueller matrices from the light frame to the camera frame.

    Geometry (``cos(theta_i) / r**2``) is folded in, so multiplying by the
    light's Stokes emission gives the rendered Stokes image.
    """
    hits = intersect(scene)
    wl = np.asarray(scene.wavelengths_nm, dtype=float).reshape(-1)
    h, w = hits.shape
    out = np.zeros((len(wl), h * w, 4, 4))
    if len(hits.pixel_index):
        c_ei, c_rc = _camera_frames(scene, hits)
        geom = np.sum(hits.omega_i * hits.normal, 1) / hits.light_distance**2
        for b, lam in enumerate(wl):
            m = material_mueller(material, hits, lam)
            out[b, hits.pixel_index] = geom[:, None, None] * (c_rc @ m @ c_ei)
    mask = np.zeros(h * w, dtype=bool)
    mask[hits.pixel_index] = True
    return MuellerRender(out.reshape(len(wl), h, w, 4, 4), mask.reshape(h, w), wl, _aux_maps(hits))


def render_direct(scene, material):
    """Render the Stokes image of ``scene`` with an analytic or tabulated material."""
    mr = render_mueller(scene, material)
    s_e = scene.light.stokes(len(mr.wavelengths_nm))
    data = np.einsum("bhwij,bj->bhwi", mr.data, s_e)
    return SpectralStokesImage(data, mr.mask, mr.wavelengths_nm, mr.aux)


def apply_polarizer(image, angle):
    """Intensity behind an ideal linear polarizer at ``angle`` (rad, camera frame)."""
    data = image.data if isinstance(image, SpectralStokesImage) else np.asarray(image)
    return np.einsum("j,...j->...", lp_mueller(angle)[0], data)


def _stokes_for(image, band):
    data = image.data if isinstance(image, SpectralStokesImage) else np.asarray(image)
    return data.mean(axis=0) if band is None else data[band]


def dop_map(image, band=None):
    """Degree of polarization per pixel; zero where ``s0 == 0``. ``band=None`` averages bands."""
    s = _stokes_for(image, band)
    pol = np.linalg.norm(s[..., 1:], axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(s[..., 0] > 0, pol / s[..., 0], 0.0)


def aolp_map(image, band=None):
    """Angle of linear polarization in ``[0, pi)`` from the camera x-axis."""
    s = _stokes_for(image, band)
    a = np.mod(0.5 * np.arctan2(s[..., 2], s[..., 1]), np.pi)
    # mod of a tiny negative angle rounds up to pi
    return np.where(a >= np.pi, 0.0, a)


# -- colour ----------------------------------------------------------------

XYZ_TO_LINEAR_SRGB = np.array(
    [
        [3.2404542, -1.5371385, -0.4985314],
        [-0.9692660, 1.8760108, 0.0415560],
        [0.0556434, -0.2040259, 1.0572252],
    ]
)


def cie_cmf():
    """``(wavelength_nm, xyz)`` of the CIE 1931 2-degree observer, 380-780 nm at 5 nm."""
    text = resources.files("hpbrdf").joinpath("data/cie1931_2deg_5nm.csv").read_text()
    arr = np.loadtxt(text.splitlines(), delimiter=",")
    return arr[:, 0], arr[:, 1:4]


def visible_bands(wavelengths_nm):
    wl = np.asarray(wavelengths_nm, dtype=float)
    return np.nonzero((wl >= 380.0) & (wl <= NIR_CUTOFF_NM))[0]


def spectrum_to_linear_rgb(spectra, wavelengths_nm):
    """Linear sRGB of ``spectra`` (..., B), white-balanced so a flat spectrum is neutral.

    Raises
    ------
    NoVisibleBands
        If no band lies between 380 nm and the NIR cutoff.
    """
    wl = np.asarray(wavelengths_nm, dtype=float)
    vis = visible_bands(wl)
    if len(vis) == 0:
        raise NoVisibleBands("no band inside the visible range")
    cwl, cmf = cie_cmf()
    weights = np.stack([np.interp(wl[vis], cwl, cmf[:, k]) for k in range(3)], axis=-1)
    to_rgb = weights @ XYZ_TO_LINEAR_SRGB.T
    white = to_rgb.sum(axis=0)
    return (np.asarray(spectra, dtype=float)[..., vis] @ to_rgb) / white


def to_srgb(image, gamma=2.2, exposure=1.0):
    """8-bit ``(H, W, 3)`` preview of ``s0``; NIR bands are ignored here."""
    data = image.data[..., 0] if isinstance(image, SpectralStokesImage) else np.asarray(image)
    rgb = spectrum_to_linear_rgb(np.moveaxis(data, 0, -1), image.wavelengths_nm) * exposure
    enc = np.clip(rgb, 0.0, 1.0) ** (1.0 / gamma)
    return np.round(enc * 255.0).astype(np.uint8)


def nir_channels(image):
    """``{wavelength_nm: s0 plane}`` for bands above the NIR cutoff."""
    wl = np.asarray(image.wavelengths_nm, dtype=float)
    return {float(lam): image.data[b, ..., 0] for b, lam in enumerate(wl) if lam > NIR_CUTOFF_NM}


# -- writers -----------------------------------------------------------------


def write_pfm(path, plane):
    """Portable float map: grayscale ``(H, W)`` or colour ``(H, W, 3)``, little endian."""
    plane = np.asarray(plane, dtype="<f4")
    colour = plane.ndim == 3
    h, w = plane.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"{'PF' if colour else 'Pf'}\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(plane[::-1]).tobytes())


def read_pfm(path):
    with open(path, "rb") as fh:
        kind = fh.readline().strip()
        w, h = (int(x) for x in fh.readline().split())
        scale = float(fh.readline())
        raw = fh.read()
    dtype = "<f4" if scale < 0 else ">f4"
    shape = (h, w, 3) if kind == b"PF" else (h, w)
    return np.frombuffer(raw, dtype=dtype).reshape(shape)[::-1].astype(np.float32)


def write_png(path, pixels):
    from PIL import Image

    arr = np.asarray(pixels)
    if arr.dtype != np.uint8:
        arr = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr).save(path, format="PNG", optimize=False)
