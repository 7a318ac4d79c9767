"""Analytic polarimetric BRDF: Fresnel specular lobe plus a depolarizing diffuse term.

This is the ground truth the virtual ellipsometer images and every
closed-loop check compares against.  Fresnel reflection uses the complex
index ``eta - i*kappa``; the s-p phase difference is ``arg(r_s * conj(r_p))``
so external dielectric reflection below Brewster gives ``delta = pi``.
"""

import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate

from .errors import BelowHorizon, ConfigError
from .mueller import PolarizationFrame, WavelengthGrid, frame_transfer
from .rusinkiewicz import SurfaceFrame, half_vector, hpbrdf_frames


@dataclass(frozen=True)
class SpectralIor:
    eta: np.ndarray
    kappa: np.ndarray

    @classmethod
    def constant(cls, eta, kappa=0.0, grid=None):
        grid = grid or WavelengthGrid()
        return cls(np.full(grid.count, float(eta)), np.full(grid.count, float(kappa)))


@dataclass(frozen=True)
class AnalyticPbrdf:
    ior: SpectralIor
    diffuse_albedo: np.ndarray
    specular_scale: float = 1.0
    lobe_width: float = 0.05
    grid: WavelengthGrid = field(default_factory=WavelengthGrid)
    name: str = "material"

    def __post_init__(self):
        if np.any(np.asarray(self.ior.eta) <= 0) or np.any(np.asarray(self.ior.kappa) < 0):
            raise ConfigError("need eta > 0 and kappa >= 0")
        if self.lobe_width <= 0 or self.specular_scale < 0:
            raise ConfigError("need lobe_width > 0 and specular_scale >= 0")


def fresnel_coefficients(eta, kappa, theta_i):
    """Power reflectances ``(Rs, Rp)`` and s-p phase difference ``delta``."""
    n = np.asarray(eta, dtype=float) - 1j * np.asarray(kappa, dtype=float)
    cos_i = np.cos(theta_i)
    sin2 = np.sin(theta_i) ** 2
    root = np.sqrt(n * n - sin2 + 0j)
    rs = (cos_i - root) / (cos_i + root)
    rp = (n * n * cos_i - root) / (n * n * cos_i + root)
    delta = np.angle(rs * np.conj(rp))
    # a lossless dielectric yields a real product; pin the sign of the zero
    delta = np.where(np.abs(np.sin(delta)) < 1e-15, np.where(np.cos(delta) < 0, np.pi, 0.0), delta)
    return np.abs(rs) ** 2, np.abs(rp) ** 2, delta


def fresnel_reflection_mueller(eta, kappa, theta_i):
    """Fresnel reflection in the s/p frames of the plane of incidence."""
    rs, rp, delta = fresnel_coefficients(eta, kappa, theta_i)
    rs, rp, delta = np.broadcast_arrays(rs, rp, delta)
    cross = np.sqrt(rs * rp)
    m = np.zeros(rs.shape + (4, 4))
    m[..., 0, 0] = m[..., 1, 1] = 0.5 * (rs + rp)
    m[..., 0, 1] = m[..., 1, 0] = 0.5 * (rs - rp)
    m[..., 2, 2] = m[..., 3, 3] = cross * np.cos(delta)
    m[..., 2, 3] = cross * np.sin(delta)
    m[..., 3, 2] = -cross * np.sin(delta)
    return m


@lru_cache(maxsize=64)
def _lobe_norm(width):
    val, _ = integrate.quad(
        lambda t: np.exp(-0.5 * (t / width) ** 2) * np.cos(t) * np.sin(t), 0.0, np.pi / 2
    )
    return 2.0 * np.pi * val


def lobe_distribution(theta_h, width):
    """Gaussian in the half angle, normalised so its projected solid angle is 1."""
    return np.exp(-0.5 * (np.asarray(theta_h) / width) ** 2) / _lobe_norm(float(width))


def specular_lobe(theta_h, cos_i, cos_o, width):
    """Angular factor of the specular term (microfacet-style foreshortening)."""
    return lobe_distribution(theta_h, width) / (4.0 * cos_i * cos_o)


def eval_analytic(pbrdf, omega_i, omega_o, band, frame=None, check=True):
    """Mueller matrix of ``pbrdf`` in the hpBRDF incident/outgoing frames.

    Parameters
    ----------
    omega_i, omega_o : array_like, (..., 3)
        Unit directions toward the light and toward the viewer.
    band : int or array of int
        Index into ``pbrdf.grid``.
    frame : SurfaceFrame, optional
        Defaults to the local frame (normal along +z).
    """
    frame = frame or SurfaceFrame.local()
    wi = np.asarray(omega_i, dtype=float)
    wo = np.asarray(omega_o, dtype=float)
    cos_i = np.sum(wi * frame.normal, axis=-1)
    cos_o = np.sum(wo * frame.normal, axis=-1)
    if check and (np.any(cos_i <= 0) or np.any(cos_o <= 0)):
        raise BelowHorizon("direction below the surface")
    band = np.asarray(band)
    shape = np.broadcast_shapes(cos_i.shape, cos_o.shape, band.shape)
    wi = np.broadcast_to(wi, shape + (3,))
    wo = np.broadcast_to(wo, shape + (3,))
    cos_i = np.broadcast_to(cos_i, shape)
    cos_o = np.broadcast_to(cos_o, shape)
    band = np.broadcast_to(band, shape)

    h = half_vector(wi, wo)
    theta_h = np.arccos(np.clip(np.sum(h * frame.normal, axis=-1), -1.0, 1.0))
    theta_d = np.arccos(np.clip(np.sum(h * wi, axis=-1), -1.0, 1.0))
    eta = np.asarray(pbrdf.ior.eta)[band]
    kappa = np.asarray(pbrdf.ior.kappa)[band]
    fres = fresnel_reflection_mueller(eta, kappa, theta_d)

    f_in, f_out = hpbrdf_frames(wi, wo, frame)
    s_dir = np.cross(wi, wo)
    s_norm = np.linalg.norm(s_dir, axis=-1, keepdims=True)
    s_dir = np.where(s_norm > 1e-9, s_dir / np.maximum(s_norm, 1e-300), f_in.x_axis)
    sp_in = PolarizationFrame.from_propagation(-wi, s_dir)
    sp_out = PolarizationFrame.from_propagation(wo, s_dir)
    spec = frame_transfer(sp_out, f_out) @ fres @ frame_transfer(f_in, sp_in)

    with np.errstate(divide="ignore", invalid="ignore"):
        lobe = specular_lobe(theta_h, np.maximum(cos_i, 1e-12), np.maximum(cos_o, 1e-12), pbrdf.lobe_width)
    m = pbrdf.specular_scale * lobe[..., None, None] * spec
    m[..., 0, 0] += np.asarray(pbrdf.diffuse_albedo)[band] / np.pi
    return m


def dielectric_material(grid=None, eta=1.5, albedo=None, specular_scale=1.0, lobe_width=0.05):
    """White-plastic-like oracle: lossless dielectric with a bluish-flat albedo."""
    grid = grid or WavelengthGrid()
    if albedo is None:
        t = (grid.wavelengths - 414.0) / (950.0 - 414.0)
        albedo = 0.55 + 0.1 * t
    return AnalyticPbrdf(
        SpectralIor.constant(eta, 0.0, grid),
        np.broadcast_to(np.asarray(albedo, dtype=float), (grid.count,)).copy(),
        specular_scale,
        lobe_width,
        grid,
        "dielectric",
    )


def metal_material(grid=None, specular_scale=1.0, lobe_width=0.05):
    """Gold-like conductor: small eta, extinction growing with wavelength, no diffuse."""
    grid = grid or WavelengthGrid()
    lam = grid.wavelengths
    eta = 0.2 + 0.4 * np.exp(-((lam - 414.0) / 80.0) ** 2)
    kappa = 3.4 * lam / 650.0
    return AnalyticPbrdf(
        SpectralIor(eta, kappa),
        np.zeros(grid.count),
        specular_scale,
        lobe_width,
        grid,
        "metal",
    )


_MATERIAL_KEYS = {"name", "eta", "kappa", "albedo", "specular_scale", "lobe_width", "preset"}


def material_from_dict(data, grid=None):
    """Build a material from its description (constants or per-band lists)."""
    grid = grid or WavelengthGrid()
    unknown = set(data) - _MATERIAL_KEYS
    if unknown:
        raise ConfigError(f"unknown material keys: {sorted(unknown)}")
    preset = data.get("preset")
    if preset == "dielectric":
        base = dielectric_material(grid)
    elif preset == "metal":
        base = metal_material(grid)
    elif preset is None:
        base = None
    else:
        raise ConfigError(f"unknown material preset {preset!r}")

    def spectrum(key, default):
        if key not in data:
            return default
        arr = np.broadcast_to(np.asarray(data[key], dtype=float), (grid.count,)).copy()
        return arr

    if base is None and "eta" not in data:
        raise ConfigError("material needs 'eta' or a 'preset'")
    eta = spectrum("eta", None if base is None else base.ior.eta)
    kappa = spectrum("kappa", np.zeros(grid.count) if base is None else base.ior.kappa)
    albedo = spectrum("albedo", np.zeros(grid.count) if base is None else base.diffuse_albedo)
    return AnalyticPbrdf(
        SpectralIor(eta, kappa),
        albedo,
        float(data.get("specular_scale", 1.0 if base is None else base.specular_scale)),
        float(data.get("lobe_width", 0.05 if base is None else base.lobe_width)),
        grid,
        data.get("name", preset or "material"),
    )


def load_material(path, grid=None):
    with open(path) as fh:
        return material_from_dict(json.load(fh), grid)


def material_to_dict(pbrdf):
    return {
        "name": pbrdf.name,
        "eta": np.asarray(pbrdf.ior.eta).tolist(),
        "kappa": np.asarray(pbrdf.ior.kappa).tolist(),
        "albedo": np.asarray(pbrdf.diffuse_albedo).tolist(),
        "specular_scale": pbrdf.specular_scale,
        "lobe_width": pbrdf.lobe_width,
    }
